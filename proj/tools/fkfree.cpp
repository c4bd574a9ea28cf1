#include <iostream>

#include "freek/cli.hpp"

int main(int argc, char** argv) {
  freek::tune_allocator();
  return freek::cli::dispatch(argc, argv, std::cout, std::cerr);
}
