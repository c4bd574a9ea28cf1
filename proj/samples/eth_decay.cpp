// Decay of the mixed free cumulant kappa_4(A(t), B, A(t), B) in a GOE
// model, and the free-2 time at a 5% threshold.

#include <cstdio>

#include "freek/eth.hpp"

using namespace freek;

int main() {
  tune_allocator();
  const auto m = goe_model(256, 1);
  const auto s = thermal_state(m, 0.0);
  std::vector<double> grid;
  for (int i = 0; i <= 60; ++i) grid.push_back(0.05 * i);
  const auto ft = free_k_time(m, s, "sign_split", "sign_split", 2, 0.05, grid);
  for (std::size_t i = 0; i < ft.grid.size(); i += 5)
    std::printf("t = %.2f   kappa_4 = %+.5f\n", ft.grid[i], ft.kappa[i].real());
  if (ft.time)
    std::printf("free-2 time: %.2f\n", *ft.time);
  else
    std::printf("free-2 time not reached\n");
}
