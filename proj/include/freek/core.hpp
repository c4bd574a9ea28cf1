#pragma once

#include <complex>
#include <cstdint>
#include <stdexcept>
#include <string>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace freek {

using Complex = std::complex<double>;

inline constexpr double kDefaultTol = 1e-10;
inline constexpr const char* kVersion = "0.3.0";

// Invalid input: malformed partitions, mismatched dimensions, size limits.
class ValidationError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Well-formed input outside the supported numerical regime (e.g. D < k).
class RegimeError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

inline void require(bool cond, const std::string& msg) {
  if (!cond) throw ValidationError(msg);
}

// Monte Carlo loops allocate and free megabyte-sized matrices per sample.
// glibc returns them to the OS each time and the next sample faults the pages
// back in; raising the trim and mmap thresholds keeps them in the heap.
// Programs call this once at startup; the library never does.
inline void tune_allocator() {
#if defined(__GLIBC__)
  mallopt(M_MMAP_THRESHOLD, 64 << 20);
  mallopt(M_TRIM_THRESHOLD, 256 << 20);
#endif
}

}  // namespace freek
