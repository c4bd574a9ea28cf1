// Haar-averaged 4-point OTOC at finite D: exact Weingarten channel, its
// large-D limit, the free-probability value, and a Monte Carlo estimate.

#include <cstdio>

#include "freek/ensemble.hpp"
#include "freek/haar_channel.hpp"

using namespace freek;

int main() {
  tune_allocator();
  const int D = 64;
  const Mat A = 0.5 * Mat::Identity(D, D) + std::sqrt(0.75) * sign_split(D);
  const Mat B = 0.25 * Mat::Identity(D, D) + 0.5 * sign_alternating(D);

  // The channel paths contract c(alpha) for A (x) A with B (x) B along the long cycle.
  const auto phi_a = trace_functional({A});
  const auto phi_b = trace_functional({B});
  const Args aa = {word({0}), word({0})}, bb = {word({0}), word({0})};
  std::printf("free value       %.6f\n", otoc_free(aa, phi_a, bb, phi_b).real());

  std::printf("exact channel    %.6f\n", otoc_channel(channel_exact(aa, phi_a, D), bb, phi_b).real());
  std::printf("asymptotic       %.6f\n", otoc_channel(channel_asymptotic(aa, phi_a, D), bb, phi_b).real());

  const auto r = k_freeness_test(Ensemble::haar(D), A, B, 2, 2000, 3);
  std::printf("monte carlo      %.6f +- %.6f  (kappa_4 %.2e)\n", r.otoc.value.real(), r.otoc.std_error,
              std::abs(r.kappa.value));
}
