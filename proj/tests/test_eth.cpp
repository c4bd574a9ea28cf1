#include <gtest/gtest.h>

#include <cmath>

#include "freek/eth.hpp"

using freek::Complex;
using freek::Letter;
using freek::Mat;
using freek::Word;

namespace {

const double kInf = std::numeric_limits<double>::infinity();

freek::SpectralModel small_goe(int D, std::uint64_t seed) {
  auto m = freek::goe_model(D, seed);
  freek::Rng rng = freek::substream(seed, 99);
  m.add_observable("g1", freek::gue(D, rng));
  m.add_observable("g2", freek::gue(D, rng));
  m.add_observable("identity", Mat::Identity(D, D));
  m.observables["energy"] = m.energies.cast<Complex>().asDiagonal();
  return m;
}

// sum over all index tuples of the product of traces, each tuple weighted by
// the exact infinite-time kernel [|sum c_v E_v| <= eps].
Complex kernel_average(const freek::SpectralModel& m, const freek::ThermalState& s,
                       const std::vector<std::string>& names, const std::vector<Word>& words, double eps) {
  freek::detail::IndexLayout lay(words);
  std::vector<int> idx(lay.n, 0);
  Complex acc = 0.0;
  for (;;) {
    double de = 0;
    for (int v = 0; v < lay.n; ++v) de += lay.net[v] * m.energies(idx[v]);
    if (std::abs(de) <= eps) {
      Complex p = 1.0;
      for (std::size_t j = 0; j < words.size(); ++j) {
        const int len = static_cast<int>(words[j].size());
        p *= s.weights(idx[lay.start[j]]);
        for (int l = 0; l < len; ++l)
          p *= m.obs(names[words[j][l].op])(idx[lay.start[j] + l], idx[lay.start[j] + (l + 1) % len]);
      }
      acc += p;
    }
    int p = lay.n - 1;
    while (p >= 0 && ++idx[p] == m.D) idx[p--] = 0;
    if (p < 0) break;
  }
  return acc;
}

}  // namespace

TEST(EthModel, GoeLevelStatistics) {
  // Single draws scatter by about 0.017; the mean of eight is tested.
  double r_mean = 0;
  for (int seed = 1; seed <= 8; ++seed) r_mean += freek::mean_gap_ratio(freek::goe_model(256, seed).energies) / 8;
  EXPECT_NEAR(r_mean, 0.53, 0.02);
  auto m = freek::goe_model(256, 3);
  EXPECT_TRUE(std::is_sorted(m.energies.data(), m.energies.data() + m.D));
  EXPECT_LE((m.basis.adjoint() * m.basis - Mat::Identity(m.D, m.D)).cwiseAbs().maxCoeff(), 1e-10);
  auto r = freek::resonance_report(m, freek::default_eps_res(m), 20000, 1);
  EXPECT_EQ(r.degenerate_pairs, 0u);
  EXPECT_EQ(r.near_resonant, 0u);
  EXPECT_GT(r.sampled, 19000u);
}

TEST(EthModel, DiagonalInputHasIdentityBasis) {
  Mat h = Mat::Zero(5, 5);
  for (int i = 0; i < 5; ++i) h(i, i) = 0.5 * i - 1.0;
  auto m = freek::build_model(h);
  EXPECT_LE((m.basis.cwiseAbs() - Mat::Identity(5, 5)).cwiseAbs().maxCoeff(), 1e-14);
}

TEST(EthModel, Validation) {
  Mat h = Mat::Zero(3, 3);
  h(0, 1) = 1.0;
  EXPECT_THROW(freek::build_model(h), freek::ValidationError);
  EXPECT_THROW(freek::build_model(Mat::Identity(8, 8), {}, {}, 4), freek::ValidationError);
  EXPECT_THROW(freek::goe_model(16, 1, 8), freek::ValidationError);
  auto m = freek::goe_model(4, 1);
  EXPECT_THROW(m.obs("missing"), freek::ValidationError);
  EXPECT_THROW(m.add_observable("x", Mat::Identity(3, 3)), freek::ValidationError);
}

TEST(EthModel, IsingChain) {
  freek::IsingParams p;
  p.L = 6;
  Mat h = freek::ising_hamiltonian(p);
  EXPECT_EQ(h.rows(), 64);
  EXPECT_TRUE(freek::is_hermitian(h, 0.0));
  auto obs = freek::ising_observables(p.L);
  for (const auto& [name, o] : obs) EXPECT_TRUE(freek::is_hermitian(o, 0.0)) << name;
  EXPECT_LE((obs["sz_0"] * obs["sz_0"] - Mat::Identity(64, 64)).cwiseAbs().maxCoeff(), 0.0);
  // X and Z on one site anticommute; on different sites they commute.
  Mat x0 = obs["sx_0"], z0 = obs["sz_0"], zm = obs["sz_mid"];
  EXPECT_LE((x0 * z0 + z0 * x0).cwiseAbs().maxCoeff(), 0.0);
  EXPECT_LE((x0 * zm - zm * x0).cwiseAbs().maxCoeff(), 0.0);
  // Without a transverse field every Z_i is conserved.
  p.hx = 0.0;
  Mat hz = freek::ising_hamiltonian(p);
  EXPECT_LE((hz * zm - zm * hz).cwiseAbs().maxCoeff(), 0.0);
  // Spatial reflection is a symmetry of the open chain.
  Mat r = Mat::Zero(64, 64);
  for (std::size_t s = 0; s < 64; ++s) {
    std::size_t t = 0;
    for (int i = 0; i < p.L; ++i) t |= (s >> i & 1u) << (p.L - 1 - i);
    r(t, s) = 1.0;
  }
  EXPECT_LE((r * h - h * r).cwiseAbs().maxCoeff(), 1e-14);
  auto m = freek::ising_model(freek::IsingParams{});
  EXPECT_EQ(m.D, 1024);
  EXPECT_EQ(m.provenance["model"], "ising");
}

TEST(EthThermal, StateAndSimpleMoments) {
  auto m = small_goe(32, 5);
  for (double beta : {0.0, 0.7, -0.3}) {
    auto s = freek::thermal_state(m, beta);
    EXPECT_NEAR(s.weights.sum(), 1.0, 1e-12);
    double z = 0;
    for (int i = 0; i < m.D; ++i) z += std::exp(-beta * m.energies(i));
    EXPECT_NEAR(s.log_z, std::log(z), 1e-12);
    auto phi = freek::thermal_functional(m, s, {"g1", "g2"});
    // A single letter does not depend on time.
    EXPECT_NEAR(std::abs(phi({Letter{0, 3.7}}) - phi({Letter{0, 0.0}})), 0.0, 1e-13);
    EXPECT_NEAR(freek::thermal_free_cumulant(m, s, {"g1"}, {{Letter{0, 1.0}}}).real(), phi({Letter{0, 0.0}}).real(),
                1e-14);
  }
  auto s0 = freek::thermal_state(m, 0.0);
  EXPECT_NEAR(s0.d_eff(), 32.0, 1e-9);
  auto phi = freek::thermal_functional(m, s0, {"g1", "g2"});
  auto tr = freek::trace_functional({m.obs("g1"), m.obs("g2")});
  for (const auto& w : {freek::word({0, 1}), freek::word({0, 1, 1, 0, 1}), freek::word({1, 0, 0, 1, 0, 1})})
    EXPECT_NEAR(std::abs(phi(w) - tr(w)), 0.0, 1e-12);
}

TEST(EthThermal, TwoPointSpectralSum) {
  auto m = small_goe(64, 6);
  auto s = freek::thermal_state(m, 0.8);
  const double t = 1.3;
  const Mat& A = m.obs("g1");
  Complex want = 0.0;
  for (int i = 0; i < m.D; ++i)
    for (int j = 0; j < m.D; ++j)
      want += s.weights(i) * std::norm(A(i, j)) * std::exp(Complex(0, (m.energies(i) - m.energies(j)) * t));
  auto phi = freek::thermal_functional(m, s, {"g1"});
  EXPECT_NEAR(std::abs(phi({Letter{0, t}, Letter{0, 0.0}}) - want), 0.0, 1e-10);
  // kappa_2(A(t), A) = <A(t) A> - <A>^2.
  const Complex k2 = freek::thermal_free_cumulant(m, s, {"g1"}, {{Letter{0, t}}, {Letter{0, 0.0}}});
  const Complex a1 = phi({Letter{0, 0.0}});
  EXPECT_NEAR(std::abs(k2 - (want - a1 * a1)), 0.0, 1e-12);
}

TEST(EthThermal, TimeTranslationAndCyclicity) {
  auto m = small_goe(64, 7);
  const std::vector<double> ts{0.3, -1.1, 2.0, 0.7};
  auto mk = [&](double shift) {
    Word w;
    for (std::size_t i = 0; i < ts.size(); ++i) w.push_back({static_cast<int>(i % 2), ts[i] + shift});
    return w;
  };
  auto sb = freek::thermal_state(m, 0.9);
  auto phib = freek::thermal_functional(m, sb, {"g1", "g2"});
  EXPECT_NEAR(std::abs(phib(mk(0.0)) - phib(mk(1.75))), 0.0, 1e-10);
  auto s0 = freek::thermal_state(m, 0.0);
  auto phi0 = freek::thermal_functional(m, s0, {"g1", "g2"});
  Word w = mk(0.0), r = w;
  std::rotate(r.begin(), r.end() - 1, r.end());
  EXPECT_NEAR(std::abs(phi0(w) - phi0(r)), 0.0, 1e-10);
}

TEST(EthNetwork, IndexSumMatchesBruteForce) {
  auto m = small_goe(6, 8);
  auto s = freek::thermal_state(m, 0.4);
  const std::vector<std::string> names{"g1", "g2"};
  const std::vector<Word> words{{{0, 1.0}, {1, 0.0}, {0, 1.0}}, {{1, 0.0}, {0, 1.0}}};
  freek::detail::IndexLayout lay(words);
  ASSERT_EQ(lay.n, 5);
  auto letter = [&](const Letter& l) { return m.obs(names[l.op]); };
  for (const auto& tau : freek::enumerate_set_partitions(5)) {
    Complex want = 0.0;
    std::vector<int> blk(tau.block_count(), 0);
    for (;;) {
      std::vector<int> idx(5);
      for (int v = 0; v < 5; ++v) idx[v] = blk[tau.label(v)];
      Complex p = s.weights(idx[0]) * s.weights(idx[3]);
      p *= m.obs("g1")(idx[0], idx[1]) * m.obs("g2")(idx[1], idx[2]) * m.obs("g1")(idx[2], idx[0]);
      p *= m.obs("g2")(idx[3], idx[4]) * m.obs("g1")(idx[4], idx[3]);
      want += p;
      int q = tau.block_count() - 1;
      while (q >= 0 && ++blk[q] == m.D) blk[q--] = 0;
      if (q < 0) break;
    }
    EXPECT_NEAR(std::abs(freek::detail::index_sum(words, lay, tau, s.weights, letter) - want), 0.0, 1e-12)
        << tau.str();
  }
}

TEST(EthNetwork, DenseGraphFallback) {
  // K4 plus a perfect matching: every vertex has three distinct neighbours.
  const int D = 4;
  freek::Rng rng(9);
  std::vector<freek::detail::NetEdge> edges;
  const std::vector<std::pair<int, int>> pairs{{0, 1}, {0, 2}, {0, 3}, {1, 2}, {1, 3}, {2, 3}, {0, 1}, {2, 3}};
  for (auto [u, v] : pairs) edges.push_back({u, v, freek::ginibre(D, D, rng)});
  std::vector<freek::CVec> vecs(4, freek::CVec::Ones(D));
  vecs[0] = freek::ginibre(D, 1, rng);
  Complex want = 0.0;
  for (int a = 0; a < D; ++a)
    for (int b = 0; b < D; ++b)
      for (int c = 0; c < D; ++c)
        for (int d = 0; d < D; ++d) {
          const int i[4] = {a, b, c, d};
          Complex p = vecs[0](a);
          for (const auto& e : edges) p *= e.m(i[e.u], i[e.v]);
          want += p;
        }
  EXPECT_NEAR(std::abs(freek::detail::contract_network(vecs, edges, std::vector<char>(4, 1)) - want), 0.0, 1e-10);
}

TEST(EthTimeAverage, StrictMatchesKernelBruteForce) {
  auto m = small_goe(7, 10);
  const double eps = freek::default_eps_res(m);
  for (double beta : {0.0, 0.6}) {
    auto s = freek::thermal_state(m, beta);
    const std::vector<std::string> names{"g1", "g2"};
    const Word ab{{0, 1.0}, {1, 0.0}};
    const Word abab{{0, 1.0}, {1, 0.0}, {0, 1.0}, {1, 0.0}};
    const Word ababab{{0, 1.0}, {1, 0.0}, {0, 1.0}, {1, 0.0}, {0, 1.0}, {1, 0.0}};
    for (const auto& words : std::vector<std::vector<Word>>{{ab}, {ab, ab}, {abab}, {ab, abab}, {ababab}}) {
      const Complex got = freek::strict_average_product(m, s, names, words);
      EXPECT_NEAR(std::abs(got - kernel_average(m, s, names, words, eps)), 0.0, 1e-12) << words.size();
    }
    // Diagonal ensemble for the two-point function.
    Complex diag = 0.0;
    for (int i = 0; i < m.D; ++i) diag += s.weights(i) * m.obs("g1")(i, i) * m.obs("g2")(i, i);
    EXPECT_NEAR(std::abs(freek::strict_average_product(m, s, names, {ab}) - diag), 0.0, 1e-14);
  }
}

TEST(EthTimeAverage, StrictIsLinearAndIdempotent) {
  auto m = small_goe(16, 11);
  m.observables["g12"] = m.obs("g1") + 2.0 * m.obs("g2");
  auto s = freek::thermal_state(m, 0.3);
  const Word w{{0, 1.0}, {1, 0.0}, {0, 1.0}, {1, 0.0}};
  auto avg = [&](const std::string& b) { return freek::strict_average_product(m, s, {"g1", b}, {w}); };
  // Linear in the first B slot only: build the word with a third operator.
  const Word w3{{0, 1.0}, {1, 0.0}, {0, 1.0}, {2, 0.0}};
  auto lin = [&](const std::string& b) { return freek::strict_average_product(m, s, {"g1", "g2", b}, {w3}); };
  EXPECT_NEAR(std::abs(lin("g12") - lin("g1") - 2.0 * lin("g2")), 0.0, 1e-12);
  (void)avg;
  // A time-independent word is its own average.
  const Word w0{{0, 0.0}, {1, 0.0}, {0, 0.0}, {1, 0.0}};
  auto phi = freek::thermal_functional(m, s, {"g1", "g2"});
  EXPECT_NEAR(std::abs(freek::strict_average_product(m, s, {"g1", "g2"}, {w0}) - phi(w0)), 0.0, 1e-12);
}

TEST(EthTimeAverage, FiniteWindowMatchesExactKernel) {
  auto m = small_goe(16, 12);
  auto s = freek::thermal_state(m, 0.5);
  const double T = 10.0;
  const Mat& A = m.obs("g1");
  const Mat& B = m.obs("g2");
  Complex want = 0.0;
  for (int i = 0; i < m.D; ++i)
    for (int j = 0; j < m.D; ++j)
      want += s.weights(i) * A(i, j) * B(j, i) * freek::phase_kernel(m.energies(i) - m.energies(j), T);
  auto f = [&](double t) {
    freek::CVec v(1);
    v(0) = freek::thermal_functional(m, s, {"g1", "g2"})({Letter{0, t}, Letter{1, 0.0}});
    return v;
  };
  auto avg = freek::window_averages(f, {T, 2 * T}, 0.5, 2);
  EXPECT_NEAR(std::abs(avg[0](0) - want), 0.0, 1e-12);
  Complex want2 = 0.0;
  for (int i = 0; i < m.D; ++i)
    for (int j = 0; j < m.D; ++j)
      want2 += s.weights(i) * A(i, j) * B(j, i) * freek::phase_kernel(m.energies(i) - m.energies(j), 2 * T);
  EXPECT_NEAR(std::abs(avg[1](0) - want2), 0.0, 1e-12);
  EXPECT_THROW(freek::window_averages(f, {1.0, 1.3}, 0.5), freek::ValidationError);
}

TEST(EthTimeAverage, FiniteWindowCumulantMatchesKernelSums) {
  // Every moment product averaged with the exact window kernel, by brute force.
  auto m = small_goe(5, 13);
  auto s = freek::thermal_state(m, 0.4);
  const std::vector<std::string> names{"g1", "g2"};
  for (double T : {3.0, 12.0}) {
    Complex want = 0.0;
    for (const auto& term : freek::cumulant_terms(freek::otoc_args(2, 1.0))) {
      freek::detail::IndexLayout lay(term.words);
      std::vector<int> idx(lay.n, 0);
      Complex acc = 0.0;
      for (;;) {
        double de = 0;
        for (int v = 0; v < lay.n; ++v) de += lay.net[v] * m.energies(idx[v]);
        Complex p = freek::phase_kernel(de, T);
        for (std::size_t j = 0; j < term.words.size(); ++j) {
          const int len = static_cast<int>(term.words[j].size());
          p *= s.weights(idx[lay.start[j]]);
          for (int l = 0; l < len; ++l)
            p *= m.obs(names[term.words[j][l].op])(idx[lay.start[j] + l], idx[lay.start[j] + (l + 1) % len]);
        }
        acc += p;
        int q = lay.n - 1;
        while (q >= 0 && ++idx[q] == m.D) idx[q--] = 0;
        if (q < 0) break;
      }
      want += static_cast<double>(term.coef) * acc;
    }
    auto got = freek::averaged_otoc_cumulant(m, s, "g1", "g2", 2, {T}, 0.5);
    EXPECT_NEAR(std::abs(got[0] - want), 0.0, 1e-10) << T;
  }
}

TEST(EthTimeAverage, WindowListMixesStrictAndFinite) {
  auto m = small_goe(12, 13);
  auto s = freek::thermal_state(m, 0.0);
  auto v = freek::averaged_otoc_cumulant(m, s, "g1", "g2", 2, {8.0, kInf, 4.0});
  ASSERT_EQ(v.size(), 3u);
  EXPECT_EQ(v[1], freek::strict_average_cumulant(m, s, {"g1", "g2"}, freek::otoc_args(2, 1.0)));
  EXPECT_NEAR(std::abs(v[0] - freek::averaged_otoc_cumulant(m, s, "g1", "g2", 2, {8.0})[0]), 0.0, 1e-13);
  EXPECT_NEAR(std::abs(v[2] - freek::averaged_otoc_cumulant(m, s, "g1", "g2", 2, {4.0})[0]), 0.0, 1e-13);
}

TEST(EthDistinct, InclusionExclusionMatchesBruteForce) {
  auto m = small_goe(20, 14);
  for (double beta : {0.0, 0.5})
    for (double t : {0.0, 0.9}) {
      auto s = freek::thermal_state(m, beta);
      const Complex ie = freek::distinct_index_cumulant(m, s, "g1", "g2", 2, t);
      const Complex bf = freek::distinct_index_brute_force(m, s, "g1", "g2", 2, t);
      EXPECT_NEAR(std::abs(ie - bf), 0.0, 1e-10);
    }
  auto m8 = small_goe(7, 15);
  auto s8 = freek::thermal_state(m8, 0.2);
  for (int k : {1, 3})
    EXPECT_NEAR(std::abs(freek::distinct_index_cumulant(m8, s8, "g1", "g2", k, 0.4) -
                         freek::distinct_index_brute_force(m8, s8, "g1", "g2", k, 0.4)),
                0.0, 1e-10)
        << k;
}

TEST(EthDistinct, PatternsAddUpToTheMoment) {
  auto m = small_goe(12, 16);
  auto s = freek::thermal_state(m, 0.3);
  const double t = 0.6;
  auto parts = freek::coincidence_pattern_sums(m, s, "g1", "g2", 2, t);
  EXPECT_EQ(parts.size(), 15u);
  Complex total = 0.0;
  for (const auto& [p, v] : parts) total += v;
  auto phi = freek::thermal_functional(m, s, {"g1", "g2"});
  const Word w{{0, t}, {1, 0.0}, {0, t}, {1, 0.0}};
  EXPECT_NEAR(std::abs(total - phi(w)), 0.0, 1e-10);
  auto zero = std::find_if(parts.begin(), parts.end(), [](const auto& p) { return p.first == freek::Partition::zero(4); });
  ASSERT_NE(zero, parts.end());
  EXPECT_NEAR(std::abs(zero->second - freek::distinct_index_cumulant(m, s, "g1", "g2", 2, t)), 0.0, 1e-12);
}

TEST(EthDistinct, DiagonalObservableGivesZero) {
  auto m = small_goe(10, 17);
  auto s = freek::thermal_state(m, 0.0);
  EXPECT_NEAR(std::abs(freek::distinct_index_cumulant(m, s, "energy", "g2", 2, 0.5)), 0.0, 1e-14);
}

TEST(EthFactorization, IdentityBAndGoe) {
  auto m = small_goe(24, 18);
  for (double beta : {0.0, 0.4})
    for (int k : {2, 3}) {
      auto f = freek::otoc_long_time_factorization(m, freek::thermal_state(m, beta), "g1", "identity", k);
      EXPECT_NEAR(std::abs(f.residual), 0.0, 1e-10);
    }
  // With <B> != 0 the k = 2 formula is kappa_2(A) <B>^2 + <A>^2 <B^2> = 0.25.
  auto big = freek::goe_model(128, 19);
  big.add_observable("b_shift", freek::sign_alternating(128) + 0.5 * Mat::Identity(128, 128));
  auto f = freek::otoc_long_time_factorization(big, freek::thermal_state(big, 0.0), "sign_split", "b_shift", 2);
  EXPECT_NEAR(f.rhs.real(), 0.25, 1e-12);
  EXPECT_LE(std::abs(f.residual), 10.0 / 128);
}

TEST(EthFreeTime, ConservedNeverReachesAndGoeOrdering) {
  auto m = small_goe(64, 20);
  auto s = freek::thermal_state(m, 0.0);
  std::vector<double> grid;
  for (int i = 0; i <= 40; ++i) grid.push_back(0.25 * i);
  auto c = freek::free_k_time(m, s, "energy", "energy", 1, 0.05, grid);
  EXPECT_FALSE(c.time.has_value());
  auto big = freek::goe_model(256, 21);
  auto sb = freek::thermal_state(big, 0.0);
  auto t1 = freek::free_k_time(big, sb, "sign_split", "sign_split", 1, 0.05, grid, 2);
  auto t2 = freek::free_k_time(big, sb, "sign_split", "sign_split", 2, 0.05, grid, 2);
  ASSERT_TRUE(t1.time && t2.time);
  // Without locality the two times are close, and kappa_4 settles first:
  // kappa_2 keeps a slowly decaying oscillating tail.
  EXPECT_LT(*t2.time, *t1.time);
  EXPECT_LE(*t1.time - *t2.time, 0.5);
  auto loose = freek::free_k_time(big, sb, "sign_split", "sign_split", 1, 0.2, grid);
  ASSERT_TRUE(loose.time);
  EXPECT_LE(*loose.time, *t1.time);
}

TEST(EthAppendixB, StrictGapIsTheCrossingTerm) {
  auto m = small_goe(32, 22);
  for (double beta : {0.0, 0.5}) {
    auto s = freek::thermal_state(m, beta);
    auto r = freek::appendix_b_factorization(m, s, "g1", "g2", {});
    EXPECT_NEAR(std::abs(r.gap - r.crossing), 0.0, 1e-14);
    auto d = freek::appendix_b_factorization(m, s, "energy", "g2", {});
    EXPECT_NEAR(std::abs(d.gap), 0.0, 1e-15);
    // A long finite window approaches the strict value.
    auto fw = freek::appendix_b_factorization(m, s, "g1", "g2", {4000.0}, 1.0);
    EXPECT_NEAR(std::abs(fw.joint - r.joint), 0.0, 0.05 * std::abs(r.joint));
  }
}

TEST(EthAppendixB, DeltaStructure) {
  auto m = small_goe(16, 23);
  auto s = freek::thermal_state(m, 0.2);
  auto c = freek::appendix_b_delta_check(m, s, "g1", "g2", freek::default_eps_res(m));
  EXPECT_EQ(c.quadruples, 65536u);
  EXPECT_EQ(c.mismatches, 0u);
  EXPECT_NEAR(std::abs(c.joint_kernel - c.joint_delta), 0.0, 1e-15);
  auto r = freek::appendix_b_factorization(m, s, "g1", "g2", {});
  EXPECT_NEAR(std::abs(c.joint_delta - r.joint), 0.0, 1e-14);
}

TEST(EthDeutsch, OverlapsAndCumulants) {
  const int D = 96;
  freek::Rng rng = freek::substream(24, 0);
  Mat h = freek::goe_hamiltonian(D, rng);
  freek::DeutschSpec spec;
  spec.perturbation = std::sqrt(double(D)) * freek::goe_hamiltonian(D, rng);
  spec.c = 1.0 / std::sqrt(double(D));
  spec.a = 0.5;
  spec.lambdas = {1.0, 2.0};
  auto r = freek::deutsch_ensemble(h, freek::sign_split(D), spec);
  EXPECT_LE(r.max_stochastic_error, 1e-10);
  ASSERT_EQ(r.pairs.size(), 3u);
  // Same coupling: the single-operator cumulant of a +-1 observable.
  EXPECT_NEAR(r.pairs[0].kappa4.real(), -1.0, 1e-10);
  EXPECT_LE(std::abs(r.pairs[1].kappa4), 10.0 / D);
  EXPECT_GT(r.bandwidth[1], r.bandwidth[0]);
  // Without perturbation both labels see the same matrix.
  spec.c = 0.0;
  auto z = freek::deutsch_ensemble(h, freek::sign_split(D), spec);
  EXPECT_NEAR(z.pairs[1].kappa4.real(), -1.0, 1e-10);
}
