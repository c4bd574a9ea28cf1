#include <gtest/gtest.h>

#include <random>
#include <set>

#include "freek/permutation.hpp"
#include "oracles.hpp"

using freek::Partition;
using freek::Permutation;

TEST(Permutation, BasicsAndLength) {
  auto g = Permutation::gamma(4);
  EXPECT_EQ(g.one_line(), (std::vector<int>{2, 3, 4, 1}));
  EXPECT_EQ(g.num_cycles(), 1);
  EXPECT_EQ(g.length(), 3);
  EXPECT_EQ(Permutation::identity(5).length(), 0);
  auto t = Permutation::one_line({2, 1, 3});
  EXPECT_EQ(freek::compose(t, t), Permutation::identity(3));
  EXPECT_THROW(Permutation::one_line({1, 1, 2}), freek::ValidationError);
}

TEST(Permutation, ComposeIsRightToLeft) {
  auto a = Permutation::one_line({2, 3, 1});
  auto b = Permutation::one_line({1, 3, 2});
  auto ab = freek::compose(a, b);
  for (int i = 0; i < 3; ++i) EXPECT_EQ(ab(i), a(b(i)));
}

TEST(Permutation, LexIndexRoundTrip) {
  auto all = freek::all_permutations(5);
  ASSERT_EQ(all.size(), 120u);
  EXPECT_EQ(all[0], Permutation::identity(5));
  for (std::size_t i = 0; i < all.size(); ++i) EXPECT_EQ(freek::lex_index(all[i]), i);
}

TEST(Permutation, GroupAxiomsAndLengthProperties) {
  auto all = freek::all_permutations(4);
  for (const auto& a : all) {
    EXPECT_EQ(freek::compose(a, a.inverse()), Permutation::identity(4));
    EXPECT_EQ(a.length(), a.inverse().length());
    EXPECT_EQ(a.num_cycles(), oracle::cycles(a.images()));
    for (const auto& b : all) {
      // triangle inequality and conjugation invariance of cycle count
      EXPECT_LE(freek::compose(a, b).length(), a.length() + b.length());
      EXPECT_EQ(freek::compose(b.inverse(), freek::compose(a, b)).num_cycles(), a.num_cycles());
    }
  }
}

TEST(Permutation, GeodesicCountsAreCatalan) {
  EXPECT_EQ(freek::geodesic_set(Permutation::gamma(4)).size(), 14u);
  EXPECT_EQ(freek::geodesic_set(Permutation::gamma(3)).size(), 5u);
  for (int k = 1; k <= 6; ++k)
    EXPECT_EQ(freek::geodesic_set(Permutation::gamma(k)).size(), static_cast<std::size_t>(oracle::catalan(k)));
}

TEST(Permutation, GeodesicToGammaIsNcBijection) {
  for (int k = 1; k <= 6; ++k) {
    std::set<Partition> seen;
    for (const auto& b : freek::geodesic_set(Permutation::gamma(k))) {
      auto r = freek::permutation_to_nc(b);
      ASSERT_TRUE(r) << b.str() << ": " << r.reason;
      EXPECT_EQ(Permutation::from_partition(*r.partition), b);
      seen.insert(*r.partition);
    }
    EXPECT_EQ(seen.size(), freek::enumerate_nc(k).size());
  }
}

TEST(Permutation, PermutationToNcExamples) {
  auto ok = freek::permutation_to_nc(Permutation::one_line({1, 3, 2}));
  ASSERT_TRUE(ok);
  EXPECT_EQ(*ok.partition, Partition::one_based({{1}, {2, 3}}));
  auto bad = freek::permutation_to_nc(Permutation::one_line({3, 1, 2}));
  EXPECT_FALSE(bad);
  EXPECT_NE(bad.reason.find("(i)"), std::string::npos);
  // (1 3)(2 4): each orbit of size 2 passes (i), the partition crosses.
  auto cross = freek::permutation_to_nc(Permutation::one_line({3, 4, 1, 2}));
  EXPECT_FALSE(cross);
  EXPECT_NE(cross.reason.find("(ii)"), std::string::npos);
  EXPECT_TRUE(freek::permutation_to_nc(Permutation::gamma(3)));
}

TEST(Permutation, DualityOfGeodesicElements) {
  // For beta between id and gamma, the orbits of beta^{-1} o gamma form the
  // Kreweras complement of the orbits of beta.
  for (int k = 1; k <= 6; ++k) {
    auto g = Permutation::gamma(k);
    for (const auto& b : freek::geodesic_set(g)) {
      auto dual = freek::compose(b.inverse(), g);
      EXPECT_EQ(dual.orbits(), freek::kreweras(b.orbits())) << b.str();
      EXPECT_TRUE(freek::on_geodesic(dual, g));
    }
  }
}

TEST(Permutation, CanonicalizationByConjugation) {
  // canonical input: rho is the identity
  auto c0 = freek::canonicalize_by_conjugation(Permutation::one_line({4, 3, 2, 1}));
  EXPECT_EQ(c0.rho, Permutation::identity(4));
  // any single k-cycle becomes gamma_k
  for (const auto& a : freek::all_permutations(5)) {
    auto c = freek::canonicalize_by_conjugation(a);
    EXPECT_EQ(c.alpha, freek::compose(c.rho.inverse(), freek::compose(a, c.rho)));
    EXPECT_TRUE(freek::permutation_to_nc(c.alpha)) << a.str();
    EXPECT_EQ(freek::cycle_type(c.alpha), freek::cycle_type(a));
    if (a.num_cycles() == 1) EXPECT_EQ(c.alpha, Permutation::gamma(5)) << a.str();
  }
  // crossing two-cycle product (1 4 2)(3 6 5)
  auto a = Permutation::one_line({4, 1, 6, 2, 3, 5});
  EXPECT_FALSE(freek::permutation_to_nc(a));
  auto c = freek::canonicalize_by_conjugation(a);
  EXPECT_EQ(c.alpha.orbits(), Partition::one_based({{1, 2, 3}, {4, 5, 6}}));
}

TEST(Permutation, MoebiusOnGeodesicMatchesNcLattice) {
  auto g = Permutation::gamma(4);
  for (const auto& b : freek::geodesic_set(g))
    EXPECT_EQ(freek::permutation_moebius(b, g), freek::moebius(b.orbits(), Partition::one(4)));
  EXPECT_EQ(freek::permutation_moebius(Permutation::identity(3), Permutation::gamma(3)), 2);
}
