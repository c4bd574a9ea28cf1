#pragma once

#include <boost/multiprecision/cpp_int.hpp>

#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <utility>
#include <vector>

#include "freek/core.hpp"
#include "freek/permutation.hpp"

namespace freek {

using BigInt = boost::multiprecision::cpp_int;
using Rational = boost::multiprecision::cpp_rational;

template <class T>
using Grid = std::vector<std::vector<T>>;

// "p/q" with q > 0 always present, reduced.
inline std::string rational_str(const Rational& r) {
  return boost::multiprecision::numerator(r).str() + "/" + boost::multiprecision::denominator(r).str();
}

inline Rational parse_rational(const std::string& s) {
  auto slash = s.find('/');
  if (slash == std::string::npos) return Rational(BigInt(s));
  BigInt q(s.substr(slash + 1));
  require(q != 0, "zero denominator in rational '" + s + "'");
  return Rational(BigInt(s.substr(0, slash)), q);
}

inline BigInt ipow(long long base, int e) {
  BigInt r = 1;
  for (int i = 0; i < e; ++i) r *= base;
  return r;
}

// Fraction-free (Bareiss) solve of A X = det(A) B over the integers.
// Returns {X, det}; det == 0 signals a singular system.
inline std::pair<Grid<BigInt>, BigInt> bareiss_solve(Grid<BigInt> A, Grid<BigInt> B) {
  const std::size_t n = A.size();
  const std::size_t m = n ? B[0].size() : 0;
  require(B.size() == n, "Bareiss: right-hand side has wrong row count");
  for (std::size_t i = 0; i < n; ++i) A[i].insert(A[i].end(), B[i].begin(), B[i].end());
  BigInt prev = 1;
  int sign = 1;
  for (std::size_t k = 0; k < n; ++k) {
    std::size_t piv = k;
    while (piv < n && A[piv][k] == 0) ++piv;
    if (piv == n) return {{}, BigInt(0)};
    if (piv != k) {
      std::swap(A[piv], A[k]);
      sign = -sign;
    }
    for (std::size_t i = k + 1; i < n; ++i) {
      for (std::size_t j = k + 1; j < n + m; ++j)
        A[i][j] = (A[k][k] * A[i][j] - A[i][k] * A[k][j]) / prev;
      A[i][k] = 0;
    }
    prev = A[k][k];
  }
  BigInt det = sign * A[n - 1][n - 1];
  // Back substitution; divisions are exact by Cramer's rule.
  Grid<BigInt> X(n, std::vector<BigInt>(m));
  for (std::size_t c = 0; c < m; ++c)
    for (std::size_t ii = n; ii-- > 0;) {
      BigInt acc = A[n - 1][n - 1] * A[ii][n + c];
      for (std::size_t j = ii + 1; j < n; ++j) acc -= A[ii][j] * X[j][c];
      X[ii][c] = acc / A[ii][ii];
    }
  if (sign < 0)
    for (auto& row : X)
      for (auto& x : row) x = -x;
  return {std::move(X), det};
}

// Gram matrix Q(alpha, beta) = D^{#(alpha^{-1} beta)} over S_k in lex order.
inline Grid<BigInt> gram_matrix(int k, int D) {
  auto perms = all_permutations(k);
  Grid<BigInt> Q(perms.size(), std::vector<BigInt>(perms.size()));
  for (std::size_t a = 0; a < perms.size(); ++a) {
    auto ai = perms[a].inverse();
    for (std::size_t b = 0; b < perms.size(); ++b)
      Q[a][b] = ipow(D, compose(ai, perms[b]).num_cycles());
  }
  return Q;
}

struct WeingartenTable {
  int k = 0;
  int D = 0;
  std::vector<Permutation> perms;  // lexicographic S_k
  Grid<BigInt> gram;
  Grid<Rational> wg;

  // Wg(alpha, beta) by permutation.
  const Rational& operator()(const Permutation& a, const Permutation& b) const {
    return wg[lex_index(a)][lex_index(b)];
  }
};

namespace detail {

inline std::vector<std::vector<int>> partitions_of_int(int k) {
  std::vector<std::vector<int>> out;
  std::vector<int> cur;
  std::function<void(int, int)> rec = [&](int rem, int maxp) {
    if (rem == 0) {
      out.push_back(cur);
      return;
    }
    for (int p = std::min(rem, maxp); p >= 1; --p) {
      cur.push_back(p);
      rec(rem - p, p);
      cur.pop_back();
    }
  };
  rec(k, k);
  return out;
}

}  // namespace detail

// Wg = Q^{-1}, exact. Wg is a class function of alpha^{-1} beta, so the
// inverse is found from the p(k) x p(k) system restricted to the centre of
// the group algebra, solved fraction-free, then spread over S_k x S_k.
inline WeingartenTable weingarten_table(int k, int D) {
  require(k >= 1 && k <= 6, "Weingarten tables supported for 1 <= k <= 6");
  require(D >= 1, "dimension must be positive");
  if (D < k)
    throw RegimeError("pseudo-inverse regime unsupported: D = " + std::to_string(D) + " < k = " +
                      std::to_string(k));
  WeingartenTable t;
  t.k = k;
  t.D = D;
  t.perms = all_permutations(k);
  t.gram = gram_matrix(k, D);
  const std::size_t N = t.perms.size();

  auto types = detail::partitions_of_int(k);
  std::map<std::vector<int>, std::size_t> type_index;
  for (std::size_t i = 0; i < types.size(); ++i) type_index[types[i]] = i;
  std::vector<std::size_t> cls(N);
  std::vector<std::size_t> rep(types.size(), N);
  for (std::size_t i = 0; i < N; ++i) {
    cls[i] = type_index.at(cycle_type(t.perms[i]));
    if (rep[cls[i]] == N) rep[cls[i]] = i;
  }
  // Row r: sum_beta D^{#beta} w[class(beta^{-1} gamma_r)] = delta(gamma_r = id).
  const std::size_t P = types.size();
  Grid<BigInt> M(P, std::vector<BigInt>(P, 0));
  Grid<BigInt> rhs(P, std::vector<BigInt>(1, 0));
  for (std::size_t r = 0; r < P; ++r) {
    const auto& g = t.perms[rep[r]];
    for (std::size_t b = 0; b < N; ++b) {
      auto c = cls[lex_index(compose(t.perms[b].inverse(), g))];
      M[r][c] += ipow(D, t.perms[b].num_cycles());
    }
    rhs[r][0] = (rep[r] == 0) ? 1 : 0;
  }
  auto [x, det] = bareiss_solve(M, rhs);
  if (det == 0) throw RegimeError("pseudo-inverse regime unsupported: Gram matrix singular");
  std::vector<Rational> w(P);
  for (std::size_t c = 0; c < P; ++c) w[c] = Rational(x[c][0], det);

  t.wg.assign(N, std::vector<Rational>(N));
  for (std::size_t a = 0; a < N; ++a) {
    auto ai = t.perms[a].inverse();
    for (std::size_t b = 0; b < N; ++b) t.wg[a][b] = w[cls[lex_index(compose(ai, t.perms[b]))]];
  }
  return t;
}

// Memoised table access; tables are immutable once built.
inline const WeingartenTable& cached_weingarten(int k, int D) {
  static std::mutex m;
  static std::map<std::pair<int, int>, std::shared_ptr<const WeingartenTable>> cache;
  {
    std::lock_guard<std::mutex> lock(m);
    auto it = cache.find({k, D});
    if (it != cache.end()) return *it->second;
  }
  auto t = std::make_shared<const WeingartenTable>(weingarten_table(k, D));
  std::lock_guard<std::mutex> lock(m);
  return *cache.emplace(std::make_pair(k, D), t).first->second;
}

// Leading-order Wg(alpha, beta) = mu(beta, alpha) / D^{2k - #(beta^{-1} alpha)}
// for beta on a geodesic from the identity to alpha; zero otherwise.
inline Rational weingarten_asymptotic(const Permutation& alpha, const Permutation& beta, int D) {
  require(alpha.size() == beta.size(), "permutation sizes differ");
  require(D >= 1, "dimension must be positive");
  if (!on_geodesic(beta, alpha)) return Rational(0);
  const int k = alpha.size();
  int e = 2 * k - compose(beta.inverse(), alpha).num_cycles();
  return Rational(BigInt(permutation_moebius(beta, alpha)), ipow(D, e));
}

}  // namespace freek
