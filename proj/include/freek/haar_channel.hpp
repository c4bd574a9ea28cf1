#pragma once

#include <string>
#include <vector>

#include "freek/dense.hpp"
#include "freek/free_moments.hpp"
#include "freek/permutation.hpp"
#include "freek/weingarten.hpp"

namespace freek {

enum class ChannelMode { Exact, Asymptotic };

inline const char* mode_name(ChannelMode m) { return m == ChannelMode::Exact ? "exact" : "asymptotic"; }

// Phi(A_1 x .. x A_k) = sum_alpha coeffs[alpha] W_{alpha^{-1}}, alpha in
// lexicographic order.
struct ChannelCoefficients {
  int k = 0;
  int D = 0;
  ChannelMode mode = ChannelMode::Exact;
  std::vector<Permutation> perms;
  std::vector<Complex> coeffs;

  Complex operator()(const Permutation& a) const { return coeffs.at(lex_index(a)); }
};

// Words read along the cycles of beta, each cycle from its least element.
inline std::vector<Word> cycle_words(const Permutation& beta, const Args& args) {
  require(beta.size() == static_cast<int>(args.size()), "permutation size does not match argument count");
  std::vector<Word> out;
  for (const auto& c : beta.cycles()) out.push_back(concat(args, c));
  return out;
}

// <A_1 .. A_k>_beta: product of normalised moments along beta's cycles.
inline Complex cycle_moment(const Permutation& beta, const Args& args, const ExpectationFunctional& phi) {
  WideComplex p = 1.0L;
  for (const auto& w : cycle_words(beta, args)) p *= widen(phi(w));
  return narrow(p);
}

// Tr(W_beta A_1 x .. x A_k) = D^{#beta} <A_1 .. A_k>_beta.
inline Complex trace_permuted(const Permutation& beta, const Args& args, const ExpectationFunctional& phi, int D) {
  return std::pow(static_cast<double>(D), beta.num_cycles()) * cycle_moment(beta, args, phi);
}

// coeffs(alpha) = sum_beta Wg(alpha, beta) Tr(W_beta A_1 x .. x A_k).
inline ChannelCoefficients channel_exact(const Args& args, const ExpectationFunctional& phi, int D) {
  const int k = static_cast<int>(args.size());
  require(k >= 1, "channel needs at least one operator");
  const auto& t = cached_weingarten(k, D);
  std::vector<WideComplex> tr(t.perms.size());
  for (std::size_t b = 0; b < t.perms.size(); ++b) tr[b] = widen(trace_permuted(t.perms[b], args, phi, D));
  ChannelCoefficients c{k, D, ChannelMode::Exact, t.perms, std::vector<Complex>(t.perms.size())};
  for (std::size_t a = 0; a < t.perms.size(); ++a) {
    WideComplex s = 0.0L;
    for (std::size_t b = 0; b < t.perms.size(); ++b) s += static_cast<long double>(t.wg[a][b].convert_to<long double>()) * tr[b];
    c.coeffs[a] = narrow(s);
  }
  return c;
}

// Exact rational coefficients for rational moment data; moment(w) = <w>.
inline std::vector<Rational> channel_exact_rational(const Args& args, const std::function<Rational(const Word&)>& moment,
                                                    int D) {
  const int k = static_cast<int>(args.size());
  require(k >= 1, "channel needs at least one operator");
  const auto& t = cached_weingarten(k, D);
  std::vector<Rational> tr(t.perms.size());
  for (std::size_t b = 0; b < t.perms.size(); ++b) {
    Rational p = Rational(ipow(D, t.perms[b].num_cycles()));
    for (const auto& w : cycle_words(t.perms[b], args)) p *= moment(w);
    tr[b] = p;
  }
  std::vector<Rational> out(t.perms.size());
  for (std::size_t a = 0; a < t.perms.size(); ++a)
    for (std::size_t b = 0; b < t.perms.size(); ++b) out[a] += t.wg[a][b] * tr[b];
  return out;
}

// kappa_alpha via conjugation: relabel so that alpha's orbits become an
// interval partition, then take the partitioned free cumulant.
inline Complex kappa_alpha(const Permutation& alpha, const Args& args, const ExpectationFunctional& phi) {
  require(alpha.size() == static_cast<int>(args.size()), "permutation size does not match argument count");
  auto c = canonicalize_by_conjugation(alpha);
  Args r(args.size());
  for (int i = 0; i < alpha.size(); ++i) r[i] = args[c.rho(i)];
  WideComplex p = 1.0L;
  for (const auto& b : c.alpha.orbits().blocks()) {
    Args sub;
    for (int i : b) sub.push_back(r[i]);
    p *= widen(free_cumulant(sub, phi));
  }
  return narrow(p);
}

// kappa_alpha = sum over beta on the geodesic id -> alpha of
// mu(beta, alpha) <A>_beta.
inline Complex kappa_alpha_geodesic(const Permutation& alpha, const Args& args, const ExpectationFunctional& phi) {
  WideComplex s = 0.0L;
  for (const auto& b : geodesic_set(alpha))
    s += static_cast<long double>(permutation_moebius(b, alpha)) * widen(cycle_moment(b, args, phi));
  return narrow(s);
}

// Leading large-D form: coeffs(alpha) = kappa_alpha / D^{k - #alpha}.
inline ChannelCoefficients channel_asymptotic(const Args& args, const ExpectationFunctional& phi, int D) {
  const int k = static_cast<int>(args.size());
  require(k >= 1 && k <= 7, "asymptotic channel supports 1 <= k <= 7");
  require(D >= 1, "dimension must be positive");
  ChannelCoefficients c{k, D, ChannelMode::Asymptotic, all_permutations(k), {}};
  for (const auto& a : c.perms)
    c.coeffs.push_back(kappa_alpha(a, args, phi) / std::pow(static_cast<double>(D), a.length()));
  return c;
}

// Sum_alpha coeffs(alpha) W_{alpha^{-1}} as a dense D^k x D^k matrix.
inline Mat reconstruct(const ChannelCoefficients& c) {
  require(ipow_size(c.D, c.k) <= 4096, "dense reconstruction limited to D^k <= 4096");
  const std::size_t N = ipow_size(c.D, c.k);
  Mat out = Mat::Zero(N, N);
  for (std::size_t a = 0; a < c.perms.size(); ++a) out += c.coeffs[a] * permutation_operator(c.perms[a].inverse(), c.D);
  return out;
}

// Tr(W_beta O) for a dense operator on k replicas.
inline Complex trace_with_permutation(const Permutation& beta, const Mat& O, int D) {
  const int k = beta.size();
  const std::size_t N = ipow_size(D, k);
  require(static_cast<std::size_t>(O.rows()) == N && O.cols() == O.rows(), "operator size is not D^k");
  Complex s = 0.0;
  std::vector<int> e(k);
  for (std::size_t j = 0; j < N; ++j) {
    auto d = digits(j, D, k);
    for (int l = 0; l < k; ++l) e[l] = d[beta(l)];
    s += O(j, undigits(e, D));
  }
  return s;
}

// Exact Haar k-fold channel applied to an arbitrary dense operator.
inline Mat haar_channel_dense(const Mat& O, int k, int D) {
  const auto& t = cached_weingarten(k, D);
  std::vector<Complex> tr;
  for (const auto& b : t.perms) tr.push_back(trace_with_permutation(b, O, D));
  const std::size_t N = ipow_size(D, k);
  Mat out = Mat::Zero(N, N);
  for (std::size_t a = 0; a < t.perms.size(); ++a) {
    Complex s = 0.0;
    for (std::size_t b = 0; b < t.perms.size(); ++b) s += t.wg[a][b].convert_to<double>() * tr[b];
    out += s * permutation_operator(t.perms[a].inverse(), D);
  }
  return out;
}

// Haar channel as the Hilbert-Schmidt projection onto span{W_alpha}. Unlike
// haar_channel_dense this also covers D < k, where the W_alpha are linearly
// dependent; the Gram matrix is inverted on its range in floating point.
inline Mat haar_projection_dense(const Mat& O, int k, int D) {
  require(k >= 1 && k <= 7 && D >= 1, "projection needs 1 <= k <= 7 and D >= 1");
  const auto perms = all_permutations(k);
  const auto m = static_cast<Eigen::Index>(perms.size());
  Eigen::MatrixXd q(m, m);
  for (Eigen::Index a = 0; a < m; ++a)
    for (Eigen::Index b = 0; b < m; ++b)
      q(a, b) = std::pow(static_cast<double>(D), compose(perms[a].inverse(), perms[b]).num_cycles());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(q);
  const double cut = 1e-12 * es.eigenvalues().cwiseAbs().maxCoeff();
  Eigen::VectorXd inv = es.eigenvalues().unaryExpr([cut](double x) { return std::abs(x) > cut ? 1.0 / x : 0.0; });
  Eigen::MatrixXd qp = es.eigenvectors() * inv.asDiagonal() * es.eigenvectors().transpose();
  std::vector<Complex> tr;
  for (const auto& b : perms) tr.push_back(trace_with_permutation(b, O, D));
  const std::size_t N = ipow_size(D, k);
  Mat out = Mat::Zero(N, N);
  for (Eigen::Index a = 0; a < m; ++a) {
    Complex s = 0.0;
    for (Eigen::Index b = 0; b < m; ++b) s += qp(a, b) * tr[b];
    out += s * permutation_operator(perms[a].inverse(), D);
  }
  return out;
}

// <A_1^U B_1 .. A_k^U B_k> = sum_{pi in NC(k)} kappa_pi(A) <B>_{K(pi)}.
inline Complex otoc_free(const Args& a, const ExpectationFunctional& phi_a, const Args& b,
                         const ExpectationFunctional& phi_b) {
  return mixed_moment_free(a, phi_a, b, phi_b);
}

// The same quantity by contracting channel coefficients:
// (1/D) sum_alpha coeffs(alpha) Tr(W_gamma W_{alpha^{-1}} B_1 x .. x B_k),
// where W_gamma W_{alpha^{-1}} = W_{alpha^{-1} o gamma}.
inline Complex otoc_channel(const ChannelCoefficients& c, const Args& b, const ExpectationFunctional& phi_b) {
  require(static_cast<int>(b.size()) == c.k, "B family size does not match channel order");
  const auto g = Permutation::gamma(c.k);
  WideComplex s = 0.0L;
  for (std::size_t a = 0; a < c.perms.size(); ++a) {
    const auto p = compose(c.perms[a].inverse(), g);
    s += widen(c.coeffs[a]) * std::pow(static_cast<long double>(c.D), p.num_cycles() - 1) * widen(cycle_moment(p, b, phi_b));
  }
  return narrow(s);
}

// Exact Haar average E<w> at dimension D, where letters with rotated(l)
// stand for U^dag A U and the others for fixed operators; phi evaluates words
// of the unrotated operators (tracial). Consecutive rotated letters merge
// into one argument, so a word needs a Weingarten table of order equal to its
// number of rotated runs.
inline ExpectationFunctional haar_average_functional(ExpectationFunctional phi, int D,
                                                     std::function<bool(const Letter&)> rotated) {
  return ExpectationFunctional(ExpectationFunctional::Kind::EnsembleAveraged, [=](const Word& w) -> Complex {
    std::size_t nr = 0;
    for (const auto& l : w) nr += rotated(l);
    if (nr == 0 || nr == w.size()) return phi(w);
    std::size_t s = 0;
    while (!(rotated(w[s]) && !rotated(w[(s + w.size() - 1) % w.size()]))) ++s;
    Word r(w.begin() + s, w.end());
    r.insert(r.end(), w.begin(), w.begin() + s);
    Args a, b;
    for (std::size_t i = 0; i < r.size();) {
      const bool fa = rotated(r[i]);
      Word run;
      while (i < r.size() && rotated(r[i]) == fa) run.push_back(r[i++]);
      (fa ? a : b).push_back(std::move(run));
    }
    return otoc_channel(channel_exact(a, phi, D), b, phi);
  });
}

// One term kappa_pi(A) <B>_{K(pi)} of the free OTOC expansion.
struct OtocTerm {
  Partition pi;
  Partition dual;
  std::string a_part;
  std::string b_part;
  std::string str() const { return a_part + b_part; }
};

inline std::vector<OtocTerm> otoc_terms(int k) {
  std::vector<OtocTerm> out;
  for (const auto& pi : enumerate_nc(k)) {
    OtocTerm t{pi, kreweras(pi), "", ""};
    for (const auto& bl : pi.blocks()) {
      t.a_part += "κ" + std::to_string(bl.size()) + "(";
      for (std::size_t i = 0; i < bl.size(); ++i) t.a_part += (i ? ",A" : "A") + std::to_string(bl[i] + 1);
      t.a_part += ")";
    }
    for (const auto& bl : t.dual.blocks()) {
      t.b_part += "⟨";
      for (int i : bl) t.b_part += "B" + std::to_string(i + 1);
      t.b_part += "⟩";
    }
    out.push_back(std::move(t));
  }
  return out;
}

}  // namespace freek
