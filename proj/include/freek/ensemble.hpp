#pragma once

#include <Eigen/Eigenvalues>
#include <boost/random/normal_distribution.hpp>
#include <boost/random/uniform_01.hpp>

#include <cmath>
#include <limits>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <thread>
#include <vector>

#include "freek/dense.hpp"
#include "freek/free_moments.hpp"
#include "freek/haar_channel.hpp"

namespace freek {

using Rng = std::mt19937_64;

// Independent stream for sample `index` of a run seeded with `seed`.
inline Rng substream(std::uint64_t seed, std::uint64_t index) {
  std::seed_seq s{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                  static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32)};
  return Rng(s);
}

inline double uniform01(Rng& rng) { return boost::random::uniform_01<double>()(rng); }

// Complex Ginibre matrix, entries with E|z|^2 = 1.
inline Mat ginibre(int rows, int cols, Rng& rng) {
  boost::random::normal_distribution<double> n(0.0, std::sqrt(0.5));
  Mat g(rows, cols);
  for (int j = 0; j < cols; ++j)
    for (int i = 0; i < rows; ++i) g(i, j) = Complex(n(rng), n(rng));
  return g;
}

// First c columns of a Haar unitary: QR of a D x c Ginibre matrix with the
// phases of R's diagonal moved into Q.
inline Mat haar_isometry(int D, int c, Rng& rng) {
  require(D >= 1 && c >= 1 && c <= D, "isometry needs 1 <= c <= D");
  Eigen::HouseholderQR<Mat> qr(ginibre(D, c, rng));
  Mat q = qr.householderQ() * Mat::Identity(D, c);
  const Mat& r = qr.matrixQR();
  for (int j = 0; j < c; ++j) {
    const Complex d = r(j, j);
    if (std::abs(d) > 0) q.col(j) *= d / std::abs(d);
  }
  return q;
}

inline Mat sample_haar(int D, Rng& rng) {
  require(D >= 1, "dimension must be positive");
  return haar_isometry(D, D, rng);
}

// Draws A^U = U^dagger A U with U Haar. A Hermitian A is rotated through its
// eigenbasis; with at most two distinct eigenvalues only a thin isometry is
// needed: A^U = l0 + (l1 - l0) Y Y^dagger.
class HaarConjugator {
 public:
  explicit HaarConjugator(const Mat& A) : A_(A), D_(static_cast<int>(A.rows())) {
    require(A.rows() == A.cols() && A.rows() > 0, "operator must be square");
    if (!is_hermitian(A, 1e-12)) return;
    hermitian_ = true;
    Eigen::SelfAdjointEigenSolver<Mat> es(A);
    evals_ = es.eigenvalues();
    const double scale = std::max(1.0, evals_.cwiseAbs().maxCoeff());
    std::vector<double> levels;
    std::vector<int> mult;
    for (int i = 0; i < D_; ++i) {
      if (levels.empty() || evals_[i] - levels.back() > 1e-10 * scale) {
        levels.push_back(evals_[i]);
        mult.push_back(0);
      }
      ++mult.back();
    }
    if (levels.size() <= 2) {
      two_level_ = true;
      if (levels.size() == 1) {
        base_ = levels[0];
        rank_ = 0;
      } else {
        // Put the thin factor on the rarer level.
        int rare = mult[0] <= mult[1] ? 0 : 1;
        base_ = levels[1 - rare];
        jump_ = levels[rare] - levels[1 - rare];
        rank_ = mult[rare];
      }
    }
  }

  int dim() const { return D_; }

  Mat operator()(Rng& rng) const {
    if (two_level_) {
      Mat m = Mat::Zero(D_, D_);
      if (rank_ > 0) {
        // Y Y^dagger is the projector onto the span of a Ginibre G, so
        // W = G L^{-dagger} with L L^dagger = G^dagger G gives W W^dagger = Y Y^dagger
        // without forming Q.
        const Mat g = ginibre(D_, rank_, rng);
        Mat gram = Mat::Zero(rank_, rank_);
        gram.selfadjointView<Eigen::Lower>().rankUpdate(g.adjoint());
        const Eigen::LLT<Mat> llt(gram);
        const Mat w = llt.matrixL().solve(g.adjoint()).adjoint();
        m.selfadjointView<Eigen::Lower>().rankUpdate(w, jump_);
        m.triangularView<Eigen::StrictlyUpper>() = m.adjoint();
      }
      m.diagonal().array() += base_;
      return m;
    }
    Mat u = sample_haar(D_, rng);
    if (hermitian_) return u.adjoint() * (evals_.cast<Complex>().asDiagonal() * u);
    return u.adjoint() * A_ * u;
  }

 private:
  Mat A_;
  int D_;
  bool hermitian_ = false;
  bool two_level_ = false;
  Eigen::VectorXd evals_;
  double base_ = 0, jump_ = 0;
  int rank_ = 0;
};

// (e^{i d T} - 1) / (i d T): the average of e^{i d t} over t in [0, T].
// T = infinity gives the strict average, 1 for |d| < eps and 0 otherwise.
inline Complex phase_kernel(double d, double T, double eps = 0.0) {
  if (std::isinf(T)) return std::abs(d) <= eps ? 1.0 : 0.0;
  const double x = d * T;
  if (std::abs(x) < 1e-8) return Complex(1.0, x / 2);
  return (std::exp(Complex(0, x)) - 1.0) / Complex(0, x);
}

class Ensemble {
 public:
  enum class Kind { Haar, Discrete, Hamiltonian };

  static Ensemble haar(int D) {
    require(D >= 1, "dimension must be positive");
    Ensemble e;
    e.kind_ = Kind::Haar;
    e.D_ = D;
    return e;
  }

  static Ensemble discrete(std::vector<Mat> us, std::vector<double> probs = {}) {
    require(!us.empty(), "discrete ensemble needs at least one unitary");
    const auto D = us[0].rows();
    if (probs.empty()) probs.assign(us.size(), 1.0 / us.size());
    require(probs.size() == us.size(), "probabilities and unitaries differ in number");
    double s = 0;
    for (double p : probs) {
      require(p >= 0, "probabilities must be nonnegative");
      s += p;
    }
    require(std::abs(s - 1.0) <= 1e-12, "probabilities must sum to 1");
    for (const auto& u : us) {
      require(u.rows() == D && u.cols() == D, "unitaries must share one dimension");
      require((u.adjoint() * u - Mat::Identity(D, D)).cwiseAbs().maxCoeff() <= 1e-10, "ensemble element is not unitary");
    }
    Ensemble e;
    e.kind_ = Kind::Discrete;
    e.D_ = static_cast<int>(D);
    e.us_ = std::move(us);
    e.probs_ = std::move(probs);
    return e;
  }

  // U = exp(-i H t), t uniform on [0, t_max]; t_max = infinity selects the
  // strict infinite-time average (exact channel only).
  static Ensemble hamiltonian(const Mat& H, double t_max, double eps_res = -1) {
    require(is_hermitian(H, 1e-12), "Hamiltonian must be Hermitian");
    require(t_max > 0, "t_max must be positive");
    Eigen::SelfAdjointEigenSolver<Mat> es(H);
    Ensemble e;
    e.kind_ = Kind::Hamiltonian;
    e.D_ = static_cast<int>(H.rows());
    e.energies_ = es.eigenvalues();
    e.basis_ = es.eigenvectors();
    e.t_max_ = t_max;
    const double width = e.energies_.maxCoeff() - e.energies_.minCoeff();
    e.eps_ = eps_res >= 0 ? eps_res : 1e-10 * std::max(width, 1.0);
    return e;
  }

  Kind kind() const { return kind_; }
  int dim() const { return D_; }
  const std::vector<Mat>& elements() const { return us_; }
  const std::vector<double>& probabilities() const { return probs_; }
  const Eigen::VectorXd& energies() const { return energies_; }
  const Mat& basis() const { return basis_; }
  double t_max() const { return t_max_; }
  double eps_res() const { return eps_; }

  std::string name() const {
    switch (kind_) {
      case Kind::Haar: return "haar";
      case Kind::Discrete: return "discrete";
      default: return "hamiltonian";
    }
  }

  Mat sample(Rng& rng) const {
    switch (kind_) {
      case Kind::Haar: return sample_haar(D_, rng);
      case Kind::Discrete: {
        double r = uniform01(rng), c = 0;
        for (std::size_t i = 0; i < us_.size(); ++i) {
          c += probs_[i];
          if (r < c) return us_[i];
        }
        return us_.back();
      }
      default: {
        require(!std::isinf(t_max_), "cannot sample times from an infinite window");
        const double t = t_max_ * uniform01(rng);
        Vec ph(D_);
        for (int i = 0; i < D_; ++i) ph[i] = std::exp(Complex(0, -energies_[i] * t));
        return basis_ * ph.asDiagonal() * basis_.adjoint();
      }
    }
  }

  // Exact k-fold channel E[U^{dag x k} O U^{x k}].
  Mat channel(const Mat& O, int k) const {
    require(ipow_size(D_, k) == static_cast<std::size_t>(O.rows()), "operator is not on D^k");
    switch (kind_) {
      case Kind::Haar: return haar_channel_dense(O, k, D_);
      case Kind::Discrete: {
        Mat out = Mat::Zero(O.rows(), O.cols());
        for (std::size_t i = 0; i < us_.size(); ++i) out += probs_[i] * conjugate_tensor_power(us_[i], k, O);
        return out;
      }
      default: {
        Mat x = conjugate_tensor_power(basis_, k, O);  // eigenbasis
        const std::size_t N = x.rows();
        std::vector<double> e(N);
        for (std::size_t I = 0; I < N; ++I) {
          auto d = digits(I, D_, k);
          for (int l = 0; l < k; ++l) e[I] += energies_[d[l]];
        }
        for (std::size_t J = 0; J < N; ++J)
          for (std::size_t I = 0; I < N; ++I) x(I, J) *= phase_kernel(e[I] - e[J], t_max_, eps_);
        return conjugate_tensor_power(basis_.adjoint(), k, x);
      }
    }
  }

 private:
  Kind kind_ = Kind::Haar;
  int D_ = 0;
  std::vector<Mat> us_;
  std::vector<double> probs_;
  Eigen::VectorXd energies_;
  Mat basis_;
  double t_max_ = 0;
  double eps_ = 0;
};

namespace detail {

// Runs body(i) for i in [0, n) on `threads` workers; results are stored by
// index so the reduction order never depends on scheduling.
template <class F>
void parallel_for(std::size_t n, int threads, F&& body) {
  threads = std::max(1, std::min<int>(threads, static_cast<int>(n)));
  if (threads == 1) {
    for (std::size_t i = 0; i < n; ++i) body(i);
    return;
  }
  std::vector<std::thread> pool;
  for (int t = 0; t < threads; ++t)
    pool.emplace_back([&, t] {
      for (std::size_t i = t; i < n; i += threads) body(i);
    });
  for (auto& th : pool) th.join();
}

}  // namespace detail

// E[U^{dag x k} O U^{x k}] estimated from n samples.
inline Mat channel_monte_carlo(const Ensemble& e, int k, const Mat& O, std::size_t n, std::uint64_t seed,
                               int threads = 1) {
  require(ipow_size(e.dim(), k) <= 4096, "Monte Carlo channel limited to D^k <= 4096");
  require(n >= 1, "need at least one sample");
  std::vector<Mat> parts(n);
  detail::parallel_for(n, threads, [&](std::size_t i) {
    Rng rng = substream(seed, i);
    parts[i] = conjugate_tensor_power(e.sample(rng), k, O);
  });
  Mat acc = Mat::Zero(O.rows(), O.cols());
  for (const auto& p : parts) acc += p;
  return acc / static_cast<double>(n);
}

struct Estimate {
  Complex value;
  double std_error = 0;
  std::size_t n_samples = 0;
  std::uint64_t seed = 0;
};

// Ensemble-averaged word moments: letters 0..rotated-1 stand for A_i^U, the
// remaining letters for the fixed operators. Averages are kept per batch so
// any function of the moments gets a batch-means error bar.
class EnsembleMoments {
 public:
  std::map<Word, Complex> mean;
  std::vector<std::map<Word, Complex>> batches;
  std::size_t n_samples = 0;
  std::uint64_t seed = 0;

  ExpectationFunctional functional() const { return from(mean); }

  Estimate estimate(const std::function<Complex(const ExpectationFunctional&)>& f) const {
    Estimate est{f(functional()), 0.0, n_samples, seed};
    if (batches.size() > 1) {
      std::vector<Complex> v;
      for (const auto& b : batches) v.push_back(f(from(b)));
      Complex m = 0.0;
      for (auto x : v) m += x;
      m /= static_cast<double>(v.size());
      double s2 = 0;
      for (auto x : v) s2 += std::norm(x - m);
      est.std_error = std::sqrt(s2 / (v.size() - 1) / v.size());
    }
    return est;
  }

 private:
  static ExpectationFunctional from(const std::map<Word, Complex>& t) {
    return table_functional(t, true);
  }
};

// Words needed to evaluate f, found by a dry run on a recording functional.
inline std::vector<Word> words_needed(const std::function<Complex(const ExpectationFunctional&)>& f) {
  auto seen = std::make_shared<std::map<Word, int>>();
  ExpectationFunctional rec(ExpectationFunctional::Kind::Custom, [seen](const Word& w) {
    (*seen)[w] = 1;
    return Complex(1.0);
  });
  f(rec);
  std::vector<Word> out;
  for (const auto& [w, _] : *seen) out.push_back(w);
  return out;
}

inline EnsembleMoments ensemble_moments(const Ensemble& e, const std::vector<Mat>& rotated, const std::vector<Mat>& fixed,
                                        const std::vector<Word>& words, std::size_t n, std::uint64_t seed,
                                        int n_batches = 20, int threads = 1) {
  require(!rotated.empty(), "need at least one operator to rotate");
  for (const auto& m : rotated) require(m.rows() == e.dim() && m.cols() == e.dim(), "operator dimension mismatch");
  for (const auto& m : fixed) require(m.rows() == e.dim() && m.cols() == e.dim(), "operator dimension mismatch");
  EnsembleMoments out;
  out.seed = seed;
  std::vector<std::vector<Complex>> vals;
  std::vector<double> weights;
  const bool exact = e.kind() == Ensemble::Kind::Discrete && n == 0;
  const std::size_t count = exact ? e.elements().size() : n;
  require(count >= 1, "need at least one sample");
  vals.assign(count, {});
  std::optional<HaarConjugator> conj;
  if (e.kind() == Ensemble::Kind::Haar && rotated.size() == 1) conj.emplace(rotated[0]);
  detail::parallel_for(count, threads, [&](std::size_t i) {
    std::vector<Mat> ops;
    if (conj) {
      Rng rng = substream(seed, i);
      ops.push_back((*conj)(rng));
    } else {
      Mat u;
      if (exact) u = e.elements()[i];
      else {
        Rng rng = substream(seed, i);
        u = e.sample(rng);
      }
      for (const auto& a : rotated) ops.push_back(u.adjoint() * a * u);
    }
    for (const auto& b : fixed) ops.push_back(b);
    auto phi = trace_functional(std::move(ops));
    for (const auto& w : words) vals[i].push_back(phi(w));
  });
  weights.assign(count, exact ? 0.0 : 1.0 / count);
  if (exact)
    for (std::size_t i = 0; i < count; ++i) weights[i] = e.probabilities()[i];
  for (std::size_t w = 0; w < words.size(); ++w) {
    Complex s = 0.0;
    for (std::size_t i = 0; i < count; ++i) s += weights[i] * vals[i][w];
    out.mean[words[w]] = s;
  }
  out.n_samples = exact ? 0 : n;
  if (!exact && n_batches > 1 && n >= static_cast<std::size_t>(n_batches)) {
    for (int b = 0; b < n_batches; ++b) {
      const std::size_t lo = n * b / n_batches, hi = n * (b + 1) / n_batches;
      std::map<Word, Complex> m;
      for (std::size_t w = 0; w < words.size(); ++w) {
        Complex s = 0.0;
        for (std::size_t i = lo; i < hi; ++i) s += vals[i][w];
        m[words[w]] = s / static_cast<double>(hi - lo);
      }
      out.batches.push_back(std::move(m));
    }
  }
  return out;
}

// Alternating family (A^U, B, A^U, B, ...) of length 2k, A^U = letter 0, B = 1.
inline Args alternating_args(int k) {
  Args a;
  for (int i = 0; i < k; ++i) {
    a.push_back(word({0}));
    a.push_back(word({1}));
  }
  return a;
}

struct FreenessResult {
  Estimate kappa;  // kappa_{2k}(A^U, B, ..., A^U, B)
  Estimate otoc;   // <A^U B ... A^U B>
};

// Ensemble-average every word moment first, then Moebius-invert.
inline FreenessResult k_freeness_test(const Ensemble& e, const Mat& A, const Mat& B, int k, std::size_t n,
                                      std::uint64_t seed, int n_batches = 20, int threads = 1) {
  require(k >= 1 && k <= 5, "k-freeness test supports 1 <= k <= 5");
  const Args args = alternating_args(k);
  auto kappa = [&](const ExpectationFunctional& phi) { return free_cumulant(args, phi); };
  Word full;
  for (const auto& w : args) full.push_back(w[0]);
  auto otoc = [full](const ExpectationFunctional& phi) { return phi(full); };
  auto words = words_needed(kappa);
  auto mom = ensemble_moments(e, {A}, {B}, words, n, seed, n_batches, threads);
  return {mom.estimate(kappa), mom.estimate(otoc)};
}

// Superoperator of a channel in the matrix-unit basis, column (a,b) holding
// vec(Phi(|a><b|)).
inline Mat superoperator(const std::function<Mat(const Mat&)>& phi, int N) {
  Mat S(static_cast<Eigen::Index>(N) * N, static_cast<Eigen::Index>(N) * N);
  for (int b = 0; b < N; ++b)
    for (int a = 0; a < N; ++a) {
      Mat e = Mat::Zero(N, N);
      e(a, b) = 1.0;
      Mat out = phi(e);
      S.col(static_cast<Eigen::Index>(b) * N + a) = Eigen::Map<const Vec>(out.data(), out.size());
    }
  return S;
}

struct DesignReport {
  bool passed = false;
  double deviation = 0;
  std::string method;
};

// Compares Phi_E^{(k)} with Phi_Haar^{(k)}: on all matrix units when D^k <= 64,
// otherwise on random product inputs.
inline DesignReport design_check(const Ensemble& e, int k, double tol = 1e-10, std::uint64_t seed = 1,
                                 int probes = 8) {
  require(k >= 1, "k must be positive");
  const std::size_t N = ipow_size(e.dim(), k);
  DesignReport r;
  if (e.kind() == Ensemble::Kind::Haar) {
    r.passed = true;
    r.method = "identical";
    return r;
  }
  if (N <= 64) {
    const int n = static_cast<int>(N);
    Mat se = superoperator([&](const Mat& o) { return e.channel(o, k); }, n);
    Mat sh = superoperator([&](const Mat& o) { return haar_projection_dense(o, k, e.dim()); }, n);
    r.deviation = (se - sh).cwiseAbs().maxCoeff();
    r.method = "superoperator";
  } else {
    require(N <= 4096, "design check limited to D^k <= 4096");
    for (int p = 0; p < probes; ++p) {
      Rng rng = substream(seed, p);
      std::vector<Mat> f;
      for (int l = 0; l < k; ++l) f.push_back(gue(e.dim(), rng));
      Mat o = kron_all(f);
      r.deviation = std::max(r.deviation, (e.channel(o, k) - haar_projection_dense(o, k, e.dim())).cwiseAbs().maxCoeff());
    }
    r.method = "product probes";
  }
  r.passed = r.deviation <= tol;
  return r;
}

// ||S_Haar - S_E||_F for the k-fold superoperators.
inline double channel_distance(const Ensemble& e, int k) {
  const int D = e.dim();
  if (D < k) throw RegimeError("pseudo-inverse regime unsupported: D < k");
  const std::size_t N = ipow_size(D, k);
  if (e.kind() == Ensemble::Kind::Hamiltonian) {
    // In the eigenbasis S_E is diagonal on matrix units with entries
    // K_IJ = kernel(E_I - E_J), and <E_IJ, P E_IJ> vanishes unless J is a
    // rearrangement of I. ||P||^2 = k!.
    require(N * N <= 400000000ull, "distance: D^{2k} too large");
    std::vector<double> en(N);
    for (std::size_t I = 0; I < N; ++I) {
      auto d = digits(I, D, k);
      for (int l = 0; l < k; ++l) en[I] += e.energies()[d[l]];
    }
    long double kk = 0;
    for (std::size_t I = 0; I < N; ++I)
      for (std::size_t J = 0; J < N; ++J) kk += std::norm(phase_kernel(en[I] - en[J], e.t_max(), e.eps_res()));
    const auto& t = cached_weingarten(k, D);
    long double cross = 0;
    for (std::size_t I = 0; I < N; ++I) {
      auto d = digits(I, D, k);
      std::map<std::size_t, std::vector<std::size_t>> groups;  // J -> alphas
      for (std::size_t a = 0; a < t.perms.size(); ++a) {
        std::vector<int> j(k);
        for (int l = 0; l < k; ++l) j[l] = d[t.perms[a](l)];
        groups[undigits(j, D)].push_back(a);
      }
      for (const auto& [J, al] : groups) {
        long double p = 0;
        for (auto a : al)
          for (auto b : al) p += t.wg[a][b].convert_to<long double>();
        cross += p * phase_kernel(en[I] - en[J], e.t_max(), e.eps_res()).real();
      }
    }
    long double fact = 1;
    for (int i = 2; i <= k; ++i) fact *= i;
    return static_cast<double>(std::sqrt(std::max<long double>(0, fact + kk - 2 * cross)));
  }
  require(N * N <= 4096, "dense distance limited to D^{2k} <= 4096");
  const int n = static_cast<int>(N);
  Mat se = superoperator([&](const Mat& o) { return e.channel(o, k); }, n);
  Mat sh = superoperator([&](const Mat& o) { return haar_channel_dense(o, k, D); }, n);
  return (se - sh).norm();
}

// Infinite-time value for a non-degenerate, resonance-free spectrum:
// sqrt(#{(I, J): J a rearrangement of I} - k!).
inline double hamiltonian_distance_generic(int D, int k) {
  const std::size_t N = ipow_size(D, k);
  long double pairs = 0;
  for (std::size_t I = 0; I < N; ++I) {
    auto d = digits(I, D, k);
    std::map<int, int> c;
    for (int x : d) ++c[x];
    long double m = 1;
    for (int i = 2; i <= k; ++i) m *= i;
    for (const auto& [_, cnt] : c)
      for (int i = 2; i <= cnt; ++i) m /= i;
    pairs += m;
  }
  long double fact = 1;
  for (int i = 2; i <= k; ++i) fact *= i;
  return static_cast<double>(std::sqrt(pairs - fact));
}

inline std::vector<Mat> pauli_group_1q() {
  Mat i = Mat::Identity(2, 2), x(2, 2), y(2, 2), z(2, 2);
  x << 0, 1, 1, 0;
  y << 0, Complex(0, -1), Complex(0, 1), 0;
  z << 1, 0, 0, -1;
  return {i, x, y, z};
}

// The 24 single-qubit Cliffords modulo phase: closure of H and S.
inline std::vector<Mat> clifford_group_1q() {
  Mat h(2, 2), s(2, 2);
  h << 1, 1, 1, -1;
  h /= std::sqrt(2.0);
  s << 1, 0, 0, Complex(0, 1);
  auto normalise = [](Mat m) {
    for (Eigen::Index i = 0; i < m.size(); ++i)
      if (std::abs(m(i)) > 1e-9) {
        m /= m(i) / std::abs(m(i));
        break;
      }
    return m;
  };
  auto key = [](const Mat& m) {
    std::vector<long long> k;
    for (Eigen::Index i = 0; i < m.size(); ++i) {
      k.push_back(std::llround(m(i).real() * 1e8));
      k.push_back(std::llround(m(i).imag() * 1e8));
    }
    return k;
  };
  std::vector<Mat> out = {Mat::Identity(2, 2)};
  std::map<std::vector<long long>, int> seen = {{key(out[0]), 0}};
  for (std::size_t q = 0; q < out.size(); ++q)
    for (const Mat* g : {&h, &s}) {
      Mat m = normalise(*g * out[q]);
      if (seen.emplace(key(m), static_cast<int>(out.size())).second) out.push_back(m);
    }
  return out;
}

}  // namespace freek
