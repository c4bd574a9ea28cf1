#pragma once

#include <Eigen/Eigenvalues>
#include <boost/math/quadrature/gauss.hpp>
#include <boost/random/normal_distribution.hpp>
#include <boost/random/uniform_int_distribution.hpp>

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "freek/ensemble.hpp"
#include "freek/free_moments.hpp"
#include "freek/partition.hpp"

namespace freek {

using RealVec = Eigen::VectorXd;
using CVec = Eigen::VectorXcd;

inline constexpr int kDefaultModelCap = 4096;

// ---------------------------------------------------------------- models

// Real symmetric, off-diagonal N(0, 1/D), diagonal N(0, 2/D).
inline Mat goe_hamiltonian(int D, Rng& rng) {
  require(D >= 1, "dimension must be positive");
  boost::random::normal_distribution<double> n(0.0, 1.0);
  Mat h = Mat::Zero(D, D);
  const double s = 1.0 / std::sqrt(static_cast<double>(D));
  for (int i = 0; i < D; ++i)
    for (int j = i; j < D; ++j) {
      const double v = n(rng) * s * (i == j ? std::sqrt(2.0) : 1.0);
      h(i, j) = h(j, i) = v;
    }
  return h;
}

struct IsingParams {
  int L = 10;
  double J = 1.0;
  double hx = -1.05;
  double hz = 0.5;
};

// Site i is bit i of the basis label; bit 0 means sigma^z = +1.
inline double ising_z(std::size_t s, int i) { return (s >> i & 1u) ? -1.0 : 1.0; }

// H = J sum Z_i Z_{i+1} + hx sum X_i + hz sum Z_i, open boundaries.
inline Mat ising_hamiltonian(const IsingParams& p) {
  require(p.L >= 1 && p.L <= 14, "Ising chain length must be in 1..14");
  const std::size_t D = std::size_t{1} << p.L;
  Mat h = Mat::Zero(D, D);
  for (std::size_t s = 0; s < D; ++s) {
    double d = 0;
    for (int i = 0; i < p.L; ++i) {
      d += p.hz * ising_z(s, i);
      if (i + 1 < p.L) d += p.J * ising_z(s, i) * ising_z(s, i + 1);
      h(s ^ (std::size_t{1} << i), s) += p.hx;
    }
    h(s, s) += d;
  }
  return h;
}

// Local and collective spin observables of the chain, computational basis.
inline std::map<std::string, Mat> ising_observables(int L) {
  const std::size_t D = std::size_t{1} << L;
  std::map<std::string, Mat> out;
  auto z = [&](int i) {
    Mat m = Mat::Zero(D, D);
    for (std::size_t s = 0; s < D; ++s) m(s, s) = ising_z(s, i);
    return m;
  };
  auto x = [&](int i) {
    Mat m = Mat::Zero(D, D);
    for (std::size_t s = 0; s < D; ++s) m(s ^ (std::size_t{1} << i), s) = 1.0;
    return m;
  };
  out["sz_0"] = z(0);
  out["sx_0"] = x(0);
  out["sz_mid"] = z(L / 2);
  out["sx_mid"] = x(L / 2);
  Mat mz = Mat::Zero(D, D), mx = Mat::Zero(D, D);
  for (int i = 0; i < L; ++i) mz += z(i) / L, mx += x(i) / L;
  out["mz"] = mz;
  out["mx"] = mx;
  return out;
}

struct SpectralModel {
  int D = 0;
  RealVec energies;                        // ascending
  Mat basis;                               // columns are eigenvectors
  std::map<std::string, Mat> observables;  // eigenbasis matrix elements
  nlohmann::json provenance;

  const Mat& obs(const std::string& name) const {
    auto it = observables.find(name);
    require(it != observables.end(), "model has no observable '" + name + "'");
    return it->second;
  }
  // Stores O (computational basis) in the eigenbasis.
  void add_observable(const std::string& name, const Mat& O) {
    require(O.rows() == D && O.cols() == D, "observable '" + name + "' has the wrong size");
    observables[name] = basis.adjoint() * O * basis;
  }
  double width() const { return D ? energies(D - 1) - energies(0) : 0.0; }
};

// Dense diagonalisation; sign_split and sign_alternating are always added.
inline SpectralModel build_model(const Mat& H, const std::map<std::string, Mat>& observables = {},
                                 nlohmann::json provenance = {{"model", "user"}}, int cap = kDefaultModelCap) {
  require(H.rows() == H.cols() && H.rows() >= 1, "Hamiltonian must be square and non-empty");
  require(H.rows() <= cap, "dimension " + std::to_string(H.rows()) + " exceeds the model cap " + std::to_string(cap));
  require(is_hermitian(H, 1e-10), "Hamiltonian is not Hermitian");
  SpectralModel m;
  m.D = static_cast<int>(H.rows());
  Eigen::SelfAdjointEigenSolver<Mat> es(H);
  require(es.info() == Eigen::Success, "diagonalisation failed");
  m.energies = es.eigenvalues();
  m.basis = es.eigenvectors();
  m.provenance = std::move(provenance);
  m.add_observable("sign_split", sign_split(m.D));
  m.add_observable("sign_alternating", sign_alternating(m.D));
  for (const auto& [k, v] : observables) m.add_observable(k, v);
  return m;
}

inline SpectralModel goe_model(int D, std::uint64_t seed, int cap = kDefaultModelCap) {
  require(D <= cap, "dimension " + std::to_string(D) + " exceeds the model cap " + std::to_string(cap));
  Rng rng = substream(seed, 0);
  return build_model(goe_hamiltonian(D, rng), {}, {{"model", "goe"}, {"D", D}, {"seed", seed}}, cap);
}

inline SpectralModel ising_model(const IsingParams& p, int cap = kDefaultModelCap) {
  return build_model(ising_hamiltonian(p), ising_observables(p.L),
                     {{"model", "ising"}, {"L", p.L}, {"J", p.J}, {"hx", p.hx}, {"hz", p.hz}, {"boundary", "open"}},
                     cap);
}

// Mean consecutive level-spacing ratio <min(s_n, s_{n+1}) / max(s_n, s_{n+1})>.
inline double mean_gap_ratio(const RealVec& e) {
  require(e.size() >= 3, "gap ratio needs at least three levels");
  double s = 0;
  int n = 0;
  for (Eigen::Index i = 0; i + 2 < e.size(); ++i) {
    const double a = e(i + 1) - e(i), b = e(i + 2) - e(i + 1);
    const double hi = std::max(a, b);
    if (hi <= 0) continue;
    s += std::min(a, b) / hi;
    ++n;
  }
  return n ? s / n : 0.0;
}

struct ResonanceReport {
  double eps = 0;
  std::size_t degenerate_pairs = 0;  // adjacent levels closer than eps
  std::size_t sampled = 0;
  std::size_t near_resonant = 0;     // |E_i + E_j - E_k - E_l| < eps, {i,j} != {k,l}
};

inline double default_eps_res(const SpectralModel& m) { return 1e-10 * std::max(m.width(), 1e-300); }

inline ResonanceReport resonance_report(const SpectralModel& m, double eps, std::size_t samples = 100000,
                                        std::uint64_t seed = 1) {
  ResonanceReport r;
  r.eps = eps;
  for (int i = 0; i + 1 < m.D; ++i) r.degenerate_pairs += m.energies(i + 1) - m.energies(i) < eps;
  if (m.D < 2) return r;
  Rng rng = substream(seed, 0);
  boost::random::uniform_int_distribution<int> u(0, m.D - 1);
  for (std::size_t s = 0; s < samples; ++s) {
    int i = u(rng), j = u(rng), k = u(rng), l = u(rng);
    if ((i == k && j == l) || (i == l && j == k)) continue;
    ++r.sampled;
    r.near_resonant += std::abs(m.energies(i) + m.energies(j) - m.energies(k) - m.energies(l)) < eps;
  }
  return r;
}

// ---------------------------------------------------------------- thermal state

struct ThermalState {
  double beta = 0;
  double log_z = 0;  // log sum_i exp(-beta E_i)
  RealVec weights;   // exp(-beta E_i) / Z

  double d_eff() const { return 1.0 / weights.squaredNorm(); }
};

inline ThermalState thermal_state(const SpectralModel& m, double beta) {
  require(std::isfinite(beta), "inverse temperature must be finite");
  ThermalState s;
  s.beta = beta;
  const double e0 = beta >= 0 ? m.energies(0) : m.energies(m.D - 1);
  RealVec w = (-beta * (m.energies.array() - e0)).exp().matrix();
  const double z = w.sum();
  s.weights = w / z;
  s.log_z = std::log(z) - beta * e0;
  return s;
}

// ---------------------------------------------------------------- moments

namespace detail {

// exp(iHt) O exp(-iHt) for O given in the eigenbasis.
inline Mat dressed_matrix(const Mat& o, const RealVec& e, double t) {
  if (t == 0.0) return o;
  CVec ph = (Complex(0, t) * e.cast<Complex>()).array().exp().matrix();
  return ph.asDiagonal() * o * ph.conjugate().asDiagonal();
}

// <w> = sum_i weight_i (prod of letters)_{ii}, letter (op, t) standing for
// exp(iHt) ops[op] exp(-iHt) in the eigenbasis. Dressed matrices and half
// products are cached per functional.
class WeightedMoments {
 public:
  WeightedMoments(std::shared_ptr<const std::vector<Mat>> ops, RealVec energies, RealVec weights)
      : ops_(std::move(ops)), e_(std::move(energies)), w_(std::move(weights)) {}

  Complex operator()(const Word& w) {
    for (const auto& l : w) require(l.op >= 0 && l.op < static_cast<int>(ops_->size()), "word letter has no operator");
    if (w.size() == 1) return (w_.cast<Complex>().array() * dressed(w[0]).diagonal().array()).sum();
    const std::size_t h = w.size() / 2;
    const Mat& x = product(Word(w.begin(), w.begin() + h));
    const Mat& y = product(Word(w.begin() + h, w.end()));
    return (w_.cast<Complex>().asDiagonal() * x).cwiseProduct(y.transpose()).sum();
  }

 private:
  const Mat& dressed(const Letter& l) {
    std::lock_guard<std::mutex> lock(m_);
    const std::pair<int, double> key{l.op, l.time};
    auto it = dressed_.find(key);
    if (it != dressed_.end()) return *it->second;
    auto p = std::make_unique<Mat>(dressed_matrix((*ops_)[l.op], e_, l.time));
    return *dressed_.emplace(key, std::move(p)).first->second;
  }

  const Mat& product(const Word& w) {
    if (w.size() == 1) return dressed(w[0]);
    {
      std::lock_guard<std::mutex> lock(m_);
      auto it = products_.find(w);
      if (it != products_.end()) return *it->second;
    }
    auto p = std::make_unique<Mat>(product(Word(w.begin(), w.end() - 1)) * dressed(w.back()));
    std::lock_guard<std::mutex> lock(m_);
    return *products_.emplace(w, std::move(p)).first->second;
  }

  std::shared_ptr<const std::vector<Mat>> ops_;
  RealVec e_, w_;
  std::mutex m_;
  std::map<std::pair<int, double>, std::unique_ptr<Mat>> dressed_;
  std::map<Word, std::unique_ptr<Mat>> products_;
};

}  // namespace detail

// Functional on eigenbasis operators with weights (the state is diagonal in
// the same basis). Letter times are Heisenberg times.
inline ExpectationFunctional weighted_functional(std::vector<Mat> eigen_ops, RealVec energies, RealVec weights) {
  require(!eigen_ops.empty(), "functional needs operators");
  const auto D = eigen_ops[0].rows();
  for (const auto& o : eigen_ops) require(o.rows() == D && o.cols() == D, "operators must be square and of equal size");
  require(energies.size() == D && weights.size() == D, "spectrum and weights must match the operator size");
  auto wm = std::make_shared<detail::WeightedMoments>(std::make_shared<const std::vector<Mat>>(std::move(eigen_ops)),
                                                      std::move(energies), std::move(weights));
  return ExpectationFunctional(ExpectationFunctional::Kind::Thermal, [wm](const Word& w) { return (*wm)(w); });
}

// <A_{op_1}(t_1) ... A_{op_n}(t_n)>^beta with letter op indexing `names`.
inline ExpectationFunctional thermal_functional(const SpectralModel& m, const ThermalState& s,
                                                const std::vector<std::string>& names) {
  std::vector<Mat> ops;
  for (const auto& n : names) ops.push_back(m.obs(n));
  return weighted_functional(std::move(ops), m.energies, s.weights);
}

inline Complex thermal_word_moment(const SpectralModel& m, const ThermalState& s, const std::vector<std::string>& names,
                                   const Word& w) {
  return thermal_functional(m, s, names)(w);
}

inline Complex thermal_free_cumulant(const SpectralModel& m, const ThermalState& s,
                                     const std::vector<std::string>& names, const Args& args) {
  return free_cumulant(args, thermal_functional(m, s, names));
}

// (A(t), B, A(t), B, ...) of length 2k; A is letter 0 and B letter 1.
inline Args otoc_args(int k, double t) {
  require(k >= 1, "k must be positive");
  Args a;
  for (int i = 0; i < k; ++i) {
    a.push_back({Letter{0, t}});
    a.push_back({Letter{1, 0.0}});
  }
  return a;
}

// ---------------------------------------------------------------- index networks

namespace detail {

struct NetEdge {
  int u, v;  // m(i_u, i_v)
  Mat m;
};

// sum over one index per vertex of prod_x vecs[x](i_x) prod_e m_e(i_u, i_v).
// Vertices are eliminated by least degree; degree <= 2 costs at most one
// matrix product, larger degrees fall back to summing the vertex explicitly.
inline Complex contract_network(std::vector<CVec> vecs, std::vector<NetEdge> edges, std::vector<char> alive) {
  Complex scalar = 1.0;
  for (;;) {
    // Self loops become diagonals; parallel edges merge by Hadamard product.
    std::map<std::pair<int, int>, std::size_t> seen;
    std::vector<NetEdge> simple;
    for (auto& e : edges) {
      if (e.u == e.v) {
        vecs[e.u].array() *= e.m.diagonal().array();
        continue;
      }
      const auto key = std::minmax(e.u, e.v);
      auto it = seen.find(key);
      if (it == seen.end()) {
        seen.emplace(key, simple.size());
        simple.push_back(std::move(e));
      } else {
        auto& s = simple[it->second];
        if (s.u == e.u) s.m.array() *= e.m.array();
        else s.m.array() *= e.m.transpose().array();
      }
    }
    edges = std::move(simple);
    int x = -1;
    std::size_t best = std::numeric_limits<std::size_t>::max();
    for (std::size_t v = 0; v < alive.size(); ++v) {
      if (!alive[v]) continue;
      std::size_t d = 0;
      for (const auto& e : edges) d += e.u == static_cast<int>(v) || e.v == static_cast<int>(v);
      if (d < best) best = d, x = static_cast<int>(v);
    }
    if (x < 0) return scalar;
    std::vector<NetEdge> touching, rest;
    for (auto& e : edges) (e.u == x || e.v == x ? touching : rest).push_back(std::move(e));
    alive[x] = 0;
    if (touching.empty()) {
      scalar *= vecs[x].sum();
    } else if (touching.size() == 1) {
      const auto& e = touching[0];
      if (e.u == x) vecs[e.v].array() *= (e.m.transpose() * vecs[x]).array();
      else vecs[e.u].array() *= (e.m * vecs[x]).array();
    } else if (touching.size() == 2) {
      auto& a = touching[0];
      auto& b = touching[1];
      const int u = a.v == x ? a.u : a.v;
      const int v = b.u == x ? b.v : b.u;
      Mat p = a.v == x ? Mat(a.m * vecs[x].asDiagonal()) : Mat(a.m.transpose() * vecs[x].asDiagonal());
      rest.push_back({u, v, b.u == x ? Mat(p * b.m) : Mat(p * b.m.transpose())});
    } else {
      Complex s = 0.0;
      for (Eigen::Index i = 0; i < vecs[x].size(); ++i) {
        if (vecs[x](i) == 0.0) continue;
        auto vv = vecs;
        for (const auto& e : touching) {
          if (e.u == x) vv[e.v].array() *= e.m.row(i).transpose().array();
          else vv[e.u].array() *= e.m.col(i).array();
        }
        s += vecs[x](i) * contract_network(std::move(vv), rest, alive);
      }
      return scalar * s;
    }
    edges = std::move(rest);
  }
}

// Index layout of a product of traces: word j occupies variables
// start[j] .. start[j] + |w_j| - 1, letter l of word j running from variable
// start + l to start + (l + 1) mod |w_j|.
struct IndexLayout {
  int n = 0;
  std::vector<int> start;
  std::vector<double> net;  // net energy coefficient of each variable

  explicit IndexLayout(const std::vector<Word>& words) {
    for (const auto& w : words) {
      require(!w.empty(), "empty word in index network");
      start.push_back(n);
      n += static_cast<int>(w.size());
    }
    net.assign(n, 0.0);
    for (std::size_t j = 0; j < words.size(); ++j) {
      const int m = static_cast<int>(words[j].size());
      for (int l = 0; l < m; ++l) {
        net[start[j] + l] += words[j][l].time;
        net[start[j] + (l + 1) % m] -= words[j][l].time;
      }
    }
  }
};

// Sum over all indices constant on the blocks of tau (no distinctness).
template <class LetterMat>
Complex index_sum(const std::vector<Word>& words, const IndexLayout& lay, const Partition& tau, const RealVec& weights,
                  LetterMat&& letter_mat) {
  const int nb = tau.block_count();
  const auto D = weights.size();
  std::vector<CVec> vecs(nb, CVec::Ones(D));
  std::vector<NetEdge> edges;
  for (std::size_t j = 0; j < words.size(); ++j) {
    const int m = static_cast<int>(words[j].size());
    vecs[tau.label(lay.start[j])].array() *= weights.cast<Complex>().array();
    for (int l = 0; l < m; ++l)
      edges.push_back({tau.label(lay.start[j] + l), tau.label(lay.start[j] + (l + 1) % m), letter_mat(words[j][l])});
  }
  return contract_network(std::move(vecs), std::move(edges), std::vector<char>(nb, 1));
}

// Balanced partitions (every block has zero net energy coefficient) with
// c(tau) = sum over balanced sigma <= tau of mu(sigma, tau), so that
// sum_tau c(tau) S(tau) keeps exactly the index tuples whose coincidence
// pattern is balanced.
inline const std::vector<std::pair<Partition, long long>>& balanced_coefficients(const std::vector<double>& net) {
  static std::mutex mu;
  static std::map<std::vector<long long>, std::vector<std::pair<Partition, long long>>> cache;
  std::vector<long long> key;
  for (double c : net) key.push_back(std::llround(c * 1e9));
  std::lock_guard<std::mutex> lock(mu);
  auto it = cache.find(key);
  if (it != cache.end()) return it->second;
  const int n = static_cast<int>(net.size());
  require(n <= 8, "time-averaged index networks support at most 8 indices");
  std::vector<Partition> bal;
  for (const auto& p : enumerate_set_partitions(n, 8)) {
    std::vector<long long> s(p.block_count(), 0);
    for (int i = 0; i < n; ++i) s[p.label(i)] += key[i];
    if (std::all_of(s.begin(), s.end(), [](long long v) { return v == 0; })) bal.push_back(p);
  }
  std::vector<std::pair<Partition, long long>> out;
  for (const auto& tau : bal) {
    long long c = 0;
    for (const auto& sigma : bal)
      if (sigma.refines(tau)) c += set_partition_moebius(sigma, tau);
    if (c != 0) out.emplace_back(tau, c);
  }
  return cache.emplace(key, std::move(out)).first->second;
}

}  // namespace detail

// Strict infinite-time average of prod_j <w_j>^beta, letter times read as
// rates (letter (op, c) is A_op(c t)). Assumes no resonances beyond those
// forced by coinciding indices; see resonance_report.
inline Complex strict_average_product(const SpectralModel& m, const ThermalState& s,
                                      const std::vector<std::string>& names, const std::vector<Word>& words) {
  std::vector<const Mat*> ops;
  for (const auto& n : names) ops.push_back(&m.obs(n));
  detail::IndexLayout lay(words);
  WideComplex acc = 0.0L;
  for (const auto& [tau, c] : detail::balanced_coefficients(lay.net))
    acc += static_cast<long double>(c) * widen(detail::index_sum(words, lay, tau, s.weights, [&](const Letter& l) {
             require(l.op >= 0 && l.op < static_cast<int>(ops.size()), "word letter has no operator");
             return *ops[l.op];
           }));
  return narrow(acc);
}

// Moment-product expansion of a free cumulant: kappa(args) = sum coef * prod <words>.
struct ProductTerm {
  long long coef;
  std::vector<Word> words;
};

inline std::vector<ProductTerm> cumulant_terms(const Args& args) {
  const int n = static_cast<int>(args.size());
  const auto& lat = nc_lattice(n);
  const auto& mu = detail::moebius_to_top(n);
  std::vector<ProductTerm> out;
  for (std::size_t i = 0; i < lat.size(); ++i) {
    if (mu[i] == 0) continue;
    ProductTerm t{mu[i], {}};
    for (const auto& b : lat[i].blocks()) t.words.push_back(concat(args, b));
    out.push_back(std::move(t));
  }
  return out;
}

// Strict infinite-time average of kappa(args)(t); letter times are rates.
inline Complex strict_average_cumulant(const SpectralModel& m, const ThermalState& s,
                                       const std::vector<std::string>& names, const Args& args) {
  WideComplex acc = 0.0L;
  for (const auto& t : cumulant_terms(args))
    acc += static_cast<long double>(t.coef) * widen(strict_average_product(m, s, names, t.words));
  return narrow(acc);
}

// ---------------------------------------------------------------- finite windows

// Averages over [0, T] for each T in `windows`, by composite Gauss-Legendre
// quadrature on panels of width <= panel. Every window must be a whole number
// of panels; f is evaluated once per node and shared between windows.
template <class F>
std::vector<CVec> window_averages(F&& f, std::vector<double> windows, double panel = 0.5, int threads = 1) {
  require(!windows.empty(), "need at least one window");
  std::sort(windows.begin(), windows.end());
  require(windows.front() > 0, "window length must be positive");
  require(panel > 0, "panel width must be positive");
  const double h = windows.front() / std::ceil(windows.front() / panel);
  std::vector<std::size_t> ends;
  for (double T : windows) {
    const double q = T / h;
    require(std::abs(q - std::round(q)) < 1e-9 * q, "windows must be whole multiples of the first window's panels");
    ends.push_back(static_cast<std::size_t>(std::llround(q)));
  }
  using Q = boost::math::quadrature::gauss<double, 12>;
  std::vector<double> x, wt;
  for (std::size_t i = 0; i < Q::abscissa().size(); ++i) {
    const double a = Q::abscissa()[i], w = Q::weights()[i];
    x.push_back(a), wt.push_back(w);
    if (a != 0.0) x.push_back(-a), wt.push_back(w);
  }
  const std::size_t per = x.size(), panels = ends.back();
  std::vector<CVec> vals(per * panels);
  detail::parallel_for(vals.size(), threads, [&](std::size_t i) {
    const std::size_t p = i / per, q = i % per;
    vals[i] = f(h * (static_cast<double>(p) + 0.5 * (1.0 + x[q])));
  });
  std::vector<CVec> out;
  CVec acc = CVec::Zero(vals[0].size());
  std::size_t done = 0;
  for (std::size_t e : ends) {
    for (; done < e; ++done)
      for (std::size_t q = 0; q < per; ++q) acc += 0.5 * wt[q] * vals[done * per + q];
    out.push_back(acc / static_cast<double>(done));
  }
  return out;
}

struct TimeWindow {
  double t_max = std::numeric_limits<double>::infinity();
  bool strict() const { return std::isinf(t_max); }
};

// Time-averaged kappa_{2k}(A(t), B, ..., A(t), B)^beta for each window
// length; an infinite length gives the strict average.
inline std::vector<Complex> averaged_otoc_cumulant(const SpectralModel& m, const ThermalState& s,
                                                   const std::string& a, const std::string& b, int k,
                                                   const std::vector<double>& windows, double panel = 0.5,
                                                   int threads = 1) {
  std::vector<double> finite;
  for (double T : windows)
    if (!std::isinf(T)) finite.push_back(T);
  std::sort(finite.begin(), finite.end());
  std::vector<CVec> avg;
  if (!finite.empty())
    avg = window_averages(
        [&](double t) {
          CVec v(1);
          v(0) = thermal_free_cumulant(m, s, {a, b}, otoc_args(k, t));
          return v;
        },
        finite, panel, threads);
  std::optional<Complex> strict;
  std::vector<Complex> out;
  for (double T : windows) {
    if (std::isinf(T)) {
      if (!strict) strict = strict_average_cumulant(m, s, {a, b}, otoc_args(k, 1.0));
      out.push_back(*strict);
    } else {
      out.push_back(avg[std::lower_bound(finite.begin(), finite.end(), T) - finite.begin()](0));
    }
  }
  return out;
}

// ---------------------------------------------------------------- distinct indices

namespace detail {

// The 2k-OTOC index word: A(t)_{i_1 j_1} B_{j_1 i_2} A(t)_{i_2 j_2} ...
inline Word otoc_word(int k, double t) {
  Word w;
  for (int i = 0; i < k; ++i) w.push_back({0, t}), w.push_back({1, 0.0});
  return w;
}

}  // namespace detail

// Per coincidence pattern sigma of the 2k indices, the sum over index tuples
// whose equalities are exactly sigma. The entry for the finest partition is
// the distinct-index sum; all entries add up to the full OTOC moment.
inline std::vector<std::pair<Partition, Complex>> coincidence_pattern_sums(const SpectralModel& m,
                                                                           const ThermalState& s,
                                                                           const std::string& a,
                                                                           const std::string& b, int k, double t) {
  require(k >= 1 && k <= 3, "inclusion-exclusion path supports k <= 3");
  const Mat at = detail::dressed_matrix(m.obs(a), m.energies, t);
  const Mat& bm = m.obs(b);
  const std::vector<Word> words{detail::otoc_word(k, t)};
  detail::IndexLayout lay(words);
  const auto parts = enumerate_set_partitions(2 * k);
  std::vector<Complex> S;
  for (const auto& tau : parts)
    S.push_back(detail::index_sum(words, lay, tau, s.weights, [&](const Letter& l) { return l.op == 0 ? at : bm; }));
  std::vector<std::pair<Partition, Complex>> out;
  for (const auto& sigma : parts) {
    WideComplex g = 0.0L;
    for (std::size_t j = 0; j < parts.size(); ++j)
      if (sigma.refines(parts[j])) g += static_cast<long double>(set_partition_moebius(sigma, parts[j])) * widen(S[j]);
    out.emplace_back(sigma, narrow(g));
  }
  return out;
}

// sum over pairwise distinct i_1, j_1, ..., i_k, j_k of
// w_{i_1} A(t)_{i_1 j_1} B_{j_1 i_2} ... B_{j_k i_1}, by inclusion-exclusion.
inline Complex distinct_index_cumulant(const SpectralModel& m, const ThermalState& s, const std::string& a,
                                       const std::string& b, int k, double t) {
  require(k >= 1 && k <= 3, "inclusion-exclusion path supports k <= 3");
  const Mat at = detail::dressed_matrix(m.obs(a), m.energies, t);
  const Mat& bm = m.obs(b);
  const std::vector<Word> words{detail::otoc_word(k, t)};
  detail::IndexLayout lay(words);
  const auto zero = Partition::zero(2 * k);
  WideComplex acc = 0.0L;
  for (const auto& tau : enumerate_set_partitions(2 * k))
    acc += static_cast<long double>(set_partition_moebius(zero, tau)) *
           widen(detail::index_sum(words, lay, tau, s.weights, [&](const Letter& l) { return l.op == 0 ? at : bm; }));
  return narrow(acc);
}

// The same sum by direct enumeration, O(D^{2k}).
inline Complex distinct_index_brute_force(const SpectralModel& m, const ThermalState& s, const std::string& a,
                                          const std::string& b, int k, double t, double max_terms = 2e8) {
  require(k >= 1, "k must be positive");
  require(std::pow(static_cast<double>(m.D), 2 * k) <= max_terms, "brute-force distinct-index sum: D too large");
  const Mat at = detail::dressed_matrix(m.obs(a), m.energies, t);
  const Mat& bm = m.obs(b);
  const int n = 2 * k, D = m.D;
  std::vector<int> idx(n, 0);
  WideComplex acc = 0.0L;
  for (;;) {
    bool distinct = true;
    for (int p = 0; p < n && distinct; ++p)
      for (int q = p + 1; q < n; ++q)
        if (idx[p] == idx[q]) {
          distinct = false;
          break;
        }
    if (distinct) {
      Complex v = s.weights(idx[0]);
      for (int l = 0; l < n; ++l) v *= (l % 2 == 0 ? at : bm)(idx[l], idx[(l + 1) % n]);
      acc += widen(v);
    }
    int p = n - 1;
    while (p >= 0 && ++idx[p] == D) idx[p--] = 0;
    if (p < 0) break;
  }
  return narrow(acc);
}

// ---------------------------------------------------------------- OTOC factorisation

struct Factorization {
  Complex lhs, rhs, residual;
};

// lhs: strict time average of <A(t) B ... A(t) B>^beta; rhs: the free formula
// sum_{pi in NC(k)} kappa^beta_pi(A) <B>^beta_{K(pi)}.
inline Factorization otoc_long_time_factorization(const SpectralModel& m, const ThermalState& s, const std::string& a,
                                                  const std::string& b, int k) {
  Factorization f;
  f.lhs = strict_average_product(m, s, {a, b}, {detail::otoc_word(k, 1.0)});
  auto phi = thermal_functional(m, s, {a, b});
  Args aa(k, Word{Letter{0, 0.0}}), bb(k, Word{Letter{1, 0.0}});
  f.rhs = mixed_moment_free(aa, phi, bb, phi);
  f.residual = f.lhs - f.rhs;
  return f;
}

// ---------------------------------------------------------------- free-k time

struct FreeTime {
  std::optional<double> time;  // empty: not reached in window
  std::vector<double> grid;
  std::vector<Complex> kappa;
  double threshold = 0;
};

// Smallest grid time after which |kappa_{2k}(A(t), B, ...)| stays at or below
// threshold * |kappa_{2k}| at the first grid point.
inline FreeTime free_k_time(const SpectralModel& m, const ThermalState& s, const std::string& a, const std::string& b,
                            int k, double threshold, std::vector<double> grid, int threads = 1) {
  require(!grid.empty(), "time grid is empty");
  require(std::is_sorted(grid.begin(), grid.end()), "time grid must be ascending");
  require(threshold > 0, "threshold must be positive");
  FreeTime r;
  r.threshold = threshold;
  r.kappa.resize(grid.size());
  detail::parallel_for(grid.size(), threads,
                       [&](std::size_t i) { r.kappa[i] = thermal_free_cumulant(m, s, {a, b}, otoc_args(k, grid[i])); });
  const double cut = threshold * std::abs(r.kappa[0]);
  std::size_t first = grid.size();
  for (std::size_t i = grid.size(); i-- > 0;) {
    if (std::abs(r.kappa[i]) > cut) break;
    first = i;
  }
  if (first < grid.size()) r.time = grid[first];
  r.grid = std::move(grid);
  return r;
}

// ---------------------------------------------------------------- time-average factorisation

struct AppendixB {
  Complex joint;     // E_t[<A(t)B> <A(t)B>]
  Complex product;   // (E_t[<A(t)B>])^2
  Complex gap;       // joint - product
  Complex crossing;  // sum_{i != j} w_i w_j A_ij B_ji A_ji B_ij
};

inline Complex appendix_b_crossing(const SpectralModel& m, const ThermalState& s, const std::string& a,
                                   const std::string& b) {
  const Mat& A = m.obs(a);
  const Mat& B = m.obs(b);
  Mat t = A.cwiseProduct(B.transpose());  // A_ij B_ji
  Mat x = t.cwiseProduct(t.transpose());  // A_ij B_ji A_ji B_ij
  x.diagonal().setZero();
  const CVec w = s.weights.cast<Complex>();
  return w.transpose() * x * w;
}

inline AppendixB appendix_b_factorization(const SpectralModel& m, const ThermalState& s, const std::string& a,
                                          const std::string& b, const TimeWindow& win, double panel = 0.5,
                                          int threads = 1) {
  AppendixB r;
  const Word w{{0, 1.0}, {1, 0.0}};
  if (win.strict()) {
    r.joint = strict_average_product(m, s, {a, b}, {w, w});
    const Complex one = strict_average_product(m, s, {a, b}, {w});
    r.product = one * one;
  } else {
    require(win.t_max > 0, "window length must be positive");
    const Mat x = m.obs(a).cwiseProduct(m.obs(b).transpose());  // A_ij B_ji
    const CVec wt = s.weights.cast<Complex>();
    auto f = [&](double t) {
      const CVec ph = (Complex(0, t) * m.energies.cast<Complex>()).array().exp().matrix();
      const Complex v = (wt.cwiseProduct(ph)).transpose() * x * ph.conjugate();
      CVec out(2);
      out << v, v * v;
      return out;
    };
    auto avg = window_averages(f, {win.t_max}, panel, threads)[0];
    r.product = avg(0) * avg(0);
    r.joint = avg(1);
  }
  r.gap = r.joint - r.product;
  r.crossing = appendix_b_crossing(m, s, a, b);
  return r;
}

struct DeltaCheck {
  std::size_t quadruples = 0;
  std::size_t mismatches = 0;  // kernel vs delta structure
  Complex joint_kernel;        // E_t[<A(t)B>^2] from the brute-force kernel
  Complex joint_delta;         // the same from the delta structure
};

// For every (i, j, ib, jb): [|E_i - E_j + E_ib - E_jb| <= eps] against
// d(i,j) d(ib,jb) + d(i,jb) d(j,ib) - d(i=j=ib=jb).
inline DeltaCheck appendix_b_delta_check(const SpectralModel& m, const ThermalState& s, const std::string& a,
                                         const std::string& b, double eps) {
  require(std::pow(static_cast<double>(m.D), 4) <= 2e8, "delta check: D too large");
  const Mat& A = m.obs(a);
  const Mat& B = m.obs(b);
  const auto& E = m.energies;
  DeltaCheck c;
  WideComplex jk = 0.0L, jd = 0.0L;
  for (int i = 0; i < m.D; ++i)
    for (int j = 0; j < m.D; ++j)
      for (int ib = 0; ib < m.D; ++ib)
        for (int jb = 0; jb < m.D; ++jb) {
          const int kern = std::abs(E(i) - E(j) + E(ib) - E(jb)) <= eps;
          const int delta = (i == j && ib == jb) + (i == jb && j == ib) - (i == j && j == ib && ib == jb);
          ++c.quadruples;
          c.mismatches += kern != delta;
          const Complex v = s.weights(i) * s.weights(ib) * A(i, j) * B(j, i) * A(ib, jb) * B(jb, ib);
          jk += static_cast<long double>(kern) * widen(v);
          jd += static_cast<long double>(delta) * widen(v);
        }
  c.joint_kernel = narrow(jk);
  c.joint_delta = narrow(jd);
  return c;
}

// ---------------------------------------------------------------- Deutsch ensemble

struct DeutschSpec {
  Mat perturbation;  // H', computational basis
  double c = 0;      // strength, c ~ N^{-a}
  double a = 0;      // scale exponent, recorded only
  std::vector<double> lambdas;
  double beta = 0;
};

struct DeutschReport {
  std::vector<double> lambdas;
  std::vector<Mat> observables;  // A in each perturbed eigenbasis, common labels
  double max_stochastic_error = 0;
  std::vector<double> bandwidth;  // sum_nm U_nm |E_n - E_m^lambda| / D
  struct Pair {
    std::size_t i, j;
    Complex kappa4;  // kappa_4(A_i, A_j, A_i, A_j) in rho = exp(-beta H)/Z
  };
  std::vector<Pair> pairs;
  double d_eff = 0;
};

// H_lambda = H + c lambda H'. Eigenvector m of H_lambda is phased so that
// <E_m | E_m^lambda> >= 0.
inline DeutschReport deutsch_ensemble(const Mat& H, const Mat& A, const DeutschSpec& spec) {
  require(!spec.lambdas.empty(), "Deutsch ensemble needs at least one coupling");
  require(spec.perturbation.rows() == H.rows() && A.rows() == H.rows(), "Deutsch operators must match H in size");
  require(is_hermitian(spec.perturbation, 1e-10), "perturbation is not Hermitian");
  const SpectralModel base = build_model(H);
  const ThermalState st = thermal_state(base, spec.beta);
  const int D = base.D;
  DeutschReport r;
  r.lambdas = spec.lambdas;
  r.d_eff = st.d_eff();
  for (double lam : spec.lambdas) {
    Eigen::SelfAdjointEigenSolver<Mat> es(H + spec.c * lam * spec.perturbation);
    Mat W = es.eigenvectors();
    Mat ov = base.basis.adjoint() * W;  // <E_n | E_m^lambda>
    for (int mm = 0; mm < D; ++mm) {
      const double mag = std::abs(ov(mm, mm));
      if (mag > 0) {
        const Complex ph = std::conj(ov(mm, mm)) / mag;
        W.col(mm) *= ph;
        ov.col(mm) *= ph;
      }
    }
    Eigen::MatrixXd U = ov.cwiseAbs2();
    r.max_stochastic_error = std::max({r.max_stochastic_error, (U.rowwise().sum().array() - 1.0).abs().maxCoeff(),
                                       (U.colwise().sum().array() - 1.0).abs().maxCoeff()});
    double bw = 0;
    for (int n = 0; n < D; ++n)
      for (int mm = 0; mm < D; ++mm) bw += U(n, mm) * std::abs(base.energies(n) - es.eigenvalues()(mm));
    r.bandwidth.push_back(bw / D);
    r.observables.push_back(W.adjoint() * A * W);
  }
  auto phi = weighted_functional(r.observables, base.energies, st.weights);
  for (std::size_t i = 0; i < r.lambdas.size(); ++i)
    for (std::size_t j = i; j < r.lambdas.size(); ++j) {
      const int p = static_cast<int>(i), q = static_cast<int>(j);
      Args args{{Letter{p, 0.0}}, {Letter{q, 0.0}}, {Letter{p, 0.0}}, {Letter{q, 0.0}}};
      r.pairs.push_back({i, j, free_cumulant(args, phi)});
    }
  return r;
}

}  // namespace freek
