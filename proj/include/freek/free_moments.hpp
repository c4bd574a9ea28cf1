#pragma once

#include <bit>
#include <compare>
#include <complex>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <utility>
#include <vector>

#include "freek/core.hpp"
#include "freek/partition.hpp"

namespace freek {

// Opaque operator label plus an optional time tag.
struct Letter {
  int op = 0;
  double time = 0.0;
  friend auto operator<=>(const Letter&, const Letter&) = default;
};

using Word = std::vector<Letter>;
// Arguments of a multivariate cumulant; each argument is itself a product.
using Args = std::vector<Word>;

inline Word word(std::initializer_list<int> ops) {
  Word w;
  for (int o : ops) w.push_back({o, 0.0});
  return w;
}

inline Args letters(const Word& w) {
  Args a;
  for (const auto& l : w) a.push_back({l});
  return a;
}

inline std::string word_str(const Word& w, const std::vector<std::string>& names = {}) {
  std::string s;
  for (const auto& l : w) {
    if (l.op >= 0 && l.op < static_cast<int>(names.size())) s += names[l.op];
    else s += "x" + std::to_string(l.op);
    if (l.time != 0.0) s += "(" + std::to_string(l.time) + ")";
  }
  return s;
}

// Linear functional on words with <empty> = 1. Values are memoised per word.
class ExpectationFunctional {
 public:
  enum class Kind { Table, NormalizedTrace, Thermal, EnsembleAveraged, FreeProduct, Custom };

  ExpectationFunctional(Kind kind, std::function<Complex(const Word&)> f)
      : kind_(kind), state_(std::make_shared<State>()) {
    state_->f = std::move(f);
  }

  Kind kind() const { return kind_; }

  Complex operator()(const Word& w) const {
    if (w.empty()) return 1.0;
    {
      std::lock_guard<std::mutex> lock(state_->m);
      auto it = state_->memo.find(w);
      if (it != state_->memo.end()) return it->second;
    }
    // Evaluated unlocked: evaluators may recurse into other functionals.
    Complex v = state_->f(w);
    std::lock_guard<std::mutex> lock(state_->m);
    state_->memo.emplace(w, v);
    return v;
  }

 private:
  struct State {
    std::function<Complex(const Word&)> f;
    std::map<Word, Complex> memo;
    std::mutex m;
  };
  Kind kind_;
  std::shared_ptr<State> state_;
};

// Explicit moment table. With cyclic = true a missing word is looked up
// through its rotations (valid for tracial states).
inline ExpectationFunctional table_functional(std::map<Word, Complex> table, bool cyclic = false) {
  auto t = std::make_shared<std::map<Word, Complex>>(std::move(table));
  return ExpectationFunctional(ExpectationFunctional::Kind::Table, [t, cyclic](const Word& w) {
    Word r = w;
    for (std::size_t s = 0; s < (cyclic ? w.size() : 1); ++s) {
      auto it = t->find(r);
      if (it != t->end()) return it->second;
      std::rotate(r.begin(), r.begin() + 1, r.end());
    }
    throw ValidationError("moment table has no entry for word " + word_str(w));
  });
}

// Single variable (letter op 0): <x^n> = m[n-1].
inline ExpectationFunctional moment_sequence_functional(std::vector<Complex> m) {
  auto mv = std::make_shared<std::vector<Complex>>(std::move(m));
  return ExpectationFunctional(ExpectationFunctional::Kind::Table, [mv](const Word& w) {
    for (const auto& l : w) require(l.op == 0, "moment sequence functional has a single letter");
    require(w.size() <= mv->size(), "moment of order " + std::to_string(w.size()) + " not supplied");
    return (*mv)[w.size() - 1];
  });
}

inline Word concat(const Args& args, const std::vector<int>& idx) {
  Word w;
  for (int i : idx) w.insert(w.end(), args[i].begin(), args[i].end());
  return w;
}

// <args>_pi = prod over blocks of <product of the block's arguments in order>.
// Extended precision for the alternating NC sums, which cancel heavily.
using WideComplex = std::complex<long double>;

inline WideComplex widen(Complex z) { return {z.real(), z.imag()}; }
inline Complex narrow(WideComplex z) {
  return {static_cast<double>(z.real()), static_cast<double>(z.imag())};
}

inline WideComplex partition_moment_wide(const Args& args, const Partition& pi, const ExpectationFunctional& phi) {
  require(static_cast<int>(args.size()) == pi.size(), "partition size does not match argument count");
  WideComplex p = 1.0L;
  for (const auto& b : pi.blocks()) p *= widen(phi(concat(args, b)));
  return p;
}

inline Complex partition_moment(const Args& args, const Partition& pi, const ExpectationFunctional& phi) {
  return narrow(partition_moment_wide(args, pi, phi));
}

namespace detail {

inline const std::vector<long long>& moebius_to_top(int n) {
  static std::mutex m;
  static std::map<int, std::vector<long long>> cache;
  std::lock_guard<std::mutex> lock(m);
  auto it = cache.find(n);
  if (it != cache.end()) return it->second;
  return cache.emplace(n, nc_lattice(n).moebius_column(Partition::one(n))).first->second;
}

inline Args sub_args(const Args& args, unsigned mask) {
  Args s;
  for (std::size_t i = 0; i < args.size(); ++i)
    if (mask >> i & 1u) s.push_back(args[i]);
  return s;
}

}  // namespace detail

// kappa_n(args) = sum_{sigma in NC(n)} <args>_sigma mu(sigma, 1_n).
inline Complex free_cumulant(const Args& args, const ExpectationFunctional& phi) {
  const int n = static_cast<int>(args.size());
  require(n >= 1, "free cumulant needs at least one argument");
  const auto& lat = nc_lattice(n);
  const auto& mu = detail::moebius_to_top(n);
  WideComplex k = 0.0L;
  for (std::size_t i = 0; i < lat.size(); ++i)
    if (mu[i] != 0) k += static_cast<long double>(mu[i]) * partition_moment_wide(args, lat[i], phi);
  return narrow(k);
}

// Free cumulants of every sub-family args|_S, S a non-empty subset (bitmask).
class CumulantSet {
 public:
  CumulantSet() = default;
  CumulantSet(int n, std::vector<Complex> by_mask) : n_(n), k_(std::move(by_mask)) {}

  int n() const { return n_; }
  Complex of(unsigned mask) const { return k_.at(mask); }
  Complex top() const { return k_.at((1u << n_) - 1); }

  // kappa_pi = prod over blocks of the block cumulants.
  Complex partition(const Partition& pi) const {
    require(pi.size() == n_, "partition size does not match cumulant set");
    Complex p = 1.0;
    for (const auto& b : pi.blocks()) {
      unsigned m = 0;
      for (int i : b) m |= 1u << i;
      p *= k_.at(m);
    }
    return p;
  }

 private:
  int n_ = 0;
  std::vector<Complex> k_;
};

inline CumulantSet cumulants_from_moments(const Args& args, const ExpectationFunctional& phi) {
  const int n = static_cast<int>(args.size());
  require(n >= 1 && n <= 12, "cumulant set supports 1..12 arguments");
  std::vector<Complex> k(1u << n, 0.0);
  for (unsigned m = 1; m < (1u << n); ++m) k[m] = free_cumulant(detail::sub_args(args, m), phi);
  return CumulantSet(n, std::move(k));
}

// Second path: kappa_n = <args> - sum_{pi != 1_n} kappa_pi, recursing on blocks.
inline Complex free_cumulant_recursive(const Args& args, const ExpectationFunctional& phi) {
  const int n = static_cast<int>(args.size());
  require(n >= 1 && n <= 12, "recursive cumulant supports 1..12 arguments");
  std::vector<Complex> k(1u << n, 0.0);
  std::vector<char> done(1u << n, 0);
  std::function<Complex(unsigned)> kap = [&](unsigned mask) -> Complex {
    if (done[mask]) return k[mask];
    std::vector<int> pos;
    for (int i = 0; i < n; ++i)
      if (mask >> i & 1u) pos.push_back(i);
    const int m = static_cast<int>(pos.size());
    Complex v = phi(concat(args, pos));
    for (const auto& pi : nc_lattice(m).elements()) {
      if (pi.block_count() == 1) continue;
      Complex p = 1.0;
      for (const auto& b : pi.blocks()) {
        unsigned bm = 0;
        for (int j : b) bm |= 1u << pos[j];
        p *= kap(bm);
      }
      v -= p;
    }
    done[mask] = 1;
    return k[mask] = v;
  };
  return kap((1u << n) - 1);
}

// Moment of the full family from its cumulants: sum over NC(n) of kappa_pi.
inline Complex moments_from_cumulants(const CumulantSet& kappa) {
  Complex m = 0.0;
  for (const auto& pi : nc_lattice(kappa.n()).elements()) m += kappa.partition(pi);
  return m;
}

// <a_1 b_1 a_2 b_2 ... a_n b_n> for {a} free from {b}:
// sum_{pi in NC(n)} kappa_pi(a) <b>_{K(pi)}.
inline Complex mixed_moment_free(const Args& a, const ExpectationFunctional& phi_a, const Args& b,
                                 const ExpectationFunctional& phi_b) {
  require(a.size() == b.size() && !a.empty(), "alternating product needs equal, non-empty families");
  const int n = static_cast<int>(a.size());
  auto ka = cumulants_from_moments(a, phi_a);
  Complex s = 0.0;
  for (const auto& pi : nc_lattice(n).elements()) s += ka.partition(pi) * partition_moment(b, kreweras(pi), phi_b);
  return s;
}

// Joint functional of two free families given their individual (tracial)
// functionals. Letters with is_a(l) belong to the first family.
inline ExpectationFunctional free_product_functional(ExpectationFunctional phi_a, ExpectationFunctional phi_b,
                                                     std::function<bool(const Letter&)> is_a) {
  return ExpectationFunctional(ExpectationFunctional::Kind::FreeProduct, [=](const Word& w) -> Complex {
    std::size_t na = 0;
    for (const auto& l : w) na += is_a(l);
    if (na == w.size()) return phi_a(w);
    if (na == 0) return phi_b(w);
    // Rotate so the word starts with an a-letter right after a b-letter.
    std::size_t s = 0;
    while (!(is_a(w[s]) && !is_a(w[(s + w.size() - 1) % w.size()]))) ++s;
    Word r(w.begin() + s, w.end());
    r.insert(r.end(), w.begin(), w.begin() + s);
    Args a, b;
    for (std::size_t i = 0; i < r.size();) {
      bool fa = is_a(r[i]);
      Word run;
      while (i < r.size() && is_a(r[i]) == fa) run.push_back(r[i++]);
      (fa ? a : b).push_back(std::move(run));
    }
    return mixed_moment_free(a, phi_a, b, phi_b);
  });
}

// <(a^{n1}-<a^{n1}>)(b^{m1}-<b^{m1}>)(a^{n2}-...)...> under phi.
// Zero for free a, b; for an empirical phi it measures the violation.
inline Complex alternating_centered_test(const std::vector<int>& n_exp, const std::vector<int>& m_exp,
                                         const ExpectationFunctional& phi, Letter a, Letter b) {
  require(n_exp.size() == m_exp.size() && !n_exp.empty(), "exponent lists must match and be non-empty");
  std::vector<Word> z;
  for (std::size_t i = 0; i < n_exp.size(); ++i) {
    require(n_exp[i] >= 1 && m_exp[i] >= 1, "exponents must be positive");
    z.push_back(Word(n_exp[i], a));
    z.push_back(Word(m_exp[i], b));
  }
  const unsigned N = static_cast<unsigned>(z.size());
  require(N <= 16, "alternating test limited to 8 pairs");
  std::vector<Complex> mean(N);
  for (unsigned i = 0; i < N; ++i) mean[i] = phi(z[i]);
  Complex s = 0.0;
  for (unsigned mask = 0; mask < (1u << N); ++mask) {
    Complex coef = 1.0;
    Word w;
    for (unsigned i = 0; i < N; ++i) {
      if (mask >> i & 1u) w.insert(w.end(), z[i].begin(), z[i].end());
      else coef *= -mean[i];
    }
    s += coef * phi(w);
  }
  return s;
}

// Single-variable sequences: kappa_1..kappa_n from m_1..m_n and back.
inline std::vector<Complex> cumulants_from_moment_sequence(const std::vector<Complex>& m) {
  auto phi = moment_sequence_functional(m);
  std::vector<Complex> k;
  for (std::size_t n = 1; n <= m.size(); ++n) k.push_back(free_cumulant(letters(Word(n, Letter{0, 0.0})), phi));
  return k;
}

inline std::vector<Complex> moments_from_cumulant_sequence(const std::vector<Complex>& k) {
  std::vector<Complex> m;
  for (std::size_t n = 1; n <= k.size(); ++n) {
    WideComplex s = 0.0L;
    for (const auto& pi : nc_lattice(static_cast<int>(n)).elements()) {
      WideComplex p = 1.0L;
      for (const auto& b : pi.blocks()) p *= widen(k[b.size() - 1]);
      s += p;
    }
    m.push_back(narrow(s));
  }
  return m;
}

// Additivity of free cumulants: kappa_n(a + b) = kappa_n(a) + kappa_n(b).
inline std::vector<Complex> free_sum_cumulants(const std::vector<Complex>& ka, const std::vector<Complex>& kb) {
  require(ka.size() == kb.size(), "cumulant sequences differ in length");
  std::vector<Complex> s(ka.size());
  for (std::size_t i = 0; i < ka.size(); ++i) s[i] = ka[i] + kb[i];
  return s;
}

}  // namespace freek
