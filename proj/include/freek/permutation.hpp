#pragma once

#include <algorithm>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "freek/core.hpp"
#include "freek/partition.hpp"

namespace freek {

// Permutation of {0..k-1} stored as its image table. Products compose right
// to left: compose(a, b)(i) = a(b(i)).
class Permutation {
 public:
  Permutation() = default;

  static Permutation identity(int k) {
    std::vector<int> v(k);
    std::iota(v.begin(), v.end(), 0);
    return Permutation(std::move(v));
  }
  // The long cycle i -> i+1 mod k; one-line (2,3,...,k,1).
  static Permutation gamma(int k) {
    std::vector<int> v(k);
    for (int i = 0; i < k; ++i) v[i] = (i + 1) % k;
    return Permutation(std::move(v));
  }
  static Permutation from_images(std::vector<int> img) {
    std::vector<char> hit(img.size(), 0);
    for (int x : img) {
      require(x >= 0 && x < static_cast<int>(img.size()) && !hit[x], "not a permutation");
      hit[x] = 1;
    }
    return Permutation(std::move(img));
  }
  // One-line notation with 1-based entries, e.g. {2,1,3}.
  static Permutation one_line(const std::vector<int>& w) {
    std::vector<int> img(w.size());
    for (std::size_t i = 0; i < w.size(); ++i) img[i] = w[i] - 1;
    return from_images(std::move(img));
  }
  // Cycle-per-block permutation of a partition, blocks traversed increasingly.
  static Permutation from_partition(const Partition& p) {
    return Permutation(detail::block_cycle_perm(p));
  }

  int size() const { return static_cast<int>(img_.size()); }
  int operator()(int i) const { return img_[i]; }
  const std::vector<int>& images() const { return img_; }

  std::vector<int> one_line() const {
    std::vector<int> w(img_.size());
    for (std::size_t i = 0; i < img_.size(); ++i) w[i] = img_[i] + 1;
    return w;
  }

  Permutation inverse() const {
    std::vector<int> v(img_.size());
    for (std::size_t i = 0; i < img_.size(); ++i) v[img_[i]] = static_cast<int>(i);
    return Permutation(std::move(v));
  }

  // Cycles, each listed from its least element, sorted by least element.
  std::vector<std::vector<int>> cycles() const {
    std::vector<std::vector<int>> out;
    std::vector<char> seen(img_.size(), 0);
    for (int i = 0; i < size(); ++i) {
      if (seen[i]) continue;
      out.emplace_back();
      for (int j = i; !seen[j]; j = img_[j]) {
        seen[j] = 1;
        out.back().push_back(j);
      }
    }
    return out;
  }

  int num_cycles() const { return static_cast<int>(cycles().size()); }
  int length() const { return size() - num_cycles(); }
  Partition orbits() const { return detail::orbit_partition_of(img_); }

  std::string str() const {
    std::string s = "(";
    for (int i = 0; i < size(); ++i) s += (i ? "," : "") + std::to_string(img_[i] + 1);
    return s + ")";
  }

  friend bool operator==(const Permutation& a, const Permutation& b) { return a.img_ == b.img_; }
  friend bool operator<(const Permutation& a, const Permutation& b) { return a.img_ < b.img_; }

 private:
  explicit Permutation(std::vector<int> v) : img_(std::move(v)) {}
  std::vector<int> img_;
};

inline std::ostream& operator<<(std::ostream& os, const Permutation& p) { return os << p.str(); }

inline Permutation compose(const Permutation& a, const Permutation& b) {
  require(a.size() == b.size(), "composing permutations of different sizes");
  std::vector<int> v(a.size());
  for (int i = 0; i < a.size(); ++i) v[i] = a(b(i));
  return Permutation::from_images(std::move(v));
}

// S_k in lexicographic one-line order; index 0 is the identity.
inline std::vector<Permutation> all_permutations(int k) {
  require(k >= 0 && k <= 8, "S_k enumeration limited to k <= 8");
  std::vector<int> v(k);
  std::iota(v.begin(), v.end(), 0);
  std::vector<Permutation> out;
  do out.push_back(Permutation::from_images(v));
  while (std::next_permutation(v.begin(), v.end()));
  return out;
}

// Rank of a permutation in lexicographic order (Lehmer code).
inline std::size_t lex_index(const Permutation& p) {
  const int k = p.size();
  std::size_t idx = 0;
  for (int i = 0; i < k; ++i) {
    int smaller = 0;
    for (int j = i + 1; j < k; ++j) smaller += p(j) < p(i);
    std::size_t f = 1;
    for (int j = 2; j < k - i; ++j) f *= j;
    idx += smaller * f;
  }
  return idx;
}

inline bool on_geodesic(const Permutation& beta, const Permutation& alpha) {
  return beta.length() + compose(beta.inverse(), alpha).length() == alpha.length();
}

struct NcConversion {
  std::optional<Partition> partition;
  std::string reason;  // empty on success
  explicit operator bool() const { return partition.has_value(); }
};

// Accepts alpha iff (i) every orbit, listed increasingly b1<...<bm, satisfies
// alpha(b_i) = b_{i+1 mod m}, and (ii) the orbit partition is non-crossing.
inline NcConversion permutation_to_nc(const Permutation& alpha) {
  for (const auto& c : alpha.cycles()) {
    auto s = c;
    std::sort(s.begin(), s.end());
    for (std::size_t i = 0; i < s.size(); ++i)
      if (alpha(s[i]) != s[(i + 1) % s.size()])
        return {std::nullopt, "condition (i) violated: orbit containing " + std::to_string(s[0] + 1) +
                                  " is not traversed counterclockwise"};
  }
  Partition p = alpha.orbits();
  if (!p.is_noncrossing())
    return {std::nullopt, "condition (ii) violated: orbit partition " + p.str() + " is crossing"};
  return {p, ""};
}

struct Canonicalized {
  Permutation rho;    // relabelling
  Permutation alpha;  // rho^{-1} o alpha o rho, canonical
};

// rho = identity if alpha is already canonical; otherwise rho lays the cycles
// out as consecutive intervals (cycles by least element, each read from its
// least element), so the conjugate is an interval partition.
inline Canonicalized canonicalize_by_conjugation(const Permutation& alpha) {
  if (permutation_to_nc(alpha)) return {Permutation::identity(alpha.size()), alpha};
  std::vector<int> seq;
  for (const auto& c : alpha.cycles()) seq.insert(seq.end(), c.begin(), c.end());
  Permutation rho = Permutation::from_images(seq);
  return {rho, compose(rho.inverse(), compose(alpha, rho))};
}

// Exhaustive filter over S_k.
inline std::vector<Permutation> geodesic_set(const Permutation& alpha) {
  require(alpha.size() <= 7, "geodesic_set limited to k <= 7");
  std::vector<Permutation> out;
  for (const auto& b : all_permutations(alpha.size()))
    if (on_geodesic(b, alpha)) out.push_back(b);
  return out;
}

// Moebius function between permutations on a geodesic, via conjugation of
// alpha to canonical form and the NC lattice of its orbit partition.
inline long long permutation_moebius(const Permutation& beta, const Permutation& alpha) {
  require(on_geodesic(beta, alpha), "permutation Moebius requires beta on a geodesic to alpha");
  auto c = canonicalize_by_conjugation(alpha);
  Permutation b = compose(c.rho.inverse(), compose(beta, c.rho));
  auto pb = permutation_to_nc(b);
  require(bool(pb), "conjugated beta is not canonical: " + pb.reason);
  return moebius(*pb.partition, c.alpha.orbits());
}

// Cycle type as a descending list of cycle lengths.
inline std::vector<int> cycle_type(const Permutation& p) {
  std::vector<int> t;
  for (const auto& c : p.cycles()) t.push_back(static_cast<int>(c.size()));
  std::sort(t.rbegin(), t.rend());
  return t;
}

}  // namespace freek
