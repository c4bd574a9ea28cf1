#pragma once

#include <algorithm>
#include <cstddef>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <numeric>
#include <ostream>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "freek/core.hpp"

namespace freek {

// Set partition of {0..n-1}, stored as a restricted growth string: label[i]
// is the index of the block containing i, blocks numbered by least element.
// The RGS is canonical, so equality is plain vector equality.
class Partition {
 public:
  Partition() = default;

  static Partition zero(int n) {
    std::vector<int> l(n);
    std::iota(l.begin(), l.end(), 0);
    return Partition(std::move(l), true);
  }
  static Partition one(int n) { return Partition(std::vector<int>(n, 0), true); }

  // Arbitrary labels; relabelled to canonical form.
  static Partition from_labels(const std::vector<int>& labels) {
    std::map<int, int> remap;
    std::vector<int> l(labels.size());
    for (std::size_t i = 0; i < labels.size(); ++i) {
      auto [it, fresh] = remap.emplace(labels[i], static_cast<int>(remap.size()));
      l[i] = it->second;
    }
    return Partition(std::move(l), true);
  }

  // 0-based blocks; must cover {0..n-1} exactly once.
  static Partition from_blocks(int n, const std::vector<std::vector<int>>& blocks) {
    require(n >= 0, "partition size must be non-negative");
    std::vector<int> l(n, -1);
    for (std::size_t b = 0; b < blocks.size(); ++b) {
      require(!blocks[b].empty(), "partition has an empty block");
      for (int x : blocks[b]) {
        require(x >= 0 && x < n, "partition element out of range");
        require(l[x] < 0, "element " + std::to_string(x + 1) + " appears in two blocks");
        l[x] = static_cast<int>(b);
      }
    }
    for (int i = 0; i < n; ++i)
      require(l[i] >= 0, "element " + std::to_string(i + 1) + " is not covered");
    return from_labels(l);
  }

  // 1-based blocks, n inferred from the largest element.
  static Partition one_based(const std::vector<std::vector<int>>& blocks) {
    int n = 0;
    std::vector<std::vector<int>> z;
    for (const auto& b : blocks) {
      z.emplace_back();
      for (int x : b) {
        require(x >= 1, "1-based partition element must be >= 1");
        n = std::max(n, x);
        z.back().push_back(x - 1);
      }
    }
    return from_blocks(n, z);
  }

  int size() const { return static_cast<int>(label_.size()); }
  int block_count() const {
    return label_.empty() ? 0 : *std::max_element(label_.begin(), label_.end()) + 1;
  }
  int label(int i) const { return label_[i]; }
  const std::vector<int>& labels() const { return label_; }

  // Blocks sorted ascending, ordered by least element.
  std::vector<std::vector<int>> blocks() const {
    std::vector<std::vector<int>> b(block_count());
    for (int i = 0; i < size(); ++i) b[label_[i]].push_back(i);
    return b;
  }

  bool is_noncrossing() const {
    const int n = size();
    for (int a = 0; a < n; ++a)
      for (int b = a + 1; b < n; ++b) {
        if (label_[a] == label_[b]) continue;
        for (int c = b + 1; c < n; ++c) {
          if (label_[c] != label_[a]) continue;
          for (int d = c + 1; d < n; ++d)
            if (label_[d] == label_[b]) return false;
        }
      }
    return true;
  }

  // Refinement order: every block of *this lies inside a block of other.
  bool refines(const Partition& other) const {
    require(size() == other.size(), "refinement compares partitions of different sizes");
    std::vector<int> seen(block_count(), -1);
    for (int i = 0; i < size(); ++i) {
      int& s = seen[label_[i]];
      if (s < 0) s = other.label_[i];
      else if (s != other.label_[i]) return false;
    }
    return true;
  }

  std::string str() const {
    std::string s = "{";
    auto bs = blocks();
    for (std::size_t b = 0; b < bs.size(); ++b) {
      if (b) s += ",";
      s += "{";
      for (std::size_t j = 0; j < bs[b].size(); ++j) {
        if (j) s += ",";
        s += std::to_string(bs[b][j] + 1);
      }
      s += "}";
    }
    return s + "}";
  }

  friend bool operator==(const Partition& a, const Partition& b) { return a.label_ == b.label_; }
  friend bool operator<(const Partition& a, const Partition& b) { return a.label_ < b.label_; }

 private:
  Partition(std::vector<int> l, bool) : label_(std::move(l)) {}
  std::vector<int> label_;
};

inline std::ostream& operator<<(std::ostream& os, const Partition& p) { return os << p.str(); }

struct PartitionHash {
  std::size_t operator()(const Partition& p) const {
    std::size_t h = 1469598103934665603ull;
    for (int x : p.labels()) h = (h ^ static_cast<std::size_t>(x + 1)) * 1099511628211ull;
    return h;
  }
};

inline constexpr int kDefaultEnumerationLimit = 10;

// All set partitions of {0..n-1}, in lexicographic RGS order.
inline std::vector<Partition> enumerate_set_partitions(int n, int limit = kDefaultEnumerationLimit) {
  require(n >= 0 && n <= limit, "set partition enumeration limited to n <= " + std::to_string(limit));
  std::vector<Partition> out;
  std::vector<int> l(n, 0);
  std::function<void(int, int)> rec = [&](int i, int maxl) {
    if (i == n) {
      out.push_back(Partition::from_labels(l));
      return;
    }
    for (int v = 0; v <= maxl + 1; ++v) {
      l[i] = v;
      rec(i + 1, std::max(maxl, v));
    }
  };
  if (n == 0) out.push_back(Partition::from_labels({}));
  else {
    l[0] = 0;
    rec(1, 0);
  }
  return out;
}

// NC(n) in lexicographic RGS order. Prefix pruning: a crossing a<b<c<d is
// detected when d is placed.
inline std::vector<Partition> enumerate_nc(int n, int limit = kDefaultEnumerationLimit) {
  require(n >= 0 && n <= limit, "NC(n) enumeration limited to n <= " + std::to_string(limit));
  std::vector<Partition> out;
  std::vector<int> l(n, 0);
  auto crosses_at = [&](int d) {
    for (int b = 0; b < d; ++b) {
      if (l[b] != l[d]) continue;
      for (int c = b + 1; c < d; ++c) {
        if (l[c] == l[d]) continue;
        for (int a = 0; a < b; ++a)
          if (l[a] == l[c]) return true;
      }
    }
    return false;
  };
  std::function<void(int, int)> rec = [&](int i, int maxl) {
    if (i == n) {
      out.push_back(Partition::from_labels(l));
      return;
    }
    for (int v = 0; v <= maxl + 1; ++v) {
      l[i] = v;
      if (!crosses_at(i)) rec(i + 1, std::max(maxl, v));
    }
  };
  if (n == 0) out.push_back(Partition::from_labels({}));
  else rec(1, 0);
  return out;
}

namespace detail {

// Cycle-per-block permutation (blocks traversed increasingly) as an image table.
inline std::vector<int> block_cycle_perm(const Partition& p) {
  std::vector<int> img(p.size());
  for (const auto& b : p.blocks())
    for (std::size_t j = 0; j < b.size(); ++j) img[b[j]] = b[(j + 1) % b.size()];
  return img;
}

inline Partition orbit_partition_of(const std::vector<int>& img) {
  const int n = static_cast<int>(img.size());
  std::vector<int> l(n, -1);
  int next = 0;
  for (int i = 0; i < n; ++i) {
    if (l[i] >= 0) continue;
    for (int j = i; l[j] < 0; j = img[j]) l[j] = next;
    ++next;
  }
  return Partition::from_labels(l);
}

}  // namespace detail

// Kreweras complement on the circle A1 B1 A2 B2 ... (each B_i right after A_i):
// orbits of i -> P^{-1}(i+1), P the block-cycle permutation of pi.
inline Partition kreweras(const Partition& pi) {
  require(pi.is_noncrossing(), "Kreweras complement requires a non-crossing partition");
  const int n = pi.size();
  auto P = detail::block_cycle_perm(pi);
  std::vector<int> Pinv(n);
  for (int i = 0; i < n; ++i) Pinv[P[i]] = i;
  std::vector<int> k(n);
  for (int i = 0; i < n; ++i) k[i] = Pinv[(i + 1) % n];
  return detail::orbit_partition_of(k);
}

// Inverse map: orbits of gamma o T^{-1}, T the block-cycle permutation of tau.
inline Partition kreweras_inverse(const Partition& tau) {
  require(tau.is_noncrossing(), "inverse Kreweras requires a non-crossing partition");
  const int n = tau.size();
  auto T = detail::block_cycle_perm(tau);
  std::vector<int> Tinv(n);
  for (int i = 0; i < n; ++i) Tinv[T[i]] = i;
  std::vector<int> p(n);
  for (int i = 0; i < n; ++i) p[i] = (Tinv[i] + 1) % n;
  return detail::orbit_partition_of(p);
}

// Moebius function on the full set-partition lattice, mu(sigma, pi) for sigma <= pi:
// prod over blocks of pi of (-1)^{m-1} (m-1)!, m = number of sigma-blocks inside.
inline long long set_partition_moebius(const Partition& sigma, const Partition& pi) {
  require(sigma.refines(pi), "set-partition Moebius requires sigma <= pi");
  std::vector<std::vector<int>> inner(pi.block_count());
  for (int i = 0; i < sigma.size(); ++i) inner[pi.label(i)].push_back(sigma.label(i));
  long long mu = 1;
  for (auto& v : inner) {
    std::sort(v.begin(), v.end());
    long long m = std::unique(v.begin(), v.end()) - v.begin();
    long long f = 1;
    for (long long j = 2; j < m; ++j) f *= j;
    mu *= ((m - 1) % 2 ? -1 : 1) * f;
  }
  return mu;
}

// NC(n) with index and lazily memoised Moebius function. Rows mu(sigma, .)
// follow the defining recursion sum_{sigma<=tau<=pi} mu(sigma,tau) = 0.
class NCLattice {
 public:
  explicit NCLattice(int n, int limit = kDefaultEnumerationLimit)
      : n_(n), elems_(enumerate_nc(n, limit)) {
    for (std::size_t i = 0; i < elems_.size(); ++i) index_.emplace(elems_[i], i);
    order_.resize(elems_.size());
    std::iota(order_.begin(), order_.end(), 0);
    // Finer first: more blocks means lower in the lattice.
    std::stable_sort(order_.begin(), order_.end(), [&](std::size_t a, std::size_t b) {
      return elems_[a].block_count() > elems_[b].block_count();
    });
    rows_.resize(elems_.size());
  }

  int n() const { return n_; }
  std::size_t size() const { return elems_.size(); }
  const std::vector<Partition>& elements() const { return elems_; }
  const Partition& operator[](std::size_t i) const { return elems_[i]; }

  std::size_t index_of(const Partition& p) const {
    auto it = index_.find(p);
    require(it != index_.end(), "partition " + p.str() + " is not in NC(" + std::to_string(n_) + ")");
    return it->second;
  }

  long long moebius(const Partition& sigma, const Partition& pi) const {
    std::size_t s = index_of(sigma), p = index_of(pi);
    if (!sigma.refines(pi)) return 0;
    return row(s)[p];
  }

  // mu(., pi) by the dual recursion sum_{sigma<=tau<=pi} mu(tau,pi) = 0.
  std::vector<long long> moebius_column(const Partition& pi) const {
    std::size_t p = index_of(pi);
    std::vector<long long> col(size(), 0);
    std::vector<std::size_t> below;
    for (auto it = order_.rbegin(); it != order_.rend(); ++it)
      if (elems_[*it].refines(elems_[p])) below.push_back(*it);
    // below is coarse-to-fine
    for (std::size_t a = 0; a < below.size(); ++a) {
      std::size_t s = below[a];
      if (s == p) {
        col[s] = 1;
        continue;
      }
      long long acc = 0;
      for (std::size_t b = 0; b < a; ++b)
        if (elems_[s].refines(elems_[below[b]])) acc += col[below[b]];
      col[s] = -acc;
    }
    return col;
  }

 private:
  const std::vector<long long>& row(std::size_t s) const {
    std::lock_guard<std::mutex> lock(mu_);
    auto& r = rows_[s];
    if (!r.empty()) return r;
    r.assign(size(), 0);
    std::vector<std::size_t> above;
    for (std::size_t t : order_)
      if (elems_[s].refines(elems_[t])) above.push_back(t);
    // above is fine-to-coarse, so every tau < pi is done before pi
    for (std::size_t a = 0; a < above.size(); ++a) {
      std::size_t p = above[a];
      if (p == s) {
        r[p] = 1;
        continue;
      }
      long long acc = 0;
      for (std::size_t b = 0; b < a; ++b)
        if (elems_[above[b]].refines(elems_[p])) acc += r[above[b]];
      r[p] = -acc;
    }
    return r;
  }

  int n_;
  std::vector<Partition> elems_;
  std::unordered_map<Partition, std::size_t, PartitionHash> index_;
  std::vector<std::size_t> order_;
  mutable std::vector<std::vector<long long>> rows_;
  mutable std::mutex mu_;
};

// Process-wide lattice cache; lattices are immutable apart from their memo.
inline const NCLattice& nc_lattice(int n) {
  static std::mutex m;
  static std::map<int, std::unique_ptr<NCLattice>> cache;
  std::lock_guard<std::mutex> lock(m);
  auto& slot = cache[n];
  if (!slot) slot = std::make_unique<NCLattice>(n);
  return *slot;
}

inline long long moebius(const Partition& sigma, const Partition& pi) {
  require(sigma.size() == pi.size(), "Moebius arguments have different sizes");
  require(sigma.is_noncrossing() && pi.is_noncrossing(), "Moebius arguments must be non-crossing");
  return nc_lattice(sigma.size()).moebius(sigma, pi);
}

}  // namespace freek
