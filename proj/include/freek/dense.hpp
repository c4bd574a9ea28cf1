#pragma once

#include <Eigen/Dense>

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <random>
#include <string>
#include <vector>

#include "json.hpp"

#include "freek/core.hpp"
#include "freek/free_moments.hpp"
#include "freek/permutation.hpp"

namespace freek {

using Mat = Eigen::MatrixXcd;
using Vec = Eigen::VectorXcd;

inline std::size_t ipow_size(std::size_t b, int e) {
  std::size_t r = 1;
  for (int i = 0; i < e; ++i) r *= b;
  return r;
}

inline bool is_hermitian(const Mat& m, double tol = 1e-10) {
  return m.rows() == m.cols() && (m - m.adjoint()).cwiseAbs().maxCoeff() <= tol * std::max(1.0, m.cwiseAbs().maxCoeff());
}

// Tensor-product basis |i_1 ... i_k>, index sum_l i_l D^{k-1-l}.
inline std::vector<int> digits(std::size_t idx, int D, int k) {
  std::vector<int> d(k);
  for (int l = k - 1; l >= 0; --l) {
    d[l] = static_cast<int>(idx % D);
    idx /= D;
  }
  return d;
}

inline std::size_t undigits(const std::vector<int>& d, int D) {
  std::size_t idx = 0;
  for (int x : d) idx = idx * D + x;
  return idx;
}

// W_alpha |j_1 ... j_k> = |j_{alpha(1)} ... j_{alpha(k)}>, so that
// Tr(W_beta A_1 x ... x A_k) multiplies traces along beta's cycles,
// A_{j} A_{beta(j)} A_{beta^2(j)} ...
inline Mat permutation_operator(const Permutation& alpha, int D) {
  const int k = alpha.size();
  const std::size_t N = ipow_size(D, k);
  Mat W = Mat::Zero(N, N);
  for (std::size_t j = 0; j < N; ++j) {
    auto d = digits(j, D, k);
    std::vector<int> e(k);
    for (int l = 0; l < k; ++l) e[l] = d[alpha(l)];
    W(undigits(e, D), j) = 1.0;
  }
  return W;
}

inline Mat kron(const Mat& a, const Mat& b) {
  Mat r(a.rows() * b.rows(), a.cols() * b.cols());
  for (Eigen::Index i = 0; i < a.rows(); ++i)
    for (Eigen::Index j = 0; j < a.cols(); ++j) r.block(i * b.rows(), j * b.cols(), b.rows(), b.cols()) = a(i, j) * b;
  return r;
}

inline Mat kron_all(const std::vector<Mat>& ops) {
  require(!ops.empty(), "tensor product of an empty list");
  Mat r = ops[0];
  for (std::size_t i = 1; i < ops.size(); ++i) r = kron(r, ops[i]);
  return r;
}

// O <- (I x .. x M_leg x .. x I) O, with M acting on every one of k legs.
inline void left_apply_each_leg(const Mat& M, int k, Mat& O) {
  const Eigen::Index D = M.rows();
  const Eigen::Index N = O.rows();
  for (int l = 0; l < k; ++l) {
    const Eigen::Index R = static_cast<Eigen::Index>(ipow_size(D, k - l - 1));
    const Eigen::Index blocks = N / (D * R);
    for (Eigen::Index a = 0; a < blocks; ++a)
      for (Eigen::Index b = 0; b < R; ++b) {
        Eigen::Map<Mat, 0, Eigen::Stride<Eigen::Dynamic, Eigen::Dynamic>> view(
            O.data() + a * D * R + b, D, O.cols(), Eigen::Stride<Eigen::Dynamic, Eigen::Dynamic>(O.outerStride(), R));
        Mat tmp = M * view;
        view = tmp;
      }
  }
}

// U^{dagger x k} O U^{x k}.
inline Mat conjugate_tensor_power(const Mat& U, int k, const Mat& O) {
  Mat ud = U.adjoint();
  Mat x = O;
  left_apply_each_leg(ud, k, x);
  Mat y = x.adjoint();
  left_apply_each_leg(ud, k, y);
  return y.adjoint();
}

inline bool is_diagonal(const Mat& m) {
  for (Eigen::Index j = 0; j < m.cols(); ++j)
    for (Eigen::Index i = 0; i < m.rows(); ++i)
      if (i != j && m(i, j) != Complex(0.0)) return false;
  return true;
}

namespace detail {

// Product ops[w_lo] ... ops[w_hi - 1]; diagonal factors cost O(D^2).
inline Mat word_product(const std::vector<Mat>& o, const std::vector<char>& diag, const Word& w, std::size_t lo,
                        std::size_t hi) {
  Mat p = o[w[lo].op];
  bool pdiag = diag[w[lo].op];
  for (std::size_t i = lo + 1; i < hi; ++i) {
    const int op = w[i].op;
    if (diag[op]) p = p * o[op].diagonal().asDiagonal();
    else if (pdiag) p = p.diagonal().asDiagonal() * o[op];
    else p = p * o[op];
    pdiag = pdiag && diag[op];
  }
  return p;
}

// One half of a split word: a diagonal (kept as a vector), a borrowed
// single operator, or an owned product.
struct WordHalf {
  const Mat* mat = nullptr;
  Mat owned;
  Eigen::VectorXcd diag;
  bool is_diag = false;
};

inline void eval_half(const std::vector<Mat>& o, const std::vector<char>& diag, const Word& w, std::size_t lo,
                      std::size_t hi, WordHalf& out) {
  bool all_diag = true;
  for (std::size_t i = lo; i < hi; ++i) all_diag = all_diag && diag[w[i].op];
  if (all_diag) {
    out.is_diag = true;
    out.diag = o[w[lo].op].diagonal();
    for (std::size_t i = lo + 1; i < hi; ++i) out.diag.array() *= o[w[i].op].diagonal().array();
  } else if (hi - lo == 1) {
    out.mat = &o[w[lo].op];
  } else {
    out.owned = word_product(o, diag, w, lo, hi);
    out.mat = &out.owned;
  }
}

}  // namespace detail

// <w> = (1/D) Tr(ops[w_1] ops[w_2] ...); time tags are ignored. The word is
// split in two halves X, Y and Tr(XY) = sum(X^T o Y).
inline ExpectationFunctional trace_functional(std::vector<Mat> ops) {
  require(!ops.empty(), "trace functional needs operators");
  const auto D = ops[0].rows();
  for (const auto& o : ops) require(o.rows() == D && o.cols() == D, "operators must be square and of equal size");
  auto sp = std::make_shared<std::vector<Mat>>(std::move(ops));
  auto dg = std::make_shared<std::vector<char>>();
  for (const auto& o : *sp) dg->push_back(is_diagonal(o));
  return ExpectationFunctional(ExpectationFunctional::Kind::NormalizedTrace, [sp, dg](const Word& w) -> Complex {
    const auto& o = *sp;
    for (const auto& l : w) require(l.op >= 0 && l.op < static_cast<int>(o.size()), "word letter has no operator");
    const double D = static_cast<double>(o[0].rows());
    if (w.size() == 1) return o[w[0].op].trace() / D;
    const std::size_t h = w.size() / 2;
    detail::WordHalf x, y;
    detail::eval_half(o, *dg, w, 0, h, x);
    detail::eval_half(o, *dg, w, h, w.size(), y);
    Complex t;
    if (x.is_diag && y.is_diag) t = x.diag.cwiseProduct(y.diag).sum();
    else if (x.is_diag) t = x.diag.cwiseProduct(y.mat->diagonal()).sum();
    else if (y.is_diag) t = x.mat->diagonal().cwiseProduct(y.diag).sum();
    else t = (x.mat->transpose().cwiseProduct(*y.mat)).sum();
    return t / D;
  });
}

// Hermitian operator with +1 on the first half of the basis and -1 on the rest.
inline Mat sign_split(int D) {
  Mat a = Mat::Zero(D, D);
  for (int i = 0; i < D; ++i) a(i, i) = i < D / 2 ? 1.0 : -1.0;
  return a;
}

// Hermitian operator alternating +1, -1 along the diagonal.
inline Mat sign_alternating(int D) {
  Mat b = Mat::Zero(D, D);
  for (int i = 0; i < D; ++i) b(i, i) = i % 2 ? -1.0 : 1.0;
  return b;
}

inline Mat gue(int D, std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  Mat g(D, D);
  for (int i = 0; i < D; ++i)
    for (int j = 0; j < D; ++j) g(i, j) = Complex(n(rng), n(rng));
  return (g + g.adjoint()) / std::sqrt(4.0 * D);
}

// Matrix files. JSON: {"rows", "cols", "hermitian", "data": [[re, im], ...]}
// row-major. Binary: magic "FKMAT\0\0\1", u64 rows, u64 cols, then row-major
// (re, im) float64 pairs, all little-endian.
inline nlohmann::json matrix_to_json(const Mat& m) {
  nlohmann::json data = nlohmann::json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) data.push_back({m(i, j).real(), m(i, j).imag()});
  return {{"rows", m.rows()}, {"cols", m.cols()}, {"hermitian", is_hermitian(m)}, {"data", data}};
}

inline Mat matrix_from_json(const nlohmann::json& j) {
  require(j.is_object() && j.contains("rows") && j.contains("cols") && j.contains("data"),
          "matrix JSON needs rows, cols and data");
  const auto r = j.at("rows").get<Eigen::Index>(), c = j.at("cols").get<Eigen::Index>();
  const auto& d = j.at("data");
  require(r > 0 && c > 0 && d.is_array() && static_cast<Eigen::Index>(d.size()) == r * c,
          "matrix JSON data length does not match rows*cols");
  Mat m(r, c);
  for (Eigen::Index i = 0; i < r; ++i)
    for (Eigen::Index k = 0; k < c; ++k) {
      const auto& e = d[i * c + k];
      if (e.is_array()) {
        require(e.size() == 2, "complex entries are [re, im] pairs");
        m(i, k) = Complex(e[0].get<double>(), e[1].get<double>());
      } else {
        m(i, k) = e.get<double>();
      }
    }
  if (j.value("hermitian", false)) require(is_hermitian(m, 1e-9), "matrix flagged hermitian is not");
  return m;
}

inline constexpr char kMatrixMagic[8] = {'F', 'K', 'M', 'A', 'T', '\0', '\0', '\1'};

inline void save_matrix_binary(const Mat& m, const std::string& path) {
  static_assert(std::endian::native == std::endian::little, "binary matrix format assumes little-endian host");
  std::ofstream f(path, std::ios::binary);
  require(bool(f), "cannot open " + path + " for writing");
  f.write(kMatrixMagic, 8);
  std::uint64_t r = m.rows(), c = m.cols();
  f.write(reinterpret_cast<const char*>(&r), 8);
  f.write(reinterpret_cast<const char*>(&c), 8);
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      double v[2] = {m(i, j).real(), m(i, j).imag()};
      f.write(reinterpret_cast<const char*>(v), 16);
    }
}

inline Mat load_matrix(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  require(bool(f), "cannot open matrix file " + path);
  char head[8] = {};
  f.read(head, 8);
  if (f && std::memcmp(head, kMatrixMagic, 8) == 0) {
    std::uint64_t r = 0, c = 0;
    f.read(reinterpret_cast<char*>(&r), 8);
    f.read(reinterpret_cast<char*>(&c), 8);
    require(f && r > 0 && c > 0 && r * c <= (1ull << 28), "corrupt binary matrix header in " + path);
    Mat m(r, c);
    for (std::uint64_t i = 0; i < r; ++i)
      for (std::uint64_t j = 0; j < c; ++j) {
        double v[2];
        f.read(reinterpret_cast<char*>(v), 16);
        require(bool(f), "truncated binary matrix " + path);
        m(i, j) = Complex(v[0], v[1]);
      }
    return m;
  }
  f.clear();
  f.seekg(0);
  nlohmann::json j;
  try {
    f >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError("matrix file " + path + " is neither binary nor JSON: " + e.what());
  }
  return matrix_from_json(j);
}

}  // namespace freek
