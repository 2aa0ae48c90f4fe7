/* Copyright 2026 The pvl Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

// Dense linear algebra and statistics used across the library.
//
// All reductions run left-to-right in index order and nothing is fused, so
// any two code paths that call the same routine on the same data agree to
// the last bit. Build with -ffp-contract=off (the CMake target sets it).

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstring>
#include <initializer_list>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "pvl/error.hpp"

namespace pvl {

class Vec {
 public:
  Vec() = default;
  explicit Vec(std::size_t dim, double fill = 0.0) : data_(dim, fill) {}
  Vec(std::initializer_list<double> xs) : data_(xs) {}
  explicit Vec(std::vector<double> xs) : data_(std::move(xs)) {}

  std::size_t dim() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  double operator[](std::size_t i) const { return data_[i]; }
  double& operator[](std::size_t i) { return data_[i]; }

  std::span<const double> span() const noexcept { return data_; }
  std::span<double> span() noexcept { return data_; }
  const std::vector<double>& values() const noexcept { return data_; }

  auto begin() const noexcept { return data_.begin(); }
  auto end() const noexcept { return data_.end(); }
  auto begin() noexcept { return data_.begin(); }
  auto end() noexcept { return data_.end(); }

  // Value equality (+0 == -0). Use bit_equal for byte identity.
  friend bool operator==(const Vec&, const Vec&) = default;

 private:
  std::vector<double> data_;
};

inline bool bit_equal(const Vec& a, const Vec& b) {
  return a.dim() == b.dim() &&
         (a.dim() == 0 ||
          std::memcmp(a.span().data(), b.span().data(), a.dim() * sizeof(double)) == 0);
}

inline bool all_finite(std::span<const double> xs) {
  return std::all_of(xs.begin(), xs.end(), [](double x) { return std::isfinite(x); });
}

// Row-major dense matrix.
class Mat {
 public:
  Mat() = default;
  Mat(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Mat(std::size_t rows, std::size_t cols, std::vector<double> data)
      : rows_(rows), cols_(cols), data_(std::move(data)) {
    require(data_.size() == rows_ * cols_, ErrorKind::kDimension,
            "matrix data length " + std::to_string(data_.size()) + " != " +
                std::to_string(rows_) + "x" + std::to_string(cols_));
  }

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }

  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }
  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }

  std::span<const double> row(std::size_t r) const {
    return std::span<const double>(data_).subspan(r * cols_, cols_);
  }
  std::span<double> row(std::size_t r) {
    return std::span<double>(data_).subspan(r * cols_, cols_);
  }
  Vec row_vec(std::size_t r) const {
    auto s = row(r);
    return Vec(std::vector<double>(s.begin(), s.end()));
  }

  std::span<const double> span() const noexcept { return data_; }
  std::span<double> span() noexcept { return data_; }

  friend bool operator==(const Mat&, const Mat&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

inline bool bit_equal(const Mat& a, const Mat& b) {
  return a.rows() == b.rows() && a.cols() == b.cols() &&
         (a.span().empty() ||
          std::memcmp(a.span().data(), b.span().data(), a.span().size() * sizeof(double)) == 0);
}

inline void check_same_dim(std::size_t a, std::size_t b, const char* what) {
  if (a != b) {
    fail(ErrorKind::kDimension, std::string(what) + ": dimension mismatch (" +
                                    std::to_string(a) + " vs " + std::to_string(b) + ")");
  }
}

inline double dot(std::span<const double> a, std::span<const double> b) {
  check_same_dim(a.size(), b.size(), "dot");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}
inline double dot(const Vec& a, const Vec& b) { return dot(a.span(), b.span()); }

inline double norm(const Vec& v) { return std::sqrt(dot(v, v)); }

inline Vec operator+(const Vec& a, const Vec& b) {
  check_same_dim(a.dim(), b.dim(), "add");
  Vec out(a.dim());
  for (std::size_t i = 0; i < a.dim(); ++i) out[i] = a[i] + b[i];
  return out;
}
inline Vec operator-(const Vec& a, const Vec& b) {
  check_same_dim(a.dim(), b.dim(), "sub");
  Vec out(a.dim());
  for (std::size_t i = 0; i < a.dim(); ++i) out[i] = a[i] - b[i];
  return out;
}
inline Vec operator*(double s, const Vec& a) {
  Vec out(a.dim());
  for (std::size_t i = 0; i < a.dim(); ++i) out[i] = s * a[i];
  return out;
}
inline Vec& operator+=(Vec& a, const Vec& b) {
  check_same_dim(a.dim(), b.dim(), "add");
  for (std::size_t i = 0; i < a.dim(); ++i) a[i] += b[i];
  return a;
}

// y += s * x
inline void axpy(double s, const Vec& x, Vec& y) {
  check_same_dim(x.dim(), y.dim(), "axpy");
  for (std::size_t i = 0; i < x.dim(); ++i) y[i] += s * x[i];
}

// M x, rows reduced left-to-right.
inline Vec matvec(const Mat& m, std::span<const double> x) {
  check_same_dim(m.cols(), x.size(), "matvec");
  Vec out(m.rows());
  for (std::size_t r = 0; r < m.rows(); ++r) out[r] = dot(m.row(r), x);
  return out;
}
inline Vec matvec(const Mat& m, const Vec& x) { return matvec(m, x.span()); }

// M^T x, each output reduced over rows in ascending order.
inline Vec matvec_t(const Mat& m, std::span<const double> x) {
  check_same_dim(m.rows(), x.size(), "matvec_t");
  Vec out(m.cols());
  for (std::size_t c = 0; c < m.cols(); ++c) {
    double s = 0.0;
    for (std::size_t r = 0; r < m.rows(); ++r) s += m(r, c) * x[r];
    out[c] = s;
  }
  return out;
}
inline Vec matvec_t(const Mat& m, const Vec& x) { return matvec_t(m, x.span()); }

// A unit vector in residual-stream space tagged with the layer it belongs to.
class Direction {
 public:
  Direction() = default;
  Direction(const Vec& v, int layer, std::string label = {})
      : unit_(normalized(v)), layer_(layer), label_(std::move(label)) {}

  const Vec& unit() const noexcept { return unit_; }
  std::size_t dim() const noexcept { return unit_.dim(); }
  int layer() const noexcept { return layer_; }
  const std::string& label() const noexcept { return label_; }

  Direction negated() const {
    Direction d = *this;
    for (auto& x : d.unit_) x = -x;
    return d;
  }

  static Vec normalized(const Vec& v) {
    double n = norm(v);
    require(v.dim() > 0 && n > 0.0 && std::isfinite(n), ErrorKind::kDegenerate,
            "direction from zero or non-finite vector");
    return (1.0 / n) * v;
  }

 private:
  Vec unit_;
  int layer_ = 0;
  std::string label_;
};

// Signed salience of feature d in state v.
inline double project(const Vec& v, const Direction& d) {
  check_same_dim(v.dim(), d.dim(), "project");
  return dot(v, d.unit());
}

inline double cosine(const Vec& a, const Vec& b) {
  check_same_dim(a.dim(), b.dim(), "cosine");
  double na = norm(a), nb = norm(b);
  require(na > 0.0 && nb > 0.0, ErrorKind::kPrecondition, "cosine of zero-norm vector");
  return std::clamp(dot(a, b) / (na * nb), -1.0, 1.0);
}

inline Vec softmax(const Vec& v) {
  Vec out(v.dim());
  if (v.dim() == 0) return out;
  double mx = v[0];
  for (double x : v) mx = std::max(mx, x);
  double sum = 0.0;
  for (std::size_t i = 0; i < v.dim(); ++i) {
    out[i] = std::exp(v[i] - mx);
    sum += out[i];
  }
  for (auto& x : out) x /= sum;
  return out;
}

inline constexpr double kRmsEps = 1e-6;

inline Vec rms_norm(const Vec& v, const Vec& gain) {
  check_same_dim(v.dim(), gain.dim(), "rms_norm");
  double ss = 0.0;
  for (double x : v) ss += x * x;
  double inv = 1.0 / std::sqrt(ss / static_cast<double>(v.dim()) + kRmsEps);
  Vec out(v.dim());
  for (std::size_t i = 0; i < v.dim(); ++i) out[i] = v[i] * gain[i] * inv;
  return out;
}

inline double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x / std::sqrt(2.0))); }

// Index of the largest entry; ties resolve to the lowest index.
inline std::size_t argmax(std::span<const double> xs) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < xs.size(); ++i)
    if (xs[i] > xs[best]) best = i;
  return best;
}

// ---------------------------------------------------------------------------
// Symmetric eigendecomposition and PCA

struct EigenResult {
  std::vector<double> values;  // descending
  std::vector<Vec> vectors;    // unit, paired with values
  int sweeps = 0;
};

inline constexpr double kJacobiTol = 1e-10;
inline constexpr int kJacobiMaxSweeps = 100;

inline double off_diagonal_norm(const Mat& a) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j)
      if (i != j) s += a(i, j) * a(i, j);
  return std::sqrt(s);
}

// Cyclic Jacobi rotations until the off-diagonal Frobenius norm drops to
// tol * max(1, ||A||_F).
inline EigenResult jacobi_eigen(Mat a, double tol = kJacobiTol, int max_sweeps = kJacobiMaxSweeps) {
  const std::size_t n = a.rows();
  require(n == a.cols() && n > 0, ErrorKind::kDimension, "jacobi_eigen: matrix must be square");
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j)
      require(a(i, j) == a(j, i), ErrorKind::kPrecondition, "jacobi_eigen: matrix not symmetric");

  Mat v(n, n);
  for (std::size_t i = 0; i < n; ++i) v(i, i) = 1.0;

  double frob = 0.0;
  for (double x : a.span()) frob += x * x;
  const double threshold = tol * std::max(1.0, std::sqrt(frob));

  int sweep = 0;
  for (; sweep <= max_sweeps; ++sweep) {
    if (off_diagonal_norm(a) <= threshold) break;
    if (sweep == max_sweeps) {
      fail(ErrorKind::kConvergence, "jacobi_eigen: no convergence after " +
                                        std::to_string(max_sweeps) + " sweeps");
    }
    for (std::size_t p = 0; p + 1 < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        const double apq = a(p, q);
        if (apq == 0.0) continue;
        const double theta = (a(q, q) - a(p, p)) / (2.0 * apq);
        const double t = (theta >= 0.0 ? 1.0 : -1.0) /
                         (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        for (std::size_t k = 0; k < n; ++k) {
          const double akp = a(k, p), akq = a(k, q);
          a(k, p) = c * akp - s * akq;
          a(k, q) = s * akp + c * akq;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double apk = a(p, k), aqk = a(q, k);
          a(p, k) = c * apk - s * aqk;
          a(q, k) = s * apk + c * aqk;
        }
        // Restore exact symmetry of the rotated pair.
        a(p, q) = a(q, p) = 0.0;
        for (std::size_t k = 0; k < n; ++k) {
          const double vkp = v(k, p), vkq = v(k, q);
          v(k, p) = c * vkp - s * vkq;
          v(k, q) = s * vkp + c * vkq;
        }
      }
    }
  }

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t i, std::size_t j) { return a(i, i) > a(j, j); });

  EigenResult out;
  out.sweeps = sweep;
  for (std::size_t idx : order) {
    out.values.push_back(a(idx, idx));
    Vec col(n);
    for (std::size_t k = 0; k < n; ++k) col[k] = v(k, idx);
    out.vectors.push_back(std::move(col));
  }
  return out;
}

// Flip so the largest-magnitude entry is positive (first such entry on ties).
inline void canonicalize_sign(Vec& v) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < v.dim(); ++i)
    if (std::abs(v[i]) > std::abs(v[best])) best = i;
  if (v.dim() > 0 && v[best] < 0.0)
    for (auto& x : v) x = -x;
}

struct PcaResult {
  std::vector<Vec> components;            // top-k, orthonormal
  std::vector<double> eigenvalues;        // top-k, non-increasing
  std::vector<double> variance_fraction;  // top-k, eigenvalue / total
  std::vector<double> spectrum;           // every eigenvalue, descending
  double total_variance = 0.0;
  Vec mean;
  int sweeps = 0;

  // Smallest k whose cumulative fraction reaches `target` (0 if the cloud
  // has no variance).
  std::size_t components_for(double target) const {
    if (total_variance <= 0.0) return 0;
    double cum = 0.0;
    for (std::size_t i = 0; i < spectrum.size(); ++i) {
      cum += spectrum[i] / total_variance;
      if (cum >= target) return i + 1;
    }
    return spectrum.size();
  }
};

inline Mat sample_covariance(std::span<const Vec> points, Vec* mean_out = nullptr) {
  require(points.size() >= 2, ErrorKind::kPrecondition, "covariance needs at least 2 points");
  const std::size_t d = points[0].dim();
  require(d > 0, ErrorKind::kDimension, "covariance of zero-dimensional points");
  Vec mean(d);
  for (const auto& p : points) {
    check_same_dim(p.dim(), d, "covariance");
    for (std::size_t i = 0; i < d; ++i) mean[i] += p[i];
  }
  for (auto& x : mean) x /= static_cast<double>(points.size());

  Mat cov(d, d);
  Vec c(d);
  for (const auto& p : points) {
    for (std::size_t i = 0; i < d; ++i) c[i] = p[i] - mean[i];
    for (std::size_t i = 0; i < d; ++i)
      for (std::size_t j = i; j < d; ++j) cov(i, j) += c[i] * c[j];
  }
  const double denom = static_cast<double>(points.size() - 1);
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = i; j < d; ++j) {
      cov(i, j) /= denom;
      cov(j, i) = cov(i, j);
    }
  if (mean_out) *mean_out = std::move(mean);
  return cov;
}

inline PcaResult pca(std::span<const Vec> points, std::size_t k) {
  require(points.size() >= 2, ErrorKind::kPrecondition, "pca needs at least 2 points");
  const std::size_t d = points[0].dim();
  require(k <= d, ErrorKind::kPrecondition,
          "pca: k=" + std::to_string(k) + " exceeds dimension " + std::to_string(d));

  PcaResult out;
  Mat cov = sample_covariance(points, &out.mean);
  EigenResult eig = jacobi_eigen(std::move(cov));
  out.sweeps = eig.sweeps;

  for (auto& lambda : eig.values) lambda = std::max(lambda, 0.0);
  for (double lambda : eig.values) out.total_variance += lambda;
  out.spectrum = eig.values;
  for (std::size_t i = 0; i < k; ++i) {
    Vec c = std::move(eig.vectors[i]);
    canonicalize_sign(c);
    out.components.push_back(std::move(c));
    out.eigenvalues.push_back(eig.values[i]);
    out.variance_fraction.push_back(out.total_variance > 0.0 ? eig.values[i] / out.total_variance
                                                             : 0.0);
  }
  return out;
}

inline std::vector<Vec> orthonormal_basis_from(std::vector<Vec> vs) {
  // Modified Gram-Schmidt; drops vectors that become numerically zero.
  std::vector<Vec> out;
  for (auto& v : vs) {
    for (const auto& b : out) axpy(-dot(v, b), b, v);
    double n = norm(v);
    if (n > 1e-12) out.push_back((1.0 / n) * v);
  }
  return out;
}

}  // namespace pvl
