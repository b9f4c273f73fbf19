#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "attnflow/error.hpp"

namespace attnflow {

/// Dense real vector.
class Vect {
 public:
  Vect() = default;
  explicit Vect(std::size_t dim, double fill = 0.0) : data_(dim, fill) {}
  Vect(std::initializer_list<double> init) : data_(init) {}
  explicit Vect(std::vector<double> data) : data_(std::move(data)) {}
  explicit Vect(std::span<const double> data) : data_(data.begin(), data.end()) {}

  std::size_t dim() const noexcept { return data_.size(); }
  std::size_t size() const noexcept { return data_.size(); }

  double& operator[](std::size_t i) noexcept { return data_[i]; }
  double operator[](std::size_t i) const noexcept { return data_[i]; }

  std::span<double> span() noexcept { return data_; }
  std::span<const double> span() const noexcept { return data_; }
  const std::vector<double>& values() const noexcept { return data_; }

  auto begin() noexcept { return data_.begin(); }
  auto end() noexcept { return data_.end(); }
  auto begin() const noexcept { return data_.begin(); }
  auto end() const noexcept { return data_.end(); }

  Vect& operator+=(const Vect& o) {
    detail::require_shape(o.dim() == dim(), "Vect +=: dimension mismatch");
    for (std::size_t i = 0; i < dim(); ++i) data_[i] += o.data_[i];
    return *this;
  }
  Vect& operator-=(const Vect& o) {
    detail::require_shape(o.dim() == dim(), "Vect -=: dimension mismatch");
    for (std::size_t i = 0; i < dim(); ++i) data_[i] -= o.data_[i];
    return *this;
  }
  Vect& operator*=(double s) noexcept {
    for (auto& v : data_) v *= s;
    return *this;
  }

  friend Vect operator+(Vect a, const Vect& b) { return a += b; }
  friend Vect operator-(Vect a, const Vect& b) { return a -= b; }
  friend Vect operator*(double s, Vect a) { return a *= s; }
  friend Vect operator*(Vect a, double s) { return a *= s; }
  friend Vect operator-(Vect a) { return a *= -1.0; }
  friend bool operator==(const Vect&, const Vect&) = default;

 private:
  std::vector<double> data_;
};

inline double dot(std::span<const double> a, std::span<const double> b) {
  detail::require_shape(a.size() == b.size(), "dot: dimension mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline double dot(const Vect& a, const Vect& b) { return dot(a.span(), b.span()); }

inline double norm2(std::span<const double> a) { return std::sqrt(dot(a, a)); }
inline double norm2(const Vect& a) { return norm2(a.span()); }

/// Dense row-major real matrix.
class Mat {
 public:
  Mat() = default;
  Mat(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Mat(std::size_t rows, std::size_t cols, std::vector<double> data)
      : rows_(rows), cols_(cols), data_(std::move(data)) {
    detail::require_shape(data_.size() == rows_ * cols_, "Mat: data length != rows*cols");
  }
  /// Row-list construction: `Mat{{1, 2}, {3, 4}}`.
  Mat(std::initializer_list<std::initializer_list<double>> rows) {
    rows_ = rows.size();
    cols_ = rows_ ? rows.begin()->size() : 0;
    data_.reserve(rows_ * cols_);
    for (const auto& r : rows) {
      detail::require_shape(r.size() == cols_, "Mat: ragged initializer");
      data_.insert(data_.end(), r.begin(), r.end());
    }
  }

  static Mat identity(std::size_t n) {
    Mat m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
  }
  static Mat diag(const Vect& d) {
    Mat m(d.dim(), d.dim());
    for (std::size_t i = 0; i < d.dim(); ++i) m(i, i) = d[i];
    return m;
  }
  /// Stack vectors as rows.
  static Mat from_rows(std::span<const Vect> rows) {
    if (rows.empty()) return {};
    Mat m(rows.size(), rows.front().dim());
    for (std::size_t r = 0; r < rows.size(); ++r) {
      detail::require_shape(rows[r].dim() == m.cols(), "Mat::from_rows: ragged rows");
      std::copy(rows[r].begin(), rows[r].end(), m.row(r).begin());
    }
    return m;
  }

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  bool square() const noexcept { return rows_ == cols_; }
  bool empty() const noexcept { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) noexcept { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const noexcept { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) noexcept { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const noexcept {
    return {data_.data() + r * cols_, cols_};
  }
  Vect row_vect(std::size_t r) const { return Vect(row(r)); }
  Vect col_vect(std::size_t c) const {
    Vect v(rows_);
    for (std::size_t r = 0; r < rows_; ++r) v[r] = (*this)(r, c);
    return v;
  }

  std::span<double> data() noexcept { return data_; }
  std::span<const double> data() const noexcept { return data_; }

  Mat transpose() const {
    Mat t(cols_, rows_);
    for (std::size_t r = 0; r < rows_; ++r)
      for (std::size_t c = 0; c < cols_; ++c) t(c, r) = (*this)(r, c);
    return t;
  }

  Mat& operator+=(const Mat& o) {
    detail::require_shape(o.rows_ == rows_ && o.cols_ == cols_, "Mat +=: shape mismatch");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
    return *this;
  }
  Mat& operator-=(const Mat& o) {
    detail::require_shape(o.rows_ == rows_ && o.cols_ == cols_, "Mat -=: shape mismatch");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] -= o.data_[i];
    return *this;
  }
  Mat& operator*=(double s) noexcept {
    for (auto& v : data_) v *= s;
    return *this;
  }

  friend Mat operator+(Mat a, const Mat& b) { return a += b; }
  friend Mat operator-(Mat a, const Mat& b) { return a -= b; }
  friend Mat operator*(double s, Mat a) { return a *= s; }
  friend Mat operator*(Mat a, double s) { return a *= s; }
  friend Mat operator-(Mat a) { return a *= -1.0; }
  friend bool operator==(const Mat&, const Mat&) = default;

  friend Mat operator*(const Mat& a, const Mat& b) {
    detail::require_shape(a.cols_ == b.rows_, "Mat *: inner dimension mismatch");
    Mat out(a.rows_, b.cols_);
    for (std::size_t i = 0; i < a.rows_; ++i)
      for (std::size_t k = 0; k < a.cols_; ++k) {
        const double aik = a(i, k);
        if (aik == 0.0) continue;
        for (std::size_t j = 0; j < b.cols_; ++j) out(i, j) += aik * b(k, j);
      }
    return out;
  }

  friend Vect operator*(const Mat& a, const Vect& x) {
    detail::require_shape(a.cols_ == x.dim(), "Mat * Vect: dimension mismatch");
    Vect y(a.rows_);
    for (std::size_t i = 0; i < a.rows_; ++i) y[i] = dot(a.row(i), x.span());
    return y;
  }

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

inline double frobenius_norm(const Mat& m) { return norm2(m.data()); }

/// Induced 1-norm (max absolute column sum).
inline double norm1(const Mat& m) {
  double best = 0.0;
  for (std::size_t c = 0; c < m.cols(); ++c) {
    double s = 0.0;
    for (std::size_t r = 0; r < m.rows(); ++r) s += std::abs(m(r, c));
    best = std::max(best, s);
  }
  return best;
}

inline double max_abs(std::span<const double> v) {
  double m = 0.0;
  for (double x : v) m = std::max(m, std::abs(x));
  return m;
}

inline bool all_finite(std::span<const double> v) {
  return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

inline std::string shape_str(const Mat& m) {
  return std::to_string(m.rows()) + "x" + std::to_string(m.cols());
}

}  // namespace attnflow
