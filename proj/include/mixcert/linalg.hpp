#pragma once

// Dense vectors and row-major matrices sized for desk-scale networks.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "mixcert/error.hpp"

namespace mixcert {

using Vector = std::vector<double>;
using VectorView = std::span<const double>;

/// Perturbation norm. The dual of l2 is l2, the dual of linf is l1.
enum class Norm { l2, linf };

inline std::string to_string(Norm p) { return p == Norm::l2 ? "2" : "inf"; }

inline Norm parse_norm(std::string_view s) {
  if (s == "2" || s == "l2" || s == "L2") return Norm::l2;
  if (s == "inf" || s == "linf" || s == "Linf" || s == "infinity") return Norm::linf;
  throw InputError("unsupported norm '" + std::string(s) + "' (expected 2 or inf)");
}

class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Matrix(std::size_t rows, std::size_t cols, Vector data)
      : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows_ * cols_) {
      throw InputError("matrix data has " + std::to_string(data_.size()) +
                       " entries, expected " + std::to_string(rows_ * cols_));
    }
  }

  static Matrix identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
  }

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }
  const Vector& data() const { return data_; }
  Vector& data() { return data_; }

  std::span<const double> row(std::size_t r) const {
    return {data_.data() + r * cols_, cols_};
  }
  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }

  /// y = W x
  Vector apply(VectorView x) const {
    Vector y(rows_, 0.0);
    for (std::size_t r = 0; r < rows_; ++r) {
      const double* w = data_.data() + r * cols_;
      double acc = 0.0;
      for (std::size_t c = 0; c < cols_; ++c) acc += w[c] * x[c];
      y[r] = acc;
    }
    return y;
  }

  /// x = W^T y
  Vector apply_transpose(VectorView y) const {
    Vector x(cols_, 0.0);
    for (std::size_t r = 0; r < rows_; ++r) {
      const double* w = data_.data() + r * cols_;
      const double yr = y[r];
      if (yr == 0.0) continue;
      for (std::size_t c = 0; c < cols_; ++c) x[c] += w[c] * yr;
    }
    return x;
  }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
  }

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  Vector data_;
};

inline double dot(VectorView a, VectorView b) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
  return acc;
}

inline double norm_l1(VectorView v) {
  double acc = 0.0;
  for (double x : v) acc += std::abs(x);
  return acc;
}

inline double norm_l2(VectorView v) { return std::sqrt(dot(v, v)); }

inline double norm_linf(VectorView v) {
  double acc = 0.0;
  for (double x : v) acc = std::max(acc, std::abs(x));
  return acc;
}

inline double norm(VectorView v, Norm p) { return p == Norm::l2 ? norm_l2(v) : norm_linf(v); }

/// ||v||_{p*}: l1 for an linf budget, l2 for an l2 budget.
inline double dual_norm(VectorView v, Norm p) {
  return p == Norm::l2 ? norm_l2(v) : norm_l1(v);
}

inline Vector add(VectorView a, VectorView b) {
  Vector out(a.begin(), a.end());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b[i];
  return out;
}

inline Vector subtract(VectorView a, VectorView b) {
  Vector out(a.begin(), a.end());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b[i];
  return out;
}

inline Vector scaled(VectorView a, double s) {
  Vector out(a.begin(), a.end());
  for (double& v : out) v *= s;
  return out;
}

inline void axpy(double a, VectorView x, std::span<double> y) {
  for (std::size_t i = 0; i < y.size(); ++i) y[i] += a * x[i];
}

inline bool all_finite(VectorView v) {
  return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

/// Neumaier compensated summation.
class CompensatedSum {
 public:
  void add(double v) {
    const double t = sum_ + v;
    if (std::abs(sum_) >= std::abs(v)) {
      comp_ += (sum_ - t) + v;
    } else {
      comp_ += (v - t) + sum_;
    }
    sum_ = t;
  }
  void add(const CompensatedSum& other) {
    add(other.sum_);
    add(other.comp_);
  }
  double value() const { return sum_ + comp_; }

 private:
  double sum_ = 0.0;
  double comp_ = 0.0;
};

/// Element-wise compensated accumulator for vectors.
class CompensatedVectorSum {
 public:
  explicit CompensatedVectorSum(std::size_t n = 0) : parts_(n) {}
  std::size_t size() const { return parts_.size(); }
  void add(VectorView v) {
    for (std::size_t i = 0; i < parts_.size(); ++i) parts_[i].add(v[i]);
  }
  void add_scaled(VectorView v, double s) {
    for (std::size_t i = 0; i < parts_.size(); ++i) parts_[i].add(v[i] * s);
  }
  void add(const CompensatedVectorSum& other) {
    for (std::size_t i = 0; i < parts_.size(); ++i) parts_[i].add(other.parts_[i]);
  }
  Vector value(double scale = 1.0) const {
    Vector out(parts_.size());
    for (std::size_t i = 0; i < parts_.size(); ++i) out[i] = parts_[i].value() * scale;
    return out;
  }

 private:
  std::vector<CompensatedSum> parts_;
};

}  // namespace mixcert
