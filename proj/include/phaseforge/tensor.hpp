#ifndef PHASEFORGE_TENSOR_HPP
#define PHASEFORGE_TENSOR_HPP

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstddef>
#include <initializer_list>
#include <numeric>
#include <vector>

#include "phaseforge/errors.hpp"

namespace phaseforge {

// Dense row-major real tensor. Rank is dynamic; images are {H, W}, network
// activations are {N, C, H, W}.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> shape)
      : shape_(std::move(shape)), v_(count(shape_), 0.0) {}
  Tensor(std::initializer_list<std::size_t> shape)
      : Tensor(std::vector<std::size_t>(shape)) {}

  static std::size_t count(const std::vector<std::size_t>& s) {
    return std::accumulate(s.begin(), s.end(), std::size_t{1},
                           std::multiplies<>());
  }

  const std::vector<std::size_t>& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return v_.size(); }
  std::size_t dim(std::size_t i) const { return shape_.at(i); }

  double* data() { return v_.data(); }
  const double* data() const { return v_.data(); }
  std::vector<double>& raw() { return v_; }
  const std::vector<double>& raw() const { return v_; }

  double& operator[](std::size_t i) { return v_[i]; }
  double operator[](std::size_t i) const { return v_[i]; }

  // 2-D access
  double& at(std::size_t r, std::size_t c) { return v_[r * shape_[1] + c]; }
  double at(std::size_t r, std::size_t c) const { return v_[r * shape_[1] + c]; }
  // 4-D access
  double& at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) {
    return v_[((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
  }
  double at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const {
    return v_[((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
  }

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

  void fill(double x) { std::fill(v_.begin(), v_.end(), x); }

  Tensor reshaped(std::vector<std::size_t> s) const {
    if (count(s) != size()) throw contract_error("reshape: element count mismatch");
    Tensor out = *this;
    out.shape_ = std::move(s);
    return out;
  }

  double sum() const { return std::accumulate(v_.begin(), v_.end(), 0.0); }
  double min() const { return v_.empty() ? 0.0 : *std::min_element(v_.begin(), v_.end()); }
  double max() const { return v_.empty() ? 0.0 : *std::max_element(v_.begin(), v_.end()); }
  double norm2() const {
    double s = 0.0;
    for (double x : v_) s += x * x;
    return std::sqrt(s);
  }
  bool all_finite() const {
    for (double x : v_)
      if (!std::isfinite(x)) return false;
    return true;
  }

 private:
  std::vector<std::size_t> shape_;
  std::vector<double> v_;
};

inline Tensor operator+(Tensor a, const Tensor& b) {
  if (!a.same_shape(b)) throw contract_error("tensor add: shape mismatch");
  for (std::size_t i = 0; i < a.size(); ++i) a[i] += b[i];
  return a;
}
inline Tensor operator-(Tensor a, const Tensor& b) {
  if (!a.same_shape(b)) throw contract_error("tensor sub: shape mismatch");
  for (std::size_t i = 0; i < a.size(); ++i) a[i] -= b[i];
  return a;
}
inline Tensor operator*(Tensor a, double s) {
  for (std::size_t i = 0; i < a.size(); ++i) a[i] *= s;
  return a;
}
inline Tensor operator*(double s, Tensor a) { return std::move(a) * s; }

// Dense row-major complex 2-D array (k-space / complex images).
class CImage {
 public:
  CImage() = default;
  CImage(std::size_t rows, std::size_t cols)
      : rows_(rows), cols_(cols), v_(rows * cols, {0.0, 0.0}) {}

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return v_.size(); }

  std::complex<double>* data() { return v_.data(); }
  const std::complex<double>* data() const { return v_.data(); }

  std::complex<double>& at(std::size_t r, std::size_t c) { return v_[r * cols_ + c]; }
  std::complex<double> at(std::size_t r, std::size_t c) const { return v_[r * cols_ + c]; }
  std::complex<double>& operator[](std::size_t i) { return v_[i]; }
  std::complex<double> operator[](std::size_t i) const { return v_[i]; }

  double norm2() const {
    double s = 0.0;
    for (const auto& z : v_) s += std::norm(z);
    return std::sqrt(s);
  }
  bool all_finite() const {
    for (const auto& z : v_)
      if (!std::isfinite(z.real()) || !std::isfinite(z.imag())) return false;
    return true;
  }

 private:
  std::size_t rows_ = 0, cols_ = 0;
  std::vector<std::complex<double>> v_;
};

}  // namespace phaseforge

#endif
