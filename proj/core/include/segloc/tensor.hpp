#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <vector>

namespace segloc {

/// Dense row-major matrix of doubles. Vectors are 1×n or n×1 matrices;
/// scalars are 1×1.
class Tensor2 {
public:
  Tensor2() = default;
  Tensor2(std::size_t rows, std::size_t cols, double fill = 0.0);
  Tensor2(std::size_t rows, std::size_t cols, std::vector<double> data);

  static Tensor2 from_rows(std::initializer_list<std::initializer_list<double>> rows);
  static Tensor2 row_vector(std::span<const double> values);
  static Tensor2 column_vector(std::span<const double> values);
  static Tensor2 scalar(double value) { return Tensor2(1, 1, value); }
  static Tensor2 identity(std::size_t n);

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }
  bool same_shape(const Tensor2& other) const noexcept {
    return rows_ == other.rows_ && cols_ == other.cols_;
  }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }
  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  std::span<double> data() noexcept { return data_; }
  std::span<const double> data() const noexcept { return data_; }
  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }
  std::vector<double> column(std::size_t c) const;

  /// Value of a 1×1 tensor.
  double item() const;

  void fill(double value);
  bool all_finite() const noexcept;
  Tensor2 transposed() const;

  Tensor2& operator+=(const Tensor2& other);
  Tensor2& operator*=(double factor);

  friend bool operator==(const Tensor2&, const Tensor2&) = default;

private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

/// Plain (non-differentiable) matrix product.
Tensor2 matmul(const Tensor2& a, const Tensor2& b);

double dot(std::span<const double> a, std::span<const double> b);
double l2_norm(std::span<const double> v);

}  // namespace segloc
