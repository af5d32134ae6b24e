#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <vector>

namespace dpc {

/// Dense row-major matrix of doubles.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0);
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> data);
  Matrix(std::initializer_list<std::initializer_list<double>> rows);

  static Matrix row_vector(std::span<const double> values);

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }
  bool same_shape(const Matrix& other) const noexcept {
    return rows_ == other.rows_ && cols_ == other.cols_;
  }

  double& operator()(std::size_t r, std::size_t c) noexcept { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const noexcept { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) noexcept { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const noexcept {
    return {data_.data() + r * cols_, cols_};
  }
  std::span<double> values() noexcept { return data_; }
  std::span<const double> values() const noexcept { return data_; }

  void fill(double value);
  bool all_finite() const noexcept;

  Matrix& operator+=(const Matrix& other);
  Matrix& operator-=(const Matrix& other);
  Matrix& operator*=(double s) noexcept;

  friend bool operator==(const Matrix&, const Matrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

Matrix operator+(Matrix a, const Matrix& b);
Matrix operator-(Matrix a, const Matrix& b);
Matrix operator*(Matrix a, double s);
Matrix operator*(double s, Matrix a);

/// a (n x k) times b (k x m).
Matrix matmul(const Matrix& a, const Matrix& b);
/// a (n x k) times transpose(b) where b is (m x k).
Matrix matmul_nt(const Matrix& a, const Matrix& b);
/// transpose(a) times b, a is (k x n), b is (k x m).
Matrix matmul_tn(const Matrix& a, const Matrix& b);
Matrix transpose(const Matrix& a);

/// Rows of `a` listed by `indices`, in order.
Matrix gather_rows(const Matrix& a, std::span<const std::size_t> indices);
/// Vertical concatenation.
Matrix concat_rows(const Matrix& top, const Matrix& bottom);

/// Adds the 1 x k row to every row of m.
Matrix add_row(const Matrix& m, const Matrix& row);
/// Column sums as a 1 x k row.
Matrix sum_rows(const Matrix& m);
Matrix tanh(const Matrix& m);
/// Elementwise product.
Matrix hadamard(const Matrix& a, const Matrix& b);

double max_abs_diff(const Matrix& a, const Matrix& b);
double max_abs(const Matrix& a);

}  // namespace dpc
