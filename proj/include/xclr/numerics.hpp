#pragma once

#include <cstddef>
#include <initializer_list>
#include <optional>
#include <span>
#include <vector>

#include "xclr/error.hpp"

namespace xclr {

/// Dense row-major matrix of doubles.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> data);
  Matrix(std::initializer_list<std::initializer_list<double>> rows);

  static Matrix identity(std::size_t n);

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  std::span<double> values() noexcept { return data_; }
  std::span<const double> values() const noexcept { return data_; }

  bool operator==(const Matrix&) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

/// Probability vector over a batch; `excluded_index` marks a masked slot that holds exactly 0.
struct ProbRow {
  std::vector<double> values;
  std::optional<std::size_t> excluded_index;

  double sum() const;
  std::size_t size() const noexcept { return values.size(); }
};

// Worker-thread cap for the dense kernels. Defaults to XCLR_THREADS or 1.
// Every kernel partitions by output row, so results do not depend on the count.
void set_num_threads(std::size_t n);
std::size_t num_threads();

Matrix matmul(const Matrix& a, const Matrix& b);
/// aᵀ·b
Matrix matmul_tn(const Matrix& a, const Matrix& b);
/// a·bᵀ
Matrix matmul_nt(const Matrix& a, const Matrix& b);
Matrix transpose(const Matrix& m);

double dot(std::span<const double> a, std::span<const double> b);
double l2_norm(std::span<const double> v);
double frobenius_sq(const Matrix& m);
std::vector<double> row_norms(const Matrix& m);

/// Unit-norm copy of every row. Throws ZeroNormRow when a row norm is below 1e-12.
Matrix l2_normalize_rows(const Matrix& m);

/// Pairwise cosine similarities clamped to [-1, 1]. Throws DimMismatch or ZeroNormRow.
Matrix cosine_similarity_matrix(const Matrix& a, const Matrix& b);

/// Max-subtracted softmax of row/temperature, skipping `excluded_index` (left at 0).
ProbRow row_softmax(std::span<const double> row, double temperature,
                    std::optional<std::size_t> excluded_index = std::nullopt);

/// -Σ target·log(predicted). Throws SupportMismatch when target mass sits where
/// predicted is zero or masked.
double cross_entropy_row(const ProbRow& target, const ProbRow& predicted);

bool all_finite(const Matrix& m);

}  // namespace xclr
