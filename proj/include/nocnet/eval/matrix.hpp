#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "nocnet/error.hpp"
#include "nocnet/tensor.hpp"

namespace nocnet {

/// Dense row-major matrix of samples x features.
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  static Matrix zeros(std::size_t rows, std::size_t cols) { return {rows, cols, std::vector<double>(rows * cols, 0.0)}; }

  static Matrix from_rows(const std::vector<std::vector<double>>& rows) {
    if (rows.empty()) return {};
    Matrix m = zeros(rows.size(), rows.front().size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
      if (rows[i].size() != m.cols) throw SizeMismatch("ragged rows");
      std::copy(rows[i].begin(), rows[i].end(), m.data.begin() + static_cast<std::ptrdiff_t>(i * m.cols));
    }
    return m;
  }

  /// Flattens every axis after the first.
  static Matrix from_tensor(const Tensor& t) {
    if (t.rank() < 2) throw SizeMismatch("matrix needs a batch axis");
    const std::size_t n = t.dim(0);
    return {n, t.size() / n, std::vector<double>(t.data().begin(), t.data().end())};
  }

  double& at(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  double at(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
  std::span<const double> row(std::size_t r) const { return std::span<const double>(data).subspan(r * cols, cols); }
  std::span<double> row(std::size_t r) { return std::span<double>(data).subspan(r * cols, cols); }
};

inline double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

/// Rows scaled to unit Euclidean norm; zero rows stay zero.
inline Matrix l2_normalize_rows(Matrix m) {
  for (std::size_t r = 0; r < m.rows; ++r) {
    auto row = m.row(r);
    const double n = std::sqrt(dot(row, row));
    if (n > 0.0)
      for (auto& v : row) v /= n;
  }
  return m;
}

}  // namespace nocnet
