#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <vector>

#include "nocnet/error.hpp"
#include "nocnet/eval/matrix.hpp"

namespace nocnet {

struct PcaResult {
  std::vector<double> mean;
  Matrix components;  // d x dim, orthonormal rows
  std::vector<double> variances;
  Matrix projection;  // n x d
};

/// Power iteration on the covariance, each vector kept orthogonal to the ones already found
/// (deflation). Sign fixed so the largest-magnitude entry of each component is positive.
inline PcaResult pca(const Matrix& x, std::size_t d, std::size_t max_iters = 2000, double tol = 1e-13) {
  if (d == 0 || d > x.cols) throw InvalidValue("pca dimension must be in [1, feature dim]");
  if (x.rows < d + 1) throw InvalidValue("pca needs at least d+1 samples");
  const std::size_t n = x.rows, D = x.cols;
  PcaResult r{std::vector<double>(D, 0.0), Matrix::zeros(d, D), {}, Matrix::zeros(n, d)};
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < D; ++j) r.mean[j] += x.at(i, j) / static_cast<double>(n);
  Matrix cov = Matrix::zeros(D, D);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t a = 0; a < D; ++a) {
      const double xa = x.at(i, a) - r.mean[a];
      for (std::size_t b = a; b < D; ++b) cov.at(a, b) += xa * (x.at(i, b) - r.mean[b]) / static_cast<double>(n - 1);
    }
  for (std::size_t a = 0; a < D; ++a)
    for (std::size_t b = 0; b < a; ++b) cov.at(a, b) = cov.at(b, a);

  auto orthonormalize = [&](std::vector<double>& v, std::size_t found) {
    for (int pass = 0; pass < 2; ++pass)
      for (std::size_t c = 0; c < found; ++c) {
        const double p = dot(v, r.components.row(c));
        for (std::size_t j = 0; j < D; ++j) v[j] -= p * r.components.at(c, j);
      }
    const double nv = std::sqrt(dot(v, v));
    if (nv == 0.0) return false;
    for (auto& e : v) e /= nv;
    return true;
  };

  for (std::size_t c = 0; c < d; ++c) {
    std::vector<double> v(D), next(D);
    // deterministic start that is unlikely to be orthogonal to the target
    for (std::size_t j = 0; j < D; ++j) v[j] = 1.0 + 0.1 * static_cast<double>((j * 7 + c * 3) % 11);
    if (!orthonormalize(v, c)) {
      v.assign(D, 0.0);
      for (std::size_t j = 0; j < D && !orthonormalize(v, c); ++j) {
        v.assign(D, 0.0);
        v[j] = 1.0;
      }
    }
    for (std::size_t it = 0; it < max_iters; ++it) {
      for (std::size_t a = 0; a < D; ++a) next[a] = dot(cov.row(a), v);
      if (!orthonormalize(next, c)) break;  // remaining variance is zero
      double diff = 0.0;
      for (std::size_t j = 0; j < D; ++j) diff = std::max(diff, std::abs(next[j] - v[j]));
      v.swap(next);
      if (diff < tol) break;
    }
    const auto big = std::max_element(v.begin(), v.end(), [](double p, double q) { return std::abs(p) < std::abs(q); });
    if (*big < 0)
      for (auto& e : v) e = -e;
    std::copy(v.begin(), v.end(), r.components.row(c).begin());
    std::vector<double> cv(D);
    for (std::size_t a = 0; a < D; ++a) cv[a] = dot(cov.row(a), v);
    r.variances.push_back(dot(cv, v));
  }
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t c = 0; c < d; ++c) {
      double s = 0.0;
      for (std::size_t j = 0; j < D; ++j) s += (x.at(i, j) - r.mean[j]) * r.components.at(c, j);
      r.projection.at(i, c) = s;
    }
  return r;
}

inline Matrix pca_project(const Matrix& x, std::size_t d) { return pca(x, d).projection; }

}  // namespace nocnet
