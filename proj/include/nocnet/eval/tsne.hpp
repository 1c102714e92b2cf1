#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <random>
#include <tuple>
#include <utility>
#include <vector>

#include "nocnet/error.hpp"
#include "nocnet/eval/matrix.hpp"
#include "nocnet/random.hpp"

namespace nocnet {

struct TsneOptions {
  double perplexity = 30.0;
  std::size_t iters = 1000;
  std::uint64_t seed = 1;
  double learning_rate = 200.0;
  double exaggeration = 4.0;
  std::size_t exaggeration_iters = 100;
  std::size_t momentum_switch = 250;
};

struct TsneResult {
  Matrix coords;  // n x 2
  std::vector<double> kl_trace;  // KL(P||Q) with the true P, one per iteration
};

namespace detail {

// Row-conditional Gaussian affinities with bandwidths matched to the perplexity.
inline std::vector<double> tsne_affinities(const Matrix& x, double perplexity) {
  const std::size_t n = x.rows;
  std::vector<double> d2(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < x.cols; ++k) s += (x.at(i, k) - x.at(j, k)) * (x.at(i, k) - x.at(j, k));
      d2[i * n + j] = d2[j * n + i] = s;
    }
  const double target = std::log(perplexity);
  std::vector<double> p(n * n, 0.0), row(n);
  // Exact duplicates copy the row of their first occurrence so the two stay bitwise equal.
  std::vector<std::size_t> first(n);
  for (std::size_t i = 0; i < n; ++i) {
    first[i] = i;
    for (std::size_t j = 0; j < i; ++j)
      if (first[j] == j && std::equal(x.row(i).begin(), x.row(i).end(), x.row(j).begin())) {
        first[i] = j;
        break;
      }
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (const std::size_t c = first[i]; c != i) {
      for (std::size_t k = 0; k < n; ++k) p[i * n + k] = k == i ? 0.0 : (k == c ? p[c * n + i] : p[c * n + k]);
      continue;
    }
    double beta = 1.0, lo = 0.0, hi = std::numeric_limits<double>::infinity();
    double dmin = std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < n; ++j)
      if (j != i) dmin = std::min(dmin, d2[i * n + j]);
    for (int it = 0; it < 200; ++it) {
      double sum = 0.0, wsum = 0.0;
      for (std::size_t j = 0; j < n; ++j) {
        // shifting by the nearest distance keeps the exponentials representable
        row[j] = j == i ? 0.0 : std::exp(-beta * (d2[i * n + j] - dmin));
        sum += row[j];
        wsum += row[j] * (d2[i * n + j] - dmin);
      }
      const double entropy = std::log(sum) + beta * wsum / sum;
      if (std::abs(entropy - target) < 1e-10) break;
      if (entropy > target) {
        lo = beta;
        beta = std::isinf(hi) ? beta * 2.0 : 0.5 * (beta + hi);
      } else {
        hi = beta;
        beta = 0.5 * (beta + lo);
      }
    }
    double sum = 0.0;
    for (std::size_t j = 0; j < n; ++j) sum += row[j];
    for (std::size_t j = 0; j < n; ++j) p[i * n + j] = row[j] / sum;
  }
  std::vector<double> sym(n * n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      sym[i * n + j] = std::max((p[i * n + j] + p[j * n + i]) / (2.0 * static_cast<double>(n)), 1e-300);
  for (std::size_t i = 0; i < n; ++i) sym[i * n + i] = 0.0;
  return sym;
}

}  // namespace detail

inline TsneResult tsne_embed(const Matrix& x, const TsneOptions& opt = {}) {
  const std::size_t n = x.rows;
  if (n > 2000) throw InvalidValue("exact t-SNE is limited to 2000 points");
  if (n < 16 || opt.perplexity < 5.0 || opt.perplexity > static_cast<double>(n - 1) / 3.0)
    throw InvalidValue("perplexity must lie in [5, (n-1)/3]");
  if (opt.iters == 0) throw InvalidValue("iters must be positive");

  const auto P = detail::tsne_affinities(x, opt.perplexity);
  // Initial position drawn from a generator keyed by the row contents, so duplicate
  // rows start (and therefore stay) together.
  TsneResult r{Matrix::zeros(n, 2), {}};
  auto& y = r.coords.data;
  for (std::size_t i = 0; i < n; ++i) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (double v : x.row(i)) {
      h ^= std::bit_cast<std::uint64_t>(v == 0.0 ? 0.0 : v);
      h *= 0x100000001b3ULL;
    }
    auto rng = make_rng(opt.seed, {0x74736e65, h});
    std::normal_distribution<double> init(0.0, 1e-4);
    y[2 * i] = init(rng);
    y[2 * i + 1] = init(rng);
  }
  std::vector<double> vel(n * 2, 0.0), gains(n * 2, 1.0), grad(n * 2), num(n * n);

  // Student-t kernel and its normalizer; returns KL(P||Q) with the unexaggerated P.
  auto kernel = [&](const std::vector<double>& pts) {
    double zsum = 0.0;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = i + 1; j < n; ++j) {
        const double dx = pts[2 * i] - pts[2 * j], dy = pts[2 * i + 1] - pts[2 * j + 1];
        const double q = 1.0 / (1.0 + dx * dx + dy * dy);
        num[i * n + j] = num[j * n + i] = q;
        zsum += 2.0 * q;
      }
    double kl = 0.0;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j)
        if (i != j) kl += P[i * n + j] * std::log(P[i * n + j] / std::max(num[i * n + j] / zsum, 1e-300));
    return std::pair{kl, zsum};
  };
  auto center = [n](std::vector<double>& pts) {
    for (std::size_t c = 0; c < 2; ++c) {
      double mean = 0.0;
      for (std::size_t i = 0; i < n; ++i) mean += pts[2 * i + c] / static_cast<double>(n);
      for (std::size_t i = 0; i < n; ++i) pts[2 * i + c] -= mean;
    }
  };

  auto [kl, zsum] = kernel(y);
  std::vector<double> trial(n * 2), trial_vel(n * 2), trial_gains(n * 2);
  for (std::size_t it = 0; it < opt.iters; ++it) {
    r.kl_trace.push_back(kl);
    const double ex = it < opt.exaggeration_iters ? opt.exaggeration : 1.0;
    const double momentum = it < opt.momentum_switch ? 0.5 : 0.8;
    std::fill(grad.begin(), grad.end(), 0.0);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) {
        if (i == j) continue;
        const double m = 4.0 * (ex * P[i * n + j] - num[i * n + j] / zsum) * num[i * n + j];
        grad[2 * i] += m * (y[2 * i] - y[2 * j]);
        grad[2 * i + 1] += m * (y[2 * i + 1] - y[2 * j + 1]);
      }
    for (std::size_t k = 0; k < 2 * n; ++k) {
      trial_gains[k] = (grad[k] > 0.0) != (vel[k] > 0.0) ? gains[k] + 0.2 : std::max(gains[k] * 0.8, 0.01);
      trial_vel[k] = momentum * vel[k] - opt.learning_rate * trial_gains[k] * grad[k];
      trial[k] = y[k] + trial_vel[k];
    }
    center(trial);
    auto next = kernel(trial);
    if (ex == 1.0 && next.first > kl) {
      // Rejected: drop momentum and gains, backtrack along the plain gradient.
      std::fill(trial_vel.begin(), trial_vel.end(), 0.0);
      std::fill(trial_gains.begin(), trial_gains.end(), 1.0);
      bool accepted = false;
      for (double lr = opt.learning_rate; lr > opt.learning_rate * 1e-9 && !accepted; lr *= 0.5) {
        for (std::size_t k = 0; k < 2 * n; ++k) trial[k] = y[k] - lr * grad[k];
        center(trial);
        next = kernel(trial);
        accepted = next.first <= kl;
      }
      if (!accepted) {
        next = kernel(y);  // restores num for the unchanged point set
        trial = y;
      }
    }
    y.swap(trial);
    vel.swap(trial_vel);
    gains.swap(trial_gains);
    std::tie(kl, zsum) = next;
  }
  return r;
}

}  // namespace nocnet
