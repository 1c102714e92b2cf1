#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <future>
#include <numeric>
#include <random>
#include <span>
#include <vector>

#include "nocnet/error.hpp"
#include "nocnet/eval/matrix.hpp"
#include "nocnet/random.hpp"

namespace nocnet {

struct SvmModel {
  Matrix weights;  // classes x dim
  std::vector<double> biases;
  std::vector<std::vector<double>> objective_trace;  // per class, one value per epoch
};

struct SvmOptions {
  double c_reg = 1.0;
  std::size_t epochs = 20;
  std::uint64_t seed = 1;
  bool parallel = true;
};

namespace detail {

struct BinarySvm {
  std::vector<double> w;  // last entry is the bias, driven by a constant feature of 1
  std::vector<double> objective;
};

// 1/2 |w|^2 + C * sum hinge, bias included in the norm.
inline double svm_objective(const Matrix& x, std::span<const double> y, std::span<const double> w, double c) {
  const std::size_t d = x.cols;
  double reg = 0.0;
  for (double v : w) reg += v * v;
  double hinge = 0.0;
  for (std::size_t i = 0; i < x.rows; ++i) {
    const double s = dot(x.row(i), w.first(d)) + w[d];
    hinge += std::max(0.0, 1.0 - y[i] * s);
  }
  return 0.5 * reg + c * hinge;
}

// Pegasos on lambda/2 |w|^2 + mean hinge with lambda = 1/(C n), which has the same
// minimizer. Step 1/(lambda t). An epoch that raises the full objective is rolled back.
inline BinarySvm train_binary(const Matrix& x, std::span<const double> y, double c, std::size_t epochs,
                              std::span<const std::size_t> order) {
  const std::size_t n = x.rows, d = x.cols;
  const double lambda = 1.0 / (c * static_cast<double>(n));
  BinarySvm m{std::vector<double>(d + 1, 0.0), {}};
  double best = svm_objective(x, y, m.w, c);
  std::size_t t = 0;
  std::vector<double> w = m.w;
  for (std::size_t e = 0; e < epochs; ++e) {
    for (auto i : order) {
      ++t;
      const double eta = 1.0 / (lambda * static_cast<double>(t));
      const auto xi = x.row(i);
      const double margin = y[i] * (dot(xi, std::span<const double>(w).first(d)) + w[d]);
      const double shrink = 1.0 - eta * lambda;
      for (auto& v : w) v *= shrink;
      if (margin < 1.0) {
        for (std::size_t j = 0; j < d; ++j) w[j] += eta * y[i] * xi[j];
        w[d] += eta * y[i];
      }
    }
    const double obj = svm_objective(x, y, w, c);
    if (obj <= best) {
      best = obj;
      m.w = w;
    } else {
      w = m.w;
    }
    m.objective.push_back(best);
  }
  return m;
}

}  // namespace detail

inline SvmModel svm_train(const Matrix& features, std::span<const std::size_t> labels, const SvmOptions& opt = {}) {
  if (features.rows != labels.size()) throw SizeMismatch("feature rows and labels differ");
  if (features.rows == 0) throw InvalidValue("svm_train needs samples");
  if (!(opt.c_reg > 0.0)) throw InvalidValue("c_reg must be positive");
  if (opt.epochs == 0) throw InvalidValue("epochs must be positive");
  const std::size_t classes = *std::max_element(labels.begin(), labels.end()) + 1;
  std::vector<bool> present(classes, false);
  for (auto l : labels) present[l] = true;
  if (std::count(present.begin(), present.end(), true) < 2) throw InvalidValue("svm_train needs at least two classes");

  std::vector<std::size_t> order(features.rows);
  std::iota(order.begin(), order.end(), 0);
  auto rng = make_rng(opt.seed, {0x73766d});
  std::shuffle(order.begin(), order.end(), rng);

  auto solve = [&](std::size_t k) {
    std::vector<double> y(labels.size());
    for (std::size_t i = 0; i < labels.size(); ++i) y[i] = labels[i] == k ? 1.0 : -1.0;
    return detail::train_binary(features, y, opt.c_reg, opt.epochs, order);
  };
  std::vector<detail::BinarySvm> parts;
  if (opt.parallel) {
    std::vector<std::future<detail::BinarySvm>> jobs;
    for (std::size_t k = 0; k < classes; ++k) jobs.push_back(std::async(std::launch::async, solve, k));
    for (auto& j : jobs) parts.push_back(j.get());
  } else {
    for (std::size_t k = 0; k < classes; ++k) parts.push_back(solve(k));
  }

  SvmModel model{Matrix::zeros(classes, features.cols), std::vector<double>(classes), {}};
  for (std::size_t k = 0; k < classes; ++k) {
    std::copy(parts[k].w.begin(), parts[k].w.end() - 1, model.weights.row(k).begin());
    model.biases[k] = parts[k].w.back();
    model.objective_trace.push_back(std::move(parts[k].objective));
  }
  return model;
}

inline std::vector<double> svm_scores(const SvmModel& model, std::span<const double> x) {
  if (x.size() != model.weights.cols) throw SizeMismatch("feature width does not match the SVM");
  std::vector<double> s(model.weights.rows);
  for (std::size_t k = 0; k < s.size(); ++k) s[k] = dot(model.weights.row(k), x) + model.biases[k];
  return s;
}

/// Highest score wins; ties go to the lowest class index.
inline std::vector<std::size_t> svm_predict(const SvmModel& model, const Matrix& features) {
  if (features.cols != model.weights.cols) throw SizeMismatch("feature width does not match the SVM");
  std::vector<std::size_t> out(features.rows);
  for (std::size_t i = 0; i < features.rows; ++i) {
    const auto s = svm_scores(model, features.row(i));
    out[i] = static_cast<std::size_t>(std::max_element(s.begin(), s.end()) - s.begin());
  }
  return out;
}

}  // namespace nocnet
