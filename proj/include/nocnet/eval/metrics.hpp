#pragma once

#include <algorithm>
#include <cstddef>
#include <span>
#include <vector>

#include "nocnet/error.hpp"

namespace nocnet {

struct ClassScores {
  double precision = 0.0;  // percent; 0 when the class is never predicted
  double recall = 0.0;     // percent; 0 when the class never occurs
};

struct Metrics {
  double accuracy = 0.0;  // percent
  std::vector<ClassScores> per_class;
  std::size_t false_alarms = 0;
  std::vector<std::vector<std::size_t>> confusion;  // [truth][pred]
  std::size_t total = 0;
};

inline Metrics compute_metrics(std::span<const std::size_t> pred, std::span<const std::size_t> truth,
                               std::size_t background_class, std::size_t classes = 0) {
  if (pred.size() != truth.size()) throw SizeMismatch("prediction and truth lengths differ");
  if (pred.empty()) throw InvalidValue("no predictions to score");
  std::size_t k = classes;
  for (std::size_t i = 0; i < pred.size(); ++i) k = std::max({k, pred[i] + 1, truth[i] + 1});
  if (classes != 0 && k > classes) throw InvalidValue("label outside the class range");
  Metrics m;
  m.total = pred.size();
  m.confusion.assign(k, std::vector<std::size_t>(k, 0));
  std::size_t correct = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    ++m.confusion[truth[i]][pred[i]];
    correct += pred[i] == truth[i];
    const bool tb = truth[i] == background_class, pb = pred[i] == background_class;
    m.false_alarms += tb != pb;
  }
  m.accuracy = 100.0 * static_cast<double>(correct) / static_cast<double>(pred.size());
  m.per_class.resize(k);
  for (std::size_t c = 0; c < k; ++c) {
    std::size_t row = 0, col = 0;
    for (std::size_t j = 0; j < k; ++j) {
      row += m.confusion[c][j];
      col += m.confusion[j][c];
    }
    if (col) m.per_class[c].precision = 100.0 * static_cast<double>(m.confusion[c][c]) / static_cast<double>(col);
    if (row) m.per_class[c].recall = 100.0 * static_cast<double>(m.confusion[c][c]) / static_cast<double>(row);
  }
  return m;
}

}  // namespace nocnet
