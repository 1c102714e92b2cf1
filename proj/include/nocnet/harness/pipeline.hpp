#pragma once

// Backbone features -> trained head -> penultimate features -> SVM.

#include <algorithm>
#include <charconv>
#include <fstream>
#include <istream>
#include <ostream>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "nocnet/datapipe.hpp"
#include "nocnet/error.hpp"
#include "nocnet/eval.hpp"
#include "nocnet/netzoo.hpp"
#include "nocnet/optim.hpp"

namespace nocnet {

struct Split {
  std::vector<std::size_t> train, test;
};

/// Per class: shuffle, the first round(fraction * count) go to test.
inline Split stratified_split(std::span<const std::size_t> labels, double test_fraction, std::uint64_t seed) {
  if (!(test_fraction > 0.0 && test_fraction < 1.0)) throw InvalidValue("test fraction must be in (0,1)");
  const std::size_t classes = labels.empty() ? 0 : *std::max_element(labels.begin(), labels.end()) + 1;
  auto rng = make_rng(seed, {0x5b1});
  Split s;
  for (std::size_t c = 0; c < classes; ++c) {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < labels.size(); ++i)
      if (labels[i] == c) idx.push_back(i);
    std::shuffle(idx.begin(), idx.end(), rng);
    const auto n_test = static_cast<std::size_t>(std::lround(test_fraction * static_cast<double>(idx.size())));
    s.test.insert(s.test.end(), idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_test));
    s.train.insert(s.train.end(), idx.begin() + static_cast<std::ptrdiff_t>(n_test), idx.end());
  }
  std::sort(s.train.begin(), s.train.end());
  std::sort(s.test.begin(), s.test.end());
  std::vector<std::size_t> both;
  std::set_intersection(s.train.begin(), s.train.end(), s.test.begin(), s.test.end(), std::back_inserter(both));
  if (!both.empty()) throw InvalidPlan("train/test split overlaps");
  return s;
}

/// Backbone outputs for a list of frames, computed in chunks.
inline Tensor backbone_features(const Model& backbone, std::span<const Frame* const> frames, std::size_t chunk = 128) {
  if (frames.empty()) throw InvalidValue("no frames to featurize");
  std::vector<double> data;
  Shape shape;
  for (std::size_t start = 0; start < frames.size(); start += chunk) {
    const auto part = frames.subspan(start, std::min(chunk, frames.size() - start));
    const auto out = forward(backbone, frames_to_tensor(part));
    if (shape.empty()) shape = out.shape();
    data.insert(data.end(), out.data().begin(), out.data().end());
  }
  shape[0] = frames.size();
  return Tensor::create(std::move(shape), std::move(data));
}

inline Tensor select_rows(const Tensor& t, std::span<const std::size_t> rows) {
  LabeledSet s{t, std::vector<std::size_t>(t.dim(0), 0)};
  return s.gather(rows).inputs;
}

struct TrainSettings {
  NocArch arch;
  Regime regime = Regime::CovPrecond3LR;
  Hyper hyper;
  std::size_t partitions = 3;
  std::uint64_t plan_seed = 1;
  SvmOptions svm;
};

/// A trained head together with the feature scaling and SVM fitted alongside it.
struct Classifier {
  Model head;
  FeatureScaler scaler;
  SvmModel svm;
  std::vector<LossRecord> trace;
  double final_loss = 0.0;   // mean cross-entropy of the final head on its training set
  double window_loss = 0.0;  // mean recorded batch loss over the last kLossWindow steps
};

inline constexpr std::size_t kLossWindow = 500;

inline Matrix penultimate_matrix(const Model& head, const Tensor& scaled) {
  return l2_normalize_rows(Matrix::from_tensor(penultimate_features(head, scaled)));
}

inline Classifier fit_classifier(const TrainSettings& s, const Tensor& features, std::span<const std::size_t> labels) {
  Classifier c{build_noc(s.arch, mix_seed(s.hyper.seed, {0x4ead})), FeatureScaler::fit(features), {}, {}, 0.0, 0.0};
  const LabeledSet data{c.scaler.apply(features), std::vector<std::size_t>(labels.begin(), labels.end())};
  const auto plan = make_partition_plan(data.labels, s.partitions, s.hyper.iterations, s.plan_seed);
  auto trained = train_regime(c.head, data, plan, s.regime, s.hyper);
  c.head = std::move(trained.model);
  c.trace = std::move(trained.trace);
  c.final_loss = dataset_loss(c.head, data);
  c.window_loss = final_window_loss(c.trace, kLossWindow);
  c.svm = svm_train(penultimate_matrix(c.head, data.inputs), data.labels, s.svm);
  return c;
}

inline void write_classifier(std::ostream& os, const Classifier& c) {
  auto row = [&](std::span<const double> xs) {
    char buf[32];
    for (std::size_t i = 0; i < xs.size(); ++i) {
      auto [end, ec] = std::to_chars(buf, buf + sizeof buf, xs[i]);
      if (i) os << ' ';
      os.write(buf, end - buf);
    }
    os << '\n';
  };
  os << "nocnet-classifier 1\n";
  write_model(os, c.head);
  os << "\nscaler " << c.scaler.mean.size() << '\n';
  row(c.scaler.mean);
  row(c.scaler.scale);
  os << "svm " << c.svm.weights.rows << ' ' << c.svm.weights.cols << '\n';
  for (std::size_t k = 0; k < c.svm.weights.rows; ++k) row(c.svm.weights.row(k));
  row(c.svm.biases);
  os << "losses ";
  const double losses[2] = {c.final_loss, c.window_loss};
  row(losses);
}

inline Classifier read_classifier(std::istream& is) {
  auto expect = [&](const char* word) {
    std::string w;
    if (!(is >> w) || w != word) throw IoError(std::string("classifier file: expected '") + word + "'");
  };
  auto values = [&](std::size_t n) {
    std::vector<double> out(n);
    for (auto& v : out) {
      std::string tok;
      if (!(is >> tok)) throw IoError("classifier file: truncated");
      auto [end, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
      if (ec != std::errc() || end != tok.data() + tok.size()) throw IoError("classifier file: bad number " + tok);
    }
    return out;
  };
  expect("nocnet-classifier");
  expect("1");
  is.get();
  Classifier c{read_model(is), {}, {}, {}, 0.0, 0.0};
  std::size_t d = 0, rows = 0, cols = 0;
  expect("scaler");
  if (!(is >> d)) throw IoError("classifier file: bad scaler size");
  c.scaler.mean = values(d);
  c.scaler.scale = values(d);
  expect("svm");
  if (!(is >> rows >> cols)) throw IoError("classifier file: bad svm shape");
  c.svm.weights = Matrix{rows, cols, values(rows * cols)};
  c.svm.biases = values(rows);
  expect("losses");
  const auto losses = values(2);
  c.final_loss = losses[0];
  c.window_loss = losses[1];
  return c;
}

inline void save_classifier(const Classifier& c, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot write " + path);
  write_classifier(os, c);
  if (!os) throw IoError("write failed: " + path);
}

inline Classifier load_classifier(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot read " + path);
  return read_classifier(is);
}

struct Evaluation {
  Metrics metrics;
  std::vector<std::size_t> predictions;
  Matrix penultimate;
};

inline Evaluation evaluate(const Classifier& c, const Tensor& features, std::span<const std::size_t> labels,
                           std::size_t background, std::size_t classes) {
  Evaluation e;
  e.penultimate = penultimate_matrix(c.head, c.scaler.apply(features));
  e.predictions = svm_predict(c.svm, e.penultimate);
  e.metrics = compute_metrics(e.predictions, labels, background, classes);
  return e;
}

/// Orientation (or magnitude) image of the flow between a clip's first two frames.
inline Frame motion_frame(const VideoClip& clip, double lambda, std::size_t iters, bool magnitude) {
  if (clip.frames.size() < 2) throw InvalidValue("motion needs two frames");
  const auto flow = horn_schunck(clip.frames[0], clip.frames[1], lambda, iters);
  return magnitude ? magnitude_map(flow) : orientation_map(flow);
}

}  // namespace nocnet
