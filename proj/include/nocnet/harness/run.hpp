#pragma once

// run_experiment: dataset -> backbone features -> heads per (arch, regime, variant) -> SVM -> artifacts.

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <tuple>
#include <vector>

#include "nocnet/datapipe.hpp"
#include "nocnet/error.hpp"
#include "nocnet/eval.hpp"
#include "nocnet/harness/config.hpp"
#include "nocnet/harness/csv.hpp"
#include "nocnet/harness/pipeline.hpp"
#include "nocnet/netzoo.hpp"
#include "nocnet/optim.hpp"

namespace nocnet {

/// Feature variants a head can be trained or tested on.
enum class Variant { Normal, Blurred, Fused };

inline std::string_view variant_name(Variant v) {
  switch (v) {
    case Variant::Normal: return "normal";
    case Variant::Blurred: return "blurred";
    case Variant::Fused: return "fused";
  }
  return "?";
}

inline Variant variant_of(Source s) { return s == Source::normal ? Variant::Normal : Variant::Blurred; }

struct ResultRow {
  std::string method;
  std::string regime;
  std::string slug;
  Metrics metrics;
  double train_loss = 0.0;
  double window_loss = 0.0;
};

struct RunArtifact {
  std::filesystem::path output_dir;
  std::vector<ResultRow> rows;  // sorted by (method, regime)
  std::vector<std::pair<std::string, std::string>> files;  // (kind, path relative to output_dir)

  std::vector<std::string> paths(std::string_view kind) const {
    std::vector<std::string> out;
    for (const auto& [k, p] : files)
      if (k == kind) out.push_back(p);
    return out;
  }
  const ResultRow& row(std::string_view method, std::string_view regime) const {
    for (const auto& r : rows)
      if (r.method == method && r.regime == regime) return r;
    throw InvalidValue("no result row for " + std::string(method) + " / " + std::string(regime));
  }
};

/// Train fits and writes everything; Eval reloads the saved classifiers and rewrites
/// the metrics; Plot reloads them and rewrites the embeddings.
enum class RunStage { Train, Eval, Plot };

/// Generated samples, their split and the backbone features of every variant the experiment needs.
struct PreparedData {
  SyntheticDataset dataset;
  Split split;
  std::vector<std::size_t> train_labels, test_labels;
  std::vector<Frame> blurred;      // blur_combo only
  std::vector<Frame> orientation;  // fusion only
  Model rgb_backbone;
  std::optional<Model> orient_backbone;
  std::map<Variant, Tensor> train, test;
};

namespace detail {

inline std::vector<const Frame*> frame_ptrs(const std::vector<Frame>& frames, std::span<const std::size_t> idx) {
  std::vector<const Frame*> out;
  out.reserve(idx.size());
  for (auto i : idx) out.push_back(&frames.at(i));
  return out;
}

inline std::vector<Frame> record_images(const SyntheticDataset& ds) {
  std::vector<Frame> out;
  out.reserve(ds.records.size());
  for (const auto& r : ds.records) out.push_back(r.image);
  return out;
}

}  // namespace detail

inline SyntheticSpec synthetic_spec(const ExperimentConfig& cfg) {
  return {cfg.classes, cfg.per_class, cfg.image_size, cfg.uses_motion(), cfg.motion_correlated, cfg.shift,
          cfg.dataset_seed()};
}

inline std::vector<Frame> blurred_images(const ExperimentConfig& cfg, const std::vector<Frame>& images) {
  std::vector<Frame> out;
  out.reserve(images.size());
  for (std::size_t i = 0; i < images.size(); ++i) out.push_back(synth_blur(images[i], cfg.blur, mix_seed(cfg.seed, {0xb1, i})));
  return out;
}

inline std::vector<Frame> orientation_images(const ExperimentConfig& cfg, const SyntheticDataset& ds) {
  std::vector<Frame> out;
  out.reserve(ds.clips.size());
  for (const auto& clip : ds.clips) out.push_back(motion_frame(clip, cfg.flow_lambda, cfg.flow_iterations, false));
  return out;
}

inline PreparedData prepare_data(const ExperimentConfig& cfg) {
  validate_config(cfg);
  PreparedData d{gen_synthetic_dataset(synthetic_spec(cfg)), {}, {}, {}, {}, {},
                 build_backbone({3, cfg.image_size, cfg.image_size}, cfg.feature_channels, mix_seed(cfg.seed, {0xb0})),
                 std::nullopt, {}, {}};
  std::vector<std::size_t> labels;
  for (const auto& r : d.dataset.records) labels.push_back(r.class_id);
  d.split = stratified_split(labels, cfg.test_fraction, mix_seed(cfg.seed, {0x5b}));
  if (d.split.train.empty() || d.split.test.empty()) throw InvalidPlan("split leaves an empty train or test set");
  for (auto i : d.split.train) d.train_labels.push_back(labels[i]);
  for (auto i : d.split.test) d.test_labels.push_back(labels[i]);

  const auto images = detail::record_images(d.dataset);
  auto featurize = [&](const Model& backbone, const std::vector<Frame>& frames, Variant v) {
    d.train[v] = backbone_features(backbone, detail::frame_ptrs(frames, d.split.train));
    d.test[v] = backbone_features(backbone, detail::frame_ptrs(frames, d.split.test));
  };
  featurize(d.rgb_backbone, images, Variant::Normal);
  if (cfg.experiment == Experiment::BlurCombo) {
    d.blurred = blurred_images(cfg, images);
    featurize(d.rgb_backbone, d.blurred, Variant::Blurred);
  }
  if (cfg.experiment == Experiment::Fusion) {
    d.orientation = orientation_images(cfg, d.dataset);
    d.orient_backbone = build_backbone({1, cfg.image_size, cfg.image_size}, cfg.feature_channels, mix_seed(cfg.seed, {0x0f}));
    const auto otr = backbone_features(*d.orient_backbone, detail::frame_ptrs(d.orientation, d.split.train));
    const auto ote = backbone_features(*d.orient_backbone, detail::frame_ptrs(d.orientation, d.split.test));
    d.train[Variant::Fused] = fuse_sum(d.train.at(Variant::Normal), otr);
    d.test[Variant::Fused] = fuse_sum(d.test.at(Variant::Normal), ote);
  }
  return d;
}

/// One head+SVM, trained on one feature variant.
struct NetKey {
  ArchId arch;
  Regime regime;
  Variant variant;

  auto operator<=>(const NetKey&) const = default;
  std::string slug() const {
    return std::string(arch_name(arch)) + "_" + std::string(regime_name(regime)) + "_" + std::string(variant_name(variant));
  }
};

/// One result row: a net evaluated on one test variant.
struct Cell {
  std::string method;
  Regime regime;
  NetKey net;
  Variant test;
  Source test_source;
  std::string slug;
};

inline std::vector<Cell> plan_cells(const ExperimentConfig& cfg) {
  std::vector<Cell> cells;
  for (auto arch : cfg.effective_archs())
    for (auto regime : cfg.effective_regimes()) {
      const std::string a(arch_name(arch)), base = a + "_" + std::string(regime_name(regime));
      switch (cfg.experiment) {
        case Experiment::ArchSweep:
        case Experiment::RegimeSweep:
          cells.push_back({a, regime, {arch, regime, Variant::Normal}, Variant::Normal, Source::normal, base});
          break;
        case Experiment::BlurCombo:
          for (const auto& combo : cfg.effective_combos()) {
            // The SVM always comes from the net variant under test.
            if (combo.net != combo.svm) throw InvalidPlan("combo " + combo_name(combo) + " mixes net and SVM sources");
            cells.push_back({a + " " + combo_name(combo), regime, {arch, regime, variant_of(combo.net)},
                             variant_of(combo.data), combo.data, base + "_" + combo_name(combo)});
          }
          break;
        case Experiment::Fusion:
          cells.push_back({a + " rgb", regime, {arch, regime, Variant::Normal}, Variant::Normal, Source::normal, base + "_rgb"});
          cells.push_back({a + " rgb+orientation", regime, {arch, regime, Variant::Fused}, Variant::Fused,
                           Source::normal, base + "_rgb+orientation"});
          break;
      }
    }
  return cells;
}

inline TrainSettings train_settings(const ExperimentConfig& cfg, ArchId arch, Regime regime, const Tensor& features) {
  TrainSettings s;
  s.arch = NocArch{arch, {features.dim(1), features.dim(2), features.dim(3)}, cfg.classes, cfg.width_scale};
  s.regime = regime;
  s.hyper = cfg.hyper;
  // Same head init and partition plan for every regime and variant of an arch.
  s.hyper.seed = mix_seed(cfg.seed, {0x4e, static_cast<std::uint64_t>(arch)});
  s.partitions = cfg.partitions;
  s.plan_seed = mix_seed(cfg.seed, {0x9a});
  s.svm = SvmOptions{cfg.svm_c, cfg.svm_epochs, mix_seed(cfg.seed, {0x5f}), true};
  return s;
}

/// Partition of each training sample under the plan every head uses.
inline PartitionPlan training_plan(const ExperimentConfig& cfg, std::span<const std::size_t> train_labels) {
  return make_partition_plan(train_labels, cfg.partitions, cfg.hyper.iterations, mix_seed(cfg.seed, {0x9a}));
}

/// Evenly spaced rows, at most `limit` of them.
inline std::vector<std::size_t> embedding_rows(std::size_t n, std::size_t limit) {
  std::vector<std::size_t> rows;
  const std::size_t m = std::min(n, limit);
  for (std::size_t i = 0; i < m; ++i) rows.push_back(i * n / m);
  return rows;
}

/// 2-D coordinates of penultimate features. t-SNE falls back to PCA when too few points.
inline Matrix embed_points(const ExperimentConfig& cfg, const Matrix& features) {
  const double max_perplexity = static_cast<double>(features.rows - 1) / 3.0;
  if (cfg.embed == EmbedMethod::Tsne && features.rows >= 16 && max_perplexity >= 5.0) {
    TsneOptions opt;
    opt.perplexity = std::min(cfg.perplexity, max_perplexity);
    opt.iters = cfg.tsne_iterations;
    opt.seed = mix_seed(cfg.seed, {0x75e});
    return tsne_embed(features, opt).coords;
  }
  return pca_project(features, 2);
}

namespace detail {

inline std::string emit_metrics(const std::vector<ResultRow>& rows) {
  CsvBuilder b({"method", "regime", "accuracy", "false_alarms", "total", "train_loss", "final500_loss"});
  for (const auto& r : rows)
    b.row({r.method, r.regime, fixed(r.metrics.accuracy, 1), std::to_string(r.metrics.false_alarms),
           std::to_string(r.metrics.total), fixed(r.train_loss, 6), fixed(r.window_loss, 6)});
  return b.str();
}

inline std::string emit_per_class(const std::vector<ResultRow>& rows) {
  CsvBuilder b({"method", "regime", "class_id", "precision", "recall"});
  for (const auto& r : rows)
    for (std::size_t c = 0; c < r.metrics.per_class.size(); ++c)
      b.row({r.method, r.regime, std::to_string(c), fixed(r.metrics.per_class[c].precision, 1),
             fixed(r.metrics.per_class[c].recall, 1)});
  return b.str();
}

inline std::string emit_manifest(const std::vector<std::pair<std::string, std::string>>& files) {
  CsvBuilder b({"kind", "path"});
  for (const auto& [k, p] : files) b.row({k, p});
  return b.str();
}

}  // namespace detail

/// One row per (method, regime), sorted, accuracy to one decimal.
inline std::string emit_table(std::vector<ResultRow> rows) {
  std::sort(rows.begin(), rows.end(),
            [](const ResultRow& a, const ResultRow& b) { return std::tie(a.method, a.regime) < std::tie(b.method, b.regime); });
  std::vector<std::vector<std::string>> cells{{"method", "regime", "accuracy", "false_alarms"}};
  for (const auto& r : rows)
    cells.push_back({r.method, r.regime, fixed(r.metrics.accuracy, 1), std::to_string(r.metrics.false_alarms)});
  return aligned_table(cells, 2);
}

inline RunArtifact run_experiment(const ExperimentConfig& cfg, RunStage stage = RunStage::Train) {
  namespace fs = std::filesystem;
  validate_config(cfg);
  const auto cells = plan_cells(cfg);
  const auto data = prepare_data(cfg);
  const std::size_t background = background_class(cfg.classes);

  RunArtifact art;
  art.output_dir = cfg.output_dir;
  auto emit = [&](const std::string& kind, const std::string& rel, std::string_view text) {
    write_text(art.output_dir / rel, text);
    art.files.emplace_back(kind, rel);
  };

  std::map<NetKey, Classifier> nets;
  for (const auto& cell : cells) {
    if (nets.count(cell.net)) continue;
    const auto slug = cell.net.slug();
    const auto clf_path = (art.output_dir / "models" / (slug + ".clf")).string();
    if (stage == RunStage::Train) {
      const auto& features = data.train.at(cell.net.variant);
      auto c = fit_classifier(train_settings(cfg, cell.net.arch, cell.net.regime, features), features, data.train_labels);
      ensure_dir(art.output_dir / "models");
      save_model(c.head, (art.output_dir / "models" / (slug + ".noc")).string());
      save_classifier(c, clf_path);
      art.files.emplace_back("model", "models/" + slug + ".noc");
      art.files.emplace_back("classifier", "models/" + slug + ".clf");
      emit("loss", "loss/" + slug + ".csv", loss_csv(c.trace));
      nets.emplace(cell.net, std::move(c));
    } else {
      nets.emplace(cell.net, load_classifier(clf_path));
    }
  }

  for (const auto& cell : cells) {
    const auto& clf = nets.at(cell.net);
    const auto& test = data.test.at(cell.test);
    ResultRow row{cell.method, std::string(regime_name(cell.regime)), cell.slug, {}, clf.final_loss, clf.window_loss};
    if (stage != RunStage::Plot) {
      const auto e = evaluate(clf, test, data.test_labels, background, cfg.classes);
      row.metrics = e.metrics;
      emit("confusion", "confusion/" + cell.slug + ".csv", confusion_csv(e.metrics));
    }
    if (stage != RunStage::Eval && cfg.embed != EmbedMethod::None) {
      const auto rows = embedding_rows(test.dim(0), cfg.embed_points);
      const auto feats = penultimate_matrix(clf.head, clf.scaler.apply(select_rows(test, rows)));
      std::vector<std::size_t> ids;
      for (auto r : rows) ids.push_back(data.test_labels[r]);
      const std::vector<Source> sources(rows.size(), cell.test_source);
      emit("embedding", "embedding/" + cell.slug + ".csv", embedding_csv(embed_points(cfg, feats), ids, sources));
    }
    art.rows.push_back(std::move(row));
  }
  std::sort(art.rows.begin(), art.rows.end(), [](const ResultRow& a, const ResultRow& b) {
    return std::tie(a.method, a.regime) < std::tie(b.method, b.regime);
  });

  if (stage != RunStage::Plot) {
    emit("metrics", "metrics.csv", detail::emit_metrics(art.rows));
    emit("per_class", "per_class.csv", detail::emit_per_class(art.rows));
    emit("table", "table.txt", emit_table(art.rows));
  }
  if (stage == RunStage::Train) {
    save_model(data.rgb_backbone, (art.output_dir / "models" / "backbone_rgb.noc").string());
    art.files.emplace_back("model", "models/backbone_rgb.noc");
    if (data.orient_backbone) {
      save_model(*data.orient_backbone, (art.output_dir / "models" / "backbone_orientation.noc").string());
      art.files.emplace_back("model", "models/backbone_orientation.noc");
    }
    emit("config", "config.txt", config_text(cfg));
    art.files.emplace_back("manifest", "manifest.csv");
    write_text(art.output_dir / "manifest.csv", detail::emit_manifest(art.files));
  }
  return art;
}

/// Writes the generated images under output_dir/data with a manifest
/// (path, class_id, source, partition); partition is blank for test samples.
inline std::vector<std::string> write_dataset(const ExperimentConfig& cfg) {
  namespace fs = std::filesystem;
  validate_config(cfg);
  const auto ds = gen_synthetic_dataset(synthetic_spec(cfg));
  std::vector<std::size_t> labels;
  for (const auto& r : ds.records) labels.push_back(r.class_id);
  const auto split = stratified_split(labels, cfg.test_fraction, mix_seed(cfg.seed, {0x5b}));
  std::vector<std::size_t> train_labels;
  for (auto i : split.train) train_labels.push_back(labels[i]);
  const auto plan = training_plan(cfg, train_labels);
  std::vector<std::optional<std::size_t>> partition(labels.size());
  for (std::size_t k = 0; k < split.train.size(); ++k) partition[split.train[k]] = plan.assignments[k];

  const fs::path root = fs::path(cfg.output_dir) / "data";
  ensure_dir(root);
  std::vector<std::string> written;
  CsvBuilder manifest({"path", "class_id", "source", "partition"});
  auto put = [&](const Frame& f, const std::string& rel, std::size_t i, Source src) {
    ensure_dir((root / rel).parent_path());
    write_pnm(f, (root / rel).string());
    written.push_back("data/" + rel);
    manifest.row({rel, std::to_string(labels[i]), source_name(src),
                  partition[i] ? std::to_string(*partition[i]) : std::string()});
  };
  char name[64];
  const auto images = detail::record_images(ds);
  for (std::size_t i = 0; i < images.size(); ++i) {
    std::snprintf(name, sizeof name, "normal/%05zu.ppm", i);
    put(images[i], name, i, Source::normal);
  }
  if (cfg.experiment == Experiment::BlurCombo) {
    const auto blurred = blurred_images(cfg, images);
    for (std::size_t i = 0; i < blurred.size(); ++i) {
      std::snprintf(name, sizeof name, "blurred/%05zu.ppm", i);
      put(blurred[i], name, i, Source::blurred);
    }
  }
  if (cfg.uses_motion()) {
    const auto orient = orientation_images(cfg, ds);
    CsvBuilder om({"path", "class_id"});
    for (std::size_t i = 0; i < orient.size(); ++i) {
      std::snprintf(name, sizeof name, "orientation/%05zu.pgm", i);
      ensure_dir((root / name).parent_path());
      write_pnm(orient[i], (root / name).string());
      written.push_back(std::string("data/") + name);
      om.row({name, std::to_string(labels[i])});
    }
    write_text(root / "orientation.csv", om.str());
    written.push_back("data/orientation.csv");
  }
  write_text(root / "manifest.csv", manifest.str());
  written.push_back("data/manifest.csv");
  return written;
}

}  // namespace nocnet
