#include "nocnet/harness.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <set>
#include <sstream>

using namespace nocnet;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  auto p = fs::temp_directory_path() / ("nocnet_harness_" + name);
  fs::remove_all(p);
  return p;
}

ExperimentConfig tiny(Experiment e, const fs::path& out) {
  auto c = parse_config_text("experiment = " + std::string(experiment_name(e)) +
                             "\n"
                             "data.classes = 4\n"
                             "data.per_class = 20\n"
                             "data.size = 16\n"
                             "backbone.channels = 4\n"
                             "regime.iterations = 30\n"
                             "svm.epochs = 5\n"
                             "embed.iterations = 150\n"
                             "flow.iterations = 20\n");
  c.output_dir = out.string();
  return c;
}

std::vector<LossRecord> records(std::initializer_list<std::tuple<std::size_t, std::size_t, double>> xs) {
  std::vector<LossRecord> out;
  for (auto [s, p, l] : xs) out.push_back({s, p, 0.01, l});
  return out;
}

}  // namespace

// ---------------------------------------------------------------------------
// Config
// ---------------------------------------------------------------------------

TEST(Config, MinimalFileFillsDefaults) {
  const auto c = parse_config_text("experiment = regime_sweep\n");
  EXPECT_EQ(c.experiment, Experiment::RegimeSweep);
  EXPECT_EQ(c.effective_regimes(),
            (std::vector<Regime>{Regime::Sgd1LR, Regime::RmsProp2LR, Regime::CovPrecond3LR}));
  EXPECT_EQ(c.effective_archs(), std::vector<ArchId>{ArchId::C1F3});
  EXPECT_EQ(c.classes, 16u);
  EXPECT_EQ(c.per_class, 100u);
  EXPECT_EQ(c.image_size, 32u);
  EXPECT_DOUBLE_EQ(c.width_scale, 1.0 / 32.0);
  EXPECT_EQ(c.hyper.iterations, 500u);
  EXPECT_DOUBLE_EQ(c.hyper.alpha_start, 0.01);
  EXPECT_DOUBLE_EQ(c.hyper.alpha_end, 0.005);
  EXPECT_EQ(c.partitions, 3u);
  EXPECT_FALSE(c.uses_motion());
}

TEST(Config, ExperimentDependentDefaults) {
  EXPECT_EQ(parse_config_text("experiment = arch_sweep").effective_archs().size(), 3u);
  EXPECT_EQ(parse_config_text("experiment = arch_sweep").effective_regimes(),
            std::vector<Regime>{Regime::CovPrecond3LR});
  EXPECT_EQ(parse_config_text("experiment = blur_combo").effective_combos().size(), 4u);
  EXPECT_TRUE(parse_config_text("experiment = fusion").uses_motion());
}

TEST(Config, GammaOutsideUnitIntervalRejected) {
  EXPECT_THROW(parse_config_text("regime.gamma = 1.5\n"), ConfigError);
  EXPECT_THROW(parse_config_text("regime.gamma = 0\n"), ConfigError);
  EXPECT_NO_THROW(parse_config_text("regime.gamma = 0.5\n"));
}

TEST(Config, UnknownKeyReportsLine) {
  try {
    parse_config_text("# header\nexperiment = fusion\n\nregime.gama = 0.5\n");
    FAIL() << "expected ConfigError";
  } catch (const ConfigError& e) {
    EXPECT_EQ(e.line(), 4u);
    EXPECT_NE(std::string(e.what()).find("regime.gama"), std::string::npos);
  }
}

TEST(Config, InvalidEnumRejected) {
  for (const char* text : {"experiment = layer_sweep", "regime = 4LR", "arch = 2C3fc", "combo = N-B-N",
                           "blur.kind = box", "embed.method = umap", "data.motion = maybe", "seed = -1",
                           "data.classes = 4x", "novalue"}) {
    EXPECT_THROW(parse_config_text(text), ConfigError) << text;
  }
}

TEST(Config, FlagsBeatFile) {
  const std::string text = "seed = 3\nregime.iterations = 40\n";
  EXPECT_EQ(parse_config_text(text).seed, 3u);
  EXPECT_EQ(parse_config_text(text, {7, {}}).seed, 7u);
  const auto c = parse_config_text(text, {std::nullopt, {"regime.iterations=12", "seed = 9"}});
  EXPECT_EQ(c.hyper.iterations, 12u);
  EXPECT_EQ(c.seed, 9u);
  EXPECT_EQ(parse_config_text(text, {7, {"seed=9"}}).seed, 7u);
  EXPECT_THROW(parse_config_text(text, {std::nullopt, {"bogus=1"}}), ConfigError);
}

TEST(Config, CommentsListsAndRatios) {
  const auto c = parse_config_text(
      "  arch = 0C3fc, 1M1   # two heads\n"
      "regime=1LR,3LR\n"
      "arch.width_scale = 1/16\n"
      "combo = B-B-B\n");
  EXPECT_EQ(c.effective_archs(), (std::vector<ArchId>{ArchId::C0F3, ArchId::M1}));
  EXPECT_EQ(c.effective_regimes(), (std::vector<Regime>{Regime::Sgd1LR, Regime::CovPrecond3LR}));
  EXPECT_DOUBLE_EQ(c.width_scale, 1.0 / 16.0);
  ASSERT_EQ(c.effective_combos().size(), 1u);
  EXPECT_EQ(combo_name(c.effective_combos()[0]), "B-B-B");
}

TEST(Config, Bounds) {
  EXPECT_THROW(parse_config_text("experiment = fusion\ndata.motion = false"), ConfigError);
  EXPECT_THROW(parse_config_text("regime.batch_size = 0"), ConfigError);
  EXPECT_THROW(parse_config_text("data.classes = 17"), ConfigError);
  EXPECT_THROW(parse_config_text("arch.width_scale = 1/1024"), ConfigError);  // 4 hidden units < 16 classes
  EXPECT_THROW(parse_config_text("data.test_fraction = 1"), ConfigError);
}

TEST(Config, EchoParsesBack) {
  const auto c = parse_config_text("experiment = blur_combo\nseed = 5\nblur.kind = motion\nblur.angle = 30\n");
  const auto text = config_text(c);
  const auto again = parse_config_text(text);
  EXPECT_EQ(config_text(again), text);
  EXPECT_EQ(again.dataset_seed(), c.dataset_seed());
  EXPECT_EQ(again.blur.kind, BlurKind::motion);
}

TEST(Config, ReadsFile) {
  const auto dir = scratch("cfgfile");
  fs::create_directories(dir);
  write_text(dir / "run.cfg", "experiment = arch_sweep\nseed = 11\n");
  const auto c = parse_config((dir / "run.cfg").string(), {12, {}});
  EXPECT_EQ(c.experiment, Experiment::ArchSweep);
  EXPECT_EQ(c.seed, 12u);
  EXPECT_THROW(parse_config((dir / "missing.cfg").string()), IoError);
}

// ---------------------------------------------------------------------------
// CSV / table
// ---------------------------------------------------------------------------

TEST(Csv, LossTraceHeaderAndRows) {
  EXPECT_EQ(loss_csv({}), "step,partition,alpha,loss\n");
  const auto trace = records({{0, 1, 2.5}});
  EXPECT_EQ(loss_csv(trace), "step,partition,alpha,loss\n0,1,0.01000000,2.50000000\n");
  EXPECT_EQ(loss_csv(trace), loss_csv(trace));
}

TEST(Csv, QuotingAndLineEndings) {
  CsvBuilder b({"a", "b"});
  b.row({"x,y", "say \"hi\""});
  EXPECT_EQ(b.str(), "a,b\n\"x,y\",\"say \"\"hi\"\"\"\n");
  EXPECT_EQ(b.str().find('\r'), std::string::npos);
  EXPECT_THROW(b.row({"one"}), SizeMismatch);
}

TEST(Csv, NegativeZeroPrintsAsZero) {
  EXPECT_EQ(fixed(-0.0, 1), "0.0");
  EXPECT_EQ(fixed(-0.04, 1), "0.0");
  EXPECT_EQ(fixed(-0.06, 1), "-0.1");
  EXPECT_EQ(fixed(83.25, 1), "83.2");
}

TEST(Csv, ConfusionRowSumsMatchTruthHistogram) {
  const std::vector<std::size_t> truth{0, 0, 1, 2, 2, 2}, pred{0, 1, 1, 2, 0, 2};
  const auto m = compute_metrics(pred, truth, 2, 3);
  std::istringstream in(confusion_csv(m));
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, "truth,pred,count");
  std::vector<std::size_t> sums(3, 0);
  std::size_t rows = 0;
  while (std::getline(in, line)) {
    std::size_t t, p, n;
    char c1, c2;
    std::istringstream(line) >> t >> c1 >> p >> c2 >> n;
    sums[t] += n;
    ++rows;
  }
  EXPECT_EQ(rows, 9u);
  EXPECT_EQ(sums, (std::vector<std::size_t>{2, 1, 3}));
}

TEST(Csv, EmbeddingColumns) {
  const Matrix coords{2, 2, {0.5, -1.0, 2.0, 3.0}};
  const std::vector<std::size_t> ids{3, 4};
  const std::vector<Source> src{Source::normal, Source::blurred};
  EXPECT_EQ(embedding_csv(coords, ids, src), "x,y,class_id,source\n0.500000,-1.000000,3,normal\n2.000000,3.000000,4,blurred\n");
  EXPECT_THROW(embedding_csv(coords, std::vector<std::size_t>{1}, src), SizeMismatch);
}

TEST(Table, SingleRunHasOneDataRow) {
  ResultRow r{"1C3fc", "3LR", "x", {}, 0, 0};
  r.metrics.accuracy = 83.0;
  const auto t = emit_table({r});
  std::istringstream in(t);
  std::vector<std::string> lines;
  for (std::string l; std::getline(in, l);) lines.push_back(l);
  ASSERT_EQ(lines.size(), 3u);  // header, rule, row
  EXPECT_NE(lines[2].find("83.0"), std::string::npos);
}

TEST(Table, RowsSortedByMethodThenRegime) {
  std::vector<ResultRow> rows;
  for (auto [m, g] : std::vector<std::pair<const char*, const char*>>{
           {"1M1", "3LR"}, {"1C3fc", "3LR"}, {"1C3fc", "1LR"}, {"0C3fc", "2LR"}})
    rows.push_back({m, g, "", {}, 0, 0});
  std::istringstream in(emit_table(rows));
  std::vector<std::string> order;
  std::string line;
  std::getline(in, line);
  std::getline(in, line);
  while (std::getline(in, line)) order.push_back(line.substr(0, line.find("  ")) + "/" + line.substr(line.find("LR") - 1, 3));
  EXPECT_EQ(order, (std::vector<std::string>{"0C3fc/2LR", "1C3fc/1LR", "1C3fc/3LR", "1M1/3LR"}));
}

// ---------------------------------------------------------------------------
// Pipeline pieces
// ---------------------------------------------------------------------------

TEST(Split, StratifiedAndDisjoint) {
  std::vector<std::size_t> labels;
  for (std::size_t c = 0; c < 5; ++c)
    for (std::size_t i = 0; i < 20; ++i) labels.push_back(c);
  const auto s = stratified_split(labels, 0.2, 3);
  EXPECT_EQ(s.test.size(), 20u);
  EXPECT_EQ(s.train.size(), 80u);
  std::vector<std::size_t> per_class(5, 0);
  for (auto i : s.test) ++per_class[labels[i]];
  for (auto n : per_class) EXPECT_EQ(n, 4u);
  std::set<std::size_t> all(s.train.begin(), s.train.end());
  for (auto i : s.test) EXPECT_TRUE(all.insert(i).second);
  EXPECT_EQ(all.size(), 100u);
  EXPECT_THROW(stratified_split(labels, 1.0, 3), InvalidValue);
}

TEST(FinalWindowLoss, MeansTheLastStepsOfEveryPartition) {
  const auto t = records({{0, 0, 9.0}, {1, 0, 4.0}, {2, 0, 2.0}, {0, 1, 7.0}, {1, 1, 6.0}, {2, 1, 0.0}});
  EXPECT_DOUBLE_EQ(final_window_loss(t, 2), (4.0 + 2.0 + 6.0 + 0.0) / 4.0);
  EXPECT_DOUBLE_EQ(final_window_loss(t, 500), 28.0 / 6.0);
  EXPECT_THROW(final_window_loss({}, 2), InvalidValue);
}

TEST(Classifier, SaveLoadRoundTripPredictsIdentically) {
  const auto dir = scratch("clf");
  auto cfg = tiny(Experiment::RegimeSweep, dir);
  const auto data = prepare_data(cfg);
  const auto& f = data.train.at(Variant::Normal);
  const auto c = fit_classifier(train_settings(cfg, ArchId::C1F3, Regime::CovPrecond3LR, f), f, data.train_labels);
  fs::create_directories(dir);
  save_classifier(c, (dir / "c.clf").string());
  const auto back = load_classifier((dir / "c.clf").string());
  EXPECT_EQ(back.scaler.mean, c.scaler.mean);
  EXPECT_EQ(back.svm.weights.data, c.svm.weights.data);
  EXPECT_EQ(back.final_loss, c.final_loss);
  EXPECT_EQ(back.window_loss, c.window_loss);
  const auto& t = data.test.at(Variant::Normal);
  EXPECT_EQ(evaluate(back, t, data.test_labels, 3, 4).predictions, evaluate(c, t, data.test_labels, 3, 4).predictions);
  write_text(dir / "bad.clf", "nocnet-classifier 2\n");
  EXPECT_THROW(load_classifier((dir / "bad.clf").string()), IoError);
}

TEST(Cells, BlurComboSvmAlwaysMatchesNet) {
  auto cfg = parse_config_text("experiment = blur_combo");
  for (const auto& cell : plan_cells(cfg)) {
    const auto name = cell.method.substr(cell.method.size() - 5);
    EXPECT_EQ(cell.net.variant, name[2] == 'N' ? Variant::Normal : Variant::Blurred) << cell.method;
    EXPECT_EQ(cell.test, name[0] == 'N' ? Variant::Normal : Variant::Blurred) << cell.method;
  }
  cfg.combos = {Combo{Source::normal, Source::blurred, Source::normal}};
  EXPECT_THROW(plan_cells(cfg), InvalidPlan);
}

TEST(Cells, FusionPairsSingleAndTwoStream) {
  const auto cells = plan_cells(parse_config_text("experiment = fusion"));
  ASSERT_EQ(cells.size(), 2u);
  EXPECT_EQ(cells[0].net.variant, Variant::Normal);
  EXPECT_EQ(cells[1].net.variant, Variant::Fused);
}

// ---------------------------------------------------------------------------
// run_experiment
// ---------------------------------------------------------------------------

TEST(RunExperiment, EveryListedFileExists) {
  const auto dir = scratch("files");
  const auto art = run_experiment(tiny(Experiment::BlurCombo, dir));
  EXPECT_EQ(art.rows.size(), 4u);
  EXPECT_EQ(art.paths("loss").size(), 2u);  // one per net variant
  EXPECT_EQ(art.paths("confusion").size(), 4u);
  EXPECT_EQ(art.paths("embedding").size(), 4u);
  for (const auto& [kind, rel] : art.files) EXPECT_TRUE(fs::exists(dir / rel)) << rel;
  const auto manifest = read_text(dir / "manifest.csv");
  EXPECT_EQ(manifest.substr(0, 10), "kind,path\n");
  for (const auto& [kind, rel] : art.files) EXPECT_NE(manifest.find(kind + "," + rel + "\n"), std::string::npos);
  EXPECT_EQ(read_text(dir / "loss" / "1C3fc_3LR_normal.csv").substr(0, 26), "step,partition,alpha,loss\n");
  EXPECT_EQ(load_model((dir / "models" / "1C3fc_3LR_normal.noc").string()).arch(), ArchId::C1F3);
  EXPECT_EQ(parse_config_text(read_text(dir / "config.txt")).experiment, Experiment::BlurCombo);
}

TEST(RunExperiment, TableMatchesMetricsCsv) {
  const auto dir = scratch("table");
  const auto art = run_experiment(tiny(Experiment::RegimeSweep, dir));
  ASSERT_EQ(art.rows.size(), 3u);
  const auto metrics = read_text(dir / "metrics.csv");
  const auto table = read_text(dir / "table.txt");
  std::istringstream in(metrics);
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, "method,regime,accuracy,false_alarms,total,train_loss,final500_loss");
  std::size_t n = 0;
  while (std::getline(in, line)) {
    std::istringstream f(line);
    std::string method, regime, acc;
    std::getline(f, method, ',');
    std::getline(f, regime, ',');
    std::getline(f, acc, ',');
    EXPECT_EQ(fixed(art.rows[n].metrics.accuracy, 1), acc);
    EXPECT_NE(table.find(acc), std::string::npos);
    ++n;
  }
  EXPECT_EQ(n, 3u);
}

TEST(RunExperiment, IdenticalConfigAndSeedGiveIdenticalBytes) {
  for (auto e : {Experiment::RegimeSweep, Experiment::Fusion}) {
    const auto a = scratch("det_a"), b = scratch("det_b");
    const auto ra = run_experiment(tiny(e, a));
    const auto rb = run_experiment(tiny(e, b));
    ASSERT_EQ(ra.files, rb.files);
    for (const auto& [kind, rel] : ra.files)
      if (kind != "config") EXPECT_EQ(read_text(a / rel), read_text(b / rel)) << rel;
  }
}

TEST(RunExperiment, SeedChangesOutput) {
  const auto a = scratch("seed_a"), b = scratch("seed_b");
  auto ca = tiny(Experiment::RegimeSweep, a), cb = tiny(Experiment::RegimeSweep, b);
  cb.seed = 2;
  run_experiment(ca);
  run_experiment(cb);
  EXPECT_NE(read_text(a / "loss" / "1C3fc_1LR_normal.csv"), read_text(b / "loss" / "1C3fc_1LR_normal.csv"));
}

TEST(RunExperiment, EvalStageReproducesTrainMetrics) {
  const auto dir = scratch("eval");
  const auto cfg = tiny(Experiment::Fusion, dir);
  run_experiment(cfg);
  const auto metrics = read_text(dir / "metrics.csv");
  const auto embedding = read_text(dir / "embedding" / "1C3fc_3LR_rgb.csv");
  fs::remove(dir / "metrics.csv");
  fs::remove(dir / "embedding" / "1C3fc_3LR_rgb.csv");
  run_experiment(cfg, RunStage::Eval);
  EXPECT_EQ(read_text(dir / "metrics.csv"), metrics);
  EXPECT_FALSE(fs::exists(dir / "embedding" / "1C3fc_3LR_rgb.csv"));
  run_experiment(cfg, RunStage::Plot);
  EXPECT_EQ(read_text(dir / "embedding" / "1C3fc_3LR_rgb.csv"), embedding);
}

TEST(RunExperiment, EvalWithoutModelsFails) {
  EXPECT_THROW(run_experiment(tiny(Experiment::RegimeSweep, scratch("nomodels")), RunStage::Eval), IoError);
}

TEST(RunExperiment, UnwritableOutputFails) {
  auto cfg = tiny(Experiment::RegimeSweep, "/proc/nocnet_cannot_write_here");
  EXPECT_THROW(run_experiment(cfg), Error);
}

TEST(WriteDataset, ManifestListsEveryImage) {
  const auto dir = scratch("gen");
  auto cfg = tiny(Experiment::BlurCombo, dir);
  const auto files = write_dataset(cfg);
  const auto manifest = read_text(dir / "data" / "manifest.csv");
  std::istringstream in(manifest);
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, "path,class_id,source,partition");
  std::size_t rows = 0, with_partition = 0;
  while (std::getline(in, line)) {
    ++rows;
    EXPECT_TRUE(fs::exists(dir / "data" / line.substr(0, line.find(','))));
    if (line.back() != ',') ++with_partition;
  }
  EXPECT_EQ(rows, 2u * 80u);
  EXPECT_EQ(with_partition, 2u * 64u);  // 80/20 split, test rows have no partition
  const auto img = read_pnm((dir / "data" / "normal" / "00000.ppm").string());
  EXPECT_EQ(img.channels, 3u);
  EXPECT_EQ(img.height, 16u);
}

// Desk-scale directional checks at the default configuration.

TEST(RunExperimentDefaults, ArchSweepC1F3AtLeastC0F3) {
  auto cfg = parse_config_text("experiment = arch_sweep\nembed.method = none\n");
  cfg.output_dir = scratch("arch").string();
  const auto art = run_experiment(cfg);
  ASSERT_EQ(art.rows.size(), 3u);
  EXPECT_GE(art.row("1C3fc", "3LR").metrics.accuracy, art.row("0C3fc", "3LR").metrics.accuracy);
}

TEST(RunExperimentDefaults, BlurredTestDataOnNormalNetDropsTenPoints) {
  auto cfg = parse_config_text("experiment = blur_combo\nembed.method = none\n");
  cfg.output_dir = scratch("blur").string();
  const auto art = run_experiment(cfg);
  EXPECT_LE(art.row("1C3fc B-N-N", "3LR").metrics.accuracy + 10.0, art.row("1C3fc N-N-N", "3LR").metrics.accuracy);
}
