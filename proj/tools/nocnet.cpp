// nocnet: gen | train | eval | grid | plotdata

#include <CLI11.hpp>

#include <cstdint>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "nocnet/harness.hpp"

namespace {

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::vector<std::string> settings;
  std::string output;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("-c,--config", c.config, "flat key = value config file")->check(CLI::ExistingFile);
  cmd->add_option("-s,--seed", c.seed, "seed (beats the file)");
  cmd->add_option("--set", c.settings, "key=value override, repeatable");
  cmd->add_option("-o,--output", c.output, "output directory (same as --set output_dir=...)");
}

nocnet::ExperimentConfig load(const Common& c) {
  nocnet::ConfigOverrides flags{c.seed, c.settings};
  if (!c.output.empty()) flags.settings.push_back("output_dir=" + c.output);
  return c.config.empty() ? nocnet::parse_config_text("", flags) : nocnet::parse_config(c.config, flags);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Network-of-classifiers experiments on synthetic data"};
  app.require_subcommand(1);

  Common gen_o, train_o, eval_o, grid_o, plot_o;
  auto* gen = app.add_subcommand("gen", "write the synthetic dataset (images + manifest)");
  auto* train = app.add_subcommand("train", "run an experiment: train, evaluate, emit every artifact");
  auto* eval = app.add_subcommand("eval", "re-evaluate saved classifiers of a previous train run");
  auto* grid = app.add_subcommand("grid", "run all four experiments into <output>/<experiment>");
  auto* plot = app.add_subcommand("plotdata", "re-emit embedding CSVs from saved classifiers");
  add_common(gen, gen_o);
  add_common(train, train_o);
  add_common(eval, eval_o);
  add_common(grid, grid_o);
  add_common(plot, plot_o);

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) {
      const auto files = nocnet::write_dataset(load(gen_o));
      std::cout << "wrote " << files.size() << " files\n";
    } else if (train->parsed() || eval->parsed() || plot->parsed()) {
      const auto& o = train->parsed() ? train_o : eval->parsed() ? eval_o : plot_o;
      const auto stage = train->parsed()  ? nocnet::RunStage::Train
                         : eval->parsed() ? nocnet::RunStage::Eval
                                          : nocnet::RunStage::Plot;
      const auto cfg = load(o);
      const auto art = nocnet::run_experiment(cfg, stage);
      if (stage == nocnet::RunStage::Plot)
        std::cout << "wrote " << art.paths("embedding").size() << " embeddings to " << cfg.output_dir << "\n";
      else
        std::cout << nocnet::emit_table(art.rows);
    } else if (grid->parsed()) {
      const auto base = load(grid_o);
      std::vector<nocnet::ResultRow> all;
      for (auto e : {nocnet::Experiment::ArchSweep, nocnet::Experiment::RegimeSweep, nocnet::Experiment::BlurCombo,
                     nocnet::Experiment::Fusion}) {
        auto cfg = base;
        cfg.experiment = e;
        cfg.output_dir = (std::filesystem::path(base.output_dir) / nocnet::experiment_name(e)).string();
        std::cerr << "grid: " << nocnet::experiment_name(e) << "\n";
        for (auto row : nocnet::run_experiment(cfg).rows) {
          row.method = std::string(nocnet::experiment_name(e)) + " " + row.method;
          all.push_back(std::move(row));
        }
      }
      const auto table = nocnet::emit_table(all);
      nocnet::write_text(std::filesystem::path(base.output_dir) / "grid_table.txt", table);
      std::cout << table;
    }
  } catch (const nocnet::ConfigError& e) {
    std::cerr << "nocnet: config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "nocnet: error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
