#pragma once

// Flat `key = value` experiment configuration.

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cstdint>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "nocnet/datapipe/blur.hpp"
#include "nocnet/datapipe/image.hpp"
#include "nocnet/datapipe/synthetic.hpp"
#include "nocnet/error.hpp"
#include "nocnet/eval/svm.hpp"
#include "nocnet/netzoo.hpp"
#include "nocnet/optim.hpp"

namespace nocnet {

enum class Experiment { ArchSweep, RegimeSweep, BlurCombo, Fusion };

inline std::string_view experiment_name(Experiment e) {
  switch (e) {
    case Experiment::ArchSweep: return "arch_sweep";
    case Experiment::RegimeSweep: return "regime_sweep";
    case Experiment::BlurCombo: return "blur_combo";
    case Experiment::Fusion: return "fusion";
  }
  return "?";
}

inline std::optional<Experiment> parse_experiment(std::string_view s) {
  for (auto e : {Experiment::ArchSweep, Experiment::RegimeSweep, Experiment::BlurCombo, Experiment::Fusion})
    if (experiment_name(e) == s) return e;
  return std::nullopt;
}

/// Test data / net / SVM sources, e.g. B-N-N = blurred test data on the normal net with its SVM.
struct Combo {
  Source data = Source::normal;
  Source net = Source::normal;
  Source svm = Source::normal;

  bool operator==(const Combo&) const = default;
};

inline std::string combo_name(const Combo& c) {
  auto letter = [](Source s) { return s == Source::normal ? 'N' : 'B'; };
  return {letter(c.data), '-', letter(c.net), '-', letter(c.svm)};
}

inline const std::vector<Combo>& all_combos() {
  static const std::vector<Combo> combos{{Source::normal, Source::normal, Source::normal},
                                         {Source::normal, Source::blurred, Source::blurred},
                                         {Source::blurred, Source::normal, Source::normal},
                                         {Source::blurred, Source::blurred, Source::blurred}};
  return combos;
}

inline std::optional<Combo> parse_combo(std::string_view s) {
  for (const auto& c : all_combos())
    if (combo_name(c) == s) return c;
  return std::nullopt;
}

enum class EmbedMethod { None, Pca, Tsne };

inline std::string_view embed_name(EmbedMethod m) {
  switch (m) {
    case EmbedMethod::None: return "none";
    case EmbedMethod::Pca: return "pca";
    case EmbedMethod::Tsne: return "tsne";
  }
  return "?";
}

inline std::optional<EmbedMethod> parse_embed(std::string_view s) {
  for (auto m : {EmbedMethod::None, EmbedMethod::Pca, EmbedMethod::Tsne})
    if (embed_name(m) == s) return m;
  return std::nullopt;
}

struct ExperimentConfig {
  Experiment experiment = Experiment::RegimeSweep;
  std::uint64_t seed = 1;
  std::string output_dir = "nocnet_out";

  std::size_t classes = 16;
  std::size_t per_class = 100;
  std::size_t image_size = 32;
  std::optional<bool> motion;  // unset: on for fusion only
  bool motion_correlated = true;
  double shift = 1.0;
  std::optional<std::uint64_t> data_seed;  // unset: derived from seed
  double test_fraction = 0.2;

  std::size_t feature_channels = 16;

  std::vector<ArchId> archs;  // empty: every arch for arch_sweep, else 1C3fc
  double width_scale = 1.0 / 32.0;

  std::vector<Regime> regimes;  // empty: every regime for regime_sweep, else 3LR
  Hyper hyper;
  std::size_t partitions = 3;

  BlurSpec blur;
  std::vector<Combo> combos;  // empty: all four

  double flow_lambda = 0.5;
  std::size_t flow_iterations = 100;

  double svm_c = 1.0;
  std::size_t svm_epochs = 20;

  EmbedMethod embed = EmbedMethod::Tsne;
  std::size_t embed_points = 400;
  double perplexity = 30.0;
  std::size_t tsne_iterations = 1000;

  bool uses_motion() const { return motion.value_or(experiment == Experiment::Fusion); }

  std::vector<ArchId> effective_archs() const {
    if (!archs.empty()) return archs;
    if (experiment == Experiment::ArchSweep) return {ArchId::C0F3, ArchId::C1F3, ArchId::M1};
    return {ArchId::C1F3};
  }
  std::vector<Regime> effective_regimes() const {
    if (!regimes.empty()) return regimes;
    if (experiment == Experiment::RegimeSweep) return {Regime::Sgd1LR, Regime::RmsProp2LR, Regime::CovPrecond3LR};
    return {Regime::CovPrecond3LR};
  }
  std::vector<Combo> effective_combos() const { return combos.empty() ? all_combos() : combos; }

  std::uint64_t dataset_seed() const { return data_seed.value_or(mix_seed(seed, {0xda7a})); }
};

namespace detail {

inline std::string trim(std::string_view s) {
  auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

inline std::vector<std::string> split_list(std::string_view s) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (start <= s.size()) {
    auto comma = s.find(',', start);
    if (comma == std::string_view::npos) comma = s.size();
    auto item = trim(s.substr(start, comma - start));
    if (!item.empty()) out.push_back(std::move(item));
    start = comma + 1;
  }
  return out;
}

template <class T>
T parse_number(const std::string& key, const std::string& v, std::size_t line) {
  T out{};
  auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size()) throw ConfigError(key + ": not a number: '" + v + "'", line);
  return out;
}

inline bool parse_bool(const std::string& key, const std::string& v, std::size_t line) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError(key + ": expected true/false, got '" + v + "'", line);
}

// Accepts either a decimal or a ratio such as 1/32.
inline double parse_real(const std::string& key, const std::string& v, std::size_t line) {
  auto slash = v.find('/');
  if (slash == std::string::npos) return parse_number<double>(key, v, line);
  const double den = parse_number<double>(key, trim(v.substr(slash + 1)), line);
  if (den == 0.0) throw ConfigError(key + ": zero denominator", line);
  return parse_number<double>(key, trim(v.substr(0, slash)), line) / den;
}

template <class T, class Parse>
std::vector<T> parse_enum_list(const std::string& key, const std::string& v, std::size_t line, Parse parse) {
  std::vector<T> out;
  for (const auto& item : split_list(v)) {
    auto e = parse(item);
    if (!e) throw ConfigError(key + ": unknown value '" + item + "'", line);
    out.push_back(*e);
  }
  if (out.empty()) throw ConfigError(key + ": empty list", line);
  return out;
}

using Setter = std::function<void(ExperimentConfig&, const std::string& value, std::size_t line)>;

inline const std::map<std::string, Setter>& config_setters() {
  using C = ExperimentConfig;
  using S = const std::string&;
  using L = std::size_t;
  static const std::map<std::string, Setter> table{
      {"experiment",
       [](C& c, S v, L l) {
         auto e = parse_experiment(v);
         if (!e) throw ConfigError("experiment: unknown value '" + v + "'", l);
         c.experiment = *e;
       }},
      {"seed", [](C& c, S v, L l) { c.seed = parse_number<std::uint64_t>("seed", v, l); }},
      {"output_dir",
       [](C& c, S v, L l) {
         if (v.empty()) throw ConfigError("output_dir: empty", l);
         c.output_dir = v;
       }},
      {"data.classes", [](C& c, S v, L l) { c.classes = parse_number<std::size_t>("data.classes", v, l); }},
      {"data.per_class", [](C& c, S v, L l) { c.per_class = parse_number<std::size_t>("data.per_class", v, l); }},
      {"data.size", [](C& c, S v, L l) { c.image_size = parse_number<std::size_t>("data.size", v, l); }},
      {"data.motion", [](C& c, S v, L l) { c.motion = parse_bool("data.motion", v, l); }},
      {"data.motion_correlated",
       [](C& c, S v, L l) { c.motion_correlated = parse_bool("data.motion_correlated", v, l); }},
      {"data.shift", [](C& c, S v, L l) { c.shift = parse_real("data.shift", v, l); }},
      {"data.seed", [](C& c, S v, L l) { c.data_seed = parse_number<std::uint64_t>("data.seed", v, l); }},
      {"data.test_fraction", [](C& c, S v, L l) { c.test_fraction = parse_real("data.test_fraction", v, l); }},
      {"backbone.channels",
       [](C& c, S v, L l) { c.feature_channels = parse_number<std::size_t>("backbone.channels", v, l); }},
      {"arch",
       [](C& c, S v, L l) {
         c.archs = parse_enum_list<ArchId>("arch", v, l, [](const std::string& s) -> std::optional<ArchId> {
           auto a = parse_arch(s);
           if (a && *a == ArchId::Backbone) return std::nullopt;
           return a;
         });
       }},
      {"arch.width_scale", [](C& c, S v, L l) { c.width_scale = parse_real("arch.width_scale", v, l); }},
      {"regime",
       [](C& c, S v, L l) {
         c.regimes = parse_enum_list<Regime>("regime", v, l, [](const std::string& s) { return parse_regime(s); });
       }},
      {"regime.alpha_start",
       [](C& c, S v, L l) { c.hyper.alpha_start = parse_real("regime.alpha_start", v, l); }},
      {"regime.alpha_end", [](C& c, S v, L l) { c.hyper.alpha_end = parse_real("regime.alpha_end", v, l); }},
      {"regime.beta", [](C& c, S v, L l) { c.hyper.beta = parse_real("regime.beta", v, l); }},
      {"regime.gamma", [](C& c, S v, L l) { c.hyper.gamma = parse_real("regime.gamma", v, l); }},
      {"regime.epsilon", [](C& c, S v, L l) { c.hyper.epsilon = parse_real("regime.epsilon", v, l); }},
      {"regime.standard_ewma",
       [](C& c, S v, L l) { c.hyper.standard_ewma = parse_bool("regime.standard_ewma", v, l); }},
      {"regime.iterations",
       [](C& c, S v, L l) { c.hyper.iterations = parse_number<std::size_t>("regime.iterations", v, l); }},
      {"regime.batch_size",
       [](C& c, S v, L l) { c.hyper.batch_size = parse_number<std::size_t>("regime.batch_size", v, l); }},
      {"regime.partitions",
       [](C& c, S v, L l) { c.partitions = parse_number<std::size_t>("regime.partitions", v, l); }},
      {"blur.kind",
       [](C& c, S v, L l) {
         auto k = parse_blur_kind(v);
         if (!k) throw ConfigError("blur.kind: unknown value '" + v + "'", l);
         c.blur.kind = *k;
       }},
      {"blur.sigma", [](C& c, S v, L l) { c.blur.sigma = parse_real("blur.sigma", v, l); }},
      {"blur.length", [](C& c, S v, L l) { c.blur.length = parse_number<std::size_t>("blur.length", v, l); }},
      {"blur.angle", [](C& c, S v, L l) { c.blur.angle_deg = parse_real("blur.angle", v, l); }},
      {"combo",
       [](C& c, S v, L l) {
         c.combos = parse_enum_list<Combo>("combo", v, l, [](const std::string& s) { return parse_combo(s); });
       }},
      {"flow.lambda", [](C& c, S v, L l) { c.flow_lambda = parse_real("flow.lambda", v, l); }},
      {"flow.iterations",
       [](C& c, S v, L l) { c.flow_iterations = parse_number<std::size_t>("flow.iterations", v, l); }},
      {"svm.c", [](C& c, S v, L l) { c.svm_c = parse_real("svm.c", v, l); }},
      {"svm.epochs", [](C& c, S v, L l) { c.svm_epochs = parse_number<std::size_t>("svm.epochs", v, l); }},
      {"embed.method",
       [](C& c, S v, L l) {
         auto m = parse_embed(v);
         if (!m) throw ConfigError("embed.method: unknown value '" + v + "'", l);
         c.embed = *m;
       }},
      {"embed.points", [](C& c, S v, L l) { c.embed_points = parse_number<std::size_t>("embed.points", v, l); }},
      {"embed.perplexity", [](C& c, S v, L l) { c.perplexity = parse_real("embed.perplexity", v, l); }},
      {"embed.iterations",
       [](C& c, S v, L l) { c.tsne_iterations = parse_number<std::size_t>("embed.iterations", v, l); }},
  };
  return table;
}

inline void require(bool ok, const std::string& what) {
  if (!ok) throw ConfigError(what);
}

}  // namespace detail

/// Throws ConfigError on the first violated bound.
inline void validate_config(const ExperimentConfig& c) {
  using detail::require;
  require(c.classes >= 2 && c.classes <= kMaxClasses, "data.classes must be in [2,16]");
  require(c.per_class >= 2, "data.per_class must be at least 2");
  require(c.image_size >= 16, "data.size must be at least 16");
  require(c.shift >= 0.0, "data.shift must be non-negative");
  require(c.test_fraction > 0.0 && c.test_fraction < 1.0, "data.test_fraction must be in (0,1)");
  require(c.feature_channels >= 1, "backbone.channels must be positive");
  require(c.width_scale > 0.0 && c.width_scale <= 1.0, "arch.width_scale must be in (0,1]");
  require(std::lround(4096.0 * c.width_scale) >= static_cast<long>(c.classes),
          "arch.width_scale leaves fewer hidden units than classes");
  const auto& h = c.hyper;
  require(h.alpha_start > 0.0 && h.alpha_end > 0.0, "regime learning rates must be positive");
  require(h.beta > 0.0 && h.beta < 1.0, "regime.beta must be in (0,1)");
  require(h.gamma > 0.0 && h.gamma < 1.0, "regime.gamma must be in (0,1)");
  require(h.epsilon > 0.0, "regime.epsilon must be positive");
  require(h.iterations >= 1, "regime.iterations must be at least 1");
  require(h.batch_size >= 1, "regime.batch_size must be at least 1");
  require(c.partitions >= 1, "regime.partitions must be at least 1");
  require(c.blur.sigma > 0.0, "blur.sigma must be positive");
  require(c.blur.length >= 1, "blur.length must be at least 1");
  require(c.flow_lambda > 0.0, "flow.lambda must be positive");
  require(c.flow_iterations >= 1, "flow.iterations must be at least 1");
  require(c.svm_c > 0.0, "svm.c must be positive");
  require(c.svm_epochs >= 1, "svm.epochs must be at least 1");
  require(c.perplexity >= 5.0, "embed.perplexity must be at least 5");
  require(c.embed == EmbedMethod::None || c.embed_points >= 3, "embed.points must be at least 3");
  require(c.tsne_iterations >= 1, "embed.iterations must be at least 1");
  if (c.experiment == Experiment::Fusion) require(c.uses_motion(), "fusion needs data.motion = true");
}

/// Applies one `key = value` assignment. `line` is reported in errors (0 for flags).
inline void apply_setting(ExperimentConfig& c, const std::string& key, const std::string& value, std::size_t line = 0) {
  const auto& table = detail::config_setters();
  auto it = table.find(key);
  if (it == table.end()) throw ConfigError("unknown key '" + key + "'", line);
  it->second(c, value, line);
}

/// `key=value` as given to --set.
inline std::pair<std::string, std::string> split_assignment(std::string_view text, std::size_t line = 0) {
  auto eq = text.find('=');
  if (eq == std::string_view::npos) throw ConfigError("expected key = value, got '" + std::string(text) + "'", line);
  auto key = detail::trim(text.substr(0, eq));
  if (key.empty()) throw ConfigError("missing key", line);
  return {key, detail::trim(text.substr(eq + 1))};
}

struct ConfigOverrides {
  std::optional<std::uint64_t> seed;
  std::vector<std::string> settings;  // key=value, applied in order after the file
};

inline ExperimentConfig parse_config_text(std::string_view text, const ConfigOverrides& flags = {}) {
  ExperimentConfig c;
  std::istringstream in{std::string(text)};
  std::string raw;
  std::size_t line = 0;
  while (std::getline(in, raw)) {
    ++line;
    auto hash = raw.find('#');
    auto body = detail::trim(std::string_view(raw).substr(0, hash));
    if (body.empty()) continue;
    auto [key, value] = split_assignment(body, line);
    apply_setting(c, key, value, line);
  }
  for (const auto& s : flags.settings) {
    auto [key, value] = split_assignment(s);
    apply_setting(c, key, value);
  }
  if (flags.seed) c.seed = *flags.seed;
  validate_config(c);
  return c;
}

inline ExperimentConfig parse_config(const std::string& path, const ConfigOverrides& flags = {}) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read config " + path);
  std::ostringstream text;
  text << in.rdbuf();
  return parse_config_text(text.str(), flags);
}

namespace detail {

inline std::string fmt_real(double v) {
  char buf[32];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

template <class T, class Name>
std::string join_names(const std::vector<T>& xs, Name name) {
  std::string out;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    if (i) out += ", ";
    out += std::string(name(xs[i]));
  }
  return out;
}

}  // namespace detail

/// Every key with its effective value; parses back to an equivalent config.
inline std::string config_text(const ExperimentConfig& c) {
  using detail::fmt_real;
  std::ostringstream os;
  auto put = [&](const char* key, const std::string& v) { os << key << " = " << v << '\n'; };
  auto boolean = [](bool b) { return std::string(b ? "true" : "false"); };
  put("experiment", std::string(experiment_name(c.experiment)));
  put("seed", std::to_string(c.seed));
  put("output_dir", c.output_dir);
  put("data.classes", std::to_string(c.classes));
  put("data.per_class", std::to_string(c.per_class));
  put("data.size", std::to_string(c.image_size));
  put("data.motion", boolean(c.uses_motion()));
  put("data.motion_correlated", boolean(c.motion_correlated));
  put("data.shift", fmt_real(c.shift));
  put("data.seed", std::to_string(c.dataset_seed()));
  put("data.test_fraction", fmt_real(c.test_fraction));
  put("backbone.channels", std::to_string(c.feature_channels));
  put("arch", detail::join_names(c.effective_archs(), arch_name));
  put("arch.width_scale", fmt_real(c.width_scale));
  put("regime", detail::join_names(c.effective_regimes(), regime_name));
  put("regime.alpha_start", fmt_real(c.hyper.alpha_start));
  put("regime.alpha_end", fmt_real(c.hyper.alpha_end));
  put("regime.beta", fmt_real(c.hyper.beta));
  put("regime.gamma", fmt_real(c.hyper.gamma));
  put("regime.epsilon", fmt_real(c.hyper.epsilon));
  put("regime.standard_ewma", boolean(c.hyper.standard_ewma));
  put("regime.iterations", std::to_string(c.hyper.iterations));
  put("regime.batch_size", std::to_string(c.hyper.batch_size));
  put("regime.partitions", std::to_string(c.partitions));
  put("blur.kind", std::string(blur_kind_name(c.blur.kind)));
  put("blur.sigma", fmt_real(c.blur.sigma));
  put("blur.length", std::to_string(c.blur.length));
  if (c.blur.angle_deg) put("blur.angle", fmt_real(*c.blur.angle_deg));
  put("combo", detail::join_names(c.effective_combos(), combo_name));
  put("flow.lambda", fmt_real(c.flow_lambda));
  put("flow.iterations", std::to_string(c.flow_iterations));
  put("svm.c", fmt_real(c.svm_c));
  put("svm.epochs", std::to_string(c.svm_epochs));
  put("embed.method", std::string(embed_name(c.embed)));
  put("embed.points", std::to_string(c.embed_points));
  put("embed.perplexity", fmt_real(c.perplexity));
  put("embed.iterations", std::to_string(c.tsne_iterations));
  return os.str();
}

}  // namespace nocnet
