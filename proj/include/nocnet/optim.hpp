#pragma once

// Training regimes for the classifier heads:
//   1LR  linear-decay SGD, partitions trained one after another;
//   2LR  RMSProp, partitions trained one after another;
//   3LR  covariance-preconditioned steps, one independent clone per
//        partition, averaged once at the end.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <future>
#include <numeric>
#include <optional>
#include <span>
#include <string_view>
#include <utility>
#include <vector>

#include "nocnet/error.hpp"
#include "nocnet/netzoo.hpp"
#include "nocnet/random.hpp"
#include "nocnet/tensor.hpp"

namespace nocnet {

struct Batch {
  Tensor inputs;
  std::vector<std::size_t> labels;
};

/// Inputs stacked along axis 0 with one label per row.
struct LabeledSet {
  Tensor inputs;
  std::vector<std::size_t> labels;

  std::size_t size() const noexcept { return labels.size(); }

  Batch gather(std::span<const std::size_t> rows) const {
    if (inputs.rank() < 2 || inputs.dim(0) != labels.size())
      throw SizeMismatch("labeled set inputs and labels disagree");
    const std::size_t row = inputs.size() / inputs.dim(0);
    std::vector<double> data;
    data.reserve(rows.size() * row);
    std::vector<std::size_t> lab;
    lab.reserve(rows.size());
    auto src = inputs.data();
    for (auto r : rows) {
      if (r >= labels.size()) throw InvalidValue("row index out of range");
      data.insert(data.end(), src.begin() + static_cast<std::ptrdiff_t>(r * row),
                  src.begin() + static_cast<std::ptrdiff_t>((r + 1) * row));
      lab.push_back(labels[r]);
    }
    Shape shape = inputs.shape();
    shape[0] = rows.size();
    return {Tensor::create(std::move(shape), std::move(data)), std::move(lab)};
  }
};

/// Per-feature z-scoring over axis 0; fit on training rows, apply anywhere.
struct FeatureScaler {
  std::vector<double> mean, scale;

  static FeatureScaler fit(const Tensor& x) {
    if (x.rank() < 2) throw SizeMismatch("FeatureScaler needs a batch axis");
    const std::size_t n = x.dim(0), d = x.size() / n;
    FeatureScaler s{std::vector<double>(d, 0.0), std::vector<double>(d, 0.0)};
    auto v = x.data();
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < d; ++j) s.mean[j] += v[i * d + j] / static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < d; ++j) s.scale[j] += (v[i * d + j] - s.mean[j]) * (v[i * d + j] - s.mean[j]) / static_cast<double>(n);
    for (auto& sc : s.scale) sc = sc > 1e-12 ? std::sqrt(sc) : 1.0;  // constant features are only centered
    return s;
  }

  Tensor apply(const Tensor& x) const {
    if (x.rank() < 2 || x.size() / x.dim(0) != mean.size()) throw SizeMismatch("FeatureScaler width mismatch");
    std::vector<double> out(x.data().begin(), x.data().end());
    const std::size_t d = mean.size();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = (out[i] - mean[i % d]) / scale[i % d];
    return Tensor::create(x.shape(), std::move(out));
  }
};

// ---------------------------------------------------------------------------
// Step rules
// ---------------------------------------------------------------------------

struct Schedule {
  double alpha_start = 0.01;
  double alpha_end = 0.005;
  std::size_t total_steps = 100;
};

inline double schedule_alpha(const Schedule& s, std::size_t t) {
  if (!(s.alpha_start >= s.alpha_end && s.alpha_end > 0.0) || s.total_steps == 0)
    throw InvalidValue("schedule needs alpha_start >= alpha_end > 0 and positive total_steps");
  if (t > s.total_steps) throw InvalidValue("schedule step " + std::to_string(t) + " out of range");
  if (t == s.total_steps) return s.alpha_end;
  return s.alpha_start + (s.alpha_end - s.alpha_start) * static_cast<double>(t) / static_cast<double>(s.total_steps);
}

/// theta - alpha * grad.
inline Tensor sgd_step(const Tensor& theta, const Tensor& grad, double alpha) {
  if (theta.shape() != grad.shape()) throw SizeMismatch("sgd_step: gradient shape differs from parameter");
  if (!(alpha > 0.0)) throw InvalidValue("sgd_step: alpha must be positive");
  auto th = theta.data(), g = grad.data();
  std::vector<double> out(th.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = th[i] - alpha * g[i];
  return Tensor::create(theta.shape(), std::move(out));
}

/// Accumulators for one parameter: psi for RMSProp, mu / c2 for the
/// covariance preconditioner.
struct PreconditionerState {
  Tensor psi;
  Tensor mu;
  Tensor c2;
  std::size_t step = 0;
  double beta = 0.9;
  double gamma = 0.9;
  double epsilon = 1e-8;
  /// Use (1-gamma) instead of gamma*(1-gamma) as the variance weight.
  bool standard_ewma = false;

  static PreconditionerState zeros_like(const Tensor& theta, double beta = 0.9, double gamma = 0.9,
                                        double epsilon = 1e-8, bool standard_ewma = false) {
    PreconditionerState s;
    s.psi = Tensor::zeros(theta.shape());
    s.mu = Tensor::zeros(theta.shape());
    s.c2 = Tensor::zeros(theta.shape());
    s.beta = beta;
    s.gamma = gamma;
    s.epsilon = epsilon;
    s.standard_ewma = standard_ewma;
    return s;
  }
};

namespace detail {

inline void check_state(const char* op, const Tensor& theta, const Tensor& grad, const Tensor& acc) {
  if (theta.shape() != grad.shape() || theta.shape() != acc.shape())
    throw SizeMismatch(std::string(op) + ": parameter, gradient and state shapes differ");
}

}  // namespace detail

/// psi = beta*psi + (1-beta)*g^2;  theta -= alpha*g/(sqrt(psi)+eps).
inline std::pair<Tensor, PreconditionerState> rmsprop_step(const Tensor& theta, const Tensor& grad,
                                                           PreconditionerState state, double alpha) {
  detail::check_state("rmsprop_step", theta, grad, state.psi);
  auto th = theta.data(), g = grad.data(), ps = state.psi.data();
  std::vector<double> psi(th.size()), out(th.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    psi[i] = state.beta * ps[i] + (1.0 - state.beta) * g[i] * g[i];
    out[i] = th[i] - alpha * g[i] / (std::sqrt(psi[i]) + state.epsilon);
  }
  state.psi = Tensor::create(theta.shape(), std::move(psi));
  ++state.step;
  return {Tensor::create(theta.shape(), std::move(out)), std::move(state)};
}

/// c2 = gamma*c2 + gamma*(1-gamma)*(g-mu)^2;  mu = gamma*mu + (1-gamma)*g;
/// theta -= alpha*g/(sqrt(c2)+eps). c2 is updated with the previous mu.
inline std::pair<Tensor, PreconditionerState> covprecond_step(const Tensor& theta, const Tensor& grad,
                                                              PreconditionerState state, double alpha) {
  detail::check_state("covprecond_step", theta, grad, state.mu);
  detail::check_state("covprecond_step", theta, grad, state.c2);
  const double gm = state.gamma;
  const double spread = state.standard_ewma ? (1.0 - gm) : gm * (1.0 - gm);
  auto th = theta.data(), g = grad.data(), mu0 = state.mu.data(), c20 = state.c2.data();
  std::vector<double> mu(th.size()), c2(th.size()), out(th.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double dev = g[i] - mu0[i];
    c2[i] = gm * c20[i] + spread * dev * dev;
    mu[i] = gm * mu0[i] + (1.0 - gm) * g[i];
    out[i] = th[i] - alpha * g[i] / (std::sqrt(c2[i]) + state.epsilon);
  }
  state.mu = Tensor::create(theta.shape(), std::move(mu));
  state.c2 = Tensor::create(theta.shape(), std::move(c2));
  ++state.step;
  return {Tensor::create(theta.shape(), std::move(out)), std::move(state)};
}

/// Parameterwise arithmetic mean of structurally identical models.
inline Model average_params(std::span<const Model> models) {
  if (models.empty()) throw InvalidValue("average_params: no models");
  for (const auto& m : models)
    if (!m.same_structure(models.front())) throw ArchMismatch("average_params: models differ in structure");
  const std::size_t np = models.front().params().size();
  std::vector<Tensor> mean;
  mean.reserve(np);
  const double inv = 1.0 / static_cast<double>(models.size());
  for (std::size_t p = 0; p < np; ++p) {
    const auto& shape = models.front().params()[p].value.shape();
    std::vector<double> acc(shape_size(shape), 0.0);
    for (const auto& m : models) {
      auto v = m.params()[p].value.data();
      for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += v[i];
    }
    for (auto& a : acc) a *= inv;
    mean.push_back(Tensor::create(shape, std::move(acc)));
  }
  Model out = models.front();
  out.set_param_values(mean);
  return out;
}

// ---------------------------------------------------------------------------
// Regimes
// ---------------------------------------------------------------------------

enum class Regime { Sgd1LR, RmsProp2LR, CovPrecond3LR };

inline std::string_view regime_name(Regime r) {
  switch (r) {
    case Regime::Sgd1LR: return "1LR";
    case Regime::RmsProp2LR: return "2LR";
    case Regime::CovPrecond3LR: return "3LR";
  }
  return "?";
}

inline std::optional<Regime> parse_regime(std::string_view s) {
  if (s == "1LR") return Regime::Sgd1LR;
  if (s == "2LR") return Regime::RmsProp2LR;
  if (s == "3LR") return Regime::CovPrecond3LR;
  return std::nullopt;
}

struct Hyper {
  double alpha_start = 0.01;
  double alpha_end = 0.005;
  double beta = 0.9;
  double gamma = 0.9;
  double epsilon = 1e-8;
  bool standard_ewma = false;
  /// Mini-batch steps per partition.
  std::size_t iterations = 500;
  std::size_t batch_size = 32;
  std::uint64_t seed = 1;
};

struct LossRecord {
  std::size_t step;
  std::size_t partition;
  double alpha;
  double loss;
};

/// Mean recorded loss over the last `window` step indices (all partitions).
inline double final_window_loss(std::span<const LossRecord> trace, std::size_t window = 500) {
  if (trace.empty()) throw InvalidValue("final_window_loss: empty trace");
  if (window == 0) throw InvalidValue("final_window_loss: window must be positive");
  std::size_t last = 0;
  for (const auto& r : trace) last = std::max(last, r.step);
  const std::size_t first = last + 1 > window ? last + 1 - window : 0;
  double total = 0.0;
  std::size_t n = 0;
  for (const auto& r : trace)
    if (r.step >= first) {
      total += r.loss;
      ++n;
    }
  return total / static_cast<double>(n);
}

/// A model being trained plus its per-parameter accumulators and schedule position.
struct TrainingSession {
  Model model;
  std::vector<PreconditionerState> states;
  Schedule schedule;
  std::size_t step = 0;

  static TrainingSession start(Model model, const Hyper& h, std::size_t total_steps) {
    TrainingSession s{std::move(model), {}, {h.alpha_start, h.alpha_end, std::max<std::size_t>(1, total_steps)}, 0};
    for (const auto& p : s.model.params())
      s.states.push_back(PreconditionerState::zeros_like(p.value, h.beta, h.gamma, h.epsilon, h.standard_ewma));
    return s;
  }
};

/// Mean cross-entropy of `model` on `batch` and its parameter gradients.
inline std::pair<double, std::vector<Tensor>> loss_and_gradients(const Model& model, const Batch& batch) {
  Trace trace;
  const auto values = model.param_values();
  const auto vars = trace.variables(values);
  auto loss = softmax_cross_entropy(forward(model, batch.inputs, vars), batch.labels);
  const double value = loss.item();
  auto grads = trace.backward(loss);
  std::vector<Tensor> out;
  out.reserve(vars.size());
  for (const auto& v : vars) out.push_back(grads.at(v));
  return {value, std::move(out)};
}

/// One regime step per batch. Loss is recorded before each update.
inline std::vector<LossRecord> train_epoch(TrainingSession& session, std::span<const Batch> batches, Regime regime,
                                           std::size_t partition = 0) {
  if (batches.empty()) throw InvalidValue("train_epoch: no batches");
  std::vector<LossRecord> trace;
  trace.reserve(batches.size());
  for (const auto& batch : batches) {
    const double alpha = schedule_alpha(session.schedule, std::min(session.step, session.schedule.total_steps));
    auto [loss, grads] = loss_and_gradients(session.model, batch);
    auto params = session.model.param_values();
    for (std::size_t i = 0; i < params.size(); ++i) {
      switch (regime) {
        case Regime::Sgd1LR:
          params[i] = sgd_step(params[i], grads[i], alpha);
          break;
        case Regime::RmsProp2LR:
          std::tie(params[i], session.states[i]) = rmsprop_step(params[i], grads[i], session.states[i], alpha);
          break;
        case Regime::CovPrecond3LR:
          std::tie(params[i], session.states[i]) = covprecond_step(params[i], grads[i], session.states[i], alpha);
          break;
      }
    }
    session.model.set_param_values(params);
    trace.push_back({session.step, partition, alpha, loss});
    ++session.step;
  }
  return trace;
}

struct TrainResult {
  Model model;
  std::vector<LossRecord> trace;
};

/// Fresh accumulators; the schedule spans exactly `batches`.
inline TrainResult train_epoch(const Model& model, std::span<const Batch> batches, Regime regime, const Hyper& h) {
  auto session = TrainingSession::start(model, h, batches.size());
  auto trace = train_epoch(session, batches, regime);
  return {std::move(session.model), std::move(trace)};
}

struct PartitionPlan {
  std::size_t num_partitions = 3;
  std::vector<std::size_t> assignments;  // partition per sample
  std::size_t iterations = 500;
  /// Batch-sampling seed per partition; derived from Hyper::seed when empty.
  std::vector<std::uint64_t> seeds;

  std::vector<std::size_t> members(std::size_t p) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < assignments.size(); ++i)
      if (assignments[i] == p) out.push_back(i);
    return out;
  }

  void validate(std::size_t samples) const {
    if (num_partitions == 0) throw InvalidPlan("plan needs at least one partition");
    if (assignments.size() != samples)
      throw InvalidPlan("plan assigns " + std::to_string(assignments.size()) + " of " + std::to_string(samples) +
                        " samples");
    if (iterations == 0) throw InvalidPlan("plan needs at least one iteration");
    if (!seeds.empty() && seeds.size() != num_partitions) throw InvalidPlan("one seed per partition required");
    std::vector<std::size_t> counts(num_partitions, 0);
    for (auto a : assignments) {
      if (a >= num_partitions) throw InvalidPlan("assignment outside partition range");
      ++counts[a];
    }
    for (std::size_t p = 0; p < num_partitions; ++p)
      if (counts[p] == 0) throw InvalidPlan("partition " + std::to_string(p) + " is empty");
  }

  std::uint64_t seed_for(std::size_t p, std::uint64_t base) const {
    return seeds.empty() ? mix_seed(base, {p}) : seeds[p];
  }
};

/// Stratified split: each class's samples are shuffled and dealt round-robin.
inline PartitionPlan make_partition_plan(std::span<const std::size_t> labels, std::size_t num_partitions,
                                         std::size_t iterations, std::uint64_t seed) {
  if (num_partitions == 0) throw InvalidPlan("plan needs at least one partition");
  PartitionPlan plan;
  plan.num_partitions = num_partitions;
  plan.iterations = iterations;
  plan.assignments.assign(labels.size(), 0);
  const std::size_t classes = labels.empty() ? 0 : *std::max_element(labels.begin(), labels.end()) + 1;
  auto rng = make_rng(seed, {0x9a27});
  std::size_t next = 0;
  for (std::size_t c = 0; c < classes; ++c) {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < labels.size(); ++i)
      if (labels[i] == c) idx.push_back(i);
    std::shuffle(idx.begin(), idx.end(), rng);
    for (auto i : idx) plan.assignments[i] = next++ % num_partitions;
  }
  plan.validate(labels.size());
  return plan;
}

/// `count` mini-batches drawn from `rows` by repeated seeded shuffles.
inline std::vector<Batch> sample_batches(const LabeledSet& data, std::span<const std::size_t> rows,
                                         std::size_t count, std::size_t batch_size, std::uint64_t seed) {
  if (rows.empty()) throw InvalidPlan("cannot sample batches from an empty partition");
  if (batch_size == 0) throw InvalidValue("batch_size must be positive");
  auto rng = make_rng(seed, {0xba7c});
  std::vector<std::size_t> order(rows.begin(), rows.end());
  std::size_t cursor = order.size();
  std::vector<Batch> out;
  out.reserve(count);
  const std::size_t take = std::min(batch_size, order.size());
  for (std::size_t b = 0; b < count; ++b) {
    std::vector<std::size_t> pick;
    pick.reserve(take);
    while (pick.size() < take) {
      if (cursor == order.size()) {
        std::shuffle(order.begin(), order.end(), rng);
        cursor = 0;
      }
      pick.push_back(order[cursor++]);
    }
    out.push_back(data.gather(pick));
  }
  return out;
}

/// 1LR / 2LR: one model carried through partitions 0, 1, 2, ... in order.
inline TrainResult train_sequential(const Model& init, const LabeledSet& data, const PartitionPlan& plan,
                                    Regime regime, const Hyper& h) {
  plan.validate(data.size());
  auto session = TrainingSession::start(init, h, plan.iterations * plan.num_partitions);
  std::vector<LossRecord> trace;
  for (std::size_t p = 0; p < plan.num_partitions; ++p) {
    const auto rows = plan.members(p);
    const auto batches = sample_batches(data, rows, plan.iterations, h.batch_size, plan.seed_for(p, h.seed));
    auto part = train_epoch(session, batches, regime, p);
    trace.insert(trace.end(), part.begin(), part.end());
  }
  return {std::move(session.model), std::move(trace)};
}

struct PartitionedResult {
  Model model;
  std::vector<Model> clones;
  std::vector<LossRecord> trace;
};

/// 3LR: every partition trains its own clone of `init` with covariance
/// preconditioning (concurrently), then the clones are averaged.
inline PartitionedResult train_partitioned(const Model& init, const LabeledSet& data, const PartitionPlan& plan,
                                           const Hyper& h) {
  plan.validate(data.size());
  std::vector<std::future<TrainResult>> jobs;
  for (std::size_t p = 0; p < plan.num_partitions; ++p) {
    jobs.push_back(std::async(std::launch::async, [&, p] {
      const auto rows = plan.members(p);
      const auto batches = sample_batches(data, rows, plan.iterations, h.batch_size, plan.seed_for(p, h.seed));
      auto session = TrainingSession::start(init, h, plan.iterations);
      auto trace = train_epoch(session, batches, Regime::CovPrecond3LR, p);
      return TrainResult{std::move(session.model), std::move(trace)};
    }));
  }
  PartitionedResult out{init, {}, {}};
  for (auto& j : jobs) {
    auto r = j.get();
    out.clones.push_back(std::move(r.model));
    out.trace.insert(out.trace.end(), r.trace.begin(), r.trace.end());
  }
  out.model = average_params(out.clones);
  return out;
}

/// Dispatches to the sequential or partitioned driver.
inline TrainResult train_regime(const Model& init, const LabeledSet& data, const PartitionPlan& plan, Regime regime,
                                const Hyper& h) {
  if (regime == Regime::CovPrecond3LR) {
    auto r = train_partitioned(init, data, plan, h);
    return {std::move(r.model), std::move(r.trace)};
  }
  return train_sequential(init, data, plan, regime, h);
}

/// Mean cross-entropy over a whole set, evaluated in chunks.
inline double dataset_loss(const Model& model, const LabeledSet& data, std::size_t chunk = 256) {
  double total = 0.0;
  std::vector<std::size_t> rows;
  for (std::size_t start = 0; start < data.size(); start += chunk) {
    rows.clear();
    for (std::size_t i = start; i < std::min(data.size(), start + chunk); ++i) rows.push_back(i);
    const auto b = data.gather(rows);
    total += softmax_cross_entropy(forward(model, b.inputs), b.labels).item() * static_cast<double>(rows.size());
  }
  return total / static_cast<double>(data.size());
}

/// Argmax of the logits, row by row.
inline std::vector<std::size_t> predict_argmax(const Tensor& logits) {
  const std::size_t n = logits.dim(0), k = logits.dim(1);
  std::vector<std::size_t> out(n);
  auto L = logits.data();
  for (std::size_t i = 0; i < n; ++i)
    out[i] = static_cast<std::size_t>(std::max_element(&L[i * k], &L[i * k] + k) - &L[i * k]);
  return out;
}

}  // namespace nocnet
