#include "nocnet/netzoo.hpp"
#include "nocnet/optim.hpp"

#include <gtest/gtest.h>

#include <random>
#include <sstream>

using namespace nocnet;

namespace {

Tensor random_batch(Shape shape, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> d(-1.0, 1.0);
  std::vector<double> v(shape_size(shape));
  for (auto& x : v) x = d(rng);
  return Tensor::create(std::move(shape), std::move(v));
}

bool all_nonzero(const Tensor& t) {
  for (double v : t.data())
    if (v != 0.0) return true;
  return false;
}

}  // namespace

TEST(BuildNoc, C1F3ScaledWidths) {
  auto m = build_noc({ArchId::C1F3, {8, 8, 8}, 16, 1.0 / 32}, 1);
  EXPECT_EQ(m.layer_shape(m.penultimate_index()), (Shape{128}));
  EXPECT_EQ(m.output_shape(), (Shape{16}));
  EXPECT_EQ(layer_kind(m.layers().front()), "conv");
  auto logits = forward(m, random_batch({2, 8, 8, 8}, 3));
  EXPECT_EQ(logits.shape(), (Shape{2, 16}));
}

TEST(BuildNoc, LayerLists) {
  auto c0 = build_noc({ArchId::C0F3, {8, 4, 4}, 16, 1.0 / 32}, 1);
  ASSERT_EQ(c0.layers().size(), 6u);
  const char* expected[] = {"flatten", "fc", "relu", "fc", "relu", "fc"};
  for (std::size_t i = 0; i < 6; ++i) EXPECT_EQ(layer_kind(c0.layers()[i]), expected[i]);
  EXPECT_EQ(c0.penultimate_index(), 4u);

  auto m1 = build_noc({ArchId::M1, {8, 4, 4}, 16, 1.0 / 32}, 1);
  const char* m1_expected[] = {"conv", "relu", "maxpool", "conv", "relu", "flatten",
                               "fc",   "relu", "fc",      "relu", "fc"};
  ASSERT_EQ(m1.layers().size(), 11u);
  for (std::size_t i = 0; i < 11; ++i) EXPECT_EQ(layer_kind(m1.layers()[i]), m1_expected[i]);
  EXPECT_EQ(m1.penultimate_index(), 9u);
}

TEST(BuildNoc, SameSeedSameParameters) {
  NocArch arch{ArchId::M1, {4, 6, 6}, 10, 1.0 / 16};
  auto a = build_noc(arch, 42), b = build_noc(arch, 42), c = build_noc(arch, 43);
  ASSERT_EQ(a.params().size(), b.params().size());
  for (std::size_t i = 0; i < a.params().size(); ++i) EXPECT_EQ(a.params()[i].value, b.params()[i].value);
  EXPECT_FALSE(a.params()[0].value == c.params()[0].value);
}

TEST(BuildNoc, Errors) {
  EXPECT_THROW(build_noc({ArchId::M1, {4, 1, 1}, 16, 1.0 / 32}, 1), SizeMismatch);
  EXPECT_THROW(build_noc({ArchId::C1F3, {4, 4, 4}, 16, 1.0 / 512}, 1), InvalidValue);
  EXPECT_THROW(build_noc({ArchId::C1F3, {4, 4, 4}, 16, 1.5}, 1), InvalidValue);
  EXPECT_THROW(build_noc({ArchId::Backbone, {4, 4, 4}, 16, 1.0 / 32}, 1), InvalidValue);
}

TEST(BuildBackbone, DownsamplesByEight) {
  EXPECT_EQ(build_backbone({3, 32, 32}, 16, 1).output_shape(), (Shape{16, 4, 4}));
  EXPECT_EQ(build_backbone({3, 24, 24}, 16, 1).output_shape(), (Shape{16, 3, 3}));
  EXPECT_THROW(build_backbone({3, 8, 8}, 16, 1), SizeMismatch);
  auto bb = build_backbone({3, 16, 16}, 8, 1);
  EXPECT_EQ(forward(bb, random_batch({2, 3, 16, 16}, 1)).shape(), (Shape{2, 8, 2, 2}));
}

TEST(BuildBackbone, EveryParameterReceivesGradient) {
  auto bb = build_backbone({3, 16, 16}, 8, 5);
  auto head = build_noc({ArchId::C0F3, {8, 2, 2}, 4, 1.0 / 64}, 5);
  auto x = random_batch({4, 3, 16, 16}, 9);
  Trace trace;
  auto pb = trace.variables(bb.param_values());
  auto ph = trace.variables(head.param_values());
  auto loss = softmax_cross_entropy(forward(head, forward(bb, x, pb), ph), std::vector<std::size_t>{0, 1, 2, 3});
  auto g = trace.backward(loss);
  for (const auto& p : pb) EXPECT_TRUE(all_nonzero(g.at(p)));
}

TEST(Forward, ZeroInputYieldsFinalBias) {
  auto m = build_noc({ArchId::C0F3, {2, 4, 4}, 6, 1.0 / 256}, 3);
  auto values = m.param_values();
  auto bias = Tensor::create({6}, {0.5, -1, 2, 0, 0.25, 3});
  values.back() = bias;
  m.set_param_values(values);
  auto logits = forward(m, Tensor::zeros({1, 2, 4, 4}));
  EXPECT_EQ(logits.to_vector(), bias.to_vector());
}

TEST(Forward, BatchIndependence) {
  auto m = build_noc({ArchId::M1, {4, 4, 4}, 8, 1.0 / 64}, 7);
  auto batch = random_batch({4, 4, 4, 4}, 11);
  auto all = forward(m, batch);
  std::vector<double> first(batch.data().begin() + 64 * 2, batch.data().begin() + 64 * 3);
  auto one = forward(m, Tensor::create({1, 4, 4, 4}, first));
  for (std::size_t j = 0; j < 8; ++j) EXPECT_NEAR(one[j], all[2 * 8 + j], 1e-12);
  for (double v : all.data()) EXPECT_TRUE(std::isfinite(v));
  EXPECT_THROW(forward(m, Tensor::zeros({1, 3, 4, 4})), SizeMismatch);
}

TEST(Penultimate, ShapeSignAndRowIdentity) {
  auto m = build_noc({ArchId::C1F3, {4, 4, 4}, 8, 1.0 / 32}, 7);
  std::vector<double> row = random_batch({1, 4, 4, 4}, 13).to_vector();
  std::vector<double> two = row;
  two.insert(two.end(), row.begin(), row.end());
  auto f = penultimate_features(m, Tensor::create({2, 4, 4, 4}, two));
  ASSERT_EQ(f.shape(), (Shape{2, 128}));
  for (double v : f.data()) EXPECT_GE(v, 0.0);
  for (std::size_t j = 0; j < 128; ++j) EXPECT_EQ(f[j], f[128 + j]);
}

TEST(FuseSum, IdentityCommutativityLinearity) {
  auto a = random_batch({3, 4, 4}, 1), b = random_batch({3, 4, 4}, 2);
  EXPECT_EQ(fuse_sum(a, Tensor::zeros({3, 4, 4})), a);
  EXPECT_EQ(fuse_sum(a, b), fuse_sum(b, a));
  const double alpha = 1.7;
  auto lhs = fuse_sum(scale(a, alpha), scale(b, alpha));
  auto rhs = scale(fuse_sum(a, b), alpha);
  for (std::size_t i = 0; i < lhs.size(); ++i) EXPECT_NEAR(lhs[i], rhs[i], 1e-12);
  EXPECT_THROW(fuse_sum(a, Tensor::zeros({3, 4, 5})), SizeMismatch);
}

TEST(FuseSum, GradientReachesBothStreamsUnchanged) {
  Trace trace;
  auto a = trace.variable(random_batch({2, 3, 3}, 3));
  auto b = trace.variable(random_batch({2, 3, 3}, 4));
  auto w = random_batch({2, 3, 3}, 5);
  auto g = trace.backward(sum(mul(fuse_sum(a, b), w)));
  EXPECT_EQ(g.at(a).to_vector(), w.to_vector());
  EXPECT_EQ(g.at(b).to_vector(), w.to_vector());
}

TEST(TwoStream, ZeroOrientationEqualsSingleStream) {
  auto bi = build_backbone({3, 16, 16}, 8, 1);
  auto bo = build_backbone({1, 16, 16}, 8, 2);
  auto head = build_noc({ArchId::C1F3, {8, 2, 2}, 5, 1.0 / 64}, 3);
  auto rgb = random_batch({3, 3, 16, 16}, 4);
  auto logits = two_stream_forward(bi, bo, head, rgb, Tensor::zeros({3, 1, 16, 16}));
  auto single = forward(head, forward(bi, rgb));
  EXPECT_EQ(logits.shape(), (Shape{3, 5}));
  EXPECT_EQ(logits, single);
}

TEST(TwoStream, GradientsReachBothBackbones) {
  auto bi = build_backbone({3, 16, 16}, 8, 1);
  auto bo = build_backbone({1, 16, 16}, 8, 2);
  auto head = build_noc({ArchId::C1F3, {8, 2, 2}, 4, 1.0 / 16}, 3);
  Trace trace;
  auto pi = trace.variables(bi.param_values());
  auto po = trace.variables(bo.param_values());
  auto ph = trace.variables(head.param_values());
  auto logits = two_stream_forward(bi, bo, head, random_batch({4, 3, 16, 16}, 5), random_batch({4, 1, 16, 16}, 6),
                                   {pi, po, ph});
  auto g = trace.backward(softmax_cross_entropy(logits, std::vector<std::size_t>{0, 1, 2, 3}));
  for (const auto& p : pi) EXPECT_TRUE(all_nonzero(g.at(p)));
  for (const auto& p : po) EXPECT_TRUE(all_nonzero(g.at(p)));
}

TEST(TwoStream, MisalignedStreamsRejected) {
  auto bi = build_backbone({3, 16, 16}, 8, 1);
  auto bo = build_backbone({1, 24, 24}, 8, 2);
  auto head = build_noc({ArchId::C1F3, {8, 2, 2}, 4, 1.0 / 64}, 3);
  EXPECT_THROW(two_stream_forward(bi, bo, head, Tensor::zeros({1, 3, 16, 16}), Tensor::zeros({1, 1, 24, 24})),
               SizeMismatch);
}

TEST(ModelFile, RoundTripAndHeader) {
  auto m = build_noc({ArchId::M1, {4, 4, 4}, 8, 1.0 / 64}, 17);
  std::stringstream ss;
  write_model(ss, m);
  const std::string bytes = ss.str();
  EXPECT_EQ(bytes.substr(0, 4), "NOC1");
  EXPECT_EQ(static_cast<unsigned char>(bytes[4]), 2u);  // arch id, little-endian
  auto back = read_model(ss);
  ASSERT_TRUE(back.same_structure(m));
  for (std::size_t i = 0; i < m.params().size(); ++i) EXPECT_EQ(back.params()[i].value, m.params()[i].value);

  std::stringstream bad("NOC2....");
  EXPECT_THROW(read_model(bad), IoError);
  std::stringstream truncated(bytes.substr(0, bytes.size() - 3));
  EXPECT_THROW(read_model(truncated), IoError);
}

TEST(Descent, SomeLearningRateDecreasesLossForEveryArch) {
  for (auto id : {ArchId::C0F3, ArchId::C1F3, ArchId::M1}) {
    auto m = build_noc({id, {4, 4, 4}, 4, 1.0 / 64}, 21);
    Batch batch{random_batch({4, 4, 4, 4}, 22), {0, 1, 2, 3}};
    auto [loss0, grads] = loss_and_gradients(m, batch);
    bool decreased = false;
    for (double lr : {1e-1, 1e-2, 1e-3}) {
      auto params = m.param_values();
      for (std::size_t i = 0; i < params.size(); ++i) params[i] = sgd_step(params[i], grads[i], lr);
      Model stepped = m;
      stepped.set_param_values(params);
      if (loss_and_gradients(stepped, batch).first < loss0) decreased = true;
    }
    EXPECT_TRUE(decreased) << arch_name(id);
  }
}

TEST(FullModelGradient, MatchesFiniteDifferences) {
  for (auto id : {ArchId::C0F3, ArchId::C1F3, ArchId::M1}) {
    auto m = build_noc({id, {3, 4, 4}, 5, 1.0 / 256}, 31);
    auto x = random_batch({2, 3, 4, 4}, 32);
    const std::vector<std::size_t> labels{1, 4};
    auto values = m.param_values();
    auto f = [&](std::span<const Tensor> p) { return softmax_cross_entropy(forward(m, x, p), labels); };
    EXPECT_LT(grad_check(f, values, 1e-6), 1e-4) << arch_name(id);
  }
}
