#include "nocnet/tensor.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <random>

using namespace nocnet;

namespace {

Tensor random_tensor(Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> d(lo, hi);
  std::vector<double> v(shape_size(shape));
  for (auto& x : v) x = d(rng);
  return Tensor::create(std::move(shape), std::move(v));
}

// Values with magnitude in [0.1, 1] and random sign: away from relu kinks.
Tensor off_kink_tensor(Shape shape, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> mag(0.1, 1.0);
  std::bernoulli_distribution sign(0.5);
  std::vector<double> v(shape_size(shape));
  for (auto& x : v) x = sign(rng) ? mag(rng) : -mag(rng);
  return Tensor::create(std::move(shape), std::move(v));
}

// Square with a backward rule that forgets the factor 2.
Tensor broken_square(const Tensor& x) {
  std::vector<double> y(x.size());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = x[i] * x[i];
  return detail::TensorAccess::record("broken_square", {&x}, x.shape(), std::move(y),
                                      [x](std::span<const double> g, std::span<std::vector<double>* const> in) {
                                        if (!in[0]) return;
                                        for (std::size_t i = 0; i < g.size(); ++i) (*in[0])[i] += g[i] * x[i];
                                      });
}

}  // namespace

TEST(TensorCreate, OwnsCopyOfData) {
  auto t = Tensor::create({2, 2}, {1, 2, 3, 4});
  EXPECT_EQ(t.shape(), (Shape{2, 2}));
  EXPECT_EQ(t.to_vector(), (std::vector<double>{1, 2, 3, 4}));
  auto z = Tensor::create({3}, {0, 0, 0});
  EXPECT_EQ(z.to_vector(), (std::vector<double>{0, 0, 0}));
}

TEST(TensorCreate, Errors) {
  EXPECT_THROW(Tensor::create({2}, {1, 2, 3}), SizeMismatch);
  EXPECT_THROW(Tensor::create({1}, {std::nan("")}), InvalidValue);
  EXPECT_THROW(Tensor::create({1}, {INFINITY}), InvalidValue);
  EXPECT_THROW(Tensor::create({0}, {}), SizeMismatch);
}

TEST(Matmul, Examples) {
  auto id = Tensor::create({2, 2}, {1, 0, 0, 1});
  auto m = Tensor::create({2, 2}, {1, 2, 3, 4});
  EXPECT_EQ(matmul(id, m).to_vector(), m.to_vector());
  auto r = matmul(Tensor::create({1, 2}, {1, 2}), Tensor::create({2, 1}, {3, 4}));
  EXPECT_EQ(r.shape(), (Shape{1, 1}));
  EXPECT_DOUBLE_EQ(r.item(), 11.0);
  EXPECT_THROW(matmul(m, Tensor::zeros({3, 1})), SizeMismatch);
}

TEST(Matmul, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(1);
  std::vector<Tensor> xs{random_tensor({3, 4}, rng), random_tensor({4, 2}, rng)};
  auto f = [](std::span<const Tensor> v) { return sum(matmul(v[0], v[1])); };
  EXPECT_LT(grad_check(f, xs, 1e-6), 1e-6);
}

TEST(Conv2d, Examples) {
  auto ones = Tensor::filled({1, 3, 3}, 1.0);
  auto y = conv2d(ones, Tensor::create({1, 1, 1, 1}, {2}), Tensor::zeros({1}), 1, 0);
  EXPECT_EQ(y.shape(), (Shape{1, 3, 3}));
  for (double v : y.data()) EXPECT_DOUBLE_EQ(v, 2.0);

  auto x = Tensor::create({1, 2, 2}, {1, 2, 3, 4});
  auto s = conv2d(x, Tensor::filled({1, 1, 2, 2}, 1.0), Tensor::zeros({1}), 1, 0);
  EXPECT_EQ(s.shape(), (Shape{1, 1, 1}));
  EXPECT_DOUBLE_EQ(s.item(), 10.0);
}

TEST(Conv2d, NoKernelFlip) {
  // Kernel picks the top-left neighbour: cross-correlation, not convolution.
  auto x = Tensor::create({1, 2, 2}, {1, 2, 3, 4});
  auto k = Tensor::create({1, 1, 2, 2}, {1, 0, 0, 0});
  EXPECT_DOUBLE_EQ(conv2d(x, k, Tensor::zeros({1}), 1, 0).item(), 1.0);
}

TEST(Conv2d, Errors) {
  auto x = Tensor::zeros({1, 2, 2});
  EXPECT_THROW(conv2d(x, Tensor::zeros({1, 1, 3, 3}), Tensor::zeros({1}), 1, 0), SizeMismatch);
  EXPECT_NO_THROW(conv2d(x, Tensor::zeros({1, 1, 3, 3}), Tensor::zeros({1}), 1, 1));
  EXPECT_THROW(conv2d(x, Tensor::zeros({1, 2, 1, 1}), Tensor::zeros({1}), 1, 0), SizeMismatch);
  EXPECT_THROW(conv2d(x, Tensor::zeros({1, 1, 1, 1}), Tensor::zeros({2}), 1, 0), SizeMismatch);
}

TEST(Conv2d, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(2);
  std::vector<Tensor> xs{random_tensor({3, 8, 8}, rng), random_tensor({4, 3, 3, 3}, rng),
                         random_tensor({4}, rng)};
  auto f = [](std::span<const Tensor> v) { return sum(mul(conv2d(v[0], v[1], v[2], 1, 1), conv2d(v[0], v[1], v[2], 1, 1))); };
  EXPECT_LT(grad_check(f, xs, 1e-5), 1e-5);
  auto strided = [](std::span<const Tensor> v) {
    auto y = conv2d(v[0], v[1], v[2], 2, 0);
    return sum(mul(y, y));
  };
  EXPECT_LT(grad_check(strided, xs, 1e-5), 1e-5);
}

TEST(Conv2d, OutputShapeProperty) {
  std::mt19937_64 rng(3);
  std::uniform_int_distribution<std::size_t> dim(1, 9), small(1, 4), pad(0, 2);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t h = dim(rng), w = dim(rng), kh = small(rng), kw = small(rng), s = small(rng), p = pad(rng);
    if (h + 2 * p < kh || w + 2 * p < kw) continue;
    auto y = conv2d(Tensor::zeros({2, h, w}), Tensor::zeros({3, 2, kh, kw}), Tensor::zeros({3}), s, p);
    EXPECT_EQ(y.shape(), (Shape{3, (h + 2 * p - kh) / s + 1, (w + 2 * p - kw) / s + 1}));
  }
}

TEST(Conv2d, BatchedMatchesPerSample) {
  std::mt19937_64 rng(4);
  auto k = random_tensor({2, 3, 3, 3}, rng);
  auto b = random_tensor({2}, rng);
  auto batch = random_tensor({2, 3, 5, 5}, rng);
  auto y = conv2d(batch, k, b, 1, 1);
  for (std::size_t i = 0; i < 2; ++i) {
    std::vector<double> one(batch.data().begin() + i * 75, batch.data().begin() + (i + 1) * 75);
    auto yi = conv2d(Tensor::create({3, 5, 5}, one), k, b, 1, 1);
    for (std::size_t j = 0; j < yi.size(); ++j) EXPECT_DOUBLE_EQ(yi[j], y[i * yi.size() + j]);
  }
}

TEST(Maxpool, Examples) {
  auto y = maxpool2d(Tensor::create({1, 2, 2}, {1, 2, 3, 4}), 2, 2);
  EXPECT_EQ(y.shape(), (Shape{1, 1, 1}));
  EXPECT_DOUBLE_EQ(y.item(), 4.0);
  EXPECT_THROW(maxpool2d(Tensor::zeros({1, 1, 3}), 2, 2), SizeMismatch);
}

TEST(Maxpool, TiesRouteToFirstOccurrence) {
  Trace trace;
  auto x = trace.variable(Tensor::filled({1, 2, 2}, 5.0));
  auto y = maxpool2d(x, 2, 2);
  EXPECT_DOUBLE_EQ(y.item(), 5.0);
  auto g = trace.backward(sum(y));
  EXPECT_EQ(g.at(x).to_vector(), (std::vector<double>{1, 0, 0, 0}));
}

TEST(Maxpool, GradientMatchesFiniteDifferences) {
  // A permutation of well-separated values keeps every window's argmax stable.
  std::mt19937_64 rng(5);
  std::vector<double> v(72);
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = 0.05 * static_cast<double>(i);
  std::shuffle(v.begin(), v.end(), rng);
  std::vector<Tensor> xs{Tensor::create({2, 6, 6}, v)};
  auto f = [](std::span<const Tensor> t) {
    auto y = maxpool2d(t[0], 2, 2);
    return sum(mul(y, y));
  };
  EXPECT_LT(grad_check(f, xs, 1e-6), 1e-6);
}

TEST(Elementwise, Examples) {
  EXPECT_EQ(relu(Tensor::create({3}, {-1, 0, 2})).to_vector(), (std::vector<double>{0, 0, 2}));
  EXPECT_EQ(add(Tensor::create({2}, {1, 2}), Tensor::create({2}, {3, 4})).to_vector(), (std::vector<double>{4, 6}));
  EXPECT_EQ(div(Tensor::create({2}, {1, 1}), Tensor::create({2}, {2, 4})).to_vector(),
            (std::vector<double>{0.5, 0.25}));
  EXPECT_EQ(sub(Tensor::create({2}, {1, 2}), Tensor::create({2}, {3, 5})).to_vector(),
            (std::vector<double>{-2, -3}));
  EXPECT_EQ(scale(Tensor::create({2}, {1, 2}), 3.0).to_vector(), (std::vector<double>{3, 6}));
  EXPECT_EQ(sqrt(Tensor::create({2}, {4, 9})).to_vector(), (std::vector<double>{2, 3}));
}

TEST(Elementwise, Errors) {
  EXPECT_THROW(add(Tensor::zeros({2}), Tensor::zeros({3})), SizeMismatch);
  EXPECT_THROW(mul(Tensor::zeros({2, 1}), Tensor::zeros({1, 2})), SizeMismatch);
  EXPECT_THROW(nocnet::sqrt(Tensor::create({1}, {-1})), InvalidValue);
  EXPECT_THROW(div(Tensor::create({1}, {1}), Tensor::create({1}, {0})), InvalidValue);
  EXPECT_NO_THROW(div(Tensor::create({1}, {1}), Tensor::create({1}, {0}), 1e-8));
  EXPECT_THROW(add_bias(Tensor::zeros({2, 3}), Tensor::zeros({2})), SizeMismatch);
}

TEST(Elementwise, ReluGradientIsZeroAtKink) {
  Trace trace;
  auto x = trace.variable(Tensor::create({3}, {-1, 0, 2}));
  auto g = trace.backward(sum(relu(x)));
  EXPECT_EQ(g.at(x).to_vector(), (std::vector<double>{0, 0, 1}));
}

TEST(Elementwise, GradientsMatchFiniteDifferences) {
  std::mt19937_64 rng(6);
  std::vector<Tensor> xs{off_kink_tensor({2, 3}, rng), random_tensor({2, 3}, rng, 0.5, 2.0),
                         random_tensor({3}, rng)};
  auto f = [](std::span<const Tensor> v) {
    auto a = add_bias(relu(v[0]), v[2]);
    auto b = div(sub(a, scale(v[0], 0.3)), v[1], 1e-8);
    return sum(mul(nocnet::sqrt(v[1]), add(b, v[0])));
  };
  EXPECT_LT(grad_check(f, xs, 1e-6), 1e-6);
}

TEST(SoftmaxCrossEntropy, Examples) {
  std::vector<std::size_t> l0{0};
  EXPECT_NEAR(softmax_cross_entropy(Tensor::zeros({1, 4}), l0).item(), std::log(4.0), 1e-12);
  EXPECT_LT(softmax_cross_entropy(Tensor::create({1, 3}, {10, 0, 0}), l0).item(), 1e-4);
  std::vector<std::size_t> bad{3};
  EXPECT_THROW(softmax_cross_entropy(Tensor::zeros({1, 3}), bad), InvalidValue);
}

TEST(SoftmaxCrossEntropy, NonNegativeAndUniformValue) {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 50; ++trial) {
    auto logits = random_tensor({4, 6}, rng, -20, 20);
    std::vector<std::size_t> labels{0, 5, 2, 3};
    EXPECT_GE(softmax_cross_entropy(logits, labels).item(), 0.0);
  }
  std::vector<std::size_t> labels{1, 2, 0};
  EXPECT_NEAR(softmax_cross_entropy(Tensor::filled({3, 7}, 3.5), labels).item(), std::log(7.0), 1e-12);
}

TEST(SoftmaxCrossEntropy, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(8);
  std::vector<Tensor> xs{random_tensor({3, 5}, rng, -2, 2)};
  const std::vector<std::size_t> labels{4, 0, 2};
  auto f = [&](std::span<const Tensor> v) { return softmax_cross_entropy(v[0], labels); };
  EXPECT_LT(grad_check(f, xs, 1e-6), 1e-6);
}

TEST(Backward, Examples) {
  Trace trace;
  auto x = trace.variable(Tensor::create({2}, {1, 2}));
  auto g = trace.backward(sum(scale(x, 2.0)));
  EXPECT_EQ(g.at(x).to_vector(), (std::vector<double>{2, 2}));

  auto a = trace.variable(Tensor::scalar(3));
  auto b = trace.variable(Tensor::scalar(4));
  auto gab = trace.backward(mul(a, b));
  EXPECT_DOUBLE_EQ(gab.at(a).item(), 4.0);
  EXPECT_DOUBLE_EQ(gab.at(b).item(), 3.0);
}

TEST(Backward, Errors) {
  Trace trace;
  auto x = trace.variable(Tensor::create({2}, {1, 2}));
  EXPECT_THROW(trace.backward(scale(x, 2.0)), InvalidValue);
  EXPECT_THROW(trace.backward(Tensor::scalar(1.0)), NoTrace);
  Trace other;
  auto y = other.variable(Tensor::scalar(1.0));
  EXPECT_THROW(trace.backward(y), NoTrace);
  // A consumed trace no longer owns its old nodes.
  auto root = sum(x);
  trace.backward(root);
  EXPECT_THROW(trace.backward(root), NoTrace);
}

TEST(Backward, GradientShapesMirrorVariables) {
  Trace trace;
  auto a = trace.variable(Tensor::filled({2, 3}, 0.5));
  auto unused = trace.variable(Tensor::filled({4}, 1.0));
  auto b = trace.variable(Tensor::filled({3, 2}, 0.25));
  auto g = trace.backward(sum(matmul(a, b)));
  EXPECT_EQ(g.at(a).shape(), a.shape());
  EXPECT_EQ(g.at(b).shape(), b.shape());
  EXPECT_EQ(g.at(unused).to_vector(), (std::vector<double>(4, 0.0)));
}

TEST(Backward, MixedTracesRejected) {
  Trace t1, t2;
  auto a = t1.variable(Tensor::scalar(1.0));
  auto b = t2.variable(Tensor::scalar(2.0));
  EXPECT_THROW(add(a, b), InvalidValue);
}

TEST(GradCheck, QuadraticIsExact) {
  std::mt19937_64 rng(9);
  auto x = random_tensor({10}, rng);
  EXPECT_LT(grad_check([](const Tensor& t) { return sum(mul(t, t)); }, x, 1e-5), 1e-8);
}

TEST(GradCheck, ConvReluFcChain) {
  std::mt19937_64 rng(10);
  auto img = off_kink_tensor({2, 5, 5}, rng);
  std::vector<Tensor> xs{random_tensor({3, 2, 3, 3}, rng), random_tensor({3}, rng), random_tensor({75, 4}, rng)};
  auto f = [&](std::span<const Tensor> v) {
    auto h = relu(conv2d(img, v[0], v[1], 1, 1));
    auto flat = reshape(h, {1, 75});
    return softmax_cross_entropy(matmul(flat, v[2]), std::vector<std::size_t>{2});
  };
  EXPECT_LT(grad_check(f, xs, 1e-6), 1e-4);
}

TEST(GradCheck, DetectsWrongBackwardRule) {
  std::mt19937_64 rng(11);
  auto x = random_tensor({5}, rng, 0.5, 1.5);
  EXPECT_GT(grad_check([](const Tensor& t) { return sum(broken_square(t)); }, x, 1e-6), 1e-2);
  EXPECT_THROW(grad_check([](const Tensor& t) { return sum(t); }, x, 0.5), InvalidValue);
}

TEST(Tensor, ForwardIsDeterministic) {
  std::mt19937_64 rng(12);
  auto x = random_tensor({2, 3, 6, 6}, rng);
  auto k = random_tensor({4, 3, 3, 3}, rng);
  auto b = random_tensor({4}, rng);
  auto y1 = maxpool2d(relu(conv2d(x, k, b, 1, 1)), 2, 2);
  auto y2 = maxpool2d(relu(conv2d(x, k, b, 1, 1)), 2, 2);
  EXPECT_EQ(y1, y2);
}

TEST(Trace, GraphIsFreedAfterBackward) {
  std::weak_ptr<detail::TraceState> state;
  {
    Trace trace;
    auto x = trace.variable(Tensor::create({2, 2}, {1, 2, 3, 4}));
    auto y = sum(mul(relu(x), matmul(x, x)));
    state = detail::TensorAccess::trace(y);
    trace.backward(y);
  }
  EXPECT_TRUE(state.expired());
  {
    Trace trace;
    auto x = trace.variable(Tensor::create({2}, {1, -2}));
    auto y = sum(mul(x, x));
    state = detail::TensorAccess::trace(y);
  }
  EXPECT_TRUE(state.expired());
}
