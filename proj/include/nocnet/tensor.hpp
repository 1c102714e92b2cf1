#pragma once

// Dense row-major tensors of doubles with a reverse-mode trace.
//
// A Tensor is an immutable value. Operations whose inputs live on a Trace
// record a node on that trace; operations on untraced inputs are plain
// forward computations. Trace::backward() walks the recorded nodes in reverse
// and returns the gradients of every variable registered on the trace.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <memory>
#include <numeric>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "nocnet/error.hpp"

namespace nocnet {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>{});
}

inline std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

class Tensor;
class Trace;

namespace detail {

// in_grads[k] is null when input k is not on the trace.
using BackwardFn =
    std::function<void(std::span<const double> grad_out, std::span<std::vector<double>* const> in_grads)>;

struct Node {
  std::string op;
  std::vector<std::optional<std::size_t>> inputs;
  Shape shape;
  bool is_variable = false;
  BackwardFn backward;
};

struct TraceState {
  std::vector<Node> nodes;
};

struct TensorAccess;

}  // namespace detail

class Tensor {
 public:
  /// Scalar zero.
  Tensor() : shape_{1}, data_(std::make_shared<const std::vector<double>>(1, 0.0)) {}

  static Tensor create(Shape shape, std::vector<double> data, bool requires_grad = false) {
    for (auto d : shape)
      if (d == 0) throw SizeMismatch("tensor dimension must be positive, got " + shape_string(shape));
    if (shape.empty()) throw SizeMismatch("tensor shape must have at least one dimension");
    if (shape_size(shape) != data.size())
      throw SizeMismatch("shape " + shape_string(shape) + " needs " + std::to_string(shape_size(shape)) +
                         " values, got " + std::to_string(data.size()));
    for (double v : data)
      if (!std::isfinite(v)) throw InvalidValue("tensor data must be finite");
    Tensor t(std::move(shape), std::move(data));
    t.requires_grad_ = requires_grad;
    return t;
  }

  static Tensor filled(Shape shape, double value) {
    auto n = shape_size(shape);
    return create(std::move(shape), std::vector<double>(n, value));
  }
  static Tensor zeros(Shape shape) { return filled(std::move(shape), 0.0); }
  static Tensor scalar(double value) { return create({1}, {value}); }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t size() const noexcept { return data_->size(); }
  std::span<const double> data() const noexcept { return *data_; }
  double operator[](std::size_t i) const { return (*data_)[i]; }

  double item() const {
    if (size() != 1) throw InvalidValue("item() on tensor of shape " + shape_string(shape_));
    return (*data_)[0];
  }

  bool requires_grad() const noexcept { return requires_grad_; }
  bool on_trace() const noexcept { return trace_ != nullptr; }
  std::optional<std::size_t> node() const {
    if (!trace_) return std::nullopt;
    return node_;
  }

  /// Same values, no trace link.
  Tensor detached() const {
    Tensor t(*this);
    t.trace_.reset();
    t.node_ = 0;
    return t;
  }

  /// Copy of the values with a different shape of equal size. Untraced.
  Tensor reshaped(Shape shape) const {
    if (shape_size(shape) != size())
      throw SizeMismatch("cannot view " + shape_string(shape_) + " as " + shape_string(shape));
    Tensor t(std::move(shape), data_);
    return t;
  }

  std::vector<double> to_vector() const { return *data_; }

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && *a.data_ == *b.data_;
  }

 private:
  friend class Trace;
  friend struct detail::TensorAccess;

  Tensor(Shape shape, std::vector<double> data)
      : shape_(std::move(shape)), data_(std::make_shared<const std::vector<double>>(std::move(data))) {}
  Tensor(Shape shape, std::shared_ptr<const std::vector<double>> data)
      : shape_(std::move(shape)), data_(std::move(data)) {}

  Shape shape_;
  std::shared_ptr<const std::vector<double>> data_;
  bool requires_grad_ = false;
  std::shared_ptr<detail::TraceState> trace_;
  std::size_t node_ = 0;
};

/// Gradients of the variables of one backward pass, keyed by trace node.
class GradientMap {
 public:
  const Tensor& at(const Tensor& variable) const {
    auto id = variable.node();
    if (!id) throw NoTrace("tensor is not a trace variable");
    auto it = grads_.find(*id);
    if (it == grads_.end()) throw NoTrace("no gradient recorded for node " + std::to_string(*id));
    return it->second;
  }
  bool contains(const Tensor& variable) const {
    auto id = variable.node();
    return id && grads_.count(*id) > 0;
  }
  std::size_t size() const noexcept { return grads_.size(); }

 private:
  friend class Trace;
  std::unordered_map<std::size_t, Tensor> grads_;
};

namespace detail {

struct TensorAccess {
  static Tensor make(Shape shape, std::vector<double> data) { return Tensor(std::move(shape), std::move(data)); }
  static const std::shared_ptr<TraceState>& trace(const Tensor& t) { return t.trace_; }

  // Result of an op: attaches a node to the shared trace of the inputs, if any.
  static Tensor record(std::string op, std::initializer_list<const Tensor*> inputs, Shape shape,
                       std::vector<double> data, BackwardFn backward) {
    Tensor out(std::move(shape), std::move(data));
    std::shared_ptr<TraceState> trace;
    for (auto* in : inputs) {
      if (!in->trace_) continue;
      if (trace && trace != in->trace_) throw InvalidValue(op + ": inputs belong to different traces");
      trace = in->trace_;
    }
    if (!trace) return out;
    Node node;
    node.op = std::move(op);
    for (auto* in : inputs)
      node.inputs.push_back(in->trace_ ? std::optional<std::size_t>(in->node_) : std::nullopt);
    node.shape = out.shape_;
    node.backward = std::move(backward);
    trace->nodes.push_back(std::move(node));
    out.trace_ = trace;
    out.node_ = trace->nodes.size() - 1;
    out.requires_grad_ = true;
    return out;
  }
};

inline void check_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape())
    throw SizeMismatch(std::string(op) + ": shapes " + shape_string(a.shape()) + " and " +
                       shape_string(b.shape()) + " differ");
}

}  // namespace detail

/// Owner of one reverse-mode graph. Single-threaded; one per training worker.
class Trace {
 public:
  Trace() : state_(std::make_shared<detail::TraceState>()) {}
  Trace(const Trace&) = delete;
  Trace& operator=(const Trace&) = delete;
  Trace(Trace&&) noexcept = default;
  Trace& operator=(Trace&&) noexcept = default;
  // Closures hold traced tensors, which hold the state: clear to break the cycle.
  ~Trace() {
    if (state_) state_->nodes.clear();
  }

  /// Registers `value` as a differentiable leaf and returns the traced handle.
  Tensor variable(const Tensor& value) {
    Tensor t(value.shape_, value.data_);
    detail::Node node;
    node.op = "variable";
    node.shape = value.shape_;
    node.is_variable = true;
    state_->nodes.push_back(std::move(node));
    t.trace_ = state_;
    t.node_ = state_->nodes.size() - 1;
    t.requires_grad_ = true;
    return t;
  }

  std::vector<Tensor> variables(std::span<const Tensor> values) {
    std::vector<Tensor> out;
    out.reserve(values.size());
    for (const auto& v : values) out.push_back(variable(v));
    return out;
  }

  std::size_t size() const noexcept { return state_->nodes.size(); }

  /// Drops every recorded node. Tensors from before the reset are off-trace.
  void reset() {
    if (state_) state_->nodes.clear();
    state_ = std::make_shared<detail::TraceState>();
  }

  /// Gradients of scalar `root` with respect to every variable on this trace.
  /// Unreachable variables get zero gradients. Consumes the trace.
  GradientMap backward(const Tensor& root) {
    if (root.trace_ != state_) throw NoTrace("backward root is not on this trace");
    if (root.size() != 1) throw InvalidValue("backward root must be scalar, got " + shape_string(root.shape()));
    auto& nodes = state_->nodes;
    std::vector<std::vector<double>> grads(nodes.size());
    grads[root.node_] = {1.0};
    for (std::size_t i = root.node_ + 1; i-- > 0;) {
      auto& node = nodes[i];
      if (node.is_variable || grads[i].empty() || !node.backward) continue;
      std::vector<std::vector<double>*> in_grads;
      in_grads.reserve(node.inputs.size());
      for (auto& in : node.inputs) {
        if (!in) {
          in_grads.push_back(nullptr);
          continue;
        }
        auto& g = grads[*in];
        if (g.empty()) g.assign(shape_size(nodes[*in].shape), 0.0);
        in_grads.push_back(&g);
      }
      node.backward(grads[i], in_grads);
      if (i != root.node_) std::vector<double>().swap(grads[i]);
    }
    GradientMap out;
    for (std::size_t i = 0; i < nodes.size(); ++i) {
      if (!nodes[i].is_variable) continue;
      auto g = grads[i].empty() ? std::vector<double>(shape_size(nodes[i].shape), 0.0) : std::move(grads[i]);
      out.grads_.emplace(i, Tensor(nodes[i].shape, std::move(g)));
    }
    reset();
    return out;
  }

 private:
  std::shared_ptr<detail::TraceState> state_;
};

// ---------------------------------------------------------------------------
// Operations
// ---------------------------------------------------------------------------

/// Matrix product of [m,k] and [k,n].
inline Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0))
    throw SizeMismatch("matmul: cannot multiply " + shape_string(a.shape()) + " by " + shape_string(b.shape()));
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  auto A = a.data(), B = b.data();
  std::vector<double> c(m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t p = 0; p < k; ++p) {
      const double av = A[i * k + p];
      if (av == 0.0) continue;
      const double* brow = &B[p * n];
      double* crow = &c[i * n];
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  return detail::TensorAccess::record(
      "matmul", {&a, &b}, {m, n}, std::move(c),
      [a, b, m, k, n](std::span<const double> g, std::span<std::vector<double>* const> in) {
        auto A = a.data(), B = b.data();
        if (auto* ga = in[0]) {  // dA = dC * B^T
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t p = 0; p < k; ++p) {
              double s = 0.0;
              for (std::size_t j = 0; j < n; ++j) s += g[i * n + j] * B[p * n + j];
              (*ga)[i * k + p] += s;
            }
        }
        if (auto* gb = in[1]) {  // dB = A^T * dC
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t p = 0; p < k; ++p) {
              const double av = A[i * k + p];
              if (av == 0.0) continue;
              for (std::size_t j = 0; j < n; ++j) (*gb)[p * n + j] += av * g[i * n + j];
            }
        }
      });
}

namespace detail {

struct ImageDims {
  std::size_t batch, channels, height, width;
  bool batched;
};

inline ImageDims image_dims(const char* op, const Tensor& t) {
  if (t.rank() == 3) return {1, t.dim(0), t.dim(1), t.dim(2), false};
  if (t.rank() == 4) return {t.dim(0), t.dim(1), t.dim(2), t.dim(3), true};
  throw SizeMismatch(std::string(op) + ": expected [c,h,w] or [b,c,h,w], got " + shape_string(t.shape()));
}

inline Shape image_shape(const ImageDims& d, std::size_t c, std::size_t h, std::size_t w) {
  if (d.batched) return {d.batch, c, h, w};
  return {c, h, w};
}

}  // namespace detail

/// Zero-padded 2-D cross-correlation. `input` is [c,h,w] or [b,c,h,w];
/// kernels are [c_out,c_in,kh,kw] and bias is [c_out].
inline Tensor conv2d(const Tensor& input, const Tensor& kernels, const Tensor& bias, std::size_t stride,
                     std::size_t pad) {
  const auto d = detail::image_dims("conv2d", input);
  if (kernels.rank() != 4 || kernels.dim(1) != d.channels)
    throw SizeMismatch("conv2d: kernels " + shape_string(kernels.shape()) + " do not match input " +
                       shape_string(input.shape()));
  const std::size_t co = kernels.dim(0), ci = d.channels, kh = kernels.dim(2), kw = kernels.dim(3);
  if (bias.rank() != 1 || bias.dim(0) != co)
    throw SizeMismatch("conv2d: bias must be [" + std::to_string(co) + "], got " + shape_string(bias.shape()));
  if (stride == 0) throw InvalidValue("conv2d: stride must be positive");
  if (d.height + 2 * pad < kh || d.width + 2 * pad < kw)
    throw SizeMismatch("conv2d: kernel larger than padded input");
  const std::size_t H = d.height, W = d.width;
  const std::size_t oh = (H + 2 * pad - kh) / stride + 1, ow = (W + 2 * pad - kw) / stride + 1;
  const std::size_t B = d.batch;

  // Valid output range along one axis for kernel offset `kk`.
  struct Range {
    std::size_t lo, hi;
  };
  auto out_range = [pad, stride](std::size_t kk, std::size_t in_len, std::size_t out_len) {
    // input index = o*stride + kk - pad must lie in [0, in_len)
    std::size_t lo = 0;
    while (lo < out_len && lo * stride + kk < pad) ++lo;
    std::size_t hi = lo;
    while (hi < out_len && hi * stride + kk - pad < in_len) ++hi;
    return Range{lo, hi};
  };

  auto X = input.data(), K = kernels.data(), Bv = bias.data();
  std::vector<double> y(B * co * oh * ow);
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t o = 0; o < co; ++o) {
      double* yo = &y[(b * co + o) * oh * ow];
      std::fill(yo, yo + oh * ow, Bv[o]);
      for (std::size_t c = 0; c < ci; ++c) {
        const double* xc = &X[(b * ci + c) * H * W];
        for (std::size_t ky = 0; ky < kh; ++ky) {
          const auto ry = out_range(ky, H, oh);
          for (std::size_t kx = 0; kx < kw; ++kx) {
            const double kv = K[((o * ci + c) * kh + ky) * kw + kx];
            const auto rx = out_range(kx, W, ow);
            for (std::size_t oy = ry.lo; oy < ry.hi; ++oy) {
              const double* xrow = xc + (oy * stride + ky - pad) * W;
              double* yrow = yo + oy * ow;
              for (std::size_t ox = rx.lo; ox < rx.hi; ++ox) yrow[ox] += kv * xrow[ox * stride + kx - pad];
            }
          }
        }
      }
    }

  return detail::TensorAccess::record(
      "conv2d", {&input, &kernels, &bias}, detail::image_shape(d, co, oh, ow), std::move(y),
      [input, kernels, B, ci, co, H, W, kh, kw, oh, ow, stride, pad, out_range](
          std::span<const double> g, std::span<std::vector<double>* const> in) {
        auto X = input.data(), K = kernels.data();
        auto* gx = in[0];
        auto* gk = in[1];
        auto* gb = in[2];
        for (std::size_t b = 0; b < B; ++b)
          for (std::size_t o = 0; o < co; ++o) {
            const double* go = &g[(b * co + o) * oh * ow];
            if (gb) {
              double s = 0.0;
              for (std::size_t i = 0; i < oh * ow; ++i) s += go[i];
              (*gb)[o] += s;
            }
            if (!gx && !gk) continue;
            for (std::size_t c = 0; c < ci; ++c) {
              const std::size_t xoff = (b * ci + c) * H * W;
              for (std::size_t ky = 0; ky < kh; ++ky) {
                const auto ry = out_range(ky, H, oh);
                for (std::size_t kx = 0; kx < kw; ++kx) {
                  const std::size_t kidx = ((o * ci + c) * kh + ky) * kw + kx;
                  const double kv = K[kidx];
                  const auto rx = out_range(kx, W, ow);
                  double ks = 0.0;
                  for (std::size_t oy = ry.lo; oy < ry.hi; ++oy) {
                    const std::size_t row = xoff + (oy * stride + ky - pad) * W;
                    const double* grow = go + oy * ow;
                    for (std::size_t ox = rx.lo; ox < rx.hi; ++ox) {
                      const std::size_t xi = row + ox * stride + kx - pad;
                      if (gk) ks += grow[ox] * X[xi];
                      if (gx) (*gx)[xi] += grow[ox] * kv;
                    }
                  }
                  if (gk) (*gk)[kidx] += ks;
                }
              }
            }
          }
      });
}

/// Per-channel window maximum. Gradient goes to the first (row-major) maximum.
inline Tensor maxpool2d(const Tensor& input, std::size_t window, std::size_t stride) {
  const auto d = detail::image_dims("maxpool2d", input);
  if (window == 0 || stride == 0) throw InvalidValue("maxpool2d: window and stride must be positive");
  if (d.height < window || d.width < window) throw SizeMismatch("maxpool2d: window larger than input");
  const std::size_t oh = (d.height - window) / stride + 1, ow = (d.width - window) / stride + 1;
  const std::size_t planes = d.batch * d.channels, H = d.height, W = d.width;
  auto X = input.data();
  std::vector<double> y(planes * oh * ow);
  std::vector<std::size_t> argmax(y.size());
  for (std::size_t p = 0; p < planes; ++p)
    for (std::size_t oy = 0; oy < oh; ++oy)
      for (std::size_t ox = 0; ox < ow; ++ox) {
        std::size_t best = p * H * W + oy * stride * W + ox * stride;
        for (std::size_t wy = 0; wy < window; ++wy)
          for (std::size_t wx = 0; wx < window; ++wx) {
            const std::size_t idx = p * H * W + (oy * stride + wy) * W + ox * stride + wx;
            if (X[idx] > X[best]) best = idx;
          }
        const std::size_t o = (p * oh + oy) * ow + ox;
        y[o] = X[best];
        argmax[o] = best;
      }
  return detail::TensorAccess::record(
      "maxpool2d", {&input}, detail::image_shape(d, d.channels, oh, ow), std::move(y),
      [argmax = std::move(argmax)](std::span<const double> g, std::span<std::vector<double>* const> in) {
        if (!in[0]) return;
        for (std::size_t o = 0; o < g.size(); ++o) (*in[0])[argmax[o]] += g[o];
      });
}

/// max(x, 0); the subgradient at 0 is 0.
inline Tensor relu(const Tensor& x) {
  auto X = x.data();
  std::vector<double> y(X.size());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = X[i] > 0.0 ? X[i] : 0.0;
  return detail::TensorAccess::record("relu", {&x}, x.shape(), std::move(y),
                                      [x](std::span<const double> g, std::span<std::vector<double>* const> in) {
                                        if (!in[0]) return;
                                        auto X = x.data();
                                        for (std::size_t i = 0; i < g.size(); ++i)
                                          if (X[i] > 0.0) (*in[0])[i] += g[i];
                                      });
}

inline Tensor add(const Tensor& a, const Tensor& b) {
  detail::check_same_shape("add", a, b);
  auto A = a.data(), B = b.data();
  std::vector<double> y(A.size());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = A[i] + B[i];
  return detail::TensorAccess::record("add", {&a, &b}, a.shape(), std::move(y),
                                      [](std::span<const double> g, std::span<std::vector<double>* const> in) {
                                        for (auto* gi : in)
                                          if (gi)
                                            for (std::size_t i = 0; i < g.size(); ++i) (*gi)[i] += g[i];
                                      });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  detail::check_same_shape("sub", a, b);
  auto A = a.data(), B = b.data();
  std::vector<double> y(A.size());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = A[i] - B[i];
  return detail::TensorAccess::record("sub", {&a, &b}, a.shape(), std::move(y),
                                      [](std::span<const double> g, std::span<std::vector<double>* const> in) {
                                        if (in[0])
                                          for (std::size_t i = 0; i < g.size(); ++i) (*in[0])[i] += g[i];
                                        if (in[1])
                                          for (std::size_t i = 0; i < g.size(); ++i) (*in[1])[i] -= g[i];
                                      });
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
  detail::check_same_shape("mul", a, b);
  auto A = a.data(), B = b.data();
  std::vector<double> y(A.size());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = A[i] * B[i];
  return detail::TensorAccess::record("mul", {&a, &b}, a.shape(), std::move(y),
                                      [a, b](std::span<const double> g, std::span<std::vector<double>* const> in) {
                                        auto A = a.data(), B = b.data();
                                        if (in[0])
                                          for (std::size_t i = 0; i < g.size(); ++i) (*in[0])[i] += g[i] * B[i];
                                        if (in[1])
                                          for (std::size_t i = 0; i < g.size(); ++i) (*in[1])[i] += g[i] * A[i];
                                      });
}

inline Tensor scale(const Tensor& a, double s) {
  auto A = a.data();
  std::vector<double> y(A.size());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = s * A[i];
  return detail::TensorAccess::record("scale", {&a}, a.shape(), std::move(y),
                                      [s](std::span<const double> g, std::span<std::vector<double>* const> in) {
                                        if (!in[0]) return;
                                        for (std::size_t i = 0; i < g.size(); ++i) (*in[0])[i] += s * g[i];
                                      });
}

inline Tensor sqrt(const Tensor& a) {
  auto A = a.data();
  std::vector<double> y(A.size());
  for (std::size_t i = 0; i < y.size(); ++i) {
    if (A[i] < 0.0) throw InvalidValue("sqrt: negative operand");
    y[i] = std::sqrt(A[i]);
  }
  auto ys = std::make_shared<std::vector<double>>(y);
  return detail::TensorAccess::record("sqrt", {&a}, a.shape(), std::move(y),
                                      [ys](std::span<const double> g, std::span<std::vector<double>* const> in) {
                                        if (!in[0]) return;
                                        for (std::size_t i = 0; i < g.size(); ++i)
                                          if ((*ys)[i] > 0.0) (*in[0])[i] += g[i] * 0.5 / (*ys)[i];
                                      });
}

/// a / (b + eps), elementwise. Every shifted denominator must be positive.
inline Tensor div(const Tensor& a, const Tensor& b, double eps = 0.0) {
  detail::check_same_shape("div", a, b);
  auto A = a.data(), B = b.data();
  std::vector<double> y(A.size());
  for (std::size_t i = 0; i < y.size(); ++i) {
    const double den = B[i] + eps;
    if (!(den >= std::numeric_limits<double>::min())) throw InvalidValue("div: denominator not positive");
    y[i] = A[i] / den;
  }
  return detail::TensorAccess::record(
      "div", {&a, &b}, a.shape(), std::move(y),
      [a, b, eps](std::span<const double> g, std::span<std::vector<double>* const> in) {
        auto A = a.data(), B = b.data();
        for (std::size_t i = 0; i < g.size(); ++i) {
          const double den = B[i] + eps;
          if (in[0]) (*in[0])[i] += g[i] / den;
          if (in[1]) (*in[1])[i] -= g[i] * A[i] / (den * den);
        }
      });
}

/// Adds a bias vector along axis 1 of [b,n] / [b,c,h,w], or axis 0 of [c,h,w].
inline Tensor add_bias(const Tensor& x, const Tensor& bias) {
  std::size_t outer, channels, inner;
  if (x.rank() == 2) {
    outer = x.dim(0), channels = x.dim(1), inner = 1;
  } else if (x.rank() == 3) {
    outer = 1, channels = x.dim(0), inner = x.dim(1) * x.dim(2);
  } else if (x.rank() == 4) {
    outer = x.dim(0), channels = x.dim(1), inner = x.dim(2) * x.dim(3);
  } else {
    throw SizeMismatch("add_bias: unsupported input rank " + shape_string(x.shape()));
  }
  if (bias.rank() != 1 || bias.dim(0) != channels)
    throw SizeMismatch("add_bias: bias " + shape_string(bias.shape()) + " does not match " +
                       shape_string(x.shape()));
  auto X = x.data(), Bv = bias.data();
  std::vector<double> y(X.size());
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t c = 0; c < channels; ++c)
      for (std::size_t i = 0; i < inner; ++i) {
        const std::size_t idx = (o * channels + c) * inner + i;
        y[idx] = X[idx] + Bv[c];
      }
  return detail::TensorAccess::record(
      "add_bias", {&x, &bias}, x.shape(), std::move(y),
      [outer, channels, inner](std::span<const double> g, std::span<std::vector<double>* const> in) {
        if (in[0])
          for (std::size_t i = 0; i < g.size(); ++i) (*in[0])[i] += g[i];
        if (in[1])
          for (std::size_t o = 0; o < outer; ++o)
            for (std::size_t c = 0; c < channels; ++c)
              for (std::size_t i = 0; i < inner; ++i) (*in[1])[c] += g[(o * channels + c) * inner + i];
      });
}

inline Tensor sum(const Tensor& a) {
  auto A = a.data();
  const double s = std::accumulate(A.begin(), A.end(), 0.0);
  return detail::TensorAccess::record("sum", {&a}, {1}, {s},
                                      [](std::span<const double> g, std::span<std::vector<double>* const> in) {
                                        if (!in[0]) return;
                                        for (auto& v : *in[0]) v += g[0];
                                      });
}

inline Tensor reshape(const Tensor& a, Shape shape) {
  if (shape_size(shape) != a.size())
    throw SizeMismatch("reshape: " + shape_string(a.shape()) + " to " + shape_string(shape));
  return detail::TensorAccess::record("reshape", {&a}, std::move(shape), a.to_vector(),
                                      [](std::span<const double> g, std::span<std::vector<double>* const> in) {
                                        if (!in[0]) return;
                                        for (std::size_t i = 0; i < g.size(); ++i) (*in[0])[i] += g[i];
                                      });
}

/// [b, ...] -> [b, prod(...)].
inline Tensor flatten_batch(const Tensor& a) {
  if (a.rank() < 2) throw SizeMismatch("flatten_batch: need a batch axis");
  return reshape(a, {a.dim(0), a.size() / a.dim(0)});
}

/// Mean over the batch of -log softmax(logits)[label].
inline Tensor softmax_cross_entropy(const Tensor& logits, std::span<const std::size_t> labels) {
  if (logits.rank() != 2) throw SizeMismatch("softmax_cross_entropy: logits must be [batch, classes]");
  const std::size_t n = logits.dim(0), k = logits.dim(1);
  if (labels.size() != n)
    throw SizeMismatch("softmax_cross_entropy: " + std::to_string(labels.size()) + " labels for batch of " +
                       std::to_string(n));
  for (auto l : labels)
    if (l >= k) throw InvalidValue("softmax_cross_entropy: label " + std::to_string(l) + " out of range");
  auto L = logits.data();
  auto probs = std::make_shared<std::vector<double>>(n * k);
  double loss = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double* row = &L[i * k];
    const double mx = *std::max_element(row, row + k);
    double z = 0.0;
    for (std::size_t j = 0; j < k; ++j) z += std::exp(row[j] - mx);
    const double logz = std::log(z);
    for (std::size_t j = 0; j < k; ++j) (*probs)[i * k + j] = std::exp(row[j] - mx - logz);
    loss -= row[labels[i]] - mx - logz;
  }
  loss /= static_cast<double>(n);
  std::vector<std::size_t> lab(labels.begin(), labels.end());
  return detail::TensorAccess::record(
      "softmax_cross_entropy", {&logits}, {1}, {loss},
      [probs, lab = std::move(lab), n, k](std::span<const double> g, std::span<std::vector<double>* const> in) {
        if (!in[0]) return;
        const double s = g[0] / static_cast<double>(n);
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t j = 0; j < k; ++j)
            (*in[0])[i * k + j] += s * ((*probs)[i * k + j] - (j == lab[i] ? 1.0 : 0.0));
      });
}

// ---------------------------------------------------------------------------
// Gradient checking
// ---------------------------------------------------------------------------

using MultiTensorFn = std::function<Tensor(std::span<const Tensor>)>;

/// Worst |analytic - numeric| / max(1, |numeric|) over every coordinate of
/// every input, using central differences with step `eps`.
inline double grad_check(const MultiTensorFn& f, std::span<const Tensor> xs, double eps = 1e-6) {
  if (!(eps > 0.0 && eps <= 1e-2)) throw InvalidValue("grad_check: eps must lie in (0, 1e-2]");
  Trace trace;
  auto vars = trace.variables(xs);
  auto root = f(vars);
  auto grads = trace.backward(root);

  double worst = 0.0;
  std::vector<Tensor> probe(xs.begin(), xs.end());
  for (std::size_t t = 0; t < xs.size(); ++t) {
    const auto& analytic = grads.at(vars[t]);
    auto values = xs[t].to_vector();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double orig = values[i];
      values[i] = orig + eps;
      probe[t] = Tensor::create(xs[t].shape(), values);
      const double up = f(probe).item();
      values[i] = orig - eps;
      probe[t] = Tensor::create(xs[t].shape(), values);
      const double down = f(probe).item();
      values[i] = orig;
      const double numeric = (up - down) / (2.0 * eps);
      worst = std::max(worst, std::abs(analytic[i] - numeric) / std::max(1.0, std::abs(numeric)));
    }
    probe[t] = xs[t];
  }
  return worst;
}

inline double grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x, double eps = 1e-6) {
  std::vector<Tensor> xs{x};
  return grad_check([&f](std::span<const Tensor> v) { return f(v[0]); }, xs, eps);
}

}  // namespace nocnet
