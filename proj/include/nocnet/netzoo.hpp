#pragma once

// Classifier heads over convolutional feature maps (0C3fc, 1C3fc, 1M1), a small
// convolutional backbone that produces those maps, and two-stream sum fusion.

#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "nocnet/error.hpp"
#include "nocnet/random.hpp"
#include "nocnet/tensor.hpp"

namespace nocnet {

enum class ArchId : std::uint32_t { C0F3 = 0, C1F3 = 1, M1 = 2, Backbone = 3 };

inline std::string_view arch_name(ArchId id) {
  switch (id) {
    case ArchId::C0F3: return "0C3fc";
    case ArchId::C1F3: return "1C3fc";
    case ArchId::M1: return "1M1";
    case ArchId::Backbone: return "backbone";
  }
  return "?";
}

/// Accepts both spellings: "C1F3" and "1C3fc" (likewise for the others).
inline std::optional<ArchId> parse_arch(std::string_view s) {
  if (s == "C0F3" || s == "0C3fc") return ArchId::C0F3;
  if (s == "C1F3" || s == "1C3fc") return ArchId::C1F3;
  if (s == "M1" || s == "1M1") return ArchId::M1;
  return std::nullopt;
}

struct InputShape {
  std::size_t channels = 0;
  std::size_t height = 0;
  std::size_t width = 0;

  Shape batch_shape(std::size_t batch) const { return {batch, channels, height, width}; }
  friend bool operator==(const InputShape&, const InputShape&) = default;
};

struct NocArch {
  ArchId id = ArchId::C1F3;
  InputShape input{16, 4, 4};
  std::size_t num_classes = 16;
  double width_scale = 1.0 / 32.0;

  /// Width of the hidden fully-connected layers (4096 at full scale).
  std::size_t hidden_width() const { return static_cast<std::size_t>(std::lround(4096.0 * width_scale)); }
  /// Feature maps of each head conv layer (64 at full scale).
  std::size_t conv_maps() const {
    return std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(64.0 * width_scale)));
  }
};

namespace layer {
struct Conv {
  std::size_t out_channels, kernel, stride, pad;
  std::size_t weight, bias;  // parameter indices
};
struct MaxPool {
  std::size_t window, stride;
};
struct Fc {
  std::size_t out;
  std::size_t weight, bias;
};
struct Relu {};
struct Flatten {};
}  // namespace layer

using Layer = std::variant<layer::Conv, layer::MaxPool, layer::Fc, layer::Relu, layer::Flatten>;

inline std::string_view layer_kind(const Layer& l) {
  struct {
    std::string_view operator()(const layer::Conv&) const { return "conv"; }
    std::string_view operator()(const layer::MaxPool&) const { return "maxpool"; }
    std::string_view operator()(const layer::Fc&) const { return "fc"; }
    std::string_view operator()(const layer::Relu&) const { return "relu"; }
    std::string_view operator()(const layer::Flatten&) const { return "flatten"; }
  } v;
  return std::visit(v, l);
}

struct Param {
  std::string name;
  Tensor value;
};

class Model {
 public:
  ArchId arch() const noexcept { return arch_; }
  const InputShape& input_shape() const noexcept { return input_; }
  /// Classes for a head, feature channels for a backbone.
  std::size_t output_width() const noexcept { return output_width_; }
  double width_scale() const noexcept { return width_scale_; }
  const std::vector<Layer>& layers() const noexcept { return layers_; }
  const std::vector<Param>& params() const noexcept { return params_; }
  /// Index of the layer whose output is the last hidden (post-relu) activation.
  std::size_t penultimate_index() const noexcept { return penultimate_; }
  /// Per-sample output shape of layer `i`.
  const Shape& layer_shape(std::size_t i) const { return shapes_.at(i); }
  const Shape& output_shape() const { return shapes_.back(); }

  std::vector<Tensor> param_values() const {
    std::vector<Tensor> out;
    out.reserve(params_.size());
    for (const auto& p : params_) out.push_back(p.value);
    return out;
  }

  void set_param_values(std::span<const Tensor> values) {
    if (values.size() != params_.size())
      throw ArchMismatch("expected " + std::to_string(params_.size()) + " parameters, got " +
                         std::to_string(values.size()));
    for (std::size_t i = 0; i < values.size(); ++i)
      if (values[i].shape() != params_[i].value.shape())
        throw SizeMismatch("parameter " + params_[i].name + " expects " + shape_string(params_[i].value.shape()));
    for (std::size_t i = 0; i < values.size(); ++i) params_[i].value = values[i].detached();
  }

  /// Same layers and parameter shapes.
  bool same_structure(const Model& other) const {
    if (arch_ != other.arch_ || !(input_ == other.input_) || output_width_ != other.output_width_ ||
        layers_.size() != other.layers_.size() || params_.size() != other.params_.size())
      return false;
    for (std::size_t i = 0; i < params_.size(); ++i)
      if (params_[i].value.shape() != other.params_[i].value.shape()) return false;
    return shapes_ == other.shapes_;
  }

 private:
  friend class ModelBuilder;

  ArchId arch_ = ArchId::C0F3;
  InputShape input_;
  std::size_t output_width_ = 0;
  double width_scale_ = 1.0;
  std::vector<Layer> layers_;
  std::vector<Param> params_;
  std::vector<Shape> shapes_;
  std::size_t penultimate_ = 0;
};

/// Appends layers while tracking per-sample shapes; He-initializes weights.
class ModelBuilder {
 public:
  ModelBuilder(ArchId arch, InputShape input, double width_scale, std::uint64_t seed)
      : rng_(make_rng(seed, {static_cast<std::uint64_t>(arch)})) {
    if (input.channels == 0 || input.height == 0 || input.width == 0)
      throw SizeMismatch("input shape must be positive");
    model_.arch_ = arch;
    model_.input_ = input;
    model_.width_scale_ = width_scale;
    current_ = {input.channels, input.height, input.width};
  }

  ModelBuilder& conv(std::size_t out_channels, std::size_t kernel, std::size_t stride, std::size_t pad) {
    if (current_.size() != 3) throw SizeMismatch("conv layer needs a feature map input");
    const std::size_t c = current_[0], h = current_[1], w = current_[2];
    if (h + 2 * pad < kernel || w + 2 * pad < kernel)
      throw SizeMismatch("conv kernel " + std::to_string(kernel) + " larger than padded input " +
                         shape_string(current_));
    const std::size_t idx = ++convs_;
    const auto wi = add_param("conv" + std::to_string(idx) + ".weight", {out_channels, c, kernel, kernel},
                              static_cast<double>(c * kernel * kernel));
    const auto bi = add_param("conv" + std::to_string(idx) + ".bias", {out_channels}, 0.0);
    current_ = {out_channels, (h + 2 * pad - kernel) / stride + 1, (w + 2 * pad - kernel) / stride + 1};
    return push(layer::Conv{out_channels, kernel, stride, pad, wi, bi});
  }

  ModelBuilder& maxpool(std::size_t window, std::size_t stride) {
    if (current_.size() != 3) throw SizeMismatch("maxpool layer needs a feature map input");
    if (current_[1] < window || current_[2] < window)
      throw SizeMismatch("maxpool window larger than input " + shape_string(current_));
    current_ = {current_[0], (current_[1] - window) / stride + 1, (current_[2] - window) / stride + 1};
    return push(layer::MaxPool{window, stride});
  }

  ModelBuilder& flatten() {
    current_ = {shape_size(current_)};
    return push(layer::Flatten{});
  }

  ModelBuilder& fc(std::size_t out) {
    if (current_.size() != 1) throw SizeMismatch("fc layer needs a flat input");
    const std::size_t in = current_[0];
    const std::size_t idx = ++fcs_;
    const auto wi = add_param("fc" + std::to_string(idx) + ".weight", {in, out}, static_cast<double>(in));
    const auto bi = add_param("fc" + std::to_string(idx) + ".bias", {out}, 0.0);
    current_ = {out};
    return push(layer::Fc{out, wi, bi});
  }

  ModelBuilder& relu() { return push(layer::Relu{}); }

  ModelBuilder& mark_penultimate() {
    model_.penultimate_ = model_.layers_.size() - 1;
    return *this;
  }

  Model finish(std::size_t output_width) {
    model_.output_width_ = output_width;
    return std::move(model_);
  }

 private:
  ModelBuilder& push(Layer l) {
    model_.layers_.push_back(l);
    model_.shapes_.push_back(current_);
    return *this;
  }

  // fan_in == 0 means zero-initialized (biases).
  std::size_t add_param(std::string name, Shape shape, double fan_in) {
    std::vector<double> values(shape_size(shape), 0.0);
    if (fan_in > 0.0) {
      std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / fan_in));
      for (auto& v : values) v = dist(rng_);
    }
    model_.params_.push_back({std::move(name), Tensor::create(std::move(shape), std::move(values))});
    return model_.params_.size() - 1;
  }

  Model model_;
  Shape current_;
  Rng rng_;
  std::size_t convs_ = 0, fcs_ = 0;
};

inline void validate_arch(const NocArch& arch) {
  if (arch.id == ArchId::Backbone || static_cast<std::uint32_t>(arch.id) > 2)
    throw InvalidValue("NocArch id must be one of 0C3fc, 1C3fc, 1M1");
  if (!(arch.width_scale > 0.0 && arch.width_scale <= 1.0)) throw InvalidValue("width_scale must lie in (0, 1]");
  if (arch.num_classes == 0) throw InvalidValue("num_classes must be positive");
  if (arch.hidden_width() < arch.num_classes)
    throw InvalidValue("scaled hidden width " + std::to_string(arch.hidden_width()) + " is below class count");
}

/// Builds one of the three heads. Conv layers are 3x3, stride 1, pad 1.
inline Model build_noc(const NocArch& arch, std::uint64_t seed) {
  validate_arch(arch);
  const std::size_t w = arch.hidden_width();
  const std::size_t maps = arch.conv_maps();
  ModelBuilder b(arch.id, arch.input, arch.width_scale, seed);
  switch (arch.id) {
    case ArchId::C0F3:
      break;
    case ArchId::C1F3:
      b.conv(maps, 3, 1, 1).relu();
      break;
    case ArchId::M1:
      b.conv(maps, 3, 1, 1).relu().maxpool(2, 2).conv(maps, 3, 1, 1).relu();
      break;
    case ArchId::Backbone:
      break;
  }
  b.flatten().fc(w).relu().fc(w).relu().mark_penultimate().fc(arch.num_classes);
  return b.finish(arch.num_classes);
}

/// Three conv(3x3)+relu+maxpool(2) blocks: downsamples by 8 and ends with
/// `feature_channels` maps.
inline Model build_backbone(InputShape input, std::size_t feature_channels, std::uint64_t seed) {
  if (input.height < 16 || input.width < 16)
    throw SizeMismatch("backbone input must be at least 16x16, got " + std::to_string(input.height) + "x" +
                       std::to_string(input.width));
  if (feature_channels == 0) throw InvalidValue("feature_channels must be positive");
  const std::size_t first = std::max<std::size_t>(1, feature_channels / 2);
  ModelBuilder b(ArchId::Backbone, input, 1.0, seed);
  b.conv(first, 3, 1, 1).relu().maxpool(2, 2);
  b.conv(feature_channels, 3, 1, 1).relu().maxpool(2, 2);
  b.conv(feature_channels, 3, 1, 1).relu().maxpool(2, 2).mark_penultimate();
  return b.finish(feature_channels);
}

namespace detail {

inline void check_batch(const Model& model, const Tensor& batch) {
  const auto& in = model.input_shape();
  if (batch.rank() != 4 || batch.dim(1) != in.channels || batch.dim(2) != in.height || batch.dim(3) != in.width)
    throw SizeMismatch("batch " + shape_string(batch.shape()) + " does not match model input [b," +
                       std::to_string(in.channels) + "," + std::to_string(in.height) + "," +
                       std::to_string(in.width) + "]");
}

}  // namespace detail

/// Output of layer `last` (inclusive) using explicit (possibly traced) parameters.
inline Tensor forward_until(const Model& model, const Tensor& batch, std::span<const Tensor> params,
                            std::size_t last) {
  detail::check_batch(model, batch);
  if (params.size() != model.params().size()) throw ArchMismatch("parameter count does not match model");
  if (last >= model.layers().size()) throw InvalidValue("layer index out of range");
  Tensor x = batch;
  for (std::size_t i = 0; i <= last; ++i) {
    const auto& l = model.layers()[i];
    if (auto* c = std::get_if<layer::Conv>(&l)) {
      x = conv2d(x, params[c->weight], params[c->bias], c->stride, c->pad);
    } else if (auto* p = std::get_if<layer::MaxPool>(&l)) {
      x = maxpool2d(x, p->window, p->stride);
    } else if (auto* f = std::get_if<layer::Fc>(&l)) {
      x = add_bias(matmul(x, params[f->weight]), params[f->bias]);
    } else if (std::holds_alternative<layer::Relu>(l)) {
      x = relu(x);
    } else {
      x = flatten_batch(x);
    }
  }
  return x;
}

inline Tensor forward(const Model& model, const Tensor& batch, std::span<const Tensor> params) {
  return forward_until(model, batch, params, model.layers().size() - 1);
}

inline Tensor forward(const Model& model, const Tensor& batch) {
  const auto params = model.param_values();
  return forward(model, batch, params);
}

/// Last hidden fc activations (post-relu), one row per sample.
inline Tensor penultimate_features(const Model& model, const Tensor& batch) {
  const auto params = model.param_values();
  return forward_until(model, batch, params, model.penultimate_index());
}

/// Elementwise sum of two equally shaped feature maps.
inline Tensor fuse_sum(const Tensor& rgb_features, const Tensor& orient_features) {
  if (rgb_features.shape() != orient_features.shape())
    throw SizeMismatch("fuse_sum: stream shapes " + shape_string(rgb_features.shape()) + " and " +
                       shape_string(orient_features.shape()) + " differ");
  return add(rgb_features, orient_features);
}

struct TwoStreamParams {
  std::span<const Tensor> rgb_backbone;
  std::span<const Tensor> orient_backbone;
  std::span<const Tensor> head;
};

inline Tensor two_stream_features(const Model& rgb_backbone, const Model& orient_backbone, const Tensor& rgb,
                                  const Tensor& orient, const TwoStreamParams& p) {
  if (rgb.rank() != 4 || orient.rank() != 4 || rgb.dim(0) != orient.dim(0) || rgb.dim(2) != orient.dim(2) ||
      rgb.dim(3) != orient.dim(3))
    throw SizeMismatch("two-stream inputs are not spatially aligned");
  if (rgb_backbone.output_shape() != orient_backbone.output_shape())
    throw SizeMismatch("backbones emit different feature shapes");
  return fuse_sum(forward(rgb_backbone, rgb, p.rgb_backbone), forward(orient_backbone, orient, p.orient_backbone));
}

/// head(fuse_sum(rgb_backbone(rgb), orient_backbone(orient))).
inline Tensor two_stream_forward(const Model& rgb_backbone, const Model& orient_backbone, const Model& head,
                                 const Tensor& rgb, const Tensor& orient, const TwoStreamParams& p) {
  return forward(head, two_stream_features(rgb_backbone, orient_backbone, rgb, orient, p), p.head);
}

inline Tensor two_stream_forward(const Model& rgb_backbone, const Model& orient_backbone, const Model& head,
                                 const Tensor& rgb, const Tensor& orient) {
  const auto a = rgb_backbone.param_values(), b = orient_backbone.param_values(), c = head.param_values();
  return two_stream_forward(rgb_backbone, orient_backbone, head, rgb, orient, {a, b, c});
}

// ---------------------------------------------------------------------------
// Binary model files: "NOC1", u32 arch, u32 c/h/w, u32 output width,
// f64 width scale, u32 param count, per param (u32 rank, u32 dims...),
// then every parameter value as little-endian f64 in declaration order.
// ---------------------------------------------------------------------------

namespace detail {

template <typename T>
void write_le(std::ostream& os, T value) {
  std::array<unsigned char, sizeof(T)> bytes;
  std::memcpy(bytes.data(), &value, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes.begin(), bytes.end());
  os.write(reinterpret_cast<const char*>(bytes.data()), sizeof(T));
}

template <typename T>
T read_le(std::istream& is) {
  std::array<unsigned char, sizeof(T)> bytes;
  if (!is.read(reinterpret_cast<char*>(bytes.data()), sizeof(T))) throw IoError("truncated model file");
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes.begin(), bytes.end());
  T value;
  std::memcpy(&value, bytes.data(), sizeof(T));
  return value;
}

}  // namespace detail

inline void write_model(std::ostream& os, const Model& model) {
  os.write("NOC1", 4);
  detail::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(model.arch()));
  detail::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(model.input_shape().channels));
  detail::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(model.input_shape().height));
  detail::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(model.input_shape().width));
  detail::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(model.output_width()));
  detail::write_le<double>(os, model.width_scale());
  detail::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(model.params().size()));
  for (const auto& p : model.params()) {
    detail::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(p.value.rank()));
    for (auto d : p.value.shape()) detail::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(d));
  }
  for (const auto& p : model.params())
    for (double v : p.value.data()) detail::write_le<double>(os, v);
  if (!os) throw IoError("failed writing model");
}

inline Model read_model(std::istream& is) {
  char magic[4];
  if (!is.read(magic, 4) || std::string_view(magic, 4) != "NOC1") throw IoError("not a NOC1 model file");
  const auto arch = static_cast<ArchId>(detail::read_le<std::uint32_t>(is));
  InputShape in;
  in.channels = detail::read_le<std::uint32_t>(is);
  in.height = detail::read_le<std::uint32_t>(is);
  in.width = detail::read_le<std::uint32_t>(is);
  const std::size_t out = detail::read_le<std::uint32_t>(is);
  const double scale = detail::read_le<double>(is);
  Model model = arch == ArchId::Backbone ? build_backbone(in, out, 0)
                : static_cast<std::uint32_t>(arch) <= 2 ? build_noc(NocArch{arch, in, out, scale}, 0)
                                                         : throw IoError("unknown arch id in model file");
  const std::size_t count = detail::read_le<std::uint32_t>(is);
  if (count != model.params().size()) throw ArchMismatch("model file parameter count mismatch");
  std::vector<Shape> shapes(count);
  for (auto& s : shapes) {
    s.resize(detail::read_le<std::uint32_t>(is));
    for (auto& d : s) d = detail::read_le<std::uint32_t>(is);
  }
  std::vector<Tensor> values;
  for (std::size_t i = 0; i < count; ++i) {
    if (shapes[i] != model.params()[i].value.shape())
      throw ArchMismatch("model file shape mismatch for " + model.params()[i].name);
    std::vector<double> data(shape_size(shapes[i]));
    for (auto& v : data) v = detail::read_le<double>(is);
    values.push_back(Tensor::create(shapes[i], std::move(data)));
  }
  model.set_param_values(values);
  return model;
}

inline void save_model(const Model& model, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open " + path + " for writing");
  write_model(os, model);
}

inline Model load_model(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path);
  return read_model(is);
}

}  // namespace nocnet
