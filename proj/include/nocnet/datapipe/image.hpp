#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "nocnet/error.hpp"
#include "nocnet/tensor.hpp"

namespace nocnet {

/// Channel-major image with values in [0,1].
struct Frame {
  std::size_t channels = 1;
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<double> pixels;

  static Frame blank(std::size_t channels, std::size_t height, std::size_t width, double value = 0.0) {
    if (channels == 0 || height == 0 || width == 0) throw SizeMismatch("frame dimensions must be positive");
    return {channels, height, width, std::vector<double>(channels * height * width, value)};
  }

  std::size_t plane_size() const noexcept { return height * width; }
  double& at(std::size_t c, std::size_t y, std::size_t x) { return pixels[(c * height + y) * width + x]; }
  double at(std::size_t c, std::size_t y, std::size_t x) const { return pixels[(c * height + y) * width + x]; }
  std::span<const double> plane(std::size_t c) const {
    return std::span<const double>(pixels).subspan(c * plane_size(), plane_size());
  }
  std::span<double> plane(std::size_t c) { return std::span<double>(pixels).subspan(c * plane_size(), plane_size()); }

  bool same_geometry(const Frame& o) const noexcept {
    return channels == o.channels && height == o.height && width == o.width;
  }

  void clamp() {
    for (auto& p : pixels) p = std::isfinite(p) ? std::clamp(p, 0.0, 1.0) : 0.0;
  }

  double mean() const {
    double s = 0.0;
    for (double p : pixels) s += p;
    return s / static_cast<double>(pixels.size());
  }

  friend bool operator==(const Frame&, const Frame&) = default;
};

/// Luma (Rec. 601) of an RGB frame; single-channel frames pass through.
inline Frame to_gray(const Frame& f) {
  if (f.channels == 1) return f;
  if (f.channels != 3) throw SizeMismatch("to_gray expects 1 or 3 channels");
  Frame g = Frame::blank(1, f.height, f.width);
  for (std::size_t i = 0; i < f.plane_size(); ++i)
    g.pixels[i] = 0.299 * f.pixels[i] + 0.587 * f.pixels[f.plane_size() + i] + 0.114 * f.pixels[2 * f.plane_size() + i];
  return g;
}

enum class Source { normal, blurred };

inline const char* source_name(Source s) { return s == Source::normal ? "normal" : "blurred"; }

struct VideoClip {
  std::vector<Frame> frames;
  double fps = 30.0;
  std::size_t label = 0;

  void validate() const {
    if (frames.empty()) throw InvalidValue("video clip has no frames");
    if (!(fps > 0.0)) throw InvalidValue("video clip fps must be positive");
    for (const auto& f : frames)
      if (!f.same_geometry(frames.front())) throw SizeMismatch("video clip frames differ in geometry");
  }
};

struct SampleRecord {
  Frame image;
  std::size_t class_id = 0;
  Source source = Source::normal;
  std::optional<std::size_t> partition;
};

/// Frames stacked as a [n, c, h, w] tensor.
inline Tensor frames_to_tensor(std::span<const Frame* const> frames) {
  if (frames.empty()) throw InvalidValue("no frames to stack");
  const auto& f0 = *frames.front();
  std::vector<double> data;
  data.reserve(frames.size() * f0.pixels.size());
  for (const auto* f : frames) {
    if (!f->same_geometry(f0)) throw SizeMismatch("frames differ in geometry");
    data.insert(data.end(), f->pixels.begin(), f->pixels.end());
  }
  return Tensor::create({frames.size(), f0.channels, f0.height, f0.width}, std::move(data));
}

// ---------------------------------------------------------------------------
// Binary PPM (P6) / PGM (P5), 8-bit.
// ---------------------------------------------------------------------------

inline void write_pnm(const Frame& f, const std::string& path) {
  if (f.channels != 1 && f.channels != 3) throw InvalidValue("PNM output needs 1 or 3 channels");
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open " + path + " for writing");
  os << (f.channels == 3 ? "P6" : "P5") << '\n' << f.width << ' ' << f.height << "\n255\n";
  std::vector<unsigned char> bytes(f.pixels.size());
  for (std::size_t y = 0, k = 0; y < f.height; ++y)
    for (std::size_t x = 0; x < f.width; ++x)
      for (std::size_t c = 0; c < f.channels; ++c)
        bytes[k++] = static_cast<unsigned char>(std::lround(std::clamp(f.at(c, y, x), 0.0, 1.0) * 255.0));
  os.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!os) throw IoError("failed writing " + path);
}

inline Frame read_pnm(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path);
  auto token = [&is, &path]() {
    std::string t;
    char ch;
    while (is.get(ch)) {
      if (ch == '#') {
        std::string skip;
        std::getline(is, skip);
      } else if (std::isspace(static_cast<unsigned char>(ch))) {
        if (!t.empty()) break;
      } else {
        t.push_back(ch);
      }
    }
    if (t.empty()) throw IoError("truncated PNM header in " + path);
    return t;
  };
  const auto magic = token();
  if (magic != "P6" && magic != "P5") throw IoError(path + " is not a binary PPM/PGM file");
  const std::size_t width = std::stoul(token()), height = std::stoul(token()), maxval = std::stoul(token());
  if (maxval == 0 || maxval > 255) throw IoError("only 8-bit PNM files are supported");
  Frame f = Frame::blank(magic == "P6" ? 3 : 1, height, width);
  std::vector<unsigned char> bytes(f.pixels.size());
  if (!is.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size())))
    throw IoError("truncated pixel data in " + path);
  for (std::size_t y = 0, k = 0; y < height; ++y)
    for (std::size_t x = 0; x < width; ++x)
      for (std::size_t c = 0; c < f.channels; ++c) f.at(c, y, x) = bytes[k++] / static_cast<double>(maxval);
  return f;
}

}  // namespace nocnet
