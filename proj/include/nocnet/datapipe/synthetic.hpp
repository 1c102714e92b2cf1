#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include "nocnet/datapipe/image.hpp"
#include "nocnet/error.hpp"
#include "nocnet/random.hpp"

namespace nocnet {

inline constexpr std::size_t kMaxClasses = 16;

inline const std::array<std::string, kMaxClasses>& class_names() {
  static const std::array<std::string, kMaxClasses> names{
      "triangle", "square",  "pentagon", "hexagon", "disk",    "hstripe2", "hstripe4", "vstripe2",
      "vstripe4", "dstripe", "blob1",    "blob2",   "blob3",   "blob4",    "ring",     "background"};
  return names;
}

struct SyntheticSpec {
  std::size_t classes = 16;
  std::size_t per_class = 50;
  std::size_t size = 32;
  bool motion = false;
  bool motion_correlated = true;
  double shift = 1.0;  // object displacement between the two clip frames, pixels
  std::uint64_t seed = 1;
};

struct SyntheticDataset {
  std::vector<SampleRecord> records;
  std::vector<VideoClip> clips;  // clip i belongs to records[i]; empty without motion
};

/// The last class is always the object-free background.
inline std::size_t background_class(std::size_t classes) { return classes - 1; }

/// Object family drawn for class c: the first classes-1 families, then background.
inline std::size_t family_of(std::size_t class_id, std::size_t classes) {
  return class_id == background_class(classes) ? kMaxClasses - 1 : class_id;
}

/// Motion direction (radians, y down) tied to class c when motion is correlated.
inline double class_direction(std::size_t class_id, std::size_t classes) {
  return 2.0 * std::numbers::pi * static_cast<double>(class_id) / static_cast<double>(classes);
}

namespace detail {

struct SceneParams {
  std::size_t family = 0;
  std::array<double, 3> bg{};
  std::array<std::array<double, 4>, 3> waves{};  // fx, fy, phase, amplitude
  std::array<double, 3> fg{};
  double cx = 0, cy = 0, radius = 0, rotation = 0, phase = 0;
  std::vector<double> noise;
};

inline double luma(const std::array<double, 3>& c) { return 0.299 * c[0] + 0.587 * c[1] + 0.114 * c[2]; }

inline SceneParams draw_scene(std::size_t family, std::size_t size, Rng& rng) {
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  SceneParams p;
  p.family = family;
  const double base = 0.3 + 0.4 * u01(rng);
  for (auto& c : p.bg) c = std::clamp(base + 0.1 * (u01(rng) - 0.5), 0.0, 1.0);
  for (auto& wv : p.waves) wv = {0.5 + 2.5 * u01(rng), 0.5 + 2.5 * u01(rng), 2.0 * std::numbers::pi * u01(rng), 0.03};
  for (int tries = 0; tries < 64; ++tries) {
    for (auto& c : p.fg) c = u01(rng);
    if (std::abs(luma(p.fg) - luma(p.bg)) >= 0.3) break;
  }
  if (std::abs(luma(p.fg) - luma(p.bg)) < 0.3) p.fg = luma(p.bg) > 0.5 ? std::array{0.05, 0.05, 0.05} : std::array{0.95, 0.95, 0.95};
  const double s = static_cast<double>(size);
  p.cx = s / 2.0 + s * 0.1 * (2.0 * u01(rng) - 1.0);
  p.cy = s / 2.0 + s * 0.1 * (2.0 * u01(rng) - 1.0);
  p.radius = s * (0.24 + 0.08 * u01(rng));
  p.rotation = 2.0 * std::numbers::pi * u01(rng);
  p.phase = 2.0 * std::numbers::pi * u01(rng);
  p.noise.resize(3 * size * size);
  for (auto& n : p.noise) n = 0.03 * (2.0 * u01(rng) - 1.0);
  return p;
}

/// Foreground weight in [0,1] at (x, y), relative to the object center.
inline double foreground(const SceneParams& p, double x, double y) {
  const double dx = x - p.cx, dy = y - p.cy, r = p.radius;
  const double rr = std::hypot(dx, dy);
  const double pi = std::numbers::pi;
  switch (p.family) {
    case 0:
    case 1:
    case 2:
    case 3: {
      const double sides = static_cast<double>(p.family + 3);
      const double sector = 2.0 * pi / sides;
      double a = std::atan2(dy, dx) - p.rotation;
      a = a - sector * std::floor(a / sector) - sector / 2.0;
      return rr * std::cos(a) <= r * std::cos(pi / sides) ? 1.0 : 0.0;
    }
    case 4:
      return rr <= r ? 1.0 : 0.0;
    case 5:
    case 6:
    case 7:
    case 8:
    case 9: {
      const double half = 0.85 * r;
      if (std::abs(dx) > half || std::abs(dy) > half) return 0.0;
      const double cycles = p.family == 9 ? 3.0 : (p.family == 5 || p.family == 7 ? 2.0 : 4.0);
      double t = 0.0;
      if (p.family == 5 || p.family == 6) t = (dy + half) / (2.0 * half);
      else if (p.family == 7 || p.family == 8) t = (dx + half) / (2.0 * half);
      else t = (dx + dy + 2.0 * half) / (4.0 * half);
      return std::sin(2.0 * pi * cycles * t + p.phase) > 0.0 ? 1.0 : 0.0;
    }
    case 10:
    case 11:
    case 12:
    case 13: {
      const std::size_t count = p.family - 9;
      const double br = count == 1 ? 0.55 * r : 0.32 * r;
      for (std::size_t b = 0; b < count; ++b) {
        double ox = 0, oy = 0;
        if (count > 1) {
          const double a = p.rotation + 2.0 * pi * static_cast<double>(b) / static_cast<double>(count);
          ox = 0.62 * r * std::cos(a);
          oy = 0.62 * r * std::sin(a);
        }
        if (std::hypot(dx - ox, dy - oy) <= br) return 1.0;
      }
      return 0.0;
    }
    case 14:
      return rr <= r && rr >= 0.6 * r ? 1.0 : 0.0;
    default:
      return 0.0;
  }
}

/// Renders with the object displaced by (ox, oy); the background stays put.
inline Frame render_scene(const SceneParams& p, std::size_t size, double ox, double oy) {
  Frame f = Frame::blank(3, size, size);
  SceneParams moved = p;
  moved.cx += ox;
  moved.cy += oy;
  const double s = static_cast<double>(size);
  for (std::size_t y = 0; y < size; ++y)
    for (std::size_t x = 0; x < size; ++x) {
      double cover = 0.0;
      for (int sy = 0; sy < 2; ++sy)
        for (int sx = 0; sx < 2; ++sx)
          cover += 0.25 * foreground(moved, static_cast<double>(x) + 0.25 + 0.5 * sx, static_cast<double>(y) + 0.25 + 0.5 * sy);
      double tex = 0.0;
      for (const auto& wv : p.waves)
        tex += wv[3] * std::sin(2.0 * std::numbers::pi * (wv[0] * static_cast<double>(x) + wv[1] * static_cast<double>(y)) / s + wv[2]);
      for (std::size_t c = 0; c < 3; ++c) {
        const double bg = p.bg[c] + tex + p.noise[(c * size + y) * size + x];
        f.at(c, y, x) = (1.0 - cover) * bg + cover * p.fg[c];
      }
    }
  f.clamp();
  return f;
}

}  // namespace detail

inline SyntheticDataset gen_synthetic_dataset(const SyntheticSpec& spec) {
  if (spec.classes < 2 || spec.classes > kMaxClasses) throw InvalidValue("class count must be in [2, 16]");
  if (spec.size < 16) throw InvalidValue("image size must be at least 16");
  if (spec.per_class == 0) throw InvalidValue("samples per class must be positive");
  if (!(spec.shift >= 0.0) || !std::isfinite(spec.shift)) throw InvalidValue("shift must be non-negative");
  SyntheticDataset ds;
  ds.records.reserve(spec.classes * spec.per_class);
  for (std::size_t c = 0; c < spec.classes; ++c) {
    for (std::size_t i = 0; i < spec.per_class; ++i) {
      auto rng = make_rng(spec.seed, {c, i});
      const auto scene = detail::draw_scene(family_of(c, spec.classes), spec.size, rng);
      auto frame0 = detail::render_scene(scene, spec.size, 0.0, 0.0);
      if (spec.motion) {
        double dir = class_direction(c, spec.classes);
        if (!spec.motion_correlated)
          dir = class_direction(std::uniform_int_distribution<std::size_t>(0, spec.classes - 1)(rng), spec.classes);
        VideoClip clip;
        clip.label = c;
        clip.frames.push_back(frame0);
        clip.frames.push_back(detail::render_scene(scene, spec.size, spec.shift * std::cos(dir), spec.shift * std::sin(dir)));
        ds.clips.push_back(std::move(clip));
      }
      ds.records.push_back({std::move(frame0), c, Source::normal, std::nullopt});
    }
  }
  return ds;
}

}  // namespace nocnet
