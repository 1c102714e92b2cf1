#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numbers>
#include <optional>
#include <random>
#include <string_view>
#include <vector>

#include "nocnet/datapipe/image.hpp"
#include "nocnet/error.hpp"
#include "nocnet/random.hpp"

namespace nocnet {

enum class BlurKind { gaussian, motion };

inline std::string_view blur_kind_name(BlurKind k) { return k == BlurKind::gaussian ? "gaussian" : "motion"; }

inline std::optional<BlurKind> parse_blur_kind(std::string_view s) {
  if (s == "gaussian") return BlurKind::gaussian;
  if (s == "motion") return BlurKind::motion;
  return std::nullopt;
}

struct BlurSpec {
  BlurKind kind = BlurKind::gaussian;
  double sigma = 2.0;
  std::size_t length = 9;
  std::optional<double> angle_deg;  // motion only; drawn from the seed when absent
};

/// Odd-sized kernel, centered.
struct Kernel {
  std::size_t height = 1;
  std::size_t width = 1;
  std::vector<double> weights{1.0};

  double at(std::size_t y, std::size_t x) const { return weights[y * width + x]; }
};

inline Kernel gaussian_kernel(double sigma) {
  if (!(sigma > 0.0) || !std::isfinite(sigma)) throw InvalidValue("gaussian sigma must be positive");
  const auto r = static_cast<std::size_t>(std::max(1.0, std::ceil(3.0 * sigma)));
  const std::size_t n = 2 * r + 1;
  std::vector<double> g(n);
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double d = static_cast<double>(i) - static_cast<double>(r);
    g[i] = std::exp(-d * d / (2.0 * sigma * sigma));
    s += g[i];
  }
  Kernel k{n, n, std::vector<double>(n * n)};
  for (std::size_t y = 0; y < n; ++y)
    for (std::size_t x = 0; x < n; ++x) k.weights[y * n + x] = g[y] * g[x] / (s * s);
  return k;
}

/// One-pixel-wide line through the center; angle in degrees, counter-clockwise with y pointing down.
inline Kernel motion_kernel(std::size_t length, double angle_deg) {
  if (length < 1) throw InvalidValue("motion length must be at least 1");
  if (!std::isfinite(angle_deg)) throw InvalidValue("motion angle must be finite");
  const double th = angle_deg * std::numbers::pi / 180.0;
  const double half = (static_cast<double>(length) - 1.0) / 2.0;
  const auto r = static_cast<std::size_t>(std::ceil(half));
  const std::size_t n = 2 * r + 1;
  Kernel k{n, n, std::vector<double>(n * n, 0.0)};
  for (std::size_t i = 0; i < length; ++i) {
    const double t = static_cast<double>(i) - half;
    const auto dx = static_cast<long>(std::lround(t * std::cos(th)));
    const auto dy = static_cast<long>(std::lround(-t * std::sin(th)));
    k.weights[static_cast<std::size_t>(dy + static_cast<long>(r)) * n + static_cast<std::size_t>(dx + static_cast<long>(r))] = 1.0;
  }
  double s = 0.0;
  for (double w : k.weights) s += w;
  for (double& w : k.weights) w /= s;
  return k;
}

/// Mirror index without repeating the edge sample (d c b | a b c d | c b a).
inline std::size_t reflect_index(long i, std::size_t n) {
  if (n == 1) return 0;
  const long period = 2 * static_cast<long>(n) - 2;
  long m = i % period;
  if (m < 0) m += period;
  return static_cast<std::size_t>(m < static_cast<long>(n) ? m : period - m);
}

inline Frame convolve_reflect(const Frame& f, const Kernel& k) {
  Frame out = f;
  const long ry = static_cast<long>(k.height / 2), rx = static_cast<long>(k.width / 2);
  for (std::size_t c = 0; c < f.channels; ++c)
    for (std::size_t y = 0; y < f.height; ++y)
      for (std::size_t x = 0; x < f.width; ++x) {
        double acc = 0.0;
        for (std::size_t ky = 0; ky < k.height; ++ky) {
          const auto sy = reflect_index(static_cast<long>(y) + static_cast<long>(ky) - ry, f.height);
          for (std::size_t kx = 0; kx < k.width; ++kx) {
            const double w = k.at(ky, kx);
            if (w == 0.0) continue;
            acc += w * f.at(c, sy, reflect_index(static_cast<long>(x) + static_cast<long>(kx) - rx, f.width));
          }
        }
        out.at(c, y, x) = acc;
      }
  out.clamp();
  return out;
}

inline Frame synth_blur(const Frame& image, const BlurSpec& spec, std::uint64_t seed) {
  if (spec.kind == BlurKind::gaussian) return convolve_reflect(image, gaussian_kernel(spec.sigma));
  double angle = 0.0;
  if (spec.angle_deg) {
    angle = *spec.angle_deg;
  } else {
    auto rng = make_rng(seed, {0x626c});
    angle = std::uniform_real_distribution<double>(0.0, 180.0)(rng);
  }
  return convolve_reflect(image, motion_kernel(spec.length, angle));
}

}  // namespace nocnet
