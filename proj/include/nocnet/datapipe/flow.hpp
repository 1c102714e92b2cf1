#pragma once

#include <cmath>
#include <cstddef>
#include <numbers>
#include <vector>

#include "nocnet/datapipe/image.hpp"
#include "nocnet/error.hpp"

namespace nocnet {

struct FlowField {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<double> u, v;

  double u_at(std::size_t y, std::size_t x) const { return u[y * width + x]; }
  double v_at(std::size_t y, std::size_t x) const { return v[y * width + x]; }
};

struct FlowDerivatives {
  std::vector<double> ix, iy, it;
};

/// Forward differences averaged over both frames; the last row/column replicates (zero gradient).
inline FlowDerivatives flow_derivatives(const Frame& f1, const Frame& f2) {
  if (!f1.same_geometry(f2)) throw SizeMismatch("flow frames differ in geometry");
  const Frame a = to_gray(f1), b = to_gray(f2);
  const std::size_t h = a.height, w = a.width;
  FlowDerivatives d{std::vector<double>(h * w), std::vector<double>(h * w), std::vector<double>(h * w)};
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      const std::size_t xn = x + 1 < w ? x + 1 : x, yn = y + 1 < h ? y + 1 : y;
      const std::size_t i = y * w + x;
      d.ix[i] = 0.5 * ((a.at(0, y, xn) - a.at(0, y, x)) + (b.at(0, y, xn) - b.at(0, y, x)));
      d.iy[i] = 0.5 * ((a.at(0, yn, x) - a.at(0, y, x)) + (b.at(0, yn, x) - b.at(0, y, x)));
      d.it[i] = b.at(0, y, x) - a.at(0, y, x);
    }
  return d;
}

namespace detail {

inline std::vector<double> neighbor_mean(const std::vector<double>& p, std::size_t h, std::size_t w) {
  std::vector<double> m(h * w);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      const double c = p[y * w + x];
      const double l = x > 0 ? p[y * w + x - 1] : c;
      const double r = x + 1 < w ? p[y * w + x + 1] : c;
      const double t = y > 0 ? p[(y - 1) * w + x] : c;
      const double b = y + 1 < h ? p[(y + 1) * w + x] : c;
      m[y * w + x] = 0.25 * (l + r + t + b);
    }
  return m;
}

inline double pair_smoothness(const std::vector<double>& p, std::size_t h, std::size_t w) {
  double s = 0.0;
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      if (x + 1 < w) s += (p[y * w + x + 1] - p[y * w + x]) * (p[y * w + x + 1] - p[y * w + x]);
      if (y + 1 < h) s += (p[(y + 1) * w + x] - p[y * w + x]) * (p[(y + 1) * w + x] - p[y * w + x]);
    }
  return s;
}

}  // namespace detail

/// Data term plus lambda^2/4 times the squared differences over 4-neighbour pairs.
/// The update below is the exact stationary point of this energy.
inline double flow_energy(const FlowDerivatives& d, const FlowField& f, double lambda) {
  double data = 0.0;
  for (std::size_t i = 0; i < d.ix.size(); ++i) {
    const double r = d.ix[i] * f.u[i] + d.iy[i] * f.v[i] + d.it[i];
    data += r * r;
  }
  const double smooth = detail::pair_smoothness(f.u, f.height, f.width) + detail::pair_smoothness(f.v, f.height, f.width);
  return data + 0.25 * lambda * lambda * smooth;
}

inline FlowField horn_schunck(const Frame& f1, const Frame& f2, double lambda = 0.5, std::size_t iters = 100,
                              std::vector<double>* energy_trace = nullptr) {
  if (!f1.same_geometry(f2)) throw SizeMismatch("flow frames differ in geometry");
  if (!(lambda > 0.0) || !std::isfinite(lambda)) throw InvalidValue("lambda must be positive");
  if (iters < 1) throw InvalidValue("iters must be at least 1");
  const std::size_t h = f1.height, w = f1.width;
  const auto d = flow_derivatives(f1, f2);
  FlowField f{h, w, std::vector<double>(h * w, 0.0), std::vector<double>(h * w, 0.0)};
  const double l2 = lambda * lambda;
  if (energy_trace) energy_trace->assign(1, flow_energy(d, f, lambda));
  for (std::size_t it = 0; it < iters; ++it) {
    const auto ub = detail::neighbor_mean(f.u, h, w);
    const auto vb = detail::neighbor_mean(f.v, h, w);
    for (std::size_t i = 0; i < h * w; ++i) {
      const double r = (d.ix[i] * ub[i] + d.iy[i] * vb[i] + d.it[i]) / (l2 + d.ix[i] * d.ix[i] + d.iy[i] * d.iy[i]);
      f.u[i] = ub[i] - d.ix[i] * r;
      f.v[i] = vb[i] - d.iy[i] * r;
    }
    if (energy_trace) energy_trace->push_back(flow_energy(d, f, lambda));
  }
  return f;
}

/// atan2(v, u) mapped from (-pi, pi] onto (0, 1]; angle 0 sits at 0.5.
inline Frame orientation_map(const FlowField& flow) {
  Frame out = Frame::blank(1, flow.height, flow.width, 0.5);
  for (std::size_t i = 0; i < out.pixels.size(); ++i) {
    const double u = flow.u[i], v = flow.v[i];
    if (std::hypot(u, v) < 1e-6) continue;
    out.pixels[i] = (std::atan2(v, u) + std::numbers::pi) / (2.0 * std::numbers::pi);
  }
  out.clamp();
  return out;
}

/// Flow magnitude scaled by max_magnitude and clamped.
inline Frame magnitude_map(const FlowField& flow, double max_magnitude = 2.0) {
  if (!(max_magnitude > 0.0)) throw InvalidValue("max_magnitude must be positive");
  Frame out = Frame::blank(1, flow.height, flow.width);
  for (std::size_t i = 0; i < out.pixels.size(); ++i) out.pixels[i] = std::hypot(flow.u[i], flow.v[i]) / max_magnitude;
  out.clamp();
  return out;
}

}  // namespace nocnet
