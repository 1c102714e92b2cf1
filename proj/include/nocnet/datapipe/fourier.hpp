#pragma once

#include <bit>
#include <cmath>
#include <complex>
#include <cstddef>
#include <numbers>
#include <span>
#include <vector>

#include "nocnet/datapipe/image.hpp"
#include "nocnet/error.hpp"

namespace nocnet {

using Complex = std::complex<double>;

struct ComplexPlane {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<Complex> values;

  Complex& at(std::size_t y, std::size_t x) { return values[y * width + x]; }
  Complex at(std::size_t y, std::size_t x) const { return values[y * width + x]; }
};

namespace detail {

inline void fft_radix2(std::vector<Complex>& a, bool inverse) {
  const std::size_t n = a.size();
  for (std::size_t i = 1, j = 0; i < n; ++i) {
    std::size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(a[i], a[j]);
  }
  for (std::size_t len = 2; len <= n; len <<= 1) {
    const double ang = (inverse ? 2.0 : -2.0) * std::numbers::pi / static_cast<double>(len);
    for (std::size_t i = 0; i < n; i += len) {
      for (std::size_t k = 0; k < len / 2; ++k) {
        const Complex w = std::polar(1.0, ang * static_cast<double>(k));
        const Complex u = a[i + k], v = a[i + k + len / 2] * w;
        a[i + k] = u + v;
        a[i + k + len / 2] = u - v;
      }
    }
  }
}

inline void dft_direct(std::vector<Complex>& a, bool inverse) {
  const std::size_t n = a.size();
  std::vector<Complex> out(n);
  const double sign = inverse ? 2.0 : -2.0;
  for (std::size_t k = 0; k < n; ++k) {
    Complex acc = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      // reduce k*j mod n first so the twiddle angle stays small
      const double ang = sign * std::numbers::pi * static_cast<double>((k * j) % n) / static_cast<double>(n);
      acc += a[j] * std::polar(1.0, ang);
    }
    out[k] = acc;
  }
  a.swap(out);
}

}  // namespace detail

/// Unnormalized 1-D DFT; the inverse applies 1/N.
inline std::vector<Complex> dft(std::span<const Complex> x, bool inverse = false) {
  std::vector<Complex> a(x.begin(), x.end());
  if (a.empty()) throw InvalidValue("dft of an empty sequence");
  if (std::has_single_bit(a.size()))
    detail::fft_radix2(a, inverse);
  else
    detail::dft_direct(a, inverse);
  if (inverse)
    for (auto& v : a) v /= static_cast<double>(a.size());
  return a;
}

inline ComplexPlane dft2d(const ComplexPlane& in, bool inverse = false) {
  if (in.height == 0 || in.width == 0 || in.values.size() != in.height * in.width)
    throw SizeMismatch("dft2d needs a non-empty h x w plane");
  ComplexPlane out = in;
  std::vector<Complex> line;
  for (std::size_t y = 0; y < in.height; ++y) {
    line.assign(out.values.begin() + static_cast<std::ptrdiff_t>(y * in.width),
                out.values.begin() + static_cast<std::ptrdiff_t>((y + 1) * in.width));
    const auto row = dft(line, inverse);
    std::copy(row.begin(), row.end(), out.values.begin() + static_cast<std::ptrdiff_t>(y * in.width));
  }
  line.resize(in.height);
  for (std::size_t x = 0; x < in.width; ++x) {
    for (std::size_t y = 0; y < in.height; ++y) line[y] = out.at(y, x);
    const auto col = dft(line, inverse);
    for (std::size_t y = 0; y < in.height; ++y) out.at(y, x) = col[y];
  }
  return out;
}

inline ComplexPlane dft2d(std::span<const double> plane, std::size_t height, std::size_t width, bool inverse = false) {
  if (plane.size() != height * width) throw SizeMismatch("plane size does not match h x w");
  ComplexPlane p{height, width, std::vector<Complex>(plane.begin(), plane.end())};
  return dft2d(p, inverse);
}

/// Low-band magnitude replacement: inside the band the frame keeps its phase but takes
/// the base's magnitude. The band is symmetric in frequency so the result stays real.
inline Frame spectral_specify(const Frame& frame, const Frame& base, std::size_t band = 8) {
  if (!frame.same_geometry(base)) throw SizeMismatch("spectral_specify needs frames of equal geometry");
  if (band < 1) throw InvalidValue("band must be at least 1");
  Frame out = frame;
  const std::size_t h = frame.height, w = frame.width;
  auto in_band = [band](std::size_t k, std::size_t n) { return std::min(k, n - k) < band; };
  for (std::size_t c = 0; c < frame.channels; ++c) {
    auto fx = dft2d(frame.plane(c), h, w);
    const auto bx = dft2d(base.plane(c), h, w);
    for (std::size_t y = 0; y < h; ++y) {
      if (!in_band(y, h)) continue;
      for (std::size_t x = 0; x < w; ++x) {
        if (!in_band(x, w)) continue;
        const double mag = std::abs(bx.at(y, x));
        const Complex cur = fx.at(y, x);
        const double cm = std::abs(cur);
        fx.at(y, x) = cm > 0.0 ? cur * (mag / cm) : Complex(mag, 0.0);
      }
    }
    const auto back = dft2d(fx, true);
    auto dst = out.plane(c);
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = back.values[i].real();
  }
  out.clamp();
  return out;
}

}  // namespace nocnet
