#pragma once

#include <cmath>
#include <vector>

#include "gflow/array.hpp"
#include "gflow/rng.hpp"

namespace gflow::testing {

inline Image random_image(RngStream& rng, int h, int w, int c, double lo = 0.0, double hi = 1.0) {
  Image img(h, w, c);
  for (auto& v : img.data()) v = rng.uniform(lo, hi);
  return img;
}

// Direct 2D windowed SSIM, no separable filtering.
inline double reference_ssim_pixel(const Image& x, const Image& y, int py, int px, int c) {
  double wsum = 0.0;
  std::vector<double> g(11);
  for (int i = 0; i < 11; ++i) {
    g[i] = std::exp(-(i - 5.0) * (i - 5.0) / (2 * 1.5 * 1.5));
    wsum += g[i];
  }
  double mx = 0, my = 0, sxx = 0, syy = 0, sxy = 0;
  for (int dy = -5; dy <= 5; ++dy)
    for (int dx = -5; dx <= 5; ++dx) {
      const int yy = py + dy, xx = px + dx;
      if (yy < 0 || xx < 0 || yy >= x.height() || xx >= x.width()) continue;
      const double wgt = g[dy + 5] * g[dx + 5] / (wsum * wsum);
      const double a = x(yy, xx, c), b = y(yy, xx, c);
      mx += wgt * a;
      my += wgt * b;
      sxx += wgt * a * a;
      syy += wgt * b * b;
      sxy += wgt * a * b;
    }
  const double c1 = 1e-4, c2 = 9e-4;
  const double vx = sxx - mx * mx, vy = syy - my * my, cv = sxy - mx * my;
  return (2 * mx * my + c1) * (2 * cv + c2) / ((mx * mx + my * my + c1) * (vx + vy + c2));
}

inline double reference_ssim(const Image& x, const Image& y) {
  double s = 0;
  for (int yy = 0; yy < x.height(); ++yy)
    for (int xx = 0; xx < x.width(); ++xx)
      for (int c = 0; c < x.channels(); ++c) s += reference_ssim_pixel(x, y, yy, xx, c);
  return s / static_cast<double>(x.size());
}

}  // namespace gflow::testing
