#include "gflow/array.hpp"

#include <cmath>

#include "gflow/error.hpp"

namespace gflow {

Image to_image(const Tensor& t) {
  Image out(t.height(), t.width(), t.channels());
  out.set_rank(t.rank());
  for (std::size_t i = 0; i < t.size(); ++i) out[i] = t[i];
  return out;
}

Tensor to_tensor(const Image& img) {
  Tensor out(img.height(), img.width(), img.channels());
  out.set_rank(img.rank());
  for (std::size_t i = 0; i < img.size(); ++i) out[i] = static_cast<float>(img[i]);
  return out;
}

std::size_t count(const Mask& m) {
  std::size_t n = 0;
  for (auto v : m.data()) n += v != 0;
  return n;
}

Mask mask_or(const Mask& a, const Mask& b) {
  if (a.empty()) return b;
  if (b.empty()) return a;
  if (!a.same_shape(b)) throw Error(ErrorCode::DimMismatch, "core-data", "mask_or shape mismatch");
  Mask out(a.height(), a.width());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = (a[i] || b[i]) ? 1 : 0;
  return out;
}

Mask mask_not(const Mask& a) {
  Mask out(a.height(), a.width());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] ? 0 : 1;
  return out;
}

double mask_iou(const Mask& a, const Mask& b) {
  if (!a.same_shape(b)) throw Error(ErrorCode::DimMismatch, "core-data", "mask_iou shape mismatch");
  std::size_t inter = 0, uni = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    inter += (a[i] && b[i]);
    uni += (a[i] || b[i]);
  }
  return uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

namespace {

template <typename T>
bool bilinear(const Grid<T>& img, double x, double y, std::span<double> out) {
  const int h = img.height(), w = img.width();
  if (!(x >= 0.0 && y >= 0.0 && x <= w - 1 && y <= h - 1)) return false;
  const int x0 = std::min(static_cast<int>(std::floor(x)), w - 1);
  const int y0 = std::min(static_cast<int>(std::floor(y)), h - 1);
  const int x1 = std::min(x0 + 1, w - 1);
  const int y1 = std::min(y0 + 1, h - 1);
  const double fx = x - x0, fy = y - y0;
  for (int c = 0; c < img.channels(); ++c) {
    const double v00 = img(y0, x0, c), v01 = img(y0, x1, c);
    const double v10 = img(y1, x0, c), v11 = img(y1, x1, c);
    out[c] = (1 - fy) * ((1 - fx) * v00 + fx * v01) + fy * ((1 - fx) * v10 + fx * v11);
  }
  return true;
}

}  // namespace

bool sample_bilinear(const Image& img, double x, double y, std::span<double> out) {
  return bilinear(img, x, y, out);
}

bool sample_bilinear(const Tensor& img, double x, double y, std::span<double> out) {
  return bilinear(img, x, y, out);
}

Image grayscale(const Image& rgb) {
  Image g(rgb.height(), rgb.width());
  if (rgb.channels() == 1) {
    for (std::size_t i = 0; i < g.size(); ++i) g[i] = rgb[i];
    return g;
  }
  for (int y = 0; y < rgb.height(); ++y)
    for (int x = 0; x < rgb.width(); ++x)
      g(y, x) = 0.299 * rgb(y, x, 0) + 0.587 * rgb(y, x, 1) + 0.114 * rgb(y, x, 2);
  return g;
}

}  // namespace gflow
