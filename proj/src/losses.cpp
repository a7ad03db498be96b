#include "gflow/losses.hpp"

#include <algorithm>
#include <array>
#include <cmath>

#include "gflow/error.hpp"

namespace gflow {

namespace {

constexpr std::string_view kModule = "losses";
constexpr int kRadius = kSsimWindow / 2;

const std::array<double, kSsimWindow>& ssim_kernel() {
  static const auto k = [] {
    std::array<double, kSsimWindow> w{};
    double sum = 0.0;
    for (int i = 0; i < kSsimWindow; ++i) {
      const double d = i - kRadius;
      w[i] = std::exp(-d * d / (2.0 * kSsimSigma * kSsimSigma));
      sum += w[i];
    }
    for (auto& v : w) v /= sum;
    return w;
  }();
  return k;
}

// Separable zero-padded "same" Gaussian filter of a single-channel map.
void blur_row(const double* in, double* out, int n, const std::array<double, kSsimWindow>& k) {
  for (int i = 0; i < n; ++i) {
    const int lo = std::max(0, i - kRadius), hi = std::min(n - 1, i + kRadius);
    double s = 0.0;
    for (int j = lo; j <= hi; ++j) s += k[j - i + kRadius] * in[j];
    out[i] = s;
  }
}

Image blur(const Image& in) {
  const auto& k = ssim_kernel();
  const int h = in.height(), w = in.width();
  Image tmp(h, w), out(h, w);
  for (int y = 0; y < h; ++y) blur_row(&in(y, 0), &tmp(y, 0), w, k);
  // Vertical pass row by row so the inner loop walks contiguous memory.
  for (int y = 0; y < h; ++y) {
    double* o = &out(y, 0);
    for (int j = std::max(0, y - kRadius); j <= std::min(h - 1, y + kRadius); ++j) {
      const double kj = k[j - y + kRadius];
      const double* r = &tmp(j, 0);
      for (int x = 0; x < w; ++x) o[x] += kj * r[x];
    }
  }
  return out;
}

Image channel(const Image& img, int c) {
  Image out(img.height(), img.width());
  for (int y = 0; y < img.height(); ++y)
    for (int x = 0; x < img.width(); ++x) out(y, x) = img(y, x, c);
  return out;
}

struct SsimStats {
  Image mu_x, mu_y, e_xx, e_yy, e_xy;
};

SsimStats ssim_stats(const Image& x, const Image& y) {
  Image xx(x.height(), x.width()), yy(x.height(), x.width()), xy(x.height(), x.width());
  for (std::size_t i = 0; i < x.size(); ++i) {
    xx[i] = x[i] * x[i];
    yy[i] = y[i] * y[i];
    xy[i] = x[i] * y[i];
  }
  return {blur(x), blur(y), blur(xx), blur(yy), blur(xy)};
}

struct SsimTerms {
  double s;
  double d_mu_x;   // partial w.r.t. mu_x at fixed variances
  double d_var_x;  // partial w.r.t. sigma_x^2
  double d_cov;    // partial w.r.t. sigma_xy
};

SsimTerms ssim_terms(double mx, double my, double exx, double eyy, double exy) {
  const double vx = exx - mx * mx, vy = eyy - my * my, cxy = exy - mx * my;
  const double a1 = 2 * mx * my + kSsimC1, a2 = 2 * cxy + kSsimC2;
  const double b1 = mx * mx + my * my + kSsimC1, b2 = vx + vy + kSsimC2;
  const double s = (a1 * a2) / (b1 * b2);
  return {s, 2 * my * a2 / (b1 * b2) - s * 2 * mx / b1, -s / b2, 2 * a1 / (b1 * b2)};
}

void check_same(const Image& a, const Image& b) {
  if (!a.same_shape(b)) throw Error(ErrorCode::DimMismatch, kModule, "image shapes differ");
}

}  // namespace

Image ssim_map(const Image& x, const Image& y) {
  check_same(x, y);
  Image out(x.height(), x.width());
  for (int c = 0; c < x.channels(); ++c) {
    const auto st = ssim_stats(channel(x, c), channel(y, c));
    for (std::size_t i = 0; i < out.size(); ++i)
      out[i] += ssim_terms(st.mu_x[i], st.mu_y[i], st.e_xx[i], st.e_yy[i], st.e_xy[i]).s / x.channels();
  }
  return out;
}

double ssim(const Image& x, const Image& y) {
  const Image m = ssim_map(x, y);
  double s = 0.0;
  for (double v : m.data()) s += v;
  return s / static_cast<double>(m.size());
}

PhotometricLoss photometric_loss(const Image& rendered, const Image& target, const Mask& exclude,
                                 double ssim_blend) {
  check_same(rendered, target);
  const int h = rendered.height(), w = rendered.width(), nc = rendered.channels();
  if (!exclude.empty() && !exclude.same_extent(rendered))
    throw Error(ErrorCode::DimMismatch, kModule, "exclusion mask does not match the image");
  auto included = [&](int y, int x) { return exclude.empty() || !exclude(y, x); };

  std::size_t n_inc = 0;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) n_inc += included(y, x);
  if (n_inc == 0) throw Error(ErrorCode::AllPixelsExcluded, kModule, "no pixel left for the photometric loss");

  // Excluded pixels take the target value so neither term nor adjoint sees
  // them.
  Image xr = rendered;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      if (!included(y, x))
        for (int c = 0; c < nc; ++c) xr(y, x, c) = target(y, x, c);

  PhotometricLoss out;
  out.adjoint = Image(h, w, nc);
  const double norm = 1.0 / (static_cast<double>(n_inc) * nc);
  double mse = 0.0;
  for (std::size_t i = 0; i < xr.size(); ++i) {
    const double d = xr[i] - target[i];
    mse += d * d;
    out.adjoint[i] = 2.0 * d * norm;
  }
  out.mse = mse * norm;

  double ssim_sum = 0.0;
  for (int c = 0; c < nc; ++c) {
    const Image xc = channel(xr, c), yc = channel(target, c);
    const auto st = ssim_stats(xc, yc);
    Image g_mu(h, w), g_xx(h, w), g_xy(h, w);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        const std::size_t i = static_cast<std::size_t>(y) * w + x;
        const auto t = ssim_terms(st.mu_x[i], st.mu_y[i], st.e_xx[i], st.e_yy[i], st.e_xy[i]);
        if (!included(y, x)) continue;
        ssim_sum += t.s;
        const double g = -norm * ssim_blend;
        g_xx[i] = g * t.d_var_x;
        g_xy[i] = g * t.d_cov;
        g_mu[i] = g * (t.d_mu_x - 2.0 * st.mu_x[i] * t.d_var_x - st.mu_y[i] * t.d_cov);
      }
    const Image b_mu = blur(g_mu), b_xx = blur(g_xx), b_xy = blur(g_xy);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        const std::size_t i = static_cast<std::size_t>(y) * w + x;
        out.adjoint(y, x, c) += b_mu[i] + 2.0 * xc[i] * b_xx[i] + yc[i] * b_xy[i];
      }
  }
  out.ssim_term = 1.0 - ssim_sum * norm;
  out.value = out.mse + ssim_blend * out.ssim_term;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      if (!included(y, x))
        for (int c = 0; c < nc; ++c) out.adjoint(y, x, c) = 0.0;
  return out;
}

DepthLoss depth_loss(const Image& rendered, const Image& prior, const Mask& region) {
  if (!rendered.same_extent(prior) || !region.same_extent(rendered))
    throw Error(ErrorCode::DimMismatch, kModule, "depth maps and region differ in size");
  std::size_t n = 0;
  double sx = 0, sy = 0;
  for (std::size_t i = 0; i < region.size(); ++i)
    if (region[i]) {
      ++n;
      sx += rendered[i];
      sy += prior[i];
    }
  if (n == 0) throw Error(ErrorCode::EmptyRegion, kModule, "depth region is empty");
  const double mx = sx / n, my = sy / n;
  double vxx = 0, vxy = 0;
  for (std::size_t i = 0; i < region.size(); ++i)
    if (region[i]) {
      vxx += (rendered[i] - mx) * (rendered[i] - mx);
      vxy += (rendered[i] - mx) * (prior[i] - my);
    }
  vxx /= n;
  vxy /= n;
  DepthLoss out;
  if (vxx < 1e-12) {
    out.a = 1.0;
    out.b = my - mx;
  } else {
    out.a = vxy / vxx;
    out.b = my - out.a * mx;
  }
  out.adjoint = Image(rendered.height(), rendered.width());
  double sum = 0.0;
  for (std::size_t i = 0; i < region.size(); ++i)
    if (region[i]) {
      const double r = out.a * rendered[i] + out.b - prior[i];
      sum += std::abs(r);
      out.adjoint[i] = out.a * (r > 0 ? 1.0 : (r < 0 ? -1.0 : 0.0)) / n;
    }
  out.value = sum / n;
  return out;
}

FlowLoss flow_loss(std::span<const Vec2> curr_pos, std::span<const Vec2> prev_pos, const Tensor& prev_flow,
                   std::span<const std::size_t> selected) {
  if (curr_pos.size() != prev_pos.size())
    throw Error(ErrorCode::DimMismatch, kModule, "current and previous positions differ in length");
  FlowLoss out;
  out.adjoint.assign(curr_pos.size(), Vec2::Zero());
  double sum = 0.0;
  std::array<double, 2> f{};
  for (std::size_t i : selected) {
    if (!sample_bilinear(prev_flow, prev_pos[i].x(), prev_pos[i].y(), f)) continue;
    const Vec2 r = curr_pos[i] - (prev_pos[i] + Vec2(f[0], f[1]));
    sum += r.squaredNorm();
    out.adjoint[i] = r;
    ++out.count;
  }
  if (out.count == 0) throw Error(ErrorCode::EmptyCluster, kModule, "no tracked point inside the flow grid");
  const double n = static_cast<double>(out.count);
  out.value = sum / (2.0 * n);
  for (auto& a : out.adjoint) a /= n;
  return out;
}

IsotropicLoss isotropic_loss(const GaussianSet& set) {
  IsotropicLoss out;
  out.adjoint.assign(set.size(), Vec3::Zero());
  if (set.empty()) return out;
  const double inv_n = 1.0 / static_cast<double>(set.size());
  for (std::size_t i = 0; i < set.size(); ++i) {
    const Vec3 s = set.log_scale[i].array().exp();
    const double m = s.mean();
    const Vec3 d = s.array() - m;
    // Equal log scales give exactly zero; the vectorized exp and the rounded
    // mean can both differ per lane.
    const Vec3& ls = set.log_scale[i];
    const bool iso = ls[0] == ls[1] && ls[1] == ls[2];
    const double sd = iso ? 0.0 : std::sqrt(d.squaredNorm() / 3.0);
    out.value += sd * inv_n;
    if (sd > 0.0) out.adjoint[i] = (d / (3.0 * sd) * inv_n).cwiseProduct(s);
  }
  return out;
}

}  // namespace gflow
