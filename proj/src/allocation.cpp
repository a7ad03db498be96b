#include "gflow/allocation.hpp"

#include <algorithm>
#include <array>
#include <cmath>

#include "gflow/error.hpp"

namespace gflow {

namespace {

constexpr std::string_view kModule = "allocation";
constexpr double kInitOpacity = 0.99;
constexpr double kOddsMin = 1e-4;
constexpr double kOddsMax = 1e2;
constexpr double kJitter = 0.35;

SamplingMap normalize(Image weights, Mask support) {
  double sum = 0.0;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    if (!support[i] || !(weights[i] > 0.0)) {
      weights[i] = 0.0;
      support[i] = 0;
    }
    sum += weights[i];
  }
  if (sum <= 0.0) return {Image(weights.height(), weights.width()), Mask(weights.height(), weights.width())};
  for (auto& v : weights.data()) v /= sum;
  return {std::move(weights), std::move(support)};
}

}  // namespace

SamplingMap texture_prob_map(const Image& rgb) {
  const Image g = grayscale(rgb);
  const int h = g.height(), w = g.width();
  auto at = [&](int y, int x) { return g(std::clamp(y, 0, h - 1), std::clamp(x, 0, w - 1)); };
  Image t(h, w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const double gx = (at(y - 1, x + 1) + 2 * at(y, x + 1) + at(y + 1, x + 1)) -
                        (at(y - 1, x - 1) + 2 * at(y, x - 1) + at(y + 1, x - 1));
      const double gy = (at(y + 1, x - 1) + 2 * at(y + 1, x) + at(y + 1, x + 1)) -
                        (at(y - 1, x - 1) + 2 * at(y - 1, x) + at(y - 1, x + 1));
      t(y, x) = std::sqrt(gx * gx + gy * gy);
    }
  Mask all(h, w);
  for (auto& v : all.data()) v = 1;
  SamplingMap m = normalize(std::move(t), all);
  if (m.empty()) return uniform_prob_map(all);
  return m;
}

SamplingMap masked_prob_map(const Image& weights, const Mask& mask) {
  if (!weights.same_extent(mask)) throw Error(ErrorCode::DimMismatch, kModule, "weights and mask differ in size");
  return normalize(weights, mask);
}

SamplingMap uniform_prob_map(const Mask& mask) {
  Image w(mask.height(), mask.width());
  for (auto& v : w.data()) v = 1.0;
  return normalize(std::move(w), mask);
}

std::vector<Vec2> sample_points(const SamplingMap& map, std::size_t n, RngStream& rng) {
  if (n == 0) return {};
  if (map.empty()) throw Error(ErrorCode::EmptySupport, kModule, "sampling map has no support");
  const auto p = map.prob.data();
  std::vector<double> cdf(p.size());
  double acc = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) cdf[i] = (acc += p[i]);
  // Last supported index, so round-off in the tail never selects a zero cell.
  std::size_t last = p.size() - 1;
  while (p[last] <= 0.0) --last;
  std::vector<Vec2> out;
  out.reserve(n);
  const int w = map.prob.width();
  for (std::size_t k = 0; k < n; ++k) {
    const double u = rng.uniform() * acc;
    std::size_t i = static_cast<std::size_t>(std::upper_bound(cdf.begin(), cdf.end(), u) - cdf.begin());
    i = std::min(i, last);
    while (p[i] <= 0.0) ++i;
    out.emplace_back(static_cast<double>(i % w), static_cast<double>(i / w));
  }
  return out;
}

GaussianSet make_gaussians(std::span<const Vec2> pixels, const Image& rgb, const Image& depth,
                           const SamplingMap& texture, const Intrinsics& K, const Extrinsics& E,
                           const Mask& moving_mask, const InitParams& params, RngStream& rng,
                           std::uint64_t first_id) {
  if (!rgb.same_extent(depth)) throw Error(ErrorCode::DimMismatch, kModule, "image and depth differ in size");
  const double support = static_cast<double>(texture.empty() ? rgb.height() * rgb.width() : count(texture.support));
  const double spacing = std::sqrt(support / static_cast<double>(std::max<std::size_t>(params.reference_count, 1)));
  GaussianSet set;
  set.set_next_id(first_id);
  for (const Vec2& px : pixels) {
    const int x = static_cast<int>(std::lround(px.x())), y = static_cast<int>(std::lround(px.y()));
    if (!depth.contains(y, x)) throw Error(ErrorCode::DimMismatch, kModule, "sample outside the image");
    const double d = depth(y, x);
    if (!(d > 0.0)) throw Error(ErrorCode::NonPositiveDepth, kModule, "depth prior is not positive at a sample");
    // Sub-pixel jitter keeps samples drawn from the same pixel apart.
    const Vec2 site = px + Vec2(rng.uniform(-kJitter, kJitter), rng.uniform(-kJitter, kJitter));
    GaussianPoint g;
    g.mean = unproject(site, d, K, E);
    const double r = texture.empty() ? 1.0 : texture.prob(y, x) * support;
    const double odds = std::clamp(r > 0.0 ? 1.0 / r : kOddsMax, kOddsMin, kOddsMax);
    const double sigma_px = params.scale_gain * spacing * std::sqrt(odds);
    g.log_scale = Vec3::Constant(std::log(sigma_px * d / K.fx));
    g.opacity_logit = logit(kInitOpacity);
    Vec4 q(rng.normal(), rng.normal(), rng.normal(), rng.normal());
    g.rotation = q / q.norm();
    for (int c = 0; c < 3; ++c) g.color[c] = rgb(y, x, std::min(c, rgb.channels() - 1));
    g.cluster = (!moving_mask.empty() && moving_mask(y, x)) ? Cluster::Moving : Cluster::Still;
    g.birth_frame = params.frame;
    set.append(g);
  }
  return set;
}

GaussianSet init_gaussians(const Image& rgb, const Image& depth, const Intrinsics& K,
                           const Extrinsics& E, std::size_t n, const Mask& moving_mask,
                           const InitParams& params, RngStream& rng) {
  const SamplingMap tex = texture_prob_map(rgb);
  const auto pts = sample_points(tex, n, rng);
  InitParams p = params;
  p.reference_count = n;
  return make_gaussians(pts, rgb, depth, tex, K, E, moving_mask, p, rng, 0);
}

Mask new_content_mask(const Tensor& flow_a, const Tensor& flow_b, double threshold) {
  if (!flow_a.same_shape(flow_b) || flow_a.channels() != 2)
    throw Error(ErrorCode::DimMismatch, kModule, "flow fields must be H x W x 2 of equal size");
  Mask m(flow_a.height(), flow_a.width());
  std::array<double, 2> fb{};
  for (int y = 0; y < flow_a.height(); ++y)
    for (int x = 0; x < flow_a.width(); ++x) {
      const double fx = flow_a(y, x, 0), fy = flow_a(y, x, 1);
      if (!sample_bilinear(flow_b, x + fx, y + fy, fb)) {
        m(y, x) = 1;
        continue;
      }
      m(y, x) = std::hypot(fx + fb[0], fy + fb[1]) > threshold;
    }
  return m;
}

Image photometric_error_map(const Image& rendered, const Image& target) {
  if (!rendered.same_shape(target)) throw Error(ErrorCode::DimMismatch, kModule, "images differ in shape");
  Image e(rendered.height(), rendered.width());
  const int nc = rendered.channels();
  for (int y = 0; y < rendered.height(); ++y)
    for (int x = 0; x < rendered.width(); ++x) {
      double s = 0.0;
      for (int c = 0; c < nc; ++c) s += std::abs(rendered(y, x, c) - target(y, x, c));
      e(y, x) = s / nc;
    }
  return e;
}

std::size_t densify_count(std::size_t mask_pixels, std::size_t total_pixels, std::size_t n_ini) {
  if (total_pixels == 0) return 0;
  // Integer rounding of mask_pixels * n_ini / total_pixels.
  const unsigned __int128 num = static_cast<unsigned __int128>(mask_pixels) * n_ini;
  return static_cast<std::size_t>((2 * num + total_pixels) / (2 * static_cast<unsigned __int128>(total_pixels)));
}

std::size_t densify(GaussianSet& set, const DensifyInputs& in, const InitParams& params, RngStream& rng) {
  if (!in.mask || !in.rgb || !in.depth) throw Error(ErrorCode::ConfigInvalid, kModule, "densify needs mask, image and depth");
  const std::size_t m = count(*in.mask);
  const std::size_t n_new = densify_count(m, in.mask->size(), in.n_ini);
  if (n_new == 0) return 0;
  SamplingMap map = in.error_map ? masked_prob_map(*in.error_map, *in.mask) : uniform_prob_map(*in.mask);
  if (map.empty()) map = uniform_prob_map(*in.mask);
  const auto pts = sample_points(map, n_new, rng);
  InitParams p = params;
  p.reference_count = in.n_ini;
  const Mask none;
  GaussianSet fresh = make_gaussians(pts, *in.rgb, *in.depth, texture_prob_map(*in.rgb), in.K, in.E,
                                     in.moving_mask ? *in.moving_mask : none, p, rng, set.next_id());
  set.append_all(fresh, false);
  return n_new;
}

}  // namespace gflow
