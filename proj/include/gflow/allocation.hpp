#pragma once

#include <vector>

#include "gflow/array.hpp"
#include "gflow/camera.hpp"
#include "gflow/gaussians.hpp"
#include "gflow/rng.hpp"

namespace gflow {

struct SamplingMap {
  Image prob;    // H x W, zero outside support, sums to 1
  Mask support;

  bool empty() const { return support.empty() || count(support) == 0; }
};

// Sobel gradient magnitude of the grayscale image normalized over its
// non-zero entries; a texture-free image yields the uniform map.
SamplingMap texture_prob_map(const Image& rgb);
// Normalizes an arbitrary non-negative weight map restricted to a mask.
// Returns an empty map when no weight survives.
SamplingMap masked_prob_map(const Image& weights, const Mask& mask);
SamplingMap uniform_prob_map(const Mask& mask);

// i.i.d. pixel-center draws proportional to prob (x = column, y = row).
std::vector<Vec2> sample_points(const SamplingMap& map, std::size_t n, RngStream& rng);

struct InitParams {
  double scale_gain = 0.2;
  // Sample count the scale heuristic assumes when estimating spacing.
  std::size_t reference_count = 50000;
  int frame = 0;
};

// Creates Gaussians at the given pixels: centers unprojected with the depth
// prior, colors copied from the image, opacity 0.99, random rotation, and an
// isotropic scale from the odds of the texture probability times depth/fx.
// Cluster is Moving where moving_mask is set (empty mask = all Still).
GaussianSet make_gaussians(std::span<const Vec2> pixels, const Image& rgb, const Image& depth,
                           const SamplingMap& texture, const Intrinsics& K, const Extrinsics& E,
                           const Mask& moving_mask, const InitParams& params, RngStream& rng,
                           std::uint64_t first_id = 0);

GaussianSet init_gaussians(const Image& rgb, const Image& depth, const Intrinsics& K,
                           const Extrinsics& E, std::size_t n, const Mask& moving_mask,
                           const InitParams& params, RngStream& rng);

// p is masked iff |F_a(p) + F_b(p + F_a(p))| > threshold, or the round trip
// leaves the image.
Mask new_content_mask(const Tensor& flow_a, const Tensor& flow_b, double threshold);

// Per-pixel mean absolute color error.
Image photometric_error_map(const Image& rendered, const Image& target);

std::size_t densify_count(std::size_t mask_pixels, std::size_t total_pixels, std::size_t n_ini);

struct DensifyInputs {
  const Image* error_map = nullptr;  // null = uniform probability
  const Mask* mask = nullptr;
  const Image* rgb = nullptr;
  const Image* depth = nullptr;
  const Mask* moving_mask = nullptr;
  Intrinsics K;
  Extrinsics E;
  std::size_t n_ini = 50000;
};

// Appends round(R_m * n_ini) Gaussians sampled from error ⊙ mask (or the
// mask alone). Existing entries are left untouched. Returns the number added.
std::size_t densify(GaussianSet& set, const DensifyInputs& in, const InitParams& params,
                    RngStream& rng);

}  // namespace gflow
