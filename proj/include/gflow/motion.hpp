#pragma once

#include <optional>
#include <vector>

#include "gflow/array.hpp"
#include "gflow/camera.hpp"
#include "gflow/gaussians.hpp"
#include "gflow/render.hpp"

namespace gflow {

struct Correspondence {
  Vec2 x;       // first view
  Vec2 x_prime; // second view
};

// Rank-2 fundamental matrix with unit Frobenius norm, x'^T F x = 0.
struct FundamentalMatrix {
  Mat3 F = Mat3::Zero();
};

double sampson_error(const Mat3& F, const Vec2& x, const Vec2& x_prime);
// First-order geometric distance, sqrt of the Sampson error.
double sampson_distance(const Mat3& F, const Vec2& x, const Vec2& x_prime);

// Normalized 8-point solution refined by 5 IRLS rounds on Sampson distance.
// Throws DegenerateConfiguration for fewer than 8 pairs or a rank-deficient
// design matrix.
FundamentalMatrix estimate_fundamental(const std::vector<Correspondence>& corr);

// Sampson distance of (p, p + flow(p)) in normalized camera coordinates.
Image epipolar_error_map(const Tensor& flow, const FundamentalMatrix& F, const Intrinsics& K);

// err > threshold, then 3x3 opening followed by closing.
Mask movement_mask(const Image& err_map, double threshold);

Mask morph_open(const Mask& m);
Mask morph_close(const Mask& m);

struct ClusteringResult {
  Mask moving;
  Image error_map;
  std::optional<FundamentalMatrix> F;
  bool static_camera = false;  // no parallax: error is plain flow magnitude
  bool all_still = false;      // epipolar model unreliable, whole frame Still
};

struct ClusteringParams {
  double threshold = 0.01;
  int grid_stride = 8;
  double min_parallax_px = 0.25;
};

// Full clustering for one frame: correspondences on a stride grid ranked by
// forward-backward consistency, F estimation, error map, mask.
ClusteringResult cluster_frame(const Tensor& flow, const Tensor* reverse_flow,
                               const Intrinsics& K, const ClusteringParams& params);

// Pixels covered by the previous frame's Moving points rendered under E:
// grayscale(render) > 0.
Mask previous_moving_mask(const GaussianSet& set, const RenderCamera& cam);

}  // namespace gflow
