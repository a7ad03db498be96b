#pragma once

#include <vector>

#include "gflow/array.hpp"
#include "gflow/camera.hpp"
#include "gflow/gaussians.hpp"

namespace gflow {

inline constexpr int kTileSize = 16;
// Screen-space covariance floor (px^2) added after EWA projection.
inline constexpr double kCovarianceFloor = 0.3;
// Contributions are truncated outside the 3-sigma ellipse.
inline constexpr double kMaxMahalanobisSq = 9.0;
// Guard for depth normalization by accumulated alpha.
inline constexpr double kDepthEps = 1e-8;

struct RenderCamera {
  Intrinsics K;
  Extrinsics E;
  int width = 0;
  int height = 0;
};

struct RenderOptions {
  Vec3 background = Vec3::Zero();
};

struct PointScreen {
  Vec2 pixel = Vec2::Zero();
  double depth = 0.0;
  bool visible = false;  // in front of the camera
};

struct RenderOutput {
  Image color;      // H x W x 3
  Image depth;      // H x W, alpha-normalized expected depth
  Image acc_alpha;  // H x W
  std::vector<PointScreen> points;
};

// Adjoint (dL/d output) fed to the backward pass. Empty images mean zero.
struct RenderAdjoint {
  Image color;
  Image depth;
  std::vector<Vec2> screen;  // per-Gaussian dL/d(pixel position), optional
};

struct RenderGrads {
  std::vector<Vec3> mean;
  std::vector<Vec3> log_scale;
  std::vector<double> opacity_logit;
  std::vector<Vec4> rotation;
  std::vector<Vec3> color;
  Vec6 camera = Vec6::Zero();  // (so(3) increment, translation increment)

  void resize(std::size_t n);
};

// Per-Gaussian screen-space footprint after EWA projection.
struct Splat {
  Vec2 center;
  double depth = 0.0;
  double conic_a = 0.0;  // inverse 2D covariance [[a, b], [b, c]]
  double conic_b = 0.0;
  double conic_c = 0.0;
  double extent_x = 0.0;  // half-width of the 3-sigma bounding box (px)
  double extent_y = 0.0;
  double opacity = 0.0;
  bool visible = false;
};

std::vector<Splat> project_splats(const GaussianSet& set, const RenderCamera& cam);

// Tiled front-to-back alpha compositing, sorted globally by center depth.
RenderOutput render(const GaussianSet& set, const RenderCamera& cam,
                    const RenderOptions& opts = {});

// Gradients of sum(adjoint . outputs) with respect to every Gaussian
// parameter and the camera tangent.
RenderGrads render_backward(const GaussianSet& set, const RenderCamera& cam,
                            const RenderAdjoint& adjoint, const RenderOptions& opts = {});

// Slow reference: evaluates every visible Gaussian at every pixel, no tiling
// or bounding-box culling. Same compositing rule as render().
RenderOutput render_reference(const GaussianSet& set, const RenderCamera& cam,
                              const RenderOptions& opts = {});

// Transmittance just in front of each visible Gaussian at its own projected
// center (1 for points nothing occludes, 0 for invisible points).
std::vector<double> self_transmittance(const GaussianSet& set, const RenderCamera& cam);

}  // namespace gflow
