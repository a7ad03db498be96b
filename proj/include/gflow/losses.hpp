#pragma once

#include <span>
#include <vector>

#include "gflow/array.hpp"
#include "gflow/camera.hpp"
#include "gflow/gaussians.hpp"

namespace gflow {

struct LossReport {
  double total = 0.0;
  double pho_mse = 0.0;
  double pho_ssim = 0.0;
  double dep = 0.0;
  double flo = 0.0;
  double iso = 0.0;
  double a = 1.0;
  double b = 0.0;
};

// SSIM with an 11x11 Gaussian window (sigma 1.5), C1 = 0.01^2, C2 = 0.03^2,
// zero-padded "same" filtering. Returns the per-pixel map averaged over
// channels.
inline constexpr int kSsimWindow = 11;
inline constexpr double kSsimSigma = 1.5;
inline constexpr double kSsimC1 = 0.01 * 0.01;
inline constexpr double kSsimC2 = 0.03 * 0.03;

Image ssim_map(const Image& x, const Image& y);
double ssim(const Image& x, const Image& y);

struct PhotometricLoss {
  double mse = 0.0;
  double ssim_term = 0.0;  // 1 - mean SSIM over included pixels
  double value = 0.0;      // mse + blend * ssim_term
  Image adjoint;           // d value / d rendered
};

// MSE + (1 - SSIM) over pixels not in `exclude` (empty mask = none). Excluded
// pixels contribute nothing to either term and receive zero adjoint.
PhotometricLoss photometric_loss(const Image& rendered, const Image& target,
                                 const Mask& exclude = {}, double ssim_blend = 1.0);

struct DepthLoss {
  double value = 0.0;
  double a = 1.0;
  double b = 0.0;
  Image adjoint;
};

// Closed-form least-squares (a, b) aligning rendered to prior depth over the
// region, then mean |a*rendered + b - prior|.
DepthLoss depth_loss(const Image& rendered, const Image& prior, const Mask& region);

struct FlowLoss {
  double value = 0.0;
  std::size_t count = 0;
  std::vector<Vec2> adjoint;  // per entry of curr_pos
};

// Mean over selected points and both components of
// (curr - (prev + F(prev)))^2; points whose prev position is outside the
// flow grid are skipped. `selected` lists indices into curr/prev.
FlowLoss flow_loss(std::span<const Vec2> curr_pos, std::span<const Vec2> prev_pos,
                   const Tensor& prev_flow, std::span<const std::size_t> selected);

struct IsotropicLoss {
  double value = 0.0;
  std::vector<Vec3> adjoint;  // d value / d log_scale
};

// (1/N) sum_i std(s_i), population std over the three decoded scales.
IsotropicLoss isotropic_loss(const GaussianSet& set);

}  // namespace gflow
