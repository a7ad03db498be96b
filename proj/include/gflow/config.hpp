#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace gflow {

enum class CameraInit { ConstantPosition, ConstantVelocity };

// Engine hyperparameters. Defaults follow the published implementation
// details; the remaining knobs are ours and documented in the README.
struct Config {
  int n_ini = 50000;
  double lambda_p = 1.0;
  double lambda_d = 0.1;
  double lambda_f = 0.01;
  double lambda_i = 50.0;
  double lr_gauss = 4e-3;
  double lr_cam = 1e-3;
  int iters_first = 500;
  int iters_cam = 150;
  int iters_gauss = 300;
  std::vector<int> densify_steps_first{150, 300};
  std::vector<int> densify_steps{100, 200};
  double err_threshold = 0.01;
  double epipolar_threshold = 0.01;
  double fb_threshold = 1.0;  // px
  std::uint64_t seed = 0;
  double scale_gain = 0.2;
  double ssim_blend = 1.0;  // weight of the (1 - SSIM) term relative to MSE
  std::array<double, 3> background{0.0, 0.0, 0.0};
  int resize_short = 480;  // downscale only; 0 disables
  double prune_opacity = 0.0;  // 0 disables pruning
  CameraInit camera_init = CameraInit::ConstantPosition;
  double occlusion_tolerance = 0.1;  // relative depth gap for flow-loss visibility
  bool debug_dumps = false;

  // Throws Error(ConfigInvalid) when a count is non-positive, a threshold is
  // non-positive, or a weight is negative.
  void validate() const;
};

struct ConfigKey {
  std::string name;
  std::string help;
};

// All keys in declaration order; the CLI exposes exactly these as flags.
const std::vector<ConfigKey>& config_keys();

void config_set(Config& cfg, const std::string& key, const std::string& value);
std::string config_get(const Config& cfg, const std::string& key);

// Flat key=value text; '#' starts a comment.
Config load_config(const std::filesystem::path& path, Config base = {});
void save_config(const std::filesystem::path& path, const Config& cfg);

}  // namespace gflow
