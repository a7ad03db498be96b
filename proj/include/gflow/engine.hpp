#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "gflow/array.hpp"
#include "gflow/camera.hpp"
#include "gflow/config.hpp"
#include "gflow/gaussians.hpp"
#include "gflow/losses.hpp"
#include "gflow/render.hpp"

namespace gflow {

// Priors for one frame. Flows are absent at the sequence ends: no forward
// flow for the last frame, no backward flow for the first.
struct FramePriors {
  Image rgb;
  Image depth;
  Tensor flow_fwd;  // t -> t+1
  Tensor flow_bwd;  // t -> t-1
};

struct Sequence {
  CameraInfo camera;
  std::vector<FramePriors> frames;
  // Prior depth units per scene unit (see normalize_scene_scale).
  double depth_scale = 1.0;

  int width() const { return camera.width; }
  int height() const { return camera.height; }
};

// Reads intrinsics.txt, frame_%04d.png, depth_%04d.gft and the flow files.
// Frames are counted from frame_0000.png upwards. A missing prior throws
// Error(Io) naming the path. When resize_short > 0 and the shorter side is
// larger, everything is area-downsampled to that size, flows are rescaled,
// and the intrinsics follow.
Sequence load_sequence(const std::filesystem::path& dir, int resize_short = 0);

// Divides every depth map by the median first-frame depth so the scene has
// unit median depth. Returns the factor.
double normalize_scene_scale(Sequence& seq);

struct AdamState {
  std::vector<double> m;
  std::vector<double> v;
  std::int64_t step = 0;

  // Grows (zero moments) or shrinks to n entries.
  void resize(std::size_t n);
};

inline constexpr double kAdamBeta1 = 0.9;
inline constexpr double kAdamBeta2 = 0.999;
inline constexpr double kAdamEps = 1e-8;

// Bias-corrected Adam. Entries with frozen[i] != 0 keep their value and
// moments untouched.
void adam_step(std::span<double> params, std::span<const double> grads, AdamState& state, double lr,
               std::span<const std::uint8_t> frozen = {});

struct LossRecord {
  int frame = 0;
  std::string phase;  // "first", "camera" or "gauss"
  int iter = 0;
  LossReport loss;
};

struct CameraPhaseInputs {
  const GaussianSet* set = nullptr;
  const Image* rgb = nullptr;
  const Image* depth = nullptr;  // prior depth for this frame
  const Mask* exclude = nullptr; // M-bar; may be empty
  // Flow loss terms: previous screen positions (indexed like set) and the
  // forward prior flow out of the previous frame. `flow_points` selects the
  // Still points that take part.
  const Tensor* prev_flow = nullptr;
  std::span<const Vec2> prev_pos;
  std::vector<std::size_t> flow_points;
  Intrinsics K;
  int width = 0;
  int height = 0;
  int frame = 0;
};

struct CameraPhaseResult {
  Extrinsics E;
  Vec6 delta = Vec6::Zero();  // (log(R R_init^T), t - t_init)
  bool skipped = false;       // every pixel excluded: E stays at E_init
  double a = 1.0;             // final rendered-to-prior depth alignment
  double b = 0.0;
  std::vector<LossRecord> losses;
};

// Optimizes the camera tangent with the Gaussians frozen.
CameraPhaseResult optimize_camera(const CameraPhaseInputs& in, const Extrinsics& E_init, const Config& cfg);

// Moves every Moving point i < prev_pos.size() with prev_valid[i] along the
// prior flow, x_t = x_{t-1} + F(x_{t-1}), and re-unprojects it with the
// prior depth at the nearest pixel, mapped to scene units as
// (D - b) / a. Points whose target leaves the image keep their center.
// Returns the number of relocated points.
std::size_t relocate_moving(GaussianSet& set, std::span<const Vec2> prev_pos,
                            std::span<const std::uint8_t> prev_valid, const Tensor& flow,
                            const Image& depth, double a, double b, const Intrinsics& K,
                            const Extrinsics& E);

struct FrameResult {
  int frame = 0;
  Extrinsics E;
  GaussianSet set;
  Image render;
  std::vector<LossRecord> losses;
  Mask moving;    // M_t
  Mask excluded;  // M-bar used by the camera phase (empty for frame 0)
  bool camera_skipped = false;
  std::vector<std::size_t> densified;  // points added per densification event
};

// Stateful per-frame pipeline. Frame 0 must be processed first, then frames
// in order.
class Engine {
 public:
  Engine(Sequence seq, Config cfg);

  FrameResult first_frame();
  FrameResult next_frame();

  int frames_done() const { return next_; }
  const Sequence& sequence() const { return seq_; }
  const GaussianSet& gaussians() const { return set_; }
  const Trajectory& trajectory() const { return traj_; }
  // Text of every pose in trajectory(); parse_pose_line reproduces each pose exactly.
  const std::vector<std::string>& pose_lines() const { return pose_lines_; }

 private:
  struct Cache {
    std::vector<Vec2> pos;
    std::vector<std::uint8_t> valid;  // visible and in front of the rendered surface
    std::vector<std::uint8_t> front;  // in front of the camera, occluded or not
    Image depth;
  };

  RenderCamera camera(const Extrinsics& E) const;
  void gaussian_phase(int t, const Extrinsics& E, const Mask& moving, const Image& depth_scene,
                      FrameResult& res);
  void cache_screen(const Extrinsics& E);
  std::vector<std::uint8_t> frozen_means() const;
  Extrinsics initial_pose(int t) const;

  Sequence seq_;
  Config cfg_;
  GaussianSet set_;
  Trajectory traj_;
  std::vector<std::string> pose_lines_;
  Cache cache_;
  int next_ = 0;
};

struct RunOptions {
  std::filesystem::path out_dir;  // empty = keep results in memory only
  int max_frames = 0;             // 0 = all
  std::function<void(const FrameResult&)> on_frame;
};

struct RunResult {
  Trajectory trajectory;
  std::vector<FrameResult> frames;
  double depth_scale = 1.0;
};

// Full pipeline. With an output directory it writes trajectory.txt,
// frame_%04d.gfs, render_%04d.png, losses.csv, intrinsics.txt, config.txt
// and scene_scale.txt (plus debug/ when enabled). Component errors are
// rethrown with the frame index prepended.
RunResult run(Sequence seq, const Config& cfg, const RunOptions& opts = {});

void write_losses_csv(const std::filesystem::path& path, const std::vector<LossRecord>& records);

}  // namespace gflow
