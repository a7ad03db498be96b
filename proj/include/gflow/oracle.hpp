#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "gflow/array.hpp"
#include "gflow/camera.hpp"
#include "gflow/gaussians.hpp"

namespace gflow {

enum class OracleKind { Boxes, Blobs };
enum class CameraPath { Orbit, Lateral, Static };

// Synthetic scene description, stored as key=value text.
struct OracleSpec {
  OracleKind kind = OracleKind::Boxes;
  int width = 160;
  int height = 96;
  int frames = 12;
  double focal = 120.0;
  CameraPath path = CameraPath::Orbit;
  double orbit_deg = 2.0;       // per frame, about the vertical axis through the target
  double orbit_radius = 3.0;
  double lateral_step = 0.05;   // scene units per frame along +x
  bool moving_object = true;
  Vec3 object_velocity{0.0, 0.09, 0.0};  // scene units per frame
  int supersample = 3;          // per axis, boxes only
  int blob_count = 1500;        // blobs only, includes the moving cluster
  std::uint64_t seed = 7;

  void validate() const;
};

OracleSpec parse_oracle_spec(const std::string& text);
OracleSpec load_oracle_spec(const std::filesystem::path& path);
void save_oracle_spec(const std::filesystem::path& path, const OracleSpec& spec);

struct OracleFrame {
  Image rgb;
  Image depth;
  std::optional<Tensor> flow_fwd;  // t -> t+1 on frame t pixels
  std::optional<Tensor> flow_bwd;  // t -> t-1 on frame t pixels
  Mask moving;
  Mask clean;  // pixel footprint sees a single surface (no silhouette mixing)
};

// Ray hit against the analytic scene at a given frame time.
struct OracleHit {
  double t = 0.0;  // ray parameter
  int surface = -1;
  Vec3 point = Vec3::Zero();
  bool moving = false;
};

class OracleScene {
 public:
  explicit OracleScene(OracleSpec spec);

  const OracleSpec& spec() const { return spec_; }
  Intrinsics intrinsics() const;
  Extrinsics pose(int frame) const;  // world-to-camera
  Trajectory trajectory() const;

  std::optional<OracleHit> intersect(const Vec3& origin, const Vec3& dir, int frame) const;
  // Albedo at a hit, sampled in object-local coordinates.
  Vec3 albedo(const OracleHit& hit, int frame) const;
  // World position at `to` of the material point seen at `hit` on `from`.
  Vec3 advect(const OracleHit& hit, int from, int to) const;

  OracleFrame render_frame(int frame) const;
  // Bounding-box diagonal of all visible surface points over the sequence.
  double scene_diameter() const;

  // Blobs scene content (empty for boxes).
  const GaussianSet& blobs() const { return blobs_; }

 private:
  OracleSpec spec_;
  GaussianSet blobs_;

  OracleFrame render_boxes(int frame) const;
  OracleFrame render_blobs(int frame) const;
  GaussianSet blobs_at(int frame) const;
};

// Writes the dataset layout consumed by `reconstruct`:
//   intrinsics.txt, frame_%04d.png, depth_%04d.gft, flow_fwd_%04d.gft,
//   flow_bwd_%04d.gft, gt/trajectory.txt, gt/mask_%04d.png, gt/scene.txt
void generate(const OracleSpec& spec, const std::filesystem::path& out_dir);

}  // namespace gflow
