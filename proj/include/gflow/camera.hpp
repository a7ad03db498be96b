#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <Eigen/Geometry>

namespace gflow {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Vec4 = Eigen::Vector4d;
using Vec6 = Eigen::Matrix<double, 6, 1>;
using Mat2 = Eigen::Matrix2d;
using Mat3 = Eigen::Matrix3d;

// Points closer than this to the image plane are treated as behind the camera.
inline constexpr double kMinDepth = 1e-6;

struct Intrinsics {
  double fx = 1.0;
  double fy = 1.0;
  double cx = 0.0;
  double cy = 0.0;

  void validate(int width, int height) const;
  Mat3 matrix() const;
  // Rescales for an image resized by (sx, sy); pixel centers stay on integers.
  Intrinsics scaled(double sx, double sy) const;
};

// World-to-camera rigid transform, x_cam = R x_world + t. Camera looks down
// +z with +x right and +y down.
struct Extrinsics {
  Eigen::Quaterniond rotation = Eigen::Quaterniond::Identity();
  Vec3 translation = Vec3::Zero();

  static Extrinsics identity() { return {}; }
  static Extrinsics from_camera_to_world(const Eigen::Quaterniond& q_c2w, const Vec3& center);

  Mat3 R() const { return rotation.toRotationMatrix(); }
  Vec3 transform(const Vec3& world) const { return rotation * world + translation; }
  Vec3 center() const { return -(rotation.conjugate() * translation); }
  Extrinsics inverse() const;
  // (this ∘ other): apply other first, then this.
  Extrinsics compose(const Extrinsics& other) const;
};

struct Projection {
  Vec2 pixel;
  double depth;
};

// Throws BehindCamera when the camera-frame depth is <= kMinDepth.
Projection project(const Vec3& point, const Intrinsics& K, const Extrinsics& E);
// Non-throwing variant for hot loops.
std::optional<Projection> try_project(const Vec3& point, const Intrinsics& K, const Extrinsics& E);
// Throws NonPositiveDepth when depth <= 0.
Vec3 unproject(const Vec2& pixel, double depth, const Intrinsics& K, const Extrinsics& E);

Mat3 skew(const Vec3& v);
Eigen::Quaterniond so3_exp(const Vec3& omega);
Vec3 so3_log(const Eigen::Quaterniond& q);

// Left-multiplicative update: R <- Exp(delta_rot) R, t <- t + delta_t.
Extrinsics retract(const Extrinsics& E, const Vec6& delta);

struct Trajectory {
  int first_frame = 0;
  std::vector<Extrinsics> poses;  // world-to-camera, frames first_frame, first_frame+1, ...

  std::size_t size() const { return poses.size(); }
};

// "idx tx ty tz qx qy qz qw" per line, camera-to-world; '#' lines are comments.
void save_trajectory(const std::filesystem::path& path, const Trajectory& traj);
Trajectory load_trajectory(const std::filesystem::path& path);
// Writes preformatted pose lines under the trajectory header. The pose text
// round trip is not idempotent, so a writer that must reproduce exactly the
// poses it rendered with keeps the original lines.
void save_pose_lines(const std::filesystem::path& path, const std::vector<std::string>& lines);
std::string format_pose_line(int index, const Extrinsics& E);
Extrinsics parse_pose_line(const std::string& line, int* index = nullptr);

// "fx fy cx cy width height"
struct CameraInfo {
  Intrinsics K;
  int width = 0;
  int height = 0;
};
void save_intrinsics(const std::filesystem::path& path, const CameraInfo& info);
CameraInfo load_intrinsics(const std::filesystem::path& path);

}  // namespace gflow
