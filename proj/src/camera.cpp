#include "gflow/camera.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "gflow/error.hpp"

namespace gflow {

namespace {
constexpr std::string_view kModule = "camera-geometry";
}

void Intrinsics::validate(int width, int height) const {
  if (!(fx > 0 && fy > 0)) throw Error(ErrorCode::ConfigInvalid, kModule, "focal lengths must be positive");
  if (!(cx >= 0 && cx < width && cy >= 0 && cy < height))
    throw Error(ErrorCode::ConfigInvalid, kModule, "principal point outside the image");
}

Mat3 Intrinsics::matrix() const {
  Mat3 K;
  K << fx, 0, cx, 0, fy, cy, 0, 0, 1;
  return K;
}

Intrinsics Intrinsics::scaled(double sx, double sy) const {
  // Pixel centers sit on integers, so the continuous image spans [-0.5, W-0.5].
  return {fx * sx, fy * sy, (cx + 0.5) * sx - 0.5, (cy + 0.5) * sy - 0.5};
}

Extrinsics Extrinsics::from_camera_to_world(const Eigen::Quaterniond& q_c2w, const Vec3& center) {
  Extrinsics E;
  E.rotation = q_c2w.conjugate().normalized();
  E.translation = -(E.rotation * center);
  return E;
}

Extrinsics Extrinsics::inverse() const {
  Extrinsics inv;
  inv.rotation = rotation.conjugate();
  inv.translation = -(inv.rotation * translation);
  return inv;
}

Extrinsics Extrinsics::compose(const Extrinsics& other) const {
  Extrinsics out;
  out.rotation = (rotation * other.rotation).normalized();
  out.translation = rotation * other.translation + translation;
  return out;
}

std::optional<Projection> try_project(const Vec3& point, const Intrinsics& K, const Extrinsics& E) {
  const Vec3 pc = E.transform(point);
  if (!(pc.z() > kMinDepth)) return std::nullopt;
  return Projection{Vec2(K.fx * pc.x() / pc.z() + K.cx, K.fy * pc.y() / pc.z() + K.cy), pc.z()};
}

Projection project(const Vec3& point, const Intrinsics& K, const Extrinsics& E) {
  auto p = try_project(point, K, E);
  if (!p) throw Error(ErrorCode::BehindCamera, kModule, "point not in front of the camera");
  return *p;
}

Vec3 unproject(const Vec2& pixel, double depth, const Intrinsics& K, const Extrinsics& E) {
  if (!(depth > 0)) throw Error(ErrorCode::NonPositiveDepth, kModule, "depth must be positive");
  const Vec3 pc((pixel.x() - K.cx) / K.fx * depth, (pixel.y() - K.cy) / K.fy * depth, depth);
  return E.rotation.conjugate() * (pc - E.translation);
}

Mat3 skew(const Vec3& v) {
  Mat3 m;
  m << 0, -v.z(), v.y(), v.z(), 0, -v.x(), -v.y(), v.x(), 0;
  return m;
}

Eigen::Quaterniond so3_exp(const Vec3& omega) {
  const double theta = omega.norm();
  if (theta < 1e-12) {
    Eigen::Quaterniond q(1.0, 0.5 * omega.x(), 0.5 * omega.y(), 0.5 * omega.z());
    return q.normalized();
  }
  const Vec3 axis = omega / theta;
  const double s = std::sin(0.5 * theta);
  return Eigen::Quaterniond(std::cos(0.5 * theta), s * axis.x(), s * axis.y(), s * axis.z());
}

Vec3 so3_log(const Eigen::Quaterniond& q_in) {
  Eigen::Quaterniond q = q_in.normalized();
  if (q.w() < 0) q.coeffs() *= -1.0;
  const Vec3 v = q.vec();
  const double s = v.norm();
  if (s < 1e-12) return 2.0 * v;
  const double theta = 2.0 * std::atan2(s, q.w());
  return theta * v / s;
}

Extrinsics retract(const Extrinsics& E, const Vec6& delta) {
  Extrinsics out;
  out.rotation = (so3_exp(delta.head<3>()) * E.rotation).normalized();
  out.translation = E.translation + delta.tail<3>();
  return out;
}

std::string format_pose_line(int index, const Extrinsics& E) {
  const Extrinsics c2w = E.inverse();
  Eigen::Quaterniond q = c2w.rotation.normalized();
  if (q.w() < 0) q.coeffs() *= -1.0;
  std::ostringstream os;
  os << index << std::setprecision(17);
  os << ' ' << c2w.translation.x() << ' ' << c2w.translation.y() << ' ' << c2w.translation.z();
  os << ' ' << q.x() << ' ' << q.y() << ' ' << q.z() << ' ' << q.w();
  return os.str();
}

Extrinsics parse_pose_line(const std::string& line, int* index) {
  std::istringstream is(line);
  int idx = 0;
  double tx, ty, tz, qx, qy, qz, qw;
  if (!(is >> idx >> tx >> ty >> tz >> qx >> qy >> qz >> qw))
    throw Error(ErrorCode::DimMismatch, kModule, "malformed pose line: '" + line + "'");
  if (index) *index = idx;
  Extrinsics c2w;
  c2w.rotation = Eigen::Quaterniond(qw, qx, qy, qz).normalized();
  c2w.translation = Vec3(tx, ty, tz);
  return c2w.inverse();
}

void save_pose_lines(const std::filesystem::path& path, const std::vector<std::string>& lines) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path);
  if (!os) throw Error(ErrorCode::Io, kModule, "cannot write " + path.string());
  os << "# idx tx ty tz qx qy qz qw (camera-to-world; camera looks down +z, y down)\n";
  for (const auto& line : lines) os << line << "\n";
}

void save_trajectory(const std::filesystem::path& path, const Trajectory& traj) {
  std::vector<std::string> lines;
  for (std::size_t i = 0; i < traj.poses.size(); ++i)
    lines.push_back(format_pose_line(traj.first_frame + static_cast<int>(i), traj.poses[i]));
  save_pose_lines(path, lines);
}

Trajectory load_trajectory(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw Error(ErrorCode::Io, kModule, "missing file " + path.string());
  Trajectory traj;
  std::string line;
  bool first = true;
  int expected = 0;
  while (std::getline(is, line)) {
    if (line.empty() || line[0] == '#') continue;
    int idx = 0;
    Extrinsics E = parse_pose_line(line, &idx);
    if (first) {
      traj.first_frame = idx;
      expected = idx;
      first = false;
    }
    if (idx != expected)
      throw Error(ErrorCode::LengthMismatch, kModule, "trajectory frame indices must be contiguous");
    ++expected;
    traj.poses.push_back(E);
  }
  return traj;
}

void save_intrinsics(const std::filesystem::path& path, const CameraInfo& info) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path);
  if (!os) throw Error(ErrorCode::Io, kModule, "cannot write " + path.string());
  os << "# fx fy cx cy width height\n" << std::setprecision(17) << info.K.fx << ' ' << info.K.fy
     << ' ' << info.K.cx << ' ' << info.K.cy << ' ' << info.width << ' ' << info.height << "\n";
}

CameraInfo load_intrinsics(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw Error(ErrorCode::Io, kModule, "missing file " + path.string());
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    CameraInfo info;
    if (!(ls >> info.K.fx >> info.K.fy >> info.K.cx >> info.K.cy >> info.width >> info.height))
      throw Error(ErrorCode::DimMismatch, kModule, "malformed intrinsics in " + path.string());
    info.K.validate(info.width, info.height);
    return info;
  }
  throw Error(ErrorCode::DimMismatch, kModule, "empty intrinsics file " + path.string());
}

}  // namespace gflow
