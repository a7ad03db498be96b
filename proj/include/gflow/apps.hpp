#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "gflow/array.hpp"
#include "gflow/camera.hpp"
#include "gflow/gaussians.hpp"

namespace gflow {

// Per-frame reconstruction state as written by run(): one checkpoint and
// one pose per frame, all sharing the camera intrinsics.
struct RunData {
  CameraInfo camera;
  Trajectory trajectory;
  std::vector<GaussianSet> frames;

  int size() const { return static_cast<int>(frames.size()); }
};

// Reads intrinsics.txt, trajectory.txt and frame_%04d.gfs from a run
// directory.
RunData load_run(const std::filesystem::path& dir);

// ---- tracking

// A point counts as visible when it projects inside the image and the
// transmittance in front of it is at least this.
inline constexpr double kTrackVisibility = 0.05;

struct TrackSample {
  int frame = 0;
  Vec3 world = Vec3::Zero();
  Vec2 pixel = Vec2::Zero();
  bool visible = false;
};

struct Track {
  std::uint64_t id = 0;
  int birth_frame = 0;
  std::vector<TrackSample> samples;  // contiguous frames from birth_frame
};

struct TrackSet {
  std::vector<Track> tracks;
};

// Throws UnknownId when an id is in no frame.
TrackSet extract_tracks(const RunData& run, std::span<const std::uint64_t> ids);

// Id of the visible point whose projection on `frame` lies closest to
// `pixel`, or nullopt when no visible point is within `radius` px.
std::optional<std::uint64_t> query_point(const RunData& run, int frame, const Vec2& pixel,
                                         double radius = 2.0);

// Ids of points visible on `frame` whose projection falls on a set pixel.
std::vector<std::uint64_t> points_in_mask(const RunData& run, int frame, const Mask& mask);

// CSV: id,frame,X,Y,Z,u,v,visible
void save_tracks_csv(const std::filesystem::path& path, const TrackSet& tracks);

// ---- segmentation

inline constexpr int kHullNeighbors = 16;

// Concave hull by k-nearest-neighbour boundary walking. k grows on failure;
// when no k yields a simple polygon enclosing every point the convex hull is
// returned. Counter-clockwise in image coordinates (y down). Throws
// TooFewPoints for fewer than 3 distinct points.
std::vector<Vec2> concave_hull(std::span<const Vec2> points, int k = kHullNeighbors);
std::vector<Vec2> convex_hull(std::span<const Vec2> points);

// Pixels whose centers lie inside the polygon (even-odd rule).
Mask rasterize_polygon(std::span<const Vec2> polygon, int height, int width);

// Selects the points under `initial` on frame 0 and, on every frame, hulls
// their visible projections. Throws TooFewPoints when fewer than 3 are
// visible on some frame.
std::vector<Mask> propagate_mask(const RunData& run, const Mask& initial);

// ---- novel views and editing

Image render_novel_view(const GaussianSet& set, const Intrinsics& K, const Extrinsics& E, int width,
                        int height);

struct Selection {
  enum class Kind { All, Cluster, Ids } kind = Kind::All;
  Cluster cluster = Cluster::Moving;
  std::vector<std::uint64_t> ids;
};

// Applied to selected points: mu' = p + scale * R (mu - p) + translation
// with pivot p (the selection centroid unless given), log scales shift by
// log(scale), orientations turn by R, and colors map to color_matrix * c +
// color_offset. `remove` drops the selection instead; `add` is appended
// with fresh ids afterwards.
struct Edit {
  Selection selection;
  Mat3 rotation = Mat3::Identity();
  double scale = 1.0;
  Vec3 translation = Vec3::Zero();
  std::optional<Vec3> pivot;
  Mat3 color_matrix = Mat3::Identity();
  Vec3 color_offset = Vec3::Zero();
  bool remove = false;
  GaussianSet add;

  // Undoes the geometric and color part (pivot follows the moved centroid).
  Edit inverse() const;
};

// Throws UnknownId for ids missing from the set and EmptyCluster when a
// non-add edit selects nothing.
GaussianSet edit(const GaussianSet& set, const Edit& e);

// "identity", "gray", "invert", "tint:r,g,b" or "matrix:m00,...,m22[,o0,o1,o2]".
void parse_color_map(const std::string& spec, Mat3& matrix, Vec3& offset);

// ---- metrics

inline constexpr double kPsnrCap = 99.0;

// 10 log10(1 / MSE), capped at 99 dB when MSE < 1e-10.
double psnr(const Image& a, const Image& b);
// Mean of the SSIM map used by the photometric loss.
double ssim_score(const Image& a, const Image& b);

struct Sim3 {
  double scale = 1.0;
  Mat3 R = Mat3::Identity();
  Vec3 t = Vec3::Zero();

  Vec3 apply(const Vec3& x) const { return scale * (R * x) + t; }
};

// Least-squares similarity mapping src onto dst (Umeyama).
Sim3 umeyama(std::span<const Vec3> src, std::span<const Vec3> dst);

struct PoseErrorReport {
  double ate = 0.0;              // RMSE of aligned camera centers
  std::vector<double> rpe_t;     // per consecutive pair, after scale alignment
  std::vector<double> rpe_r;     // degrees
  Sim3 alignment;                // maps the estimate onto the ground truth

  double rpe_t_mean() const;
  double rpe_r_mean() const;
  double rpe_r_max() const;
};

// Throws LengthMismatch when the trajectories cover different frames.
PoseErrorReport pose_errors(const Trajectory& est, const Trajectory& gt);

// Geodesic angle between two rotations, degrees.
double rotation_angle_deg(const Eigen::Quaterniond& a, const Eigen::Quaterniond& b);

}  // namespace gflow
