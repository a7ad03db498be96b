#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "gflow/array.hpp"
#include "gflow/camera.hpp"

namespace gflow {

enum class Cluster : std::uint8_t { Still = 0, Moving = 1 };

double sigmoid(double x);
double logit(double p);

// Decoded view of one Gaussian. Stored parameters are log-scale and logit
// opacity; the rotation is a (w, x, y, z) quaternion normalized on use.
struct GaussianPoint {
  Vec3 mean = Vec3::Zero();
  Vec3 log_scale = Vec3::Zero();
  double opacity_logit = 0.0;
  Vec4 rotation{1.0, 0.0, 0.0, 0.0};
  Vec3 color = Vec3::Zero();
  std::uint64_t id = 0;
  Cluster cluster = Cluster::Still;
  int birth_frame = 0;

  Vec3 scale() const { return log_scale.array().exp(); }
  double opacity() const { return sigmoid(opacity_logit); }
};

Mat3 quaternion_to_matrix(const Vec4& wxyz);
// Sigma = R(q) diag(s^2) R(q)^T.
Mat3 covariance3d(const GaussianPoint& p);

// Columnar Gaussian storage. Ids are append-only: removal never recycles.
class GaussianSet {
 public:
  std::vector<Vec3> mean;
  std::vector<Vec3> log_scale;
  std::vector<double> opacity_logit;
  std::vector<Vec4> rotation;
  std::vector<Vec3> color;
  std::vector<std::uint64_t> id;
  std::vector<Cluster> cluster;
  std::vector<int> birth_frame;

  std::size_t size() const { return mean.size(); }
  bool empty() const { return mean.empty(); }

  // Appends with a fresh id and returns it.
  std::uint64_t append(GaussianPoint p);
  void append_all(const GaussianSet& other, bool fresh_ids);
  GaussianPoint point(std::size_t i) const;
  void set_point(std::size_t i, const GaussianPoint& p);

  GaussianSet subset(std::span<const std::size_t> indices) const;
  GaussianSet select(Cluster c) const;
  // Keeps points whose flag is nonzero.
  void keep_if(std::span<const std::uint8_t> keep);

  // Index of an id, or -1.
  std::ptrdiff_t find(std::uint64_t point_id) const;

  std::uint64_t next_id() const { return next_id_; }
  void set_next_id(std::uint64_t v) { next_id_ = v; }

  // Rounds every parameter to the nearest f32 value so that checkpoints
  // reload to the exact same state.
  void quantize();
  // Checks column lengths, id uniqueness, finiteness and unit quaternions.
  bool valid() const;

 private:
  std::uint64_t next_id_ = 0;
};

// Moving/still partition of points by a pixel mask. Points projecting
// outside the image (or behind the camera) are Still.
struct ClusterSplit {
  std::vector<std::uint64_t> moving;
  std::vector<std::uint64_t> still;
};
ClusterSplit split_by_mask(const GaussianSet& set, const Mask& mask,
                           std::span<const Vec2> positions,
                           std::span<const std::uint8_t> visible = {});

// GFS1 checkpoint: "GFS1", u64 N, then f32 blocks (N x 3 mean, N x 3 log
// scale, N opacity logit, N x 4 rotation wxyz, N x 3 color), u64 ids, u8
// clusters. Loading resumes the id counter after the largest stored id.
void save_checkpoint(const std::filesystem::path& path, const GaussianSet& set);
GaussianSet load_checkpoint(const std::filesystem::path& path);

}  // namespace gflow
