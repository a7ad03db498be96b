#include "gflow/gaussians.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <fstream>
#include <unordered_set>

#include "gflow/error.hpp"

namespace gflow {

namespace {
constexpr std::string_view kModule = "gaussian-scene";
constexpr std::array<char, 4> kMagic{'G', 'F', 'S', '1'};

double q32(double v) { return static_cast<double>(static_cast<float>(v)); }
}  // namespace

double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double logit(double p) { return std::log(p) - std::log1p(-p); }

Mat3 quaternion_to_matrix(const Vec4& q_in) {
  const Vec4 q = q_in / q_in.norm();
  const double w = q[0], x = q[1], y = q[2], z = q[3];
  Mat3 R;
  R << 1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),
       2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
       2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y);
  return R;
}

Mat3 covariance3d(const GaussianPoint& p) {
  const Mat3 R = quaternion_to_matrix(p.rotation);
  const Vec3 s = p.scale();
  const Mat3 M = R * s.asDiagonal();
  return M * M.transpose();
}

std::uint64_t GaussianSet::append(GaussianPoint p) {
  p.id = next_id_++;
  mean.push_back(p.mean);
  log_scale.push_back(p.log_scale);
  opacity_logit.push_back(p.opacity_logit);
  rotation.push_back(p.rotation);
  color.push_back(p.color);
  id.push_back(p.id);
  cluster.push_back(p.cluster);
  birth_frame.push_back(p.birth_frame);
  return p.id;
}

void GaussianSet::append_all(const GaussianSet& other, bool fresh_ids) {
  for (std::size_t i = 0; i < other.size(); ++i) {
    GaussianPoint p = other.point(i);
    if (fresh_ids) {
      append(p);
    } else {
      mean.push_back(p.mean);
      log_scale.push_back(p.log_scale);
      opacity_logit.push_back(p.opacity_logit);
      rotation.push_back(p.rotation);
      color.push_back(p.color);
      id.push_back(p.id);
      cluster.push_back(p.cluster);
      birth_frame.push_back(p.birth_frame);
      next_id_ = std::max(next_id_, p.id + 1);
    }
  }
}

GaussianPoint GaussianSet::point(std::size_t i) const {
  return {mean[i], log_scale[i], opacity_logit[i], rotation[i], color[i], id[i], cluster[i], birth_frame[i]};
}

void GaussianSet::set_point(std::size_t i, const GaussianPoint& p) {
  mean[i] = p.mean;
  log_scale[i] = p.log_scale;
  opacity_logit[i] = p.opacity_logit;
  rotation[i] = p.rotation;
  color[i] = p.color;
  cluster[i] = p.cluster;
  birth_frame[i] = p.birth_frame;
}

GaussianSet GaussianSet::subset(std::span<const std::size_t> indices) const {
  GaussianSet out;
  for (std::size_t i : indices) {
    out.mean.push_back(mean[i]);
    out.log_scale.push_back(log_scale[i]);
    out.opacity_logit.push_back(opacity_logit[i]);
    out.rotation.push_back(rotation[i]);
    out.color.push_back(color[i]);
    out.id.push_back(id[i]);
    out.cluster.push_back(cluster[i]);
    out.birth_frame.push_back(birth_frame[i]);
  }
  out.next_id_ = next_id_;
  return out;
}

GaussianSet GaussianSet::select(Cluster c) const {
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < size(); ++i)
    if (cluster[i] == c) idx.push_back(i);
  return subset(idx);
}

void GaussianSet::keep_if(std::span<const std::uint8_t> keep) {
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < size(); ++i)
    if (keep[i]) idx.push_back(i);
  const auto next = next_id_;
  *this = subset(idx);
  next_id_ = next;
}

std::ptrdiff_t GaussianSet::find(std::uint64_t point_id) const {
  const auto it = std::find(id.begin(), id.end(), point_id);
  return it == id.end() ? -1 : std::distance(id.begin(), it);
}

void GaussianSet::quantize() {
  for (std::size_t i = 0; i < size(); ++i) {
    for (int k = 0; k < 3; ++k) {
      mean[i][k] = q32(mean[i][k]);
      log_scale[i][k] = q32(log_scale[i][k]);
      color[i][k] = q32(color[i][k]);
    }
    opacity_logit[i] = q32(opacity_logit[i]);
    for (int k = 0; k < 4; ++k) rotation[i][k] = q32(rotation[i][k]);
  }
}

bool GaussianSet::valid() const {
  const std::size_t n = size();
  if (log_scale.size() != n || opacity_logit.size() != n || rotation.size() != n ||
      color.size() != n || id.size() != n || cluster.size() != n || birth_frame.size() != n)
    return false;
  std::unordered_set<std::uint64_t> seen;
  for (std::size_t i = 0; i < n; ++i) {
    if (!seen.insert(id[i]).second) return false;
    if (!mean[i].allFinite() || !log_scale[i].allFinite() || !std::isfinite(opacity_logit[i]) ||
        !rotation[i].allFinite() || !color[i].allFinite())
      return false;
    if (std::abs(rotation[i].norm() - 1.0) > 1e-6) return false;
    if ((color[i].array() < 0.0).any() || (color[i].array() > 1.0).any()) return false;
  }
  return true;
}

ClusterSplit split_by_mask(const GaussianSet& set, const Mask& mask, std::span<const Vec2> positions,
                           std::span<const std::uint8_t> visible) {
  ClusterSplit out;
  for (std::size_t i = 0; i < set.size(); ++i) {
    const int x = static_cast<int>(std::lround(positions[i].x()));
    const int y = static_cast<int>(std::lround(positions[i].y()));
    const bool in_front = visible.empty() || visible[i];
    const bool moving = in_front && mask.contains(y, x) && mask(y, x);
    (moving ? out.moving : out.still).push_back(set.id[i]);
  }
  return out;
}

namespace {

template <typename T>
void put(std::ostream& os, T v) {
  static_assert(std::is_trivially_copyable_v<T>);
  unsigned char b[sizeof(T)];
  std::uint64_t bits = 0;
  if constexpr (sizeof(T) == 4) bits = std::bit_cast<std::uint32_t>(v);
  else if constexpr (sizeof(T) == 8) bits = std::bit_cast<std::uint64_t>(v);
  else bits = static_cast<std::uint64_t>(v);
  for (std::size_t k = 0; k < sizeof(T); ++k) b[k] = static_cast<unsigned char>(bits >> (8 * k));
  os.write(reinterpret_cast<const char*>(b), sizeof(T));
}

template <typename T>
T get(std::istream& is) {
  unsigned char b[sizeof(T)];
  if (!is.read(reinterpret_cast<char*>(b), sizeof(T)))
    throw Error(ErrorCode::DimMismatch, kModule, "truncated checkpoint");
  std::uint64_t bits = 0;
  for (std::size_t k = 0; k < sizeof(T); ++k) bits |= static_cast<std::uint64_t>(b[k]) << (8 * k);
  if constexpr (sizeof(T) == 4) return std::bit_cast<T>(static_cast<std::uint32_t>(bits));
  else if constexpr (sizeof(T) == 8) return std::bit_cast<T>(bits);
  else return static_cast<T>(bits);
}

float get_finite(std::istream& is) {
  const float v = get<float>(is);
  if (!std::isfinite(v)) throw Error(ErrorCode::NonFiniteData, kModule, "non-finite checkpoint value");
  return v;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const GaussianSet& set) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error(ErrorCode::Io, kModule, "cannot write " + path.string());
  os.write(kMagic.data(), 4);
  const std::size_t n = set.size();
  put<std::uint64_t>(os, n);
  for (std::size_t i = 0; i < n; ++i) for (int k = 0; k < 3; ++k) put<float>(os, static_cast<float>(set.mean[i][k]));
  for (std::size_t i = 0; i < n; ++i) for (int k = 0; k < 3; ++k) put<float>(os, static_cast<float>(set.log_scale[i][k]));
  for (std::size_t i = 0; i < n; ++i) put<float>(os, static_cast<float>(set.opacity_logit[i]));
  for (std::size_t i = 0; i < n; ++i) for (int k = 0; k < 4; ++k) put<float>(os, static_cast<float>(set.rotation[i][k]));
  for (std::size_t i = 0; i < n; ++i) for (int k = 0; k < 3; ++k) put<float>(os, static_cast<float>(set.color[i][k]));
  for (std::size_t i = 0; i < n; ++i) put<std::uint64_t>(os, set.id[i]);
  for (std::size_t i = 0; i < n; ++i) put<std::uint8_t>(os, static_cast<std::uint8_t>(set.cluster[i]));
  if (!os) throw Error(ErrorCode::Io, kModule, "write failed: " + path.string());
}

GaussianSet load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error(ErrorCode::Io, kModule, "missing file " + path.string());
  std::array<char, 4> magic{};
  if (!is.read(magic.data(), 4) || magic != kMagic) throw Error(ErrorCode::BadMagic, kModule, path.string());
  const auto n = get<std::uint64_t>(is);
  if (n > (1ull << 32)) throw Error(ErrorCode::DimMismatch, kModule, "implausible point count");
  GaussianSet set;
  set.mean.resize(n);
  set.log_scale.resize(n);
  set.opacity_logit.resize(n);
  set.rotation.resize(n);
  set.color.resize(n);
  set.id.resize(n);
  set.cluster.resize(n);
  set.birth_frame.assign(n, 0);
  for (std::size_t i = 0; i < n; ++i) for (int k = 0; k < 3; ++k) set.mean[i][k] = get_finite(is);
  for (std::size_t i = 0; i < n; ++i) for (int k = 0; k < 3; ++k) set.log_scale[i][k] = get_finite(is);
  for (std::size_t i = 0; i < n; ++i) set.opacity_logit[i] = get_finite(is);
  for (std::size_t i = 0; i < n; ++i) for (int k = 0; k < 4; ++k) set.rotation[i][k] = get_finite(is);
  for (std::size_t i = 0; i < n; ++i) for (int k = 0; k < 3; ++k) set.color[i][k] = get_finite(is);
  std::uint64_t next = 0;
  for (std::size_t i = 0; i < n; ++i) {
    set.id[i] = get<std::uint64_t>(is);
    next = std::max(next, set.id[i] + 1);
  }
  for (std::size_t i = 0; i < n; ++i) {
    const auto c = get<std::uint8_t>(is);
    if (c > 1) throw Error(ErrorCode::DimMismatch, kModule, "bad cluster label");
    set.cluster[i] = static_cast<Cluster>(c);
  }
  set.set_next_id(next);
  return set;
}

}  // namespace gflow
