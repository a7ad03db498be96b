#include "gflow/apps.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <sstream>
#include <tuple>
#include <unordered_map>

#include <Eigen/Geometry>

#include "gflow/error.hpp"
#include "gflow/losses.hpp"
#include "gflow/render.hpp"

namespace gflow {

namespace {

constexpr std::string_view kModule = "apps-eval";

std::string indexed(const char* pattern, int i) {
  char name[64];
  std::snprintf(name, sizeof name, pattern, i);
  return name;
}

RenderCamera frame_camera(const RunData& run, int f) {
  return {run.camera.K, run.trajectory.poses.at(f), run.camera.width, run.camera.height};
}

// Per-frame projected positions and the visibility rule shared by tracking
// and segmentation.
struct FrameView {
  std::vector<Vec2> pixel;
  std::vector<std::uint8_t> visible;
};

FrameView view_frame(const RunData& run, int f) {
  const GaussianSet& set = run.frames[f];
  const RenderCamera cam = frame_camera(run, f);
  const auto T = self_transmittance(set, cam);
  FrameView v;
  v.pixel.resize(set.size(), Vec2::Zero());
  v.visible.resize(set.size(), 0);
  for (std::size_t i = 0; i < set.size(); ++i) {
    const auto p = try_project(set.mean[i], cam.K, cam.E);
    if (!p) continue;
    v.pixel[i] = p->pixel;
    const int x = static_cast<int>(std::lround(p->pixel.x())), y = static_cast<int>(std::lround(p->pixel.y()));
    v.visible[i] = x >= 0 && y >= 0 && x < cam.width && y < cam.height && T[i] >= kTrackVisibility;
  }
  return v;
}

double cross(const Vec2& o, const Vec2& a, const Vec2& b) {
  return (a.x() - o.x()) * (b.y() - o.y()) - (a.y() - o.y()) * (b.x() - o.x());
}

bool on_segment(const Vec2& p, const Vec2& a, const Vec2& b) {
  return std::min(a.x(), b.x()) <= p.x() && p.x() <= std::max(a.x(), b.x()) &&
         std::min(a.y(), b.y()) <= p.y() && p.y() <= std::max(a.y(), b.y());
}

bool segments_intersect(const Vec2& p1, const Vec2& p2, const Vec2& q1, const Vec2& q2) {
  const double d1 = cross(q1, q2, p1), d2 = cross(q1, q2, p2);
  const double d3 = cross(p1, p2, q1), d4 = cross(p1, p2, q2);
  if (((d1 > 0 && d2 < 0) || (d1 < 0 && d2 > 0)) && ((d3 > 0 && d4 < 0) || (d3 < 0 && d4 > 0))) return true;
  if (d1 == 0 && on_segment(p1, q1, q2)) return true;
  if (d2 == 0 && on_segment(p2, q1, q2)) return true;
  if (d3 == 0 && on_segment(q1, p1, p2)) return true;
  if (d4 == 0 && on_segment(q2, p1, p2)) return true;
  return false;
}

// Inside or on the boundary.
bool covers(std::span<const Vec2> poly, const Vec2& p) {
  bool inside = false;
  for (std::size_t i = 0, j = poly.size() - 1; i < poly.size(); j = i++) {
    const Vec2 &a = poly[i], &b = poly[j];
    if (std::abs(cross(a, b, p)) <= 1e-9 * (1.0 + (b - a).squaredNorm()) && on_segment(p, a, b)) return true;
    if ((a.y() > p.y()) != (b.y() > p.y()) && p.x() < (b.x() - a.x()) * (p.y() - a.y()) / (b.y() - a.y()) + a.x())
      inside = !inside;
  }
  return inside;
}

double signed_area(std::span<const Vec2> poly) {
  double s = 0.0;
  for (std::size_t i = 0, j = poly.size() - 1; i < poly.size(); j = i++)
    s += poly[j].x() * poly[i].y() - poly[i].x() * poly[j].y();
  return 0.5 * s;
}

std::vector<Vec2> distinct(std::span<const Vec2> points) {
  std::vector<Vec2> p(points.begin(), points.end());
  auto less = [](const Vec2& a, const Vec2& b) { return a.x() < b.x() || (a.x() == b.x() && a.y() < b.y()); };
  std::sort(p.begin(), p.end(), less);
  p.erase(std::unique(p.begin(), p.end()), p.end());
  return p;
}

// One attempt of the k-nearest-neighbour walk; empty on failure.
std::vector<Vec2> knn_hull_attempt(const std::vector<Vec2>& pts, int k) {
  const std::size_t n = pts.size();
  std::size_t first = 0;
  for (std::size_t i = 1; i < n; ++i)
    if (pts[i].y() > pts[first].y() || (pts[i].y() == pts[first].y() && pts[i].x() < pts[first].x())) first = i;

  std::vector<std::uint8_t> used(n, 0);
  std::vector<std::size_t> hull{first};
  used[first] = 1;
  std::size_t current = first;
  // Image y points down, so walking from the bottom-most point with the
  // interior on the right means starting along +x.
  Vec2 dir(1.0, 0.0);
  std::vector<std::pair<double, std::size_t>> near;
  for (int step = 2;; ++step) {
    if (step == 5) used[first] = 0;
    near.clear();
    for (std::size_t i = 0; i < n; ++i)
      if (!used[i] && i != current) near.emplace_back((pts[i] - pts[current]).squaredNorm(), i);
    if (near.empty()) return {};
    const std::size_t kk = std::min<std::size_t>(k, near.size());
    std::partial_sort(near.begin(), near.begin() + kk, near.end());
    near.resize(kk);
    // Sharpest right turn on screen first; a full reversal ranks last and
    // collinear candidates go nearest first.
    std::vector<std::tuple<double, double, std::size_t>> cand;
    for (const auto& [d, i] : near) {
      const Vec2 v = pts[i] - pts[current];
      double ang = -std::atan2(dir.x() * v.y() - dir.y() * v.x(), dir.dot(v));
      if (ang <= -M_PI + 1e-12) ang = M_PI;
      cand.emplace_back(std::round(ang * 1e9), d, i);
    }
    std::sort(cand.begin(), cand.end());
    std::ptrdiff_t pick = -1;
    for (const auto& [ang, d, c] : cand) {
      bool hit = false;
      const std::size_t last = hull.size() >= 2 ? hull.size() - 2 : hull.size();
      for (std::size_t e = 0; e + 1 < hull.size() && !hit; ++e) {
        if (e == last) continue;                // shares `current`
        if (c == first && e == 0) continue;     // closing edge shares `first`
        hit = segments_intersect(pts[current], pts[c], pts[hull[e]], pts[hull[e + 1]]);
      }
      if (!hit) {
        pick = static_cast<std::ptrdiff_t>(c);
        break;
      }
    }
    if (pick < 0) return {};
    if (static_cast<std::size_t>(pick) == first) break;
    dir = pts[pick] - pts[current];
    current = static_cast<std::size_t>(pick);
    hull.push_back(current);
    used[current] = 1;
    if (hull.size() > n) return {};
  }
  if (hull.size() < 3) return {};
  std::vector<Vec2> poly;
  for (std::size_t i : hull) poly.push_back(pts[i]);
  for (const Vec2& p : pts)
    if (!covers(poly, p)) return {};
  return poly;
}

}  // namespace

RunData load_run(const std::filesystem::path& dir) {
  RunData run;
  const auto intr = dir / "intrinsics.txt";
  const auto traj = dir / "trajectory.txt";
  for (const auto& p : {intr, traj})
    if (!std::filesystem::exists(p)) throw Error(ErrorCode::Io, kModule, "missing run file: " + p.string());
  run.camera = load_intrinsics(intr);
  run.trajectory = load_trajectory(traj);
  for (int t = 0; std::filesystem::exists(dir / indexed("frame_%04d.gfs", t)); ++t)
    run.frames.push_back(load_checkpoint(dir / indexed("frame_%04d.gfs", t)));
  if (run.frames.empty()) throw Error(ErrorCode::Io, kModule, "no checkpoints in " + dir.string());
  if (run.trajectory.size() != run.frames.size())
    throw Error(ErrorCode::LengthMismatch, kModule,
                std::to_string(run.trajectory.size()) + " poses for " + std::to_string(run.frames.size()) +
                    " checkpoints");
  return run;
}

TrackSet extract_tracks(const RunData& run, std::span<const std::uint64_t> ids) {
  TrackSet out;
  out.tracks.resize(ids.size());
  for (std::size_t k = 0; k < ids.size(); ++k) out.tracks[k].id = ids[k];
  std::vector<std::uint8_t> seen(ids.size(), 0), ended(ids.size(), 0);
  for (int f = 0; f < run.size(); ++f) {
    const GaussianSet& set = run.frames[f];
    std::unordered_map<std::uint64_t, std::size_t> where;
    where.reserve(set.size());
    for (std::size_t i = 0; i < set.size(); ++i) where.emplace(set.id[i], i);
    const FrameView view = view_frame(run, f);
    for (std::size_t k = 0; k < ids.size(); ++k) {
      const auto it = where.find(ids[k]);
      if (it == where.end()) {
        if (seen[k]) ended[k] = 1;
        continue;
      }
      if (ended[k]) continue;  // removed and never re-added; keep frames contiguous
      Track& tr = out.tracks[k];
      if (!seen[k]) tr.birth_frame = f;
      seen[k] = 1;
      tr.samples.push_back({f, set.mean[it->second], view.pixel[it->second], view.visible[it->second] != 0});
    }
  }
  for (std::size_t k = 0; k < ids.size(); ++k)
    if (!seen[k]) throw Error(ErrorCode::UnknownId, kModule, "point id " + std::to_string(ids[k]) + " not found");
  return out;
}

std::optional<std::uint64_t> query_point(const RunData& run, int frame, const Vec2& pixel, double radius) {
  if (frame < 0 || frame >= run.size())
    throw Error(ErrorCode::LengthMismatch, kModule, "frame " + std::to_string(frame) + " not in run");
  const FrameView v = view_frame(run, frame);
  std::optional<std::uint64_t> best;
  double best_d = radius * radius;
  for (std::size_t i = 0; i < v.pixel.size(); ++i) {
    if (!v.visible[i]) continue;
    const double d = (v.pixel[i] - pixel).squaredNorm();
    if (d <= best_d) {
      best_d = d;
      best = run.frames[frame].id[i];
    }
  }
  return best;
}

std::vector<std::uint64_t> points_in_mask(const RunData& run, int frame, const Mask& mask) {
  if (mask.height() != run.camera.height || mask.width() != run.camera.width)
    throw Error(ErrorCode::DimMismatch, kModule, "mask size does not match the run");
  const FrameView v = view_frame(run, frame);
  std::vector<std::uint64_t> ids;
  for (std::size_t i = 0; i < v.pixel.size(); ++i) {
    if (!v.visible[i]) continue;
    const int x = static_cast<int>(std::lround(v.pixel[i].x())), y = static_cast<int>(std::lround(v.pixel[i].y()));
    if (mask(y, x)) ids.push_back(run.frames[frame].id[i]);
  }
  return ids;
}

void save_tracks_csv(const std::filesystem::path& path, const TrackSet& tracks) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::Io, kModule, "cannot write " + path.string());
  out << "id,frame,X,Y,Z,u,v,visible\n" << std::setprecision(9);
  for (const auto& tr : tracks.tracks)
    for (const auto& s : tr.samples)
      out << tr.id << ',' << s.frame << ',' << s.world.x() << ',' << s.world.y() << ',' << s.world.z() << ','
          << s.pixel.x() << ',' << s.pixel.y() << ',' << (s.visible ? 1 : 0) << '\n';
}

std::vector<Vec2> convex_hull(std::span<const Vec2> points) {
  std::vector<Vec2> p = distinct(points);
  if (p.size() < 3) throw Error(ErrorCode::TooFewPoints, kModule, "hull needs at least 3 distinct points");
  std::vector<Vec2> h(2 * p.size());
  std::size_t k = 0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    while (k >= 2 && cross(h[k - 2], h[k - 1], p[i]) <= 0) --k;
    h[k++] = p[i];
  }
  for (std::size_t i = p.size() - 1, lo = k + 1; i-- > 0;) {
    while (k >= lo && cross(h[k - 2], h[k - 1], p[i]) <= 0) --k;
    h[k++] = p[i];
  }
  h.resize(k - 1);
  if (h.size() < 3) throw Error(ErrorCode::TooFewPoints, kModule, "points are collinear");
  return h;
}

std::vector<Vec2> concave_hull(std::span<const Vec2> points, int k) {
  const std::vector<Vec2> p = distinct(points);
  if (p.size() < 3) throw Error(ErrorCode::TooFewPoints, kModule, "hull needs at least 3 distinct points");
  std::vector<Vec2> poly;
  const int kmax = std::min<int>(static_cast<int>(p.size()) - 1, std::max(3 * k, 48));
  for (int kk = std::max(3, k); kk <= kmax && poly.empty(); ++kk) poly = knn_hull_attempt(p, kk);
  if (poly.empty()) poly = convex_hull(p);
  if (signed_area(poly) < 0) std::reverse(poly.begin(), poly.end());
  return poly;
}

Mask rasterize_polygon(std::span<const Vec2> polygon, int height, int width) {
  Mask m(height, width);
  if (polygon.size() < 3) return m;
  std::vector<double> xs;
  for (int y = 0; y < height; ++y) {
    xs.clear();
    for (std::size_t i = 0, j = polygon.size() - 1; i < polygon.size(); j = i++) {
      const Vec2 &a = polygon[i], &b = polygon[j];
      if ((a.y() > y) != (b.y() > y)) xs.push_back(a.x() + (y - a.y()) * (b.x() - a.x()) / (b.y() - a.y()));
    }
    std::sort(xs.begin(), xs.end());
    for (std::size_t q = 0; q + 1 < xs.size(); q += 2) {
      const int x0 = std::max(0, static_cast<int>(std::ceil(xs[q])));
      const int x1 = std::min(width - 1, static_cast<int>(std::floor(xs[q + 1])));
      for (int x = x0; x <= x1; ++x) m(y, x) = 1;
    }
  }
  return m;
}

std::vector<Mask> propagate_mask(const RunData& run, const Mask& initial) {
  const auto ids = points_in_mask(run, 0, initial);
  if (ids.size() < 3)
    throw Error(ErrorCode::TooFewPoints, kModule,
                "initial mask selects " + std::to_string(ids.size()) + " visible points");
  const TrackSet tracks = extract_tracks(run, ids);
  std::vector<Mask> masks;
  for (int f = 0; f < run.size(); ++f) {
    std::vector<Vec2> pts;
    for (const auto& tr : tracks.tracks) {
      const int s = f - tr.birth_frame;
      if (s >= 0 && s < static_cast<int>(tr.samples.size()) && tr.samples[s].visible) pts.push_back(tr.samples[s].pixel);
    }
    if (distinct(pts).size() < 3)
      throw Error(ErrorCode::TooFewPoints, kModule, "frame " + std::to_string(f) + ": fewer than 3 visible points");
    masks.push_back(rasterize_polygon(concave_hull(pts), run.camera.height, run.camera.width));
  }
  return masks;
}

Image render_novel_view(const GaussianSet& set, const Intrinsics& K, const Extrinsics& E, int width, int height) {
  return render(set, {K, E, width, height}).color;
}

Edit Edit::inverse() const {
  Edit inv;
  inv.selection = selection;
  inv.rotation = rotation.transpose();
  inv.scale = 1.0 / scale;
  inv.translation = -translation;
  if (pivot) inv.pivot = *pivot + translation;
  inv.color_matrix = color_matrix.inverse();
  inv.color_offset = -(inv.color_matrix * color_offset);
  return inv;
}

GaussianSet edit(const GaussianSet& set, const Edit& e) {
  std::vector<std::uint8_t> sel(set.size(), 0);
  const Selection& s = e.selection;
  switch (s.kind) {
    case Selection::Kind::All:
      std::fill(sel.begin(), sel.end(), 1);
      break;
    case Selection::Kind::Cluster:
      for (std::size_t i = 0; i < set.size(); ++i) sel[i] = set.cluster[i] == s.cluster;
      break;
    case Selection::Kind::Ids:
      for (auto id : s.ids) {
        const auto i = set.find(id);
        if (i < 0) throw Error(ErrorCode::UnknownId, kModule, "point id " + std::to_string(id) + " not found");
        sel[static_cast<std::size_t>(i)] = 1;
      }
      break;
  }
  const std::size_t n_sel = static_cast<std::size_t>(std::count(sel.begin(), sel.end(), 1));
  if (n_sel == 0 && e.add.empty()) throw Error(ErrorCode::EmptyCluster, kModule, "edit selects no points");

  GaussianSet out = set;
  if (e.remove) {
    for (auto& v : sel) v = !v;
    out.keep_if(sel);
  } else if (n_sel > 0) {
    Vec3 pivot = Vec3::Zero();
    if (e.pivot) {
      pivot = *e.pivot;
    } else {
      for (std::size_t i = 0; i < set.size(); ++i)
        if (sel[i]) pivot += set.mean[i];
      pivot /= static_cast<double>(n_sel);
    }
    // Identity parts leave the stored values untouched bit for bit.
    const bool turn = e.rotation != Mat3::Identity(), resize = e.scale != 1.0;
    const bool recolor = e.color_matrix != Mat3::Identity() || !e.color_offset.isZero(0);
    const Eigen::Quaterniond qr(e.rotation);
    const double log_s = std::log(e.scale);
    for (std::size_t i = 0; i < out.size(); ++i) {
      if (!sel[i]) continue;
      if (turn || resize) out.mean[i] = pivot + e.scale * (e.rotation * (out.mean[i] - pivot));
      out.mean[i] += e.translation;
      if (resize) out.log_scale[i].array() += log_s;
      if (turn) {
        const Vec4& r = out.rotation[i];
        const Eigen::Quaterniond q = qr * Eigen::Quaterniond(r[0], r[1], r[2], r[3]).normalized();
        out.rotation[i] = Vec4(q.w(), q.x(), q.y(), q.z());
      }
      if (recolor) out.color[i] = e.color_matrix * out.color[i] + e.color_offset;
    }
  }
  if (!e.add.empty()) out.append_all(e.add, true);
  return out;
}

void parse_color_map(const std::string& spec, Mat3& matrix, Vec3& offset) {
  matrix = Mat3::Identity();
  offset = Vec3::Zero();
  const auto colon = spec.find(':');
  const std::string name = spec.substr(0, colon);
  std::vector<double> v;
  if (colon != std::string::npos) {
    std::stringstream ss(spec.substr(colon + 1));
    std::string item;
    while (std::getline(ss, item, ',')) {
      try {
        v.push_back(std::stod(item));
      } catch (const std::exception&) {
        throw Error(ErrorCode::ConfigInvalid, kModule, "bad number in color map: " + item);
      }
    }
  }
  if (name == "identity" && v.empty()) return;
  if (name == "gray" && v.empty()) {
    const Eigen::RowVector3d luma(0.299, 0.587, 0.114);
    matrix.rowwise() = luma;
    return;
  }
  if (name == "invert" && v.empty()) {
    matrix = -Mat3::Identity();
    offset = Vec3::Ones();
    return;
  }
  if (name == "tint" && v.size() == 3) {
    matrix = Vec3(v[0], v[1], v[2]).asDiagonal();
    return;
  }
  if (name == "matrix" && (v.size() == 9 || v.size() == 12)) {
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 3; ++c) matrix(r, c) = v[3 * r + c];
    if (v.size() == 12) offset = Vec3(v[9], v[10], v[11]);
    return;
  }
  throw Error(ErrorCode::ConfigInvalid, kModule, "unknown color map: " + spec);
}

double psnr(const Image& a, const Image& b) {
  if (!a.same_shape(b)) throw Error(ErrorCode::DimMismatch, kModule, "psnr: image shapes differ");
  double se = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) se += (a[i] - b[i]) * (a[i] - b[i]);
  const double mse = a.empty() ? 0.0 : se / static_cast<double>(a.size());
  if (mse < 1e-10) return kPsnrCap;
  return std::min(kPsnrCap, 10.0 * std::log10(1.0 / mse));
}

double ssim_score(const Image& a, const Image& b) {
  if (!a.same_shape(b)) throw Error(ErrorCode::DimMismatch, kModule, "ssim: image shapes differ");
  return ssim(a, b);
}

Sim3 umeyama(std::span<const Vec3> src, std::span<const Vec3> dst) {
  if (src.size() != dst.size() || src.empty())
    throw Error(ErrorCode::LengthMismatch, kModule, "alignment needs matching non-empty point lists");
  const auto n = static_cast<Eigen::Index>(src.size());
  Eigen::Matrix3Xd S(3, n), D(3, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    S.col(i) = src[i];
    D.col(i) = dst[i];
  }
  Sim3 out;
  const Vec3 ms = S.rowwise().mean(), md = D.rowwise().mean();
  // Coincident sources leave rotation and scale undetermined: translate only.
  if ((S.colwise() - ms).squaredNorm() < 1e-24) {
    out.t = md - ms;
    return out;
  }
  const Eigen::Matrix4d T = Eigen::umeyama(S, D, true);
  const Mat3 sR = T.topLeftCorner<3, 3>();
  out.scale = std::cbrt(sR.determinant());
  out.R = sR / out.scale;
  out.t = T.topRightCorner<3, 1>();
  return out;
}

double rotation_angle_deg(const Eigen::Quaterniond& a, const Eigen::Quaterniond& b) {
  return a.angularDistance(b) * 180.0 / M_PI;
}

double PoseErrorReport::rpe_t_mean() const {
  return rpe_t.empty() ? 0.0 : std::accumulate(rpe_t.begin(), rpe_t.end(), 0.0) / rpe_t.size();
}
double PoseErrorReport::rpe_r_mean() const {
  return rpe_r.empty() ? 0.0 : std::accumulate(rpe_r.begin(), rpe_r.end(), 0.0) / rpe_r.size();
}
double PoseErrorReport::rpe_r_max() const {
  return rpe_r.empty() ? 0.0 : *std::max_element(rpe_r.begin(), rpe_r.end());
}

PoseErrorReport pose_errors(const Trajectory& est, const Trajectory& gt) {
  if (est.size() != gt.size() || est.first_frame != gt.first_frame)
    throw Error(ErrorCode::LengthMismatch, kModule,
                "trajectories cover different frames (" + std::to_string(est.size()) + " vs " +
                    std::to_string(gt.size()) + ")");
  PoseErrorReport rep;
  const std::size_t n = est.size();
  if (n == 0) return rep;
  std::vector<Vec3> ce(n), cg(n);
  for (std::size_t i = 0; i < n; ++i) {
    ce[i] = est.poses[i].center();
    cg[i] = gt.poses[i].center();
  }
  rep.alignment = umeyama(ce, cg);
  double se = 0.0;
  for (std::size_t i = 0; i < n; ++i) se += (rep.alignment.apply(ce[i]) - cg[i]).squaredNorm();
  rep.ate = std::sqrt(se / static_cast<double>(n));

  // Relative motions in camera-to-world form; the rigid part of the
  // alignment cancels, the scale does not.
  const double s = rep.alignment.scale;
  for (std::size_t i = 0; i + 1 < n; ++i) {
    const Eigen::Quaterniond qe0 = est.poses[i].rotation.conjugate(), qe1 = est.poses[i + 1].rotation.conjugate();
    const Eigen::Quaterniond qg0 = gt.poses[i].rotation.conjugate(), qg1 = gt.poses[i + 1].rotation.conjugate();
    const Eigen::Quaterniond re = qe0.conjugate() * qe1, rg = qg0.conjugate() * qg1;
    const Vec3 te = qe0.conjugate() * (s * (ce[i + 1] - ce[i]));
    const Vec3 tg = qg0.conjugate() * (cg[i + 1] - cg[i]);
    // err = rel_gt^-1 rel_est
    const Vec3 t_err = rg.conjugate() * (te - tg);
    rep.rpe_t.push_back(t_err.norm());
    rep.rpe_r.push_back(rotation_angle_deg(rg, re));
  }
  return rep;
}

}  // namespace gflow
