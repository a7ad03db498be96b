#include "gflow/oracle.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "gflow/error.hpp"
#include "gflow/io.hpp"
#include "gflow/parallel.hpp"
#include "gflow/render.hpp"
#include "gflow/rng.hpp"

namespace gflow {

namespace {

constexpr std::string_view kModule = "synthetic-oracle";
constexpr double kPi = 3.14159265358979323846;

// Boxes scene layout. Surfaces: 0 wall, 1 floor, 2-3 static boxes, 4 the
// object that may move.
constexpr double kWallZ = 6.0;
constexpr double kFloorY = 1.2;
struct Box {
  Vec3 center;
  Vec3 half;
};
const Box kBoxes[] = {
    {{-0.9, 0.5, 3.6}, {0.45, 0.7, 0.45}},
    {{1.4, 0.65, 4.6}, {0.4, 0.55, 0.4}},
    {{0.6, -0.55, 2.8}, {0.3, 0.3, 0.3}},
};
constexpr int kMovingSurface = 4;

[[noreturn]] void invalid(const std::string& what) { throw Error(ErrorCode::SpecInvalid, kModule, what); }

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  return s.substr(b, s.find_last_not_of(" \t\r\n") - b + 1);
}

double num(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    const double d = std::stod(v, &pos);
    if (pos != v.size()) invalid("bad value for " + key);
    return d;
  } catch (const std::logic_error&) {
    invalid("bad value for " + key);
  }
}

int whole(const std::string& key, const std::string& v) {
  const double d = num(key, v);
  if (d != std::floor(d)) invalid(key + " must be an integer");
  return static_cast<int>(d);
}

std::optional<double> slab(double o, double d, double lo, double hi, double& tmin, double& tmax) {
  if (std::abs(d) < 1e-15) {
    if (o < lo || o > hi) return std::nullopt;
    return 0.0;
  }
  double t0 = (lo - o) / d, t1 = (hi - o) / d;
  if (t0 > t1) std::swap(t0, t1);
  tmin = std::max(tmin, t0);
  tmax = std::min(tmax, t1);
  return 0.0;
}

std::optional<double> hit_box(const Vec3& o, const Vec3& d, const Vec3& c, const Vec3& h) {
  double tmin = 1e-9, tmax = 1e300;
  for (int k = 0; k < 3; ++k)
    if (!slab(o[k], d[k], c[k] - h[k], c[k] + h[k], tmin, tmax)) return std::nullopt;
  if (tmin > tmax) return std::nullopt;
  return tmin;
}

bool same_pose(const Extrinsics& a, const Extrinsics& b) {
  return a.rotation.coeffs() == b.rotation.coeffs() && a.translation == b.translation;
}

double clamp01(double v) { return std::clamp(v, 0.0, 1.0); }

Vec3 wall_color(double u, double v) {
  return {0.5 + 0.3 * std::sin(3.1 * u + 0.4) * std::cos(2.3 * v), 0.45 + 0.3 * std::sin(2.7 * v + 1.1 + 0.8 * u),
          0.5 + 0.3 * std::cos(2.2 * u - 3.3 * v)};
}
Vec3 floor_color(double u, double v) {
  return {0.4 + 0.25 * std::cos(3.5 * u) * std::sin(2.9 * v), 0.55 + 0.25 * std::sin(2.1 * u + 3.7 * v),
          0.35 + 0.2 * std::cos(4.1 * v + 0.7)};
}
Vec3 box_color(const Vec3& p) {
  return {0.6 + 0.3 * std::sin(6 * p.x() + 5 * p.y()), 0.3 + 0.25 * std::cos(7 * p.y() - 4 * p.z()),
          0.5 + 0.35 * std::sin(5 * p.z() + 6 * p.x() + 1)};
}
Vec3 object_color(const Vec3& p) {
  return {0.85 + 0.15 * std::sin(8 * p.x()) * std::cos(8 * p.y()), 0.35 + 0.2 * std::sin(7 * p.y() + 6 * p.z()),
          0.15 + 0.12 * std::cos(9 * p.x() - 5 * p.z())};
}

// Depth-based flow: the surface point seen at p, moved by the object
// velocity when it belongs to the moving part, reprojected into `other`.
Tensor reprojection_flow(const Image& depth, const Mask& moving, const Intrinsics& K, const Extrinsics& E,
                         const Extrinsics& other, const Vec3& velocity) {
  Tensor flow(depth.height(), depth.width(), 2);
  const bool still_camera = same_pose(E, other);
  parallel_for(static_cast<std::size_t>(depth.height()), [&](std::size_t yi) {
    const int y = static_cast<int>(yi);
    for (int x = 0; x < depth.width(); ++x) {
      // Exact zeros where nothing moves, free of round-trip round-off.
      if (still_camera && (!moving(y, x) || velocity.isZero())) continue;
      Vec3 X = unproject(Vec2(x, y), depth(y, x), K, E);
      if (moving(y, x)) X += velocity;
      const auto q = try_project(X, K, other);
      if (!q) invalid("scene point falls behind the camera");
      flow(y, x, 0) = static_cast<float>(q->pixel.x() - x);
      flow(y, x, 1) = static_cast<float>(q->pixel.y() - y);
    }
  });
  return flow;
}

}  // namespace

void OracleSpec::validate() const {
  if (width < 16 || height < 16) invalid("resolution must be at least 16x16");
  if (frames < 1) invalid("frames must be >= 1");
  if (!(focal > 0)) invalid("focal must be positive");
  if (supersample < 1 || supersample > 8) invalid("supersample must be in [1, 8]");
  if (blob_count < 10 || blob_count > 2000) invalid("blob_count must be in [10, 2000]");
  if (!(orbit_radius > 0)) invalid("orbit_radius must be positive");
  if (path == CameraPath::Orbit && std::abs(orbit_deg) * (frames - 1) > 40.0) invalid("orbit sweeps more than 40 degrees");
}

OracleSpec parse_oracle_spec(const std::string& text) {
  OracleSpec s;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) invalid("expected key=value, got '" + line + "'");
    const std::string key = trim(line.substr(0, eq)), v = trim(line.substr(eq + 1));
    if (key == "kind") {
      if (v == "boxes") s.kind = OracleKind::Boxes;
      else if (v == "blobs") s.kind = OracleKind::Blobs;
      else invalid("unknown kind '" + v + "'");
    } else if (key == "path") {
      if (v == "orbit") s.path = CameraPath::Orbit;
      else if (v == "lateral") s.path = CameraPath::Lateral;
      else if (v == "static") s.path = CameraPath::Static;
      else invalid("unknown path '" + v + "'");
    } else if (key == "width") s.width = whole(key, v);
    else if (key == "height") s.height = whole(key, v);
    else if (key == "frames") s.frames = whole(key, v);
    else if (key == "focal") s.focal = num(key, v);
    else if (key == "orbit_deg") s.orbit_deg = num(key, v);
    else if (key == "orbit_radius") s.orbit_radius = num(key, v);
    else if (key == "lateral_step") s.lateral_step = num(key, v);
    else if (key == "moving_object") s.moving_object = whole(key, v) != 0;
    else if (key == "supersample") s.supersample = whole(key, v);
    else if (key == "blob_count") s.blob_count = whole(key, v);
    else if (key == "seed") s.seed = static_cast<std::uint64_t>(whole(key, v));
    else if (key == "object_velocity") {
      std::istringstream vs(v);
      std::string item;
      int k = 0;
      while (std::getline(vs, item, ',')) {
        if (k > 2) invalid("object_velocity needs 3 components");
        s.object_velocity[k++] = num(key, trim(item));
      }
      if (k != 3) invalid("object_velocity needs 3 components");
    } else {
      invalid("unknown key '" + key + "'");
    }
  }
  s.validate();
  return s;
}

OracleSpec load_oracle_spec(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::Io, kModule, "cannot open " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_oracle_spec(ss.str());
}

void save_oracle_spec(const std::filesystem::path& path, const OracleSpec& s) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::Io, kModule, "cannot write " + path.string());
  out.precision(17);
  out << "kind=" << (s.kind == OracleKind::Boxes ? "boxes" : "blobs") << "\n"
      << "width=" << s.width << "\nheight=" << s.height << "\nframes=" << s.frames << "\nfocal=" << s.focal << "\n"
      << "path=" << (s.path == CameraPath::Orbit ? "orbit" : s.path == CameraPath::Lateral ? "lateral" : "static")
      << "\norbit_deg=" << s.orbit_deg << "\norbit_radius=" << s.orbit_radius << "\nlateral_step=" << s.lateral_step
      << "\nmoving_object=" << (s.moving_object ? 1 : 0) << "\nobject_velocity=" << s.object_velocity.x() << ","
      << s.object_velocity.y() << "," << s.object_velocity.z() << "\nsupersample=" << s.supersample
      << "\nblob_count=" << s.blob_count << "\nseed=" << s.seed << "\n";
}

OracleScene::OracleScene(OracleSpec spec) : spec_(std::move(spec)) {
  spec_.validate();
  if (spec_.kind != OracleKind::Blobs) return;
  RngStream rng(spec_.seed, "oracle-blobs");
  const int n_moving = spec_.moving_object ? std::max(5, spec_.blob_count / 10) : 0;
  const int n_mid = (spec_.blob_count - n_moving) / 3;
  const int n_wall = spec_.blob_count - n_moving - n_mid;
  // Backdrop: jittered grid of flat blobs on the wall plane.
  const double x0 = -5.0, x1 = 9.0, y0 = -3.6, y1 = 3.6;
  const double spacing = std::sqrt((x1 - x0) * (y1 - y0) / n_wall);
  const int cols = static_cast<int>(std::ceil((x1 - x0) / spacing));
  int placed = 0;
  for (int i = 0; placed < n_wall; ++i, ++placed) {
    GaussianPoint p;
    const double gx = x0 + spacing * ((i % cols) + 0.5), gy = y0 + spacing * ((i / cols) + 0.5);
    // Depth jitter keeps the depth order of overlapping neighbors stable
    // under small camera motion; exact ties would reorder on any rotation.
    p.mean = Vec3(gx + rng.uniform(-0.2, 0.2) * spacing, gy + rng.uniform(-0.2, 0.2) * spacing,
                  kWallZ + rng.uniform(-0.15, 0.15));
    p.log_scale = Vec3(std::log(0.75 * spacing), std::log(0.75 * spacing), std::log(0.02));
    p.opacity_logit = logit(0.97);
    p.color = wall_color(gx, gy).unaryExpr([](double v) { return clamp01(v); });
    blobs_.append(p);
  }
  for (int i = 0; i < n_mid; ++i) {
    GaussianPoint p;
    p.mean = Vec3(rng.uniform(-2.2, 2.6), rng.uniform(-1.3, 1.1), rng.uniform(3.2, 5.2));
    for (int k = 0; k < 3; ++k) p.log_scale[k] = std::log(rng.uniform(0.05, 0.16));
    p.opacity_logit = rng.uniform(0.5, 3.0);
    Vec4 q(rng.normal(), rng.normal(), rng.normal(), rng.normal());
    p.rotation = q / q.norm();
    p.color = box_color(p.mean).unaryExpr([](double v) { return clamp01(v); });
    blobs_.append(p);
  }
  for (int i = 0; i < n_moving; ++i) {
    GaussianPoint p;
    Vec3 off(rng.normal(), rng.normal(), rng.normal());
    off *= 0.12;
    p.mean = kBoxes[2].center + off;
    for (int k = 0; k < 3; ++k) p.log_scale[k] = std::log(rng.uniform(0.05, 0.1));
    p.opacity_logit = 3.0;
    p.color = object_color(off).unaryExpr([](double v) { return clamp01(v); });
    p.cluster = Cluster::Moving;
    blobs_.append(p);
  }
}

Intrinsics OracleScene::intrinsics() const {
  return {spec_.focal, spec_.focal, (spec_.width - 1) / 2.0, (spec_.height - 1) / 2.0};
}

Extrinsics OracleScene::pose(int frame) const {
  switch (spec_.path) {
    case CameraPath::Static:
      return Extrinsics::identity();
    case CameraPath::Lateral: {
      Extrinsics E;
      E.translation = -Vec3(frame * spec_.lateral_step, 0.0, 0.0);
      return E;
    }
    case CameraPath::Orbit:
    default: {
      const double th = frame * spec_.orbit_deg * kPi / 180.0;
      const Eigen::Quaterniond q(Eigen::AngleAxisd(th, Vec3::UnitY()));
      const Vec3 target(0.0, 0.0, spec_.orbit_radius);
      const Vec3 center = target - spec_.orbit_radius * (q * Vec3::UnitZ());
      return Extrinsics::from_camera_to_world(q, center);
    }
  }
}

Trajectory OracleScene::trajectory() const {
  Trajectory t;
  for (int f = 0; f < spec_.frames; ++f) t.poses.push_back(pose(f));
  return t;
}

std::optional<OracleHit> OracleScene::intersect(const Vec3& o, const Vec3& d, int frame) const {
  OracleHit best;
  best.t = 1e300;
  auto consider = [&](double t, int surface) {
    if (t > 1e-9 && t < best.t) {
      best.t = t;
      best.surface = surface;
    }
  };
  if (d.z() > 0) consider((kWallZ - o.z()) / d.z(), 0);
  if (d.y() > 0) consider((kFloorY - o.y()) / d.y(), 1);
  for (int b = 0; b < 3; ++b) {
    Vec3 c = kBoxes[b].center;
    if (b == 2 && spec_.moving_object) c += frame * spec_.object_velocity;
    if (auto t = hit_box(o, d, c, kBoxes[b].half)) consider(*t, 2 + b);
  }
  if (best.surface < 0) return std::nullopt;
  best.point = o + best.t * d;
  best.moving = best.surface == kMovingSurface && spec_.moving_object;
  return best;
}

Vec3 OracleScene::albedo(const OracleHit& hit, int frame) const {
  const Vec3& p = hit.point;
  Vec3 c;
  switch (hit.surface) {
    case 0: c = wall_color(p.x(), p.y()); break;
    case 1: c = floor_color(p.x(), p.z()); break;
    case 2:
    case 3: c = box_color(p - kBoxes[hit.surface - 2].center); break;
    default: {
      Vec3 center = kBoxes[2].center;
      if (spec_.moving_object) center += frame * spec_.object_velocity;
      c = object_color(p - center);
    }
  }
  return c.unaryExpr([](double v) { return clamp01(v); });
}

Vec3 OracleScene::advect(const OracleHit& hit, int from, int to) const {
  if (!hit.moving) return hit.point;
  return hit.point + (to - from) * spec_.object_velocity;
}

OracleFrame OracleScene::render_frame(int frame) const {
  if (frame < 0 || frame >= spec_.frames) invalid("frame index out of range");
  return spec_.kind == OracleKind::Boxes ? render_boxes(frame) : render_blobs(frame);
}

OracleFrame OracleScene::render_boxes(int frame) const {
  const int h = spec_.height, w = spec_.width, S = spec_.supersample;
  const Intrinsics K = intrinsics();
  const Extrinsics E = pose(frame);
  const Mat3 Rt = E.R().transpose();
  const Vec3 origin = E.center();
  const bool has_next = frame + 1 < spec_.frames, has_prev = frame > 0;
  const Extrinsics En = has_next ? pose(frame + 1) : E, Ep = has_prev ? pose(frame - 1) : E;

  OracleFrame out;
  out.rgb = Image(h, w, 3);
  out.depth = Image(h, w);
  out.moving = Mask(h, w);
  out.clean = Mask(h, w);
  Tensor fwd(h, w, 2), bwd(h, w, 2);
  auto ray = [&](double x, double y) -> Vec3 { return Rt * Vec3((x - K.cx) / K.fx, (y - K.cy) / K.fy, 1.0); };
  parallel_for(static_cast<std::size_t>(h), [&](std::size_t yi) {
    const int y = static_cast<int>(yi);
    for (int x = 0; x < w; ++x) {
      Vec3 col = Vec3::Zero();
      int first_surface = -2;
      bool clean = true;
      for (int sy = 0; sy < S; ++sy)
        for (int sx = 0; sx < S; ++sx) {
          const double ox = (sx + 0.5) / S - 0.5, oy = (sy + 0.5) / S - 0.5;
          const auto hit = intersect(origin, ray(x + ox, y + oy), frame);
          if (!hit) invalid("camera ray escapes the scene");
          col += albedo(*hit, frame);
          if (first_surface == -2) first_surface = hit->surface;
          clean = clean && hit->surface == first_surface;
        }
      col /= static_cast<double>(S * S);
      for (int c = 0; c < 3; ++c) out.rgb(y, x, c) = col[c];
      const auto hit = intersect(origin, ray(x, y), frame);
      if (!hit) invalid("camera ray escapes the scene");
      out.depth(y, x) = E.transform(hit->point).z();
      out.moving(y, x) = hit->moving;
      out.clean(y, x) = clean;
      auto flow_to = [&](Tensor& f, const Extrinsics& other, int to) {
        if (same_pose(E, other) && advect(*hit, frame, to) == hit->point) return;
        const auto q = try_project(advect(*hit, frame, to), K, other);
        if (!q) invalid("scene point falls behind the camera");
        f(y, x, 0) = static_cast<float>(q->pixel.x() - x);
        f(y, x, 1) = static_cast<float>(q->pixel.y() - y);
      };
      if (has_next) flow_to(fwd, En, frame + 1);
      if (has_prev) flow_to(bwd, Ep, frame - 1);
    }
  });
  if (has_next) out.flow_fwd = std::move(fwd);
  if (has_prev) out.flow_bwd = std::move(bwd);
  return out;
}

GaussianSet OracleScene::blobs_at(int frame) const {
  GaussianSet s = blobs_;
  for (std::size_t i = 0; i < s.size(); ++i)
    if (s.cluster[i] == Cluster::Moving) s.mean[i] += frame * spec_.object_velocity;
  return s;
}

OracleFrame OracleScene::render_blobs(int frame) const {
  const Intrinsics K = intrinsics();
  RenderCamera cam{K, pose(frame), spec_.width, spec_.height};
  const GaussianSet set = blobs_at(frame);
  const auto full = render(set, cam);
  GaussianSet marker = set;
  for (std::size_t i = 0; i < marker.size(); ++i)
    marker.color[i] = marker.cluster[i] == Cluster::Moving ? Vec3::Ones() : Vec3::Zero();
  const auto mk = render(marker, cam);

  OracleFrame out;
  out.rgb = full.color;
  out.depth = full.depth;
  out.moving = Mask(spec_.height, spec_.width);
  out.clean = Mask(spec_.height, spec_.width);
  for (std::size_t i = 0; i < out.moving.size(); ++i) {
    if (!(full.acc_alpha[i] > 0.5)) invalid("blob backdrop leaves a hole in the image");
    const double frac = mk.color[3 * i] / full.acc_alpha[i];
    out.moving[i] = frac > 0.5;
    out.clean[i] = full.acc_alpha[i] > 0.99 && (frac < 0.01 || frac > 0.99);
  }
  const Vec3 v = spec_.moving_object ? spec_.object_velocity : Vec3::Zero();
  if (frame + 1 < spec_.frames) out.flow_fwd = reprojection_flow(out.depth, out.moving, K, cam.E, pose(frame + 1), v);
  if (frame > 0) out.flow_bwd = reprojection_flow(out.depth, out.moving, K, cam.E, pose(frame - 1), -v);
  return out;
}

namespace {

struct Bounds {
  Vec3 lo = Vec3::Constant(1e300), hi = Vec3::Constant(-1e300);
  void add(const OracleFrame& f, const Intrinsics& K, const Extrinsics& E) {
    for (int y = 0; y < f.depth.height(); y += 2)
      for (int x = 0; x < f.depth.width(); x += 2) {
        const Vec3 X = unproject(Vec2(x, y), f.depth(y, x), K, E);
        lo = lo.cwiseMin(X);
        hi = hi.cwiseMax(X);
      }
  }
  double diameter() const { return (hi - lo).norm(); }
};

}  // namespace

double OracleScene::scene_diameter() const {
  Bounds b;
  for (int f = 0; f < spec_.frames; ++f) b.add(render_frame(f), intrinsics(), pose(f));
  return b.diameter();
}

void generate(const OracleSpec& spec, const std::filesystem::path& out_dir) {
  namespace fs = std::filesystem;
  const OracleScene scene(spec);
  std::error_code ec;
  fs::create_directories(out_dir / "gt", ec);
  if (ec) throw Error(ErrorCode::Io, kModule, "cannot create " + out_dir.string());
  save_intrinsics(out_dir / "intrinsics.txt", {scene.intrinsics(), spec.width, spec.height});
  save_oracle_spec(out_dir / "gt" / "spec.txt", spec);
  save_trajectory(out_dir / "gt" / "trajectory.txt", scene.trajectory());
  Bounds bounds;
  char name[64];
  for (int f = 0; f < spec.frames; ++f) {
    const OracleFrame fr = scene.render_frame(f);
    std::snprintf(name, sizeof name, "frame_%04d.png", f);
    save_png(out_dir / name, fr.rgb);
    std::snprintf(name, sizeof name, "depth_%04d.gft", f);
    save_tensor(out_dir / name, to_tensor(fr.depth));
    if (fr.flow_fwd) {
      std::snprintf(name, sizeof name, "flow_fwd_%04d.gft", f);
      save_tensor(out_dir / name, *fr.flow_fwd);
    }
    if (fr.flow_bwd) {
      std::snprintf(name, sizeof name, "flow_bwd_%04d.gft", f);
      save_tensor(out_dir / name, *fr.flow_bwd);
    }
    std::snprintf(name, sizeof name, "mask_%04d.png", f);
    save_mask_png(out_dir / "gt" / name, fr.moving);
    bounds.add(fr, scene.intrinsics(), scene.pose(f));
  }
  std::ofstream meta(out_dir / "gt" / "scene.txt");
  meta.precision(17);
  meta << "scene_diameter " << bounds.diameter() << "\n";
}

}  // namespace gflow
