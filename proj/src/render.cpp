#include "gflow/render.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>

#include "gflow/parallel.hpp"

namespace gflow {

namespace {

// Per-pixel contribution of one splat. Returns false outside the 3-sigma
// ellipse.
struct PixelHit {
  double alpha;  // opacity * falloff
  double falloff;
  double dx;
  double dy;
};

inline bool evaluate(const Splat& s, double px, double py, PixelHit& hit) {
  const double dx = px - s.center.x();
  const double dy = py - s.center.y();
  const double m2 = s.conic_a * dx * dx + 2.0 * s.conic_b * dx * dy + s.conic_c * dy * dy;
  if (!(m2 <= kMaxMahalanobisSq)) return false;
  const double g = std::exp(-0.5 * m2);
  hit = {s.opacity * g, g, dx, dy};
  return true;
}

std::vector<std::uint32_t> depth_order(const std::vector<Splat>& splats) {
  std::vector<std::uint32_t> order;
  order.reserve(splats.size());
  for (std::uint32_t i = 0; i < splats.size(); ++i)
    if (splats[i].visible) order.push_back(i);
  std::stable_sort(order.begin(), order.end(), [&](std::uint32_t a, std::uint32_t b) {
    return splats[a].depth < splats[b].depth;
  });
  return order;
}

struct TileGrid {
  int tiles_x = 0;
  int tiles_y = 0;
  std::vector<std::vector<std::uint32_t>> lists;  // splat indices, front to back

  std::size_t tile_of(int x, int y) const {
    return static_cast<std::size_t>(y / kTileSize) * tiles_x + x / kTileSize;
  }
};

TileGrid bin_tiles(const std::vector<Splat>& splats, const std::vector<std::uint32_t>& order,
                   int width, int height) {
  TileGrid grid;
  grid.tiles_x = (width + kTileSize - 1) / kTileSize;
  grid.tiles_y = (height + kTileSize - 1) / kTileSize;
  grid.lists.resize(static_cast<std::size_t>(grid.tiles_x) * grid.tiles_y);
  for (std::uint32_t g : order) {
    const Splat& s = splats[g];
    // One pixel of slack keeps boundary pixels consistent with the
    // per-pixel ellipse test.
    const double x0 = s.center.x() - s.extent_x - 1.0, x1 = s.center.x() + s.extent_x + 1.0;
    const double y0 = s.center.y() - s.extent_y - 1.0, y1 = s.center.y() + s.extent_y + 1.0;
    if (x1 < 0 || y1 < 0 || x0 > width - 1 || y0 > height - 1) continue;
    const int tx0 = std::max(0, static_cast<int>(std::floor(x0)) / kTileSize);
    const int ty0 = std::max(0, static_cast<int>(std::floor(y0)) / kTileSize);
    const int tx1 = std::min(grid.tiles_x - 1, static_cast<int>(std::floor(x1)) / kTileSize);
    const int ty1 = std::min(grid.tiles_y - 1, static_cast<int>(std::floor(y1)) / kTileSize);
    for (int ty = ty0; ty <= ty1; ++ty)
      for (int tx = tx0; tx <= tx1; ++tx)
        grid.lists[static_cast<std::size_t>(ty) * grid.tiles_x + tx].push_back(g);
  }
  return grid;
}

// Per tile row, the splats (as positions into the tile list, front to back)
// together with the pixel columns their 3-sigma ellipse may touch on that
// row. One pixel of slack on each side; the per-pixel ellipse test still
// decides every contribution.
struct Span {
  std::uint32_t pos;
  int x0;
  int x1;  // inclusive
};

struct TileSpans {
  int x0 = 0, y0 = 0, xe = 0, ye = 0;
  std::array<std::vector<Span>, kTileSize> rows;
};

void build_spans(const std::vector<Splat>& splats, const std::vector<std::uint32_t>& list, int tx, int ty,
                 int width, int height, TileSpans& out) {
  out.x0 = tx * kTileSize;
  out.y0 = ty * kTileSize;
  out.xe = std::min(width, out.x0 + kTileSize);
  out.ye = std::min(height, out.y0 + kTileSize);
  for (auto& r : out.rows) r.clear();
  for (std::uint32_t k = 0; k < list.size(); ++k) {
    const Splat& s = splats[list[k]];
    const int ylo = std::max(out.y0, static_cast<int>(std::ceil(s.center.y() - s.extent_y - 1.0)));
    const int yhi = std::min(out.ye - 1, static_cast<int>(std::floor(s.center.y() + s.extent_y + 1.0)));
    for (int y = ylo; y <= yhi; ++y) {
      // Solve a dx^2 + 2 b dx dy + c dy^2 <= 9 for dx.
      const double dy = y - s.center.y();
      const double disc = s.conic_b * s.conic_b * dy * dy - s.conic_a * (s.conic_c * dy * dy - kMaxMahalanobisSq);
      if (disc < 0.0) continue;
      const double root = std::sqrt(disc);
      const double mid = s.center.x() - s.conic_b * dy / s.conic_a;
      const int xlo = std::max(out.x0, static_cast<int>(std::ceil(mid - root / s.conic_a - 1.0)));
      const int xhi = std::min(out.xe - 1, static_cast<int>(std::floor(mid + root / s.conic_a + 1.0)));
      if (xlo <= xhi) out.rows[y - out.y0].push_back({k, xlo, xhi});
    }
  }
}

RenderOutput make_output(const std::vector<Splat>& splats, int width, int height) {
  RenderOutput out;
  out.color = Image(height, width, 3);
  out.depth = Image(height, width);
  out.acc_alpha = Image(height, width);
  out.points.resize(splats.size());
  for (std::size_t i = 0; i < splats.size(); ++i)
    out.points[i] = {splats[i].center, splats[i].depth, splats[i].visible};
  return out;
}

// Front-to-back compositing of one pixel over a depth-ordered candidate list.
template <typename List>
void composite_pixel(const GaussianSet& set, const std::vector<Splat>& splats, const List& list,
                     int x, int y, const Vec3& background, RenderOutput& out) {
  double T = 1.0;
  Vec3 c = Vec3::Zero();
  double dn = 0.0;
  PixelHit hit;
  for (std::uint32_t g : list) {
    if (!evaluate(splats[g], x, y, hit)) continue;
    const double w = hit.alpha * T;
    c += w * set.color[g];
    dn += w * splats[g].depth;
    T *= 1.0 - hit.alpha;
  }
  const double acc = 1.0 - T;
  for (int ch = 0; ch < 3; ++ch) out.color(y, x, ch) = c[ch] + T * background[ch];
  out.acc_alpha(y, x) = acc;
  out.depth(y, x) = dn / (acc + kDepthEps);
}

}  // namespace

void RenderGrads::resize(std::size_t n) {
  mean.assign(n, Vec3::Zero());
  log_scale.assign(n, Vec3::Zero());
  opacity_logit.assign(n, 0.0);
  rotation.assign(n, Vec4::Zero());
  color.assign(n, Vec3::Zero());
  camera.setZero();
}

std::vector<Splat> project_splats(const GaussianSet& set, const RenderCamera& cam) {
  std::vector<Splat> splats(set.size());
  const Mat3 Rc = cam.E.R();
  const Vec3& t = cam.E.translation;
  const Intrinsics& K = cam.K;
  parallel_for(set.size(), [&](std::size_t i) {
    Splat& s = splats[i];
    const Vec3 pc = Rc * set.mean[i] + t;
    if (!(pc.z() > kMinDepth)) return;
    const double iz = 1.0 / pc.z();
    Eigen::Matrix<double, 2, 3> J;
    J << K.fx * iz, 0.0, -K.fx * pc.x() * iz * iz, 0.0, K.fy * iz, -K.fy * pc.y() * iz * iz;
    const Eigen::Matrix<double, 2, 3> Tm = J * Rc;
    const Mat3 Rq = quaternion_to_matrix(set.rotation[i]);
    const Vec3 sc = set.log_scale[i].array().exp();
    const Mat3 M = Rq * sc.asDiagonal();
    const Mat2 cov = Tm * (M * M.transpose()) * Tm.transpose() + kCovarianceFloor * Mat2::Identity();
    const double A = cov(0, 0), B = cov(0, 1), C = cov(1, 1);
    const double det = A * C - B * B;
    if (!(det > 0.0)) return;
    s.center = Vec2(K.fx * pc.x() * iz + K.cx, K.fy * pc.y() * iz + K.cy);
    s.depth = pc.z();
    s.conic_a = C / det;
    s.conic_b = -B / det;
    s.conic_c = A / det;
    s.extent_x = 3.0 * std::sqrt(A);
    s.extent_y = 3.0 * std::sqrt(C);
    s.opacity = sigmoid(set.opacity_logit[i]);
    s.visible = true;
  });
  return splats;
}

RenderOutput render(const GaussianSet& set, const RenderCamera& cam, const RenderOptions& opts) {
  const auto splats = project_splats(set, cam);
  const auto order = depth_order(splats);
  const TileGrid grid = bin_tiles(splats, order, cam.width, cam.height);
  RenderOutput out = make_output(splats, cam.width, cam.height);
  parallel_for(grid.lists.size(), [&](std::size_t tile) {
    const int tx = static_cast<int>(tile % grid.tiles_x), ty = static_cast<int>(tile / grid.tiles_x);
    const auto& list = grid.lists[tile];
    TileSpans spans;
    build_spans(splats, list, tx, ty, cam.width, cam.height, spans);
    std::array<double, kTileSize> T, dn;
    std::array<Vec3, kTileSize> c;
    PixelHit hit;
    for (int y = spans.y0; y < spans.ye; ++y) {
      T.fill(1.0);
      dn.fill(0.0);
      c.fill(Vec3::Zero());
      // Splat-major traversal in depth order: each pixel still composites
      // its contributors front to back with the same arithmetic.
      for (const Span& sp : spans.rows[y - spans.y0]) {
        const std::uint32_t g = list[sp.pos];
        const Splat& s = splats[g];
        for (int x = sp.x0; x <= sp.x1; ++x) {
          if (!evaluate(s, x, y, hit)) continue;
          const int i = x - spans.x0;
          const double w = hit.alpha * T[i];
          c[i] += w * set.color[g];
          dn[i] += w * s.depth;
          T[i] *= 1.0 - hit.alpha;
        }
      }
      for (int x = spans.x0; x < spans.xe; ++x) {
        const int i = x - spans.x0;
        const double acc = 1.0 - T[i];
        for (int ch = 0; ch < 3; ++ch) out.color(y, x, ch) = c[i][ch] + T[i] * opts.background[ch];
        out.acc_alpha(y, x) = acc;
        out.depth(y, x) = dn[i] / (acc + kDepthEps);
      }
    }
  });
  return out;
}

RenderOutput render_reference(const GaussianSet& set, const RenderCamera& cam, const RenderOptions& opts) {
  const auto splats = project_splats(set, cam);
  const auto order = depth_order(splats);
  RenderOutput out = make_output(splats, cam.width, cam.height);
  for (int y = 0; y < cam.height; ++y)
    for (int x = 0; x < cam.width; ++x) composite_pixel(set, splats, order, x, y, opts.background, out);
  return out;
}

namespace {

// Screen-space gradient slots accumulated per (tile, splat) pair.
enum Slot { kU, kV, kConA, kConB, kConC, kOpacity, kR, kG, kB, kDepth, kSlots };

struct Contributor {
  std::uint32_t pos;  // position in the tile list
  double alpha;
  double falloff;
  double dx;
  double dy;
  double T;  // transmittance in front of this splat
};

void backward_tile(const GaussianSet& set, const std::vector<Splat>& splats,
                   const std::vector<std::uint32_t>& list, int tx, int ty, const RenderCamera& cam,
                   const RenderAdjoint& adj, const Vec3& background, std::vector<double>& acc) {
  acc.assign(list.size() * kSlots, 0.0);
  if (list.empty()) return;
  TileSpans spans;
  build_spans(splats, list, tx, ty, cam.width, cam.height, spans);
  std::array<std::vector<Contributor>, kTileSize> row_hits;
  std::array<double, kTileSize> Trow, dnrow;
  std::array<bool, kTileSize> active;
  const bool has_color = !adj.color.empty();
  const bool has_depth = !adj.depth.empty();
  PixelHit hit;
  for (int y = spans.y0; y < spans.ye; ++y) {
    for (int x = spans.x0; x < spans.xe; ++x) {
      const int i = x - spans.x0;
      bool any = has_depth && adj.depth(y, x) != 0.0;
      for (int ch = 0; ch < 3 && has_color && !any; ++ch) any = adj.color(y, x, ch) != 0.0;
      active[i] = any;
      row_hits[i].clear();
      Trow[i] = 1.0;
      dnrow[i] = 0.0;
    }
    for (const Span& sp : spans.rows[y - spans.y0]) {
      const Splat& s = splats[list[sp.pos]];
      for (int x = sp.x0; x <= sp.x1; ++x) {
        const int i = x - spans.x0;
        if (!active[i] || !evaluate(s, x, y, hit)) continue;
        row_hits[i].push_back({sp.pos, hit.alpha, hit.falloff, hit.dx, hit.dy, Trow[i]});
        dnrow[i] += hit.alpha * Trow[i] * s.depth;
        Trow[i] *= 1.0 - hit.alpha;
      }
    }
    for (int x = spans.x0; x < spans.xe; ++x) {
      const int i = x - spans.x0;
      const auto& hits = row_hits[i];
      const Vec3 gC = has_color ? Vec3(adj.color(y, x, 0), adj.color(y, x, 1), adj.color(y, x, 2)) : Vec3::Zero();
      const double gD = has_depth ? adj.depth(y, x) : 0.0;
      const double T = Trow[i], dn = dnrow[i];
      if (hits.empty()) continue;
      const double denom = (1.0 - T) + kDepthEps;
      const double dL_dN = gD / denom;
      const double dL_dA = -gD * dn / (denom * denom);
      Vec3 R = background;
      double Rd = 0.0, Ra = 0.0;
      for (auto it = hits.rbegin(); it != hits.rend(); ++it) {
        const std::uint32_t g = list[it->pos];
        const Splat& s = splats[g];
        const Vec3& c = set.color[g];
        const double w = it->alpha * it->T;
        const double g_alpha =
            it->T * (gC.dot(c - R) + dL_dN * (s.depth - Rd) + dL_dA * (1.0 - Ra));
        double* a = &acc[it->pos * kSlots];
        a[kR] += gC[0] * w;
        a[kG] += gC[1] * w;
        a[kB] += gC[2] * w;
        a[kDepth] += dL_dN * w;
        a[kOpacity] += g_alpha * it->falloff;
        const double g_m2 = -0.5 * it->falloff * s.opacity * g_alpha;
        a[kConA] += g_m2 * it->dx * it->dx;
        a[kConB] += g_m2 * 2.0 * it->dx * it->dy;
        a[kConC] += g_m2 * it->dy * it->dy;
        a[kU] -= 2.0 * g_m2 * (s.conic_a * it->dx + s.conic_b * it->dy);
        a[kV] -= 2.0 * g_m2 * (s.conic_b * it->dx + s.conic_c * it->dy);
        R = it->alpha * c + (1.0 - it->alpha) * R;
        Rd = it->alpha * s.depth + (1.0 - it->alpha) * Rd;
        Ra = it->alpha + (1.0 - it->alpha) * Ra;
      }
    }
  }
}

// dR/dq for R = quaternion_to_matrix(q) at a unit quaternion (w, x, y, z).
std::array<Mat3, 4> rotation_jacobian(const Vec4& q) {
  const double w = q[0], x = q[1], y = q[2], z = q[3];
  std::array<Mat3, 4> d;
  d[0] << 0, -z, y, z, 0, -x, -y, x, 0;
  d[1] << 0, y, z, y, -2 * x, -w, z, w, -2 * x;
  d[2] << -2 * y, x, w, x, 0, z, -w, z, -2 * y;
  d[3] << -2 * z, -w, x, w, -2 * z, y, x, y, 0;
  for (auto& m : d) m *= 2.0;
  return d;
}

}  // namespace

RenderGrads render_backward(const GaussianSet& set, const RenderCamera& cam, const RenderAdjoint& adjoint,
                            const RenderOptions& opts) {
  RenderGrads grads;
  grads.resize(set.size());
  const auto splats = project_splats(set, cam);
  const auto order = depth_order(splats);
  const TileGrid grid = bin_tiles(splats, order, cam.width, cam.height);

  std::vector<std::vector<double>> tile_acc(grid.lists.size());
  if (!adjoint.color.empty() || !adjoint.depth.empty()) {
    parallel_for(grid.lists.size(), [&](std::size_t tile) {
      backward_tile(set, splats, grid.lists[tile], static_cast<int>(tile % grid.tiles_x),
                    static_cast<int>(tile / grid.tiles_x), cam, adjoint, opts.background, tile_acc[tile]);
    });
  }

  // Merge in tile order so the sum never depends on the thread split.
  std::vector<std::array<double, kSlots>> screen(set.size());
  for (auto& s : screen) s.fill(0.0);
  for (std::size_t tile = 0; tile < grid.lists.size(); ++tile) {
    const auto& list = grid.lists[tile];
    const auto& acc = tile_acc[tile];
    if (acc.empty()) continue;
    for (std::size_t k = 0; k < list.size(); ++k)
      for (int slot = 0; slot < kSlots; ++slot) screen[list[k]][slot] += acc[k * kSlots + slot];
  }

  const Mat3 Rc = cam.E.R();
  const Vec3& t = cam.E.translation;
  const Intrinsics& K = cam.K;
  std::vector<Mat3> cam_rot(set.size(), Mat3::Zero());
  std::vector<Vec3> cam_trans(set.size(), Vec3::Zero());

  parallel_for(set.size(), [&](std::size_t i) {
    const Splat& s = splats[i];
    if (!s.visible) return;
    const auto& g = screen[i];
    Vec2 g_uv(g[kU], g[kV]);
    if (!adjoint.screen.empty()) g_uv += adjoint.screen[i];

    const Vec3& mu = set.mean[i];
    const Vec3 pc = Rc * mu + t;
    const double px = pc.x(), py = pc.y(), iz = 1.0 / pc.z();
    Eigen::Matrix<double, 2, 3> J;
    J << K.fx * iz, 0.0, -K.fx * px * iz * iz, 0.0, K.fy * iz, -K.fy * py * iz * iz;
    const Eigen::Matrix<double, 2, 3> Tm = J * Rc;
    const Vec4 qn = set.rotation[i] / set.rotation[i].norm();
    const Mat3 Rq = quaternion_to_matrix(qn);
    const Vec3 sc = set.log_scale[i].array().exp();
    const Mat3 M = Rq * sc.asDiagonal();
    const Mat3 S3 = M * M.transpose();
    const Mat2 cov = Tm * S3 * Tm.transpose() + kCovarianceFloor * Mat2::Identity();
    const double A = cov(0, 0), B = cov(0, 1), C = cov(1, 1);
    const double det = A * C - B * B;
    const double id2 = 1.0 / (det * det);
    const double ga = g[kConA], gb = g[kConB], gc = g[kConC];
    const double gA = id2 * (-C * C * ga + B * C * gb - B * B * gc);
    const double gB = id2 * (2 * B * C * ga - (A * C + B * B) * gb + 2 * A * B * gc);
    const double gCc = id2 * (-B * B * ga + A * B * gb - A * A * gc);
    Mat2 G2;
    G2 << gA, 0.5 * gB, 0.5 * gB, gCc;

    const Mat3 G3 = Tm.transpose() * G2 * Tm;
    const Eigen::Matrix<double, 2, 3> gTm = 2.0 * G2 * Tm * S3;
    const Eigen::Matrix<double, 2, 3> gJ = gTm * Rc.transpose();
    Mat3 gRc = J.transpose() * gTm;

    const Mat3 gM = 2.0 * G3 * M;
    Vec3 g_s;
    for (int k = 0; k < 3; ++k) g_s[k] = gM.col(k).dot(Rq.col(k));
    grads.log_scale[i] = g_s.cwiseProduct(sc);
    const Mat3 gRq = gM * sc.asDiagonal();
    const auto dR = rotation_jacobian(qn);
    Vec4 g_qn;
    for (int k = 0; k < 4; ++k) g_qn[k] = (dR[k].array() * gRq.array()).sum();
    grads.rotation[i] = (g_qn - qn * qn.dot(g_qn)) / set.rotation[i].norm();

    const double op = s.opacity;
    grads.opacity_logit[i] = g[kOpacity] * op * (1.0 - op);
    grads.color[i] = Vec3(g[kR], g[kG], g[kB]);

    Vec3 g_pc = J.transpose() * g_uv;
    g_pc.z() += g[kDepth];
    const double iz2 = iz * iz, iz3 = iz2 * iz;
    g_pc.x() += gJ(0, 2) * (-K.fx * iz2);
    g_pc.y() += gJ(1, 2) * (-K.fy * iz2);
    g_pc.z() += gJ(0, 0) * (-K.fx * iz2) + gJ(0, 2) * (2.0 * K.fx * px * iz3) +
                gJ(1, 1) * (-K.fy * iz2) + gJ(1, 2) * (2.0 * K.fy * py * iz3);
    grads.mean[i] = Rc.transpose() * g_pc;
    gRc += g_pc * mu.transpose();
    cam_rot[i] = gRc;
    cam_trans[i] = g_pc;
  });

  Mat3 gR = Mat3::Zero();
  Vec3 gt = Vec3::Zero();
  for (std::size_t i = 0; i < set.size(); ++i) {
    gR += cam_rot[i];
    gt += cam_trans[i];
  }
  const Mat3 A = Rc * gR.transpose();
  grads.camera << A(1, 2) - A(2, 1), A(2, 0) - A(0, 2), A(0, 1) - A(1, 0), gt;
  return grads;
}

std::vector<double> self_transmittance(const GaussianSet& set, const RenderCamera& cam) {
  const auto splats = project_splats(set, cam);
  const auto order = depth_order(splats);
  const TileGrid grid = bin_tiles(splats, order, cam.width, cam.height);
  std::vector<std::size_t> rank(set.size(), 0);
  for (std::size_t r = 0; r < order.size(); ++r) rank[order[r]] = r;
  std::vector<double> out(set.size(), 0.0);
  parallel_for(set.size(), [&](std::size_t i) {
    const Splat& s = splats[i];
    if (!s.visible) return;
    const int x = static_cast<int>(std::lround(s.center.x()));
    const int y = static_cast<int>(std::lround(s.center.y()));
    if (x < 0 || y < 0 || x >= cam.width || y >= cam.height) return;
    double T = 1.0;
    PixelHit hit;
    for (std::uint32_t g : grid.lists[grid.tile_of(x, y)]) {
      if (rank[g] >= rank[i]) break;
      if (evaluate(splats[g], s.center.x(), s.center.y(), hit)) T *= 1.0 - hit.alpha;
    }
    out[i] = T;
  });
  return out;
}

}  // namespace gflow
