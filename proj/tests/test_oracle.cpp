#include <cmath>
#include <fstream>

#include "doctest.h"
#include "gflow/allocation.hpp"
#include "gflow/error.hpp"
#include "gflow/io.hpp"
#include "gflow/oracle.hpp"
#include "test_util.hpp"

using namespace gflow;

namespace {

Vec3 ray_dir(const OracleScene& s, int frame, double x, double y) {
  const Intrinsics K = s.intrinsics();
  return s.pose(frame).R().transpose() * Vec3((x - K.cx) / K.fx, (y - K.cy) / K.fy, 1.0);
}

std::optional<OracleHit> pixel_hit(const OracleScene& s, int frame, double x, double y) {
  return s.intersect(s.pose(frame).center(), ray_dir(s, frame, x, y), frame);
}

// Ground truth: the material point seen at pixel (x, y) of `from` is also the
// first hit of its own ray in `to`, inside the image.
bool covisible(const OracleScene& s, int from, int to, int x, int y, Vec2* where = nullptr) {
  const auto hit = pixel_hit(s, from, x, y);
  const Vec3 X = s.advect(*hit, from, to);
  const auto q = try_project(X, s.intrinsics(), s.pose(to));
  if (!q) return false;
  const auto& sp = s.spec();
  if (q->pixel.x() < 0 || q->pixel.y() < 0 || q->pixel.x() > sp.width - 1 || q->pixel.y() > sp.height - 1) return false;
  const auto back = pixel_hit(s, to, q->pixel.x(), q->pixel.y());
  if (where) *where = q->pixel;
  return back && (back->point - X).norm() < 1e-6;
}

bool same_surface_block(const OracleScene& s, int frame, const Vec2& q, int surface) {
  const int x0 = static_cast<int>(std::floor(q.x())), y0 = static_cast<int>(std::floor(q.y()));
  for (int dy = -1; dy <= 2; ++dy)
    for (int dx = -1; dx <= 2; ++dx) {
      const auto h = pixel_hit(s, frame, x0 + dx, y0 + dy);
      if (!h || h->surface != surface) return false;
    }
  return true;
}

}  // namespace

TEST_CASE("spec parsing") {
  const auto s = parse_oracle_spec("kind=blobs\n# comment\nframes = 5\nobject_velocity=0,0.1,0\npath=lateral\n");
  CHECK(s.kind == OracleKind::Blobs);
  CHECK(s.frames == 5);
  CHECK(s.path == CameraPath::Lateral);
  CHECK(s.object_velocity.y() == doctest::Approx(0.1));
  CHECK_THROWS_AS(parse_oracle_spec("bogus=1"), Error);
  CHECK_THROWS_AS(parse_oracle_spec("frames=0"), Error);
  CHECK_THROWS_AS(parse_oracle_spec("kind=teapot"), Error);
  const auto dir = testing::temp_dir("oracle_spec");
  save_oracle_spec(dir / "s.txt", s);
  const auto r = load_oracle_spec(dir / "s.txt");
  CHECK(r.kind == s.kind);
  CHECK(r.frames == s.frames);
  CHECK(r.object_velocity == s.object_velocity);
}

TEST_CASE("static camera and scene give zero flow") {
  for (auto kind : {OracleKind::Boxes, OracleKind::Blobs}) {
    OracleSpec spec;
    spec.kind = kind;
    spec.path = CameraPath::Static;
    spec.moving_object = false;
    spec.frames = 3;
    const OracleScene s(spec);
    const auto f = s.render_frame(1);
    for (float v : f.flow_fwd->data()) CHECK(v == 0.0f);
    for (float v : f.flow_bwd->data()) CHECK(v == 0.0f);
    CHECK(count(f.moving) == 0);
  }
}

TEST_CASE("lateral translation over the fronto-parallel wall") {
  OracleSpec spec;
  spec.path = CameraPath::Lateral;
  spec.lateral_step = 0.05;
  spec.frames = 2;
  const OracleScene s(spec);
  const auto f = s.render_frame(0);
  const double expect = -spec.focal * spec.lateral_step / 6.0;
  int checked = 0;
  for (int y = 0; y < spec.height; ++y)
    for (int x = 0; x < spec.width; ++x)
      if (pixel_hit(s, 0, x, y)->surface == 0) {
        CHECK(std::abs((*f.flow_fwd)(y, x, 0) - expect) < 1e-5);
        CHECK(std::abs((*f.flow_fwd)(y, x, 1)) < 1e-5);
        ++checked;
      }
  CHECK(checked > 1000);
}

TEST_CASE("depth unprojects onto the analytic surface") {
  const OracleScene s(OracleSpec{});
  for (int frame : {0, 5, 11}) {
    const auto f = s.render_frame(frame);
    double worst = 0;
    for (int y = 0; y < s.spec().height; y += 3)
      for (int x = 0; x < s.spec().width; x += 3) {
        const Vec3 X = unproject(Vec2(x, y), f.depth(y, x), s.intrinsics(), s.pose(frame));
        worst = std::max(worst, (X - pixel_hit(s, frame, x, y)->point).norm());
      }
    CHECK(worst <= 1e-6);
  }
}

TEST_CASE("flow warps frames onto each other") {
  const OracleScene s(OracleSpec{});
  const int t = 4;
  const auto a = s.render_frame(t), b = s.render_frame(t + 1);
  double se = 0;
  std::size_t n = 0;
  std::array<double, 3> px{};
  for (int y = 0; y < s.spec().height; ++y)
    for (int x = 0; x < s.spec().width; ++x) {
      Vec2 q;
      if (!a.clean(y, x) || !covisible(s, t, t + 1, x, y, &q)) continue;
      if (!same_surface_block(s, t + 1, q, pixel_hit(s, t, x, y)->surface)) continue;
      const double fx = x + (*a.flow_fwd)(y, x, 0), fy = y + (*a.flow_fwd)(y, x, 1);
      REQUIRE(sample_bilinear(b.rgb, fx, fy, px));
      for (int c = 0; c < 3; ++c) se += (px[c] - a.rgb(y, x, c)) * (px[c] - a.rgb(y, x, c));
      ++n;
    }
  REQUIRE(n > 10000);
  const double psnr = 10 * std::log10(1.0 / (se / (3.0 * n)));
  MESSAGE("warp PSNR " << psnr);
  CHECK(psnr >= 40.0);
}

TEST_CASE("new-content mask against ground-truth visibility") {
  const OracleScene s(OracleSpec{});
  const int t = 6;
  const auto prev = s.render_frame(t - 1), cur = s.render_frame(t);
  const Mask m = new_content_mask(*cur.flow_bwd, *prev.flow_fwd, 1.0);
  Mask truth(s.spec().height, s.spec().width);
  std::size_t covis_flagged = 0, covis_interior = 0;
  for (int y = 0; y < s.spec().height; ++y)
    for (int x = 0; x < s.spec().width; ++x) {
      Vec2 q;
      const bool cv = covisible(s, t, t - 1, x, y, &q);
      truth(y, x) = !cv;
      if (cv && same_surface_block(s, t - 1, q, pixel_hit(s, t, x, y)->surface)) {
        ++covis_interior;
        covis_flagged += m(y, x);
      }
    }
  CHECK(count(truth) > 50);
  CHECK(covis_flagged == 0);
  const double iou = mask_iou(m, truth);
  MESSAGE("new-content IoU " << iou);
  CHECK(iou >= 0.7);
  CHECK(covis_interior > 10000);
}

TEST_CASE("moving object labels and motion") {
  const OracleScene s(OracleSpec{});
  const auto f0 = s.render_frame(0), f1 = s.render_frame(1);
  CHECK(count(f0.moving) > 300);
  // The object's screen centroid shifts roughly by its projected velocity.
  auto centroid = [](const Mask& m) {
    Vec2 c = Vec2::Zero();
    for (int y = 0; y < m.height(); ++y)
      for (int x = 0; x < m.width(); ++x)
        if (m(y, x)) c += Vec2(x, y);
    return Vec2(c / static_cast<double>(count(m)));
  };
  const double dy = centroid(f1.moving).y() - centroid(f0.moving).y();
  CHECK(dy > 2.5);
  CHECK(dy < 5.5);
}

TEST_CASE("generate writes the dataset layout") {
  OracleSpec spec;
  spec.frames = 3;
  const auto dir = testing::temp_dir("oracle_gen");
  generate(spec, dir);
  for (const char* f : {"intrinsics.txt", "frame_0000.png", "frame_0002.png", "depth_0001.gft", "flow_fwd_0000.gft",
                        "flow_fwd_0001.gft", "flow_bwd_0001.gft", "flow_bwd_0002.gft", "gt/trajectory.txt",
                        "gt/mask_0000.png", "gt/scene.txt"})
    CHECK(std::filesystem::exists(dir / f));
  CHECK(!std::filesystem::exists(dir / "flow_fwd_0002.gft"));
  CHECK(!std::filesystem::exists(dir / "flow_bwd_0000.gft"));
  const auto traj = load_trajectory(dir / "gt/trajectory.txt");
  REQUIRE(traj.size() == 3);
  const OracleScene s(spec);
  CHECK((traj.poses[2].translation - s.pose(2).translation).norm() < 1e-9);
  const auto info = load_intrinsics(dir / "intrinsics.txt");
  CHECK(info.width == 160);
  CHECK(info.K.fx == 120.0);
  const Tensor d = load_tensor(dir / "depth_0001.gft");
  CHECK(d.height() == 96);
  std::ifstream meta(dir / "gt/scene.txt");
  std::string key;
  double diam = 0;
  meta >> key >> diam;
  CHECK(key == "scene_diameter");
  CHECK(diam > 1.0);
}
