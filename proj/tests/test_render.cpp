#include <cmath>

#include "doctest.h"
#include "gflow/parallel.hpp"
#include "gflow/render.hpp"
#include "render_oracle.hpp"
#include "test_util.hpp"

using namespace gflow;

namespace {

double max_oracle_diff(const GaussianSet& set, const RenderCamera& cam, const RenderOutput& out,
                       const Vec3& bg) {
  const auto splats = testing::oracle_splats(set, cam);
  double worst = 0.0;
  for (int y = 0; y < cam.height; ++y)
    for (int x = 0; x < cam.width; ++x) {
      const auto px = testing::oracle_pixel(splats, x, y, bg);
      for (int c = 0; c < 3; ++c) worst = std::max(worst, std::abs(out.color(y, x, c) - px.color[c]));
      worst = std::max(worst, std::abs(out.acc_alpha(y, x) - px.acc));
      worst = std::max(worst, std::abs(out.depth(y, x) - px.depth));
    }
  return worst;
}

// Scalar objective sum(adjoint . outputs) evaluated through the forward pass.
double objective(const GaussianSet& set, const RenderCamera& cam, const RenderAdjoint& adj) {
  const auto out = render(set, cam);
  double L = 0.0;
  for (std::size_t i = 0; i < out.color.size(); ++i) L += adj.color[i] * out.color[i];
  for (std::size_t i = 0; i < out.depth.size(); ++i) L += adj.depth[i] * out.depth[i];
  for (std::size_t i = 0; i < set.size(); ++i)
    if (out.points[i].visible) L += adj.screen[i].dot(out.points[i].pixel);
  return L;
}

bool grad_close(double analytic, double numeric) {
  const double diff = std::abs(analytic - numeric);
  if (diff <= 1e-6) return true;
  return diff / std::max(std::abs(analytic), std::abs(numeric)) <= 1e-3;
}

}  // namespace

TEST_CASE("empty set renders background") {
  const auto cam = testing::small_camera();
  RenderOptions opts;
  opts.background = Vec3(0.2, 0.4, 0.6);
  const auto out = render(GaussianSet{}, cam, opts);
  for (int y = 0; y < cam.height; ++y)
    for (int x = 0; x < cam.width; ++x) {
      CHECK(out.acc_alpha(y, x) == 0.0);
      CHECK(out.color(y, x, 2) == doctest::Approx(0.6));
    }
  const auto ref = render_reference(GaussianSet{}, cam, opts);
  CHECK(ref.color == out.color);
}

TEST_CASE("opaque Gaussian saturates its center pixel") {
  auto cam = testing::small_camera(33, 33, 40.0);
  cam.K.cx = 16;
  cam.K.cy = 16;
  GaussianSet set;
  GaussianPoint p;
  p.mean = Vec3(0, 0, 2);
  p.log_scale = Vec3::Constant(std::log(0.5));
  p.opacity_logit = 12.0;
  p.color = Vec3(1, 0, 0);
  set.append(p);
  const auto out = render(set, cam);
  CHECK(std::abs(out.color(16, 16, 0) - 1.0) < 1e-3);
  CHECK(std::abs(out.color(16, 16, 1)) < 1e-3);
  CHECK(out.depth(16, 16) == doctest::Approx(2.0).epsilon(1e-6));
}

TEST_CASE("single Gaussian matches the closed form") {
  auto cam = testing::small_camera(30, 24, 50.0);
  GaussianSet set;
  GaussianPoint p;
  const double sigma = 0.08, z = 2.0;
  p.mean = Vec3(0.1, -0.05, z);
  p.log_scale = Vec3::Constant(std::log(sigma));
  p.opacity_logit = logit(0.7);
  p.color = Vec3(0.3, 0.6, 0.9);
  set.append(p);
  const Vec3 bg(0.1, 0.1, 0.1);
  RenderOptions opts;
  opts.background = bg;
  const auto out = render(set, cam, opts);
  const auto ref = render_reference(set, cam, opts);

  // The EWA Jacobian at the center is not isotropic off-axis, so evaluate
  // J diag(s^2) J^T + 0.3 I by hand.
  const double f = cam.K.fx;
  const double x = p.mean.x(), y = p.mean.y();
  const double j00 = f / z, j02 = -f * x / (z * z), j11 = f / z, j12 = -f * y / (z * z);
  const double s2 = sigma * sigma;
  const double A = s2 * (j00 * j00 + j02 * j02) + 0.3;
  const double B = s2 * (j02 * j12);
  const double C = s2 * (j11 * j11 + j12 * j12) + 0.3;
  const double det = A * C - B * B;
  const double u = f * x / z + cam.K.cx, v = f * y / z + cam.K.cy;
  double worst = 0.0;
  for (int py = 0; py < cam.height; ++py)
    for (int px = 0; px < cam.width; ++px) {
      const double dx = px - u, dy = py - v;
      const double m2 = (C * dx * dx - 2 * B * dx * dy + A * dy * dy) / det;
      const double a = m2 <= 9.0 ? 0.7 * std::exp(-0.5 * m2) : 0.0;
      for (int c = 0; c < 3; ++c) {
        const double expect = a * p.color[c] + (1 - a) * bg[c];
        worst = std::max(worst, std::abs(out.color(py, px, c) - expect));
        worst = std::max(worst, std::abs(ref.color(py, px, c) - expect));
      }
    }
  CHECK(worst <= 1e-9);
}

TEST_CASE("tiled render agrees with the reference and the oracle") {
  RngStream rng(9, "render-eq");
  const auto cam = testing::small_camera(70, 45, 60.0);
  for (int trial = 0; trial < 5; ++trial) {
    const std::size_t n = trial == 0 ? 3 : 40 * trial;
    const auto set = testing::random_scene(rng, n, cam, 0.5, 12.0);
    const Vec3 bg(rng.uniform(), rng.uniform(), rng.uniform());
    RenderOptions opts;
    opts.background = bg;
    const auto out = render(set, cam, opts);
    const auto ref = render_reference(set, cam, opts);
    double worst = 0.0;
    for (std::size_t i = 0; i < out.color.size(); ++i) worst = std::max(worst, std::abs(out.color[i] - ref.color[i]));
    CHECK(worst <= 1e-6);
    CHECK(max_oracle_diff(set, cam, out, bg) <= 1e-6);
    for (std::size_t i = 0; i < out.acc_alpha.size(); ++i) {
      CHECK(out.acc_alpha[i] >= 0.0);
      CHECK(out.acc_alpha[i] <= 1.0);
      if (out.acc_alpha[i] > 1e-6) CHECK(out.depth[i] > 0.0);
    }
  }
}

TEST_CASE("raising opacity never lowers coverage") {
  RngStream rng(10, "mono");
  const auto cam = testing::small_camera();
  auto set = testing::random_scene(rng, 30, cam);
  const auto before = render(set, cam);
  for (std::size_t g = 0; g < set.size(); g += 7) {
    auto up = set;
    up.opacity_logit[g] += 1.5;
    const auto after = render(up, cam);
    for (std::size_t i = 0; i < before.acc_alpha.size(); ++i) CHECK(after.acc_alpha[i] >= before.acc_alpha[i] - 1e-15);
  }
}

TEST_CASE("nearer opaque Gaussian wins") {
  auto cam = testing::small_camera(21, 21, 30.0);
  cam.K.cx = 10;
  cam.K.cy = 10;
  GaussianSet set;
  GaussianPoint far, near;
  far.mean = Vec3(0, 0, 4);
  far.log_scale = Vec3::Constant(std::log(0.5));
  far.opacity_logit = 10;
  far.color = Vec3(0, 0, 1);
  near = far;
  near.mean = Vec3(0, 0, 2);
  near.log_scale = Vec3::Constant(std::log(0.25));
  near.color = Vec3(0, 1, 0);
  set.append(far);
  set.append(near);
  const auto out = render(set, cam);
  CHECK(out.color(10, 10, 1) > 0.99);
  CHECK(out.color(10, 10, 2) < 0.01);
  CHECK(out.depth(10, 10) == doctest::Approx(2.0).epsilon(1e-3));
}

TEST_CASE("backward: zero adjoint and invisible Gaussians give zero gradients") {
  RngStream rng(12, "zero");
  const auto cam = testing::small_camera();
  auto set = testing::random_scene(rng, 6, cam);
  GaussianPoint behind;
  behind.mean = Vec3(0, 0, -3);
  behind.opacity_logit = 3;
  set.append(behind);
  RenderAdjoint zero;
  zero.color = Image(cam.height, cam.width, 3);
  zero.depth = Image(cam.height, cam.width);
  const auto g0 = render_backward(set, cam, zero);
  for (std::size_t i = 0; i < set.size(); ++i) {
    CHECK(g0.mean[i].isZero(0.0));
    CHECK(g0.log_scale[i].isZero(0.0));
    CHECK(g0.opacity_logit[i] == 0.0);
    CHECK(g0.rotation[i].isZero(0.0));
  }
  CHECK(g0.camera.isZero(0.0));

  RenderAdjoint adj = zero;
  for (std::size_t i = 0; i < adj.color.size(); ++i) adj.color[i] = rng.normal();
  adj.screen.assign(set.size(), Vec2(1.0, -1.0));
  const auto g = render_backward(set, cam, adj);
  const std::size_t b = set.size() - 1;
  CHECK(g.mean[b].isZero(0.0));
  CHECK(g.log_scale[b].isZero(0.0));
  CHECK(g.opacity_logit[b] == 0.0);
  CHECK(g.rotation[b].isZero(0.0));
  CHECK(g.color[b].isZero(0.0));
}

TEST_CASE("backward matches central finite differences") {
  RngStream rng(14, "fd");
  const auto cam = testing::small_camera(24, 20, 30.0);
  int checked = 0;
  for (int scene = 0; scene < 4; ++scene) {
    // Footprints larger than the image keep every pixel strictly inside all
    // 3-sigma ellipses, so the objective is smooth in every parameter.
    auto set = testing::random_scene(rng, 5, cam, 11.0, 16.0);
    for (std::size_t i = 0; i < set.size(); ++i)
      set.mean[i].head<2>() *= 0.3;
    RenderAdjoint adj;
    adj.color = Image(cam.height, cam.width, 3);
    adj.depth = Image(cam.height, cam.width);
    for (std::size_t i = 0; i < adj.color.size(); ++i) adj.color[i] = rng.normal();
    for (std::size_t i = 0; i < adj.depth.size(); ++i) adj.depth[i] = rng.normal();
    for (std::size_t i = 0; i < set.size(); ++i) adj.screen.emplace_back(rng.normal(), rng.normal());
    RenderCamera c = cam;
    c.E.rotation = so3_exp(Vec3(rng.normal(), rng.normal(), rng.normal()) * 0.05);
    c.E.translation = Vec3(rng.normal(), rng.normal(), rng.normal()) * 0.05;

    const auto g = render_backward(set, c, adj);
    const double h = 1e-5;
    auto fd = [&](auto&& perturb) {
      auto plus = set, minus = set;
      perturb(plus, h);
      perturb(minus, -h);
      return (objective(plus, c, adj) - objective(minus, c, adj)) / (2 * h);
    };
    for (std::size_t i = 0; i < set.size(); ++i) {
      for (int k = 0; k < 3; ++k) {
        CHECK(grad_close(g.mean[i][k], fd([&](GaussianSet& s, double d) { s.mean[i][k] += d; })));
        CHECK(grad_close(g.log_scale[i][k], fd([&](GaussianSet& s, double d) { s.log_scale[i][k] += d; })));
        CHECK(grad_close(g.color[i][k], fd([&](GaussianSet& s, double d) { s.color[i][k] += d; })));
      }
      for (int k = 0; k < 4; ++k)
        CHECK(grad_close(g.rotation[i][k], fd([&](GaussianSet& s, double d) { s.rotation[i][k] += d; })));
      CHECK(grad_close(g.opacity_logit[i], fd([&](GaussianSet& s, double d) { s.opacity_logit[i] += d; })));
      checked += 14;
    }
    for (int k = 0; k < 6; ++k) {
      Vec6 e = Vec6::Zero();
      e[k] = h;
      RenderCamera cp = c, cm = c;
      cp.E = retract(c.E, e);
      cm.E = retract(c.E, -e);
      const double num = (objective(set, cp, adj) - objective(set, cm, adj)) / (2 * h);
      CHECK(grad_close(g.camera[k], num));
    }
  }
  CHECK(checked == 4 * 5 * 14);
}

TEST_CASE("render and backward are identical across thread counts") {
  RngStream rng(15, "threads");
  const auto cam = testing::small_camera(64, 48, 50.0);
  const auto set = testing::random_scene(rng, 200, cam);
  RenderAdjoint adj;
  adj.color = Image(cam.height, cam.width, 3);
  for (std::size_t i = 0; i < adj.color.size(); ++i) adj.color[i] = rng.normal();
  set_thread_count_override(0);
  const auto a = render(set, cam);
  const auto ga = render_backward(set, cam, adj);
  set_thread_count_override(4);
  const auto b = render(set, cam);
  const auto gb = render_backward(set, cam, adj);
  set_thread_count_override(-1);
  CHECK(a.color == b.color);
  CHECK(a.depth == b.depth);
  CHECK(ga.mean == gb.mean);
  CHECK(ga.log_scale == gb.log_scale);
  CHECK(ga.camera == gb.camera);
}

TEST_CASE("self transmittance") {
  auto cam = testing::small_camera(21, 21, 30.0);
  cam.K.cx = 10;
  cam.K.cy = 10;
  GaussianSet set;
  GaussianPoint front, back;
  front.mean = Vec3(0, 0, 2);
  front.log_scale = Vec3::Constant(std::log(0.3));
  front.opacity_logit = logit(0.9);
  back = front;
  back.mean = Vec3(0, 0, 4);
  set.append(front);
  set.append(back);
  const auto T = self_transmittance(set, cam);
  CHECK(T[0] == doctest::Approx(1.0));
  CHECK(T[1] == doctest::Approx(0.1).epsilon(1e-9));
}
