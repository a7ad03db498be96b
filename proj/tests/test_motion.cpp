#include <cmath>

#include "doctest.h"
#include "gflow/error.hpp"
#include "gflow/motion.hpp"
#include "gflow/rng.hpp"
#include "test_util.hpp"

using namespace gflow;

namespace {

const Intrinsics kK{120, 118, 79.5, 47.5};
constexpr int kH = 96, kW = 160;

Extrinsics pose(double yaw, const Vec3& t) {
  Extrinsics E;
  E.rotation = Eigen::Quaterniond(Eigen::AngleAxisd(yaw, Vec3::UnitY()) * Eigen::AngleAxisd(0.3 * yaw, Vec3::UnitX()));
  E.translation = t;
  return E;
}

double scene_depth(int y, int x) { return 3.0 + 0.5 * std::sin(x / 10.0) + 0.3 * std::cos(y / 7.0); }

// Flow on frame A pixels toward frame B for the static depth field, with an
// optional block moved by `object` pixels.
Tensor synth_flow(const Extrinsics& A, const Extrinsics& B, Mask* moving = nullptr, Vec2 object = Vec2::Zero()) {
  Tensor flow(kH, kW, 2);
  for (int y = 0; y < kH; ++y)
    for (int x = 0; x < kW; ++x) {
      const Vec3 X = unproject(Vec2(x, y), scene_depth(y, x), kK, A);
      Vec2 q = project(X, kK, B).pixel;
      const bool inside = y >= 30 && y < 60 && x >= 60 && x < 100;
      if (moving && inside) {
        q += object;
        (*moving)(y, x) = 1;
      }
      flow(y, x, 0) = static_cast<float>(q.x() - x);
      flow(y, x, 1) = static_cast<float>(q.y() - y);
    }
  return flow;
}

std::vector<Correspondence> two_view(RngStream& rng, std::size_t n, const Extrinsics& A, const Extrinsics& B) {
  std::vector<Correspondence> corr;
  while (corr.size() < n) {
    const Vec3 X(rng.uniform(-2, 2), rng.uniform(-1.5, 1.5), rng.uniform(2.5, 6));
    const auto pa = try_project(X, kK, A), pb = try_project(X, kK, B);
    if (pa && pb) corr.push_back({pa->pixel, pb->pixel});
  }
  return corr;
}

}  // namespace

TEST_CASE("fundamental matrix from a two-view oracle") {
  RngStream rng(11, "fmat");
  const Extrinsics A = Extrinsics::identity(), B = pose(0.05, Vec3(0.3, 0.05, 0.02));
  auto corr = two_view(rng, 200, A, B);
  const auto F = estimate_fundamental(corr);
  CHECK(F.F.norm() == doctest::Approx(1.0).epsilon(1e-12));
  Eigen::JacobiSVD<Mat3> svd(F.F);
  CHECK(svd.singularValues()[2] < 1e-12);
  double worst = 0;
  for (const auto& c : corr) worst = std::max(worst, sampson_error(F.F, c.x, c.x_prime));
  CHECK(worst <= 1e-6);

  SUBCASE("gross outliers") {
    const std::size_t inliers = corr.size();
    for (std::size_t i = 0; i < inliers / 4; ++i)  // 20% of the final set
      corr.push_back({Vec2(rng.uniform(0, kW), rng.uniform(0, kH)), Vec2(rng.uniform(0, kW), rng.uniform(0, kH))});
    const auto Fo = estimate_fundamental(corr);
    double w = 0;
    for (std::size_t i = 0; i < inliers; ++i) w = std::max(w, sampson_error(Fo.F, corr[i].x, corr[i].x_prime));
    CHECK(w <= 1e-3);
  }
  SUBCASE("too few pairs") {
    corr.resize(7);
    CHECK_THROWS_AS(estimate_fundamental(corr), Error);
  }
}

TEST_CASE("epipolar error map") {
  const Extrinsics A = pose(0.0, Vec3(0.2, 0.0, 0.0)), B = pose(0.03, Vec3(0.05, 0.02, 0.0));
  SUBCASE("static scene is consistent") {
    const Tensor flow = synth_flow(A, B);
    const auto res = cluster_frame(flow, nullptr, kK, {});
    REQUIRE(res.F.has_value());
    CHECK(!res.static_camera);
    double worst = 0;
    for (double v : res.error_map.data()) worst = std::max(worst, v);
    CHECK(worst <= 1e-4);
    CHECK(count(res.moving) == 0);
  }
  SUBCASE("moving block") {
    Mask truth(kH, kW);
    const Tensor flow = synth_flow(A, B, &truth, Vec2(0.0, 4.0));
    const auto res = cluster_frame(flow, nullptr, kK, {});
    REQUIRE(res.F.has_value());
    double bg = 0, inside = 1e9;
    for (int y = 0; y < kH; ++y)
      for (int x = 0; x < kW; ++x) {
        if (truth(y, x))
          inside = std::min(inside, res.error_map(y, x));
        else
          bg = std::max(bg, res.error_map(y, x));
      }
    CHECK(inside > 0.01);
    CHECK(bg <= 0.01);
    CHECK(mask_iou(res.moving, truth) >= 0.6);
  }
  SUBCASE("zero flow under pure translation") {
    Mat3 tx = skew(Vec3(0.3, -0.1, 0.05));
    const Mat3 Kinv = kK.matrix().inverse();
    FundamentalMatrix F;
    F.F = Kinv.transpose() * tx * Kinv;
    F.F /= F.F.norm();
    const Image err = epipolar_error_map(Tensor(kH, kW, 2), F, kK);
    for (double v : err.data()) CHECK(v < 1e-12);
  }
  SUBCASE("static camera falls back to flow magnitude") {
    Mask truth(kH, kW);
    const Tensor flow = synth_flow(A, A, &truth, Vec2(3.0, 0.0));
    const auto res = cluster_frame(flow, nullptr, kK, {});
    CHECK(res.static_camera);
    CHECK(mask_iou(res.moving, truth) >= 0.9);
  }
}

TEST_CASE("movement mask morphology") {
  Image err(40, 50);
  CHECK(count(movement_mask(err, 0.01)) == 0);
  for (auto& v : err.data()) v = 5.0;
  CHECK(count(movement_mask(err, std::numeric_limits<double>::infinity())) == 0);
  Image e2(40, 50);
  e2(3, 3) = 1.0;  // speckle
  for (int y = 10; y < 20; ++y)
    for (int x = 20; x < 30; ++x) e2(y, x) = 1.0;
  e2(15, 25) = 0.0;  // pinhole
  const Mask m = movement_mask(e2, 0.01);
  CHECK(m(3, 3) == 0);
  CHECK(count(m) == 100);
  CHECK(m(15, 25) == 1);
}

TEST_CASE("previous moving mask") {
  const auto cam = testing::small_camera(40, 32, 40.0);
  GaussianSet set;
  CHECK(count(previous_moving_mask(set, cam)) == 0);
  GaussianPoint p;
  p.mean = Vec3(0.0, 0.0, 3.0);
  p.log_scale = Vec3::Constant(std::log(0.15));
  p.opacity_logit = logit(0.99);
  p.color = Vec3(0.0, 0.0, 0.0);  // black still produces a mask
  p.cluster = Cluster::Moving;
  set.append(p);
  p.mean = Vec3(-1.0, 0.0, 3.0);
  p.cluster = Cluster::Still;
  set.append(p);
  const Mask m = previous_moving_mask(set, cam);
  const auto moving_only = render(set.select(Cluster::Moving), cam);
  std::size_t covered = 0;
  for (int y = 0; y < cam.height; ++y)
    for (int x = 0; x < cam.width; ++x) {
      CHECK(static_cast<bool>(m(y, x)) == (moving_only.acc_alpha(y, x) > 0.0));
      covered += m(y, x);
    }
  // 3-sigma footprint of a ~2 px sigma blob.
  const double sigma_px = std::sqrt(0.15 * 40 / 3.0 * 0.15 * 40 / 3.0 + 0.3);
  CHECK(std::abs(static_cast<double>(covered) - M_PI * 9 * sigma_px * sigma_px) < 12.0);
}
