#include <cmath>
#include <fstream>

#include "doctest.h"
#include "gflow/allocation.hpp"
#include "gflow/engine.hpp"
#include "gflow/error.hpp"
#include "gflow/io.hpp"
#include "gflow/oracle.hpp"
#include "test_util.hpp"

using namespace gflow;

namespace {

double rotation_deg(const Extrinsics& a, const Extrinsics& b) {
  return so3_log(a.rotation * b.rotation.conjugate()).norm() * 180.0 / M_PI;
}

// Small dataset on disk shared by the pipeline tests.
std::filesystem::path oracle_dataset(const std::string& name, OracleSpec spec) {
  const auto dir = testing::temp_dir(name);
  generate(spec, dir);
  return dir;
}

OracleSpec small_spec() {
  OracleSpec s;
  s.width = 64;
  s.height = 48;
  s.focal = 50.0;
  s.frames = 3;
  s.supersample = 1;
  return s;
}

Config quick_config() {
  Config cfg;
  cfg.n_ini = 400;
  cfg.iters_first = 30;
  cfg.iters_cam = 10;
  cfg.iters_gauss = 20;
  cfg.densify_steps_first = {10, 20};
  cfg.densify_steps = {5, 10};
  return cfg;
}

}  // namespace

TEST_CASE("adam step") {
  SUBCASE("zero gradient leaves a fresh parameter in place") {
    std::vector<double> p{0.5, -2.0};
    const std::vector<double> g{0.0, 0.0};
    AdamState st;
    adam_step(p, g, st, 0.1);
    CHECK(p == std::vector<double>{0.5, -2.0});
    CHECK(st.step == 1);
  }
  SUBCASE("first step on a unit gradient") {
    // m = 0.1, v = 0.001; bias corrections make m_hat = v_hat = 1.
    std::vector<double> p{0.0};
    const std::vector<double> g{1.0};
    AdamState st;
    adam_step(p, g, st, 0.1);
    const double m_hat = (0.1 * 1.0) / (1.0 - 0.9);
    const double v_hat = (0.001 * 1.0) / (1.0 - 0.999);
    CHECK(p[0] == doctest::Approx(-0.1 * m_hat / (std::sqrt(v_hat) + 1e-8)).epsilon(1e-14));
    CHECK(p[0] == doctest::Approx(-0.1).epsilon(1e-7));
  }
  SUBCASE("frozen entries keep value and moments") {
    std::vector<double> p{1.0, 1.0};
    const std::vector<double> g{3.0, 3.0};
    const std::vector<std::uint8_t> frozen{1, 0};
    AdamState st;
    for (int i = 0; i < 5; ++i) adam_step(p, g, st, 0.01, frozen);
    CHECK(p[0] == 1.0);
    CHECK(st.m[0] == 0.0);
    CHECK(p[1] < 1.0);
  }
  SUBCASE("repeatable and resizable") {
    std::vector<double> a{0.3, 0.2}, b = a;
    AdamState sa, sb;
    for (int i = 0; i < 7; ++i) {
      const std::vector<double> g{std::sin(i), std::cos(i)};
      adam_step(a, g, sa, 0.05);
      adam_step(b, g, sb, 0.05);
    }
    CHECK(a == b);
    CHECK(sa.m == sb.m);
    sa.resize(4);
    CHECK(sa.m.size() == 4);
    CHECK(sa.m[3] == 0.0);
    CHECK(sa.v[2] == 0.0);
  }
  SUBCASE("size mismatch") {
    std::vector<double> p{0.0};
    const std::vector<double> g{1.0, 2.0};
    AdamState st;
    CHECK_THROWS_AS(adam_step(p, g, st, 0.1), Error);
  }
}

TEST_CASE("relocation of moving points") {
  const Intrinsics K{40.0, 40.0, 20.0, 16.0};
  const Extrinsics E;
  Tensor flow(32, 40, 2, 0.0f);
  Image depth(32, 40, 1, 3.0);

  SUBCASE("zero flow and unchanged depth keep the center") {
    GaussianSet set;
    GaussianPoint p;
    p.mean = unproject(Vec2(10, 10), 3.0, K, E);
    p.cluster = Cluster::Moving;
    set.append(p);
    const std::vector<Vec2> prev{project(p.mean, K, E).pixel};
    const std::vector<std::uint8_t> valid{1};
    CHECK(relocate_moving(set, prev, valid, flow, depth, 1.0, 0.0, K, E) == 1);
    CHECK((set.mean[0] - p.mean).norm() <= 1e-6);
  }

  SUBCASE("flow (2,0) lands on the depth of the target pixel") {
    for (int y = 0; y < 32; ++y)
      for (int x = 0; x < 40; ++x) {
        flow(y, x, 0) = 2.0f;
        depth(y, x) = 5.0;
      }
    depth(10, 12) = 3.0;
    GaussianSet set;
    GaussianPoint moving, still;
    moving.cluster = Cluster::Moving;
    moving.mean = Vec3(9, 9, 9);
    still.mean = Vec3(-1.25, 0.5, 7.0);
    set.append(moving);
    set.append(still);
    const std::vector<Vec2> prev{Vec2(10, 10), Vec2(10, 10)};
    const std::vector<std::uint8_t> valid{1, 1};
    relocate_moving(set, prev, valid, flow, depth, 1.0, 0.0, K, E);
    // Hand evaluation: x = (12, 10), depth 3, K^-1 applied.
    const Vec3 expect((12.0 - 20.0) / 40.0 * 3.0, (10.0 - 16.0) / 40.0 * 3.0, 3.0);
    CHECK((set.mean[0] - expect).norm() <= 1e-12);
    CHECK(set.mean[1] == still.mean);
  }

  SUBCASE("aligned depth and image exits") {
    for (int y = 0; y < 32; ++y)
      for (int x = 0; x < 40; ++x) flow(y, x, 0) = 2.0f;
    GaussianSet set;
    GaussianPoint p;
    p.cluster = Cluster::Moving;
    p.mean = Vec3(0, 0, 1);
    set.append(p);
    set.append(p);
    const std::vector<Vec2> prev{Vec2(10, 10), Vec2(38.5, 10)};
    const std::vector<std::uint8_t> valid{1, 1};
    CHECK(relocate_moving(set, prev, valid, flow, depth, 2.0, 1.0, K, E) == 1);
    CHECK(set.mean[0].z() == doctest::Approx((3.0 - 1.0) / 2.0));
    CHECK(set.mean[1] == p.mean);  // advected out of the image
  }
}

TEST_CASE("camera phase") {
  OracleSpec spec;
  spec.kind = OracleKind::Blobs;
  spec.moving_object = false;
  spec.width = 80;
  spec.height = 48;
  spec.focal = 60.0;
  spec.frames = 2;
  const OracleScene scene(spec);
  const Intrinsics K = scene.intrinsics();
  OracleFrame f0 = scene.render_frame(0), f1 = scene.render_frame(1);

  // Work in the engine's normalized units: unit median first-frame depth.
  std::vector<double> d(f0.depth.data().begin(), f0.depth.data().end());
  std::nth_element(d.begin(), d.begin() + d.size() / 2, d.end());
  const double s = 1.0 / d[d.size() / 2];
  GaussianSet set = scene.blobs();
  for (std::size_t i = 0; i < set.size(); ++i) {
    set.mean[i] *= s;
    set.log_scale[i].array() += std::log(s);
  }
  for (auto* f : {&f0, &f1})
    for (auto& v : f->depth.data()) v *= s;
  auto pose = [&](int t) {
    Extrinsics E = scene.pose(t);
    E.translation *= s;
    return E;
  };

  // Flow terms from the first frame: visible, unoccluded points.
  const RenderOutput r0 = render(set, {K, pose(0), spec.width, spec.height});
  std::vector<Vec2> prev(set.size());
  std::vector<std::size_t> still;
  for (std::size_t i = 0; i < set.size(); ++i) {
    prev[i] = r0.points[i].pixel;
    const int x = static_cast<int>(std::lround(prev[i].x())), y = static_cast<int>(std::lround(prev[i].y()));
    if (r0.points[i].visible && r0.depth.contains(y, x) && std::abs(r0.points[i].depth - r0.depth(y, x)) < 0.1 * r0.depth(y, x))
      still.push_back(i);
  }
  const Tensor flow = *f0.flow_fwd;
  const Config cfg;

  auto inputs = [&](const OracleFrame& f, const Mask& excl) {
    CameraPhaseInputs in;
    in.set = &set;
    in.rgb = &f.rgb;
    in.depth = &f.depth;
    in.exclude = &excl;
    in.prev_flow = &flow;
    in.prev_pos = prev;
    in.flow_points = still;
    in.K = K;
    in.width = spec.width;
    in.height = spec.height;
    return in;
  };

  SUBCASE("no motion stays at the start") {
    const Mask none;
    CameraPhaseInputs in = inputs(f0, none);
    in.prev_flow = nullptr;  // the flow out of frame 0 points to frame 1
    const auto res = optimize_camera(in, pose(0), cfg);
    CHECK_FALSE(res.skipped);
    CHECK(res.delta.norm() <= 1e-3);
    CHECK(res.losses.size() == static_cast<std::size_t>(cfg.iters_cam));
  }

  SUBCASE("small orbit step is recovered") {
    const Mask none;
    const auto res = optimize_camera(inputs(f1, none), pose(0), cfg);
    const double diameter = scene.scene_diameter() * s;
    INFO("rotation error " << rotation_deg(res.E, pose(1)));
    CHECK(rotation_deg(pose(0), pose(1)) == doctest::Approx(2.0));
    CHECK(rotation_deg(res.E, pose(1)) <= 0.5);
    CHECK((res.E.center() - pose(1).center()).norm() <= 0.01 * diameter);
    CHECK(res.losses.back().loss.total < res.losses.front().loss.total);
  }

  SUBCASE("all pixels excluded skips the phase") {
    const Mask all(spec.height, spec.width, 1, 1);
    const auto res = optimize_camera(inputs(f1, all), pose(0), cfg);
    CHECK(res.skipped);
    CHECK(res.E.translation == pose(0).translation);
    CHECK(res.E.rotation.coeffs() == pose(0).rotation.coeffs());
    CHECK(res.losses.empty());
  }
}

TEST_CASE("sequence loading") {
  const auto dir = oracle_dataset("engine_load", small_spec());
  const Sequence seq = load_sequence(dir);
  CHECK(seq.frames.size() == 3);
  CHECK(seq.frames[0].flow_bwd.empty());
  CHECK(seq.frames[2].flow_fwd.empty());
  CHECK_FALSE(seq.frames[1].flow_fwd.empty());

  SUBCASE("downscale keeps pixel geometry consistent") {
    const Sequence half = load_sequence(dir, 24);
    CHECK(half.height() == 24);
    CHECK(half.width() == 32);
    CHECK(half.camera.K.fx == doctest::Approx(seq.camera.K.fx / 2));
    CHECK(half.camera.K.cx == doctest::Approx((seq.camera.K.cx + 0.5) / 2 - 0.5));
    // 2x2 box average of the original image and half the flow magnitude.
    const auto& a = seq.frames[1];
    const auto& b = half.frames[1];
    const double avg = (a.rgb(4, 6, 1) + a.rgb(4, 7, 1) + a.rgb(5, 6, 1) + a.rgb(5, 7, 1)) / 4;
    CHECK(b.rgb(2, 3, 1) == doctest::Approx(avg));
    const double fx = (a.flow_fwd(4, 6, 0) + a.flow_fwd(4, 7, 0) + a.flow_fwd(5, 6, 0) + a.flow_fwd(5, 7, 0)) / 8.0;
    CHECK(b.flow_fwd(2, 3, 0) == doctest::Approx(fx).epsilon(1e-6));
  }

  SUBCASE("no upscaling") {
    const Sequence same = load_sequence(dir, 480);
    CHECK(same.width() == seq.width());
    CHECK(same.frames[1].rgb == seq.frames[1].rgb);
  }

  SUBCASE("missing flow names the file") {
    std::filesystem::remove(dir / "flow_bwd_0002.gft");
    try {
      load_sequence(dir);
      FAIL("expected an error");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::Io);
      CHECK(std::string(e.what()).find("flow_bwd_0002.gft") != std::string::npos);
    }
  }

  SUBCASE("scene scale") {
    Sequence s = seq;
    const double med = normalize_scene_scale(s);
    CHECK(med > 0.0);
    CHECK(s.frames[1].depth(3, 3) == doctest::Approx(seq.frames[1].depth(3, 3) / med));
    std::vector<double> d(s.frames[0].depth.data().begin(), s.frames[0].depth.data().end());
    std::sort(d.begin(), d.end());
    CHECK(d[d.size() / 2] == doctest::Approx(1.0));
  }
}

TEST_CASE("pipeline contracts") {
  const auto dir = oracle_dataset("engine_pipeline", small_spec());
  Sequence seq = load_sequence(dir);
  normalize_scene_scale(seq);
  const Config cfg = quick_config();
  Engine engine(seq, cfg);

  const FrameResult f0 = engine.first_frame();
  SUBCASE("first frame point count follows the densification contract") {
    REQUIRE(f0.densified.size() == 2);
    CHECK(f0.set.size() == 400 + f0.densified[0] + f0.densified[1]);
    CHECK(f0.set.valid());
  }

  // Init-time state of the first frame: redo the seeded init.
  RngStream rng(cfg.seed, "init");
  GaussianSet init = init_gaussians(seq.frames[0].rgb, seq.frames[0].depth, seq.camera.K, {}, 400, f0.moving,
                                    {cfg.scale_gain, 400, 0}, rng);
  init.quantize();

  SUBCASE("colors and still centers never move") {
    const FrameResult f1 = engine.next_frame();
    const FrameResult f2 = engine.next_frame();
    for (std::size_t i = 0; i < init.size(); ++i) {
      CHECK(f2.set.color[i] == init.color[i]);
      if (init.cluster[i] == Cluster::Still) CHECK(f2.set.mean[i] == init.mean[i]);
    }
    for (std::size_t i = 0; i < f1.set.size(); ++i) {
      CHECK(f2.set.color[i] == f1.set.color[i]);
      if (f1.set.cluster[i] == Cluster::Still) CHECK(f2.set.mean[i] == f1.set.mean[i]);
      CHECK(f2.set.id[i] == f1.set.id[i]);
    }
    // Frame 1 adds three densification events on top of the carried set.
    REQUIRE(f1.densified.size() == 3);
    CHECK(f1.set.size() == f0.set.size() + f1.densified[0] + f1.densified[1] + f1.densified[2]);
    CHECK(engine.trajectory().size() == 3);
    // Moving points are never demoted.
    for (std::size_t i = 0; i < f0.set.size(); ++i)
      if (f0.set.cluster[i] == Cluster::Moving) CHECK(f2.set.cluster[i] == Cluster::Moving);
  }

  SUBCASE("frames must come in order") {
    Engine fresh(seq, cfg);
    CHECK_THROWS_AS(fresh.next_frame(), Error);
  }
}

TEST_CASE("run writes a reloadable output directory") {
  OracleSpec spec = small_spec();
  spec.frames = 2;
  const auto dir = oracle_dataset("engine_run_data", spec);
  const auto out = testing::temp_dir("engine_run_out");
  Config cfg = quick_config();
  cfg.debug_dumps = true;
  RunOptions opts;
  opts.out_dir = out;
  const RunResult res = run(load_sequence(dir), cfg, opts);
  for (const char* f : {"trajectory.txt", "frame_0000.gfs", "frame_0001.gfs", "render_0001.png", "losses.csv",
                        "intrinsics.txt", "config.txt", "scene_scale.txt", "debug/moving_0001.png"})
    CHECK(std::filesystem::exists(out / f));

  const Trajectory traj = load_trajectory(out / "trajectory.txt");
  REQUIRE(traj.size() == 2);
  const GaussianSet reloaded = load_checkpoint(out / "frame_0001.gfs");
  const CameraInfo cam = load_intrinsics(out / "intrinsics.txt");
  const RenderOutput again = render(reloaded, {cam.K, traj.poses[1], cam.width, cam.height});
  CHECK(again.color == res.frames[1].render);

  // One header plus first + camera + gaussian iterations.
  std::ifstream csv(out / "losses.csv");
  std::string line;
  int lines = 0;
  while (std::getline(csv, line)) ++lines;
  CHECK(lines == 1 + cfg.iters_first + cfg.iters_cam + cfg.iters_gauss);
}
