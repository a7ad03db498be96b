#include "gflow/engine.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iomanip>

#include "gflow/allocation.hpp"
#include "gflow/error.hpp"
#include "gflow/io.hpp"
#include "gflow/motion.hpp"
#include "gflow/rng.hpp"

namespace gflow {

namespace {

constexpr std::string_view kModule = "engine";
// Rendered coverage above which a pixel takes part in the depth loss.
constexpr double kDepthCoverage = 0.5;
constexpr double kMinSceneDepth = 1e-3;

std::string indexed(const char* pattern, int i) {
  char name[64];
  std::snprintf(name, sizeof name, pattern, i);
  return name;
}

// Box-filter resampling: every output pixel averages the input area it covers.
template <typename T>
Grid<T> area_resize(const Grid<T>& in, int h, int w) {
  const int c = in.channels();
  Grid<T> out(h, w, c);
  out.set_rank(in.rank());
  const double sy = static_cast<double>(in.height()) / h, sx = static_cast<double>(in.width()) / w;
  std::vector<double> acc(c);
  for (int y = 0; y < h; ++y) {
    const double y0 = y * sy, y1 = (y + 1) * sy;
    for (int x = 0; x < w; ++x) {
      const double x0 = x * sx, x1 = (x + 1) * sx;
      std::fill(acc.begin(), acc.end(), 0.0);
      double area = 0.0;
      for (int iy = static_cast<int>(y0); iy < std::min(in.height(), static_cast<int>(std::ceil(y1))); ++iy) {
        const double wy = std::min<double>(iy + 1, y1) - std::max<double>(iy, y0);
        for (int ix = static_cast<int>(x0); ix < std::min(in.width(), static_cast<int>(std::ceil(x1))); ++ix) {
          const double wgt = wy * (std::min<double>(ix + 1, x1) - std::max<double>(ix, x0));
          if (wgt <= 0.0) continue;
          for (int ch = 0; ch < c; ++ch) acc[ch] += wgt * in(iy, ix, ch);
          area += wgt;
        }
      }
      for (int ch = 0; ch < c; ++ch) out(y, x, ch) = static_cast<T>(acc[ch] / area);
    }
  }
  return out;
}

Tensor require_tensor(const std::filesystem::path& p) {
  if (!std::filesystem::exists(p)) throw Error(ErrorCode::Io, kModule, "missing prior file: " + p.string());
  return load_tensor(p);
}

template <typename T>
std::span<double> flat(std::vector<T>& v) {
  return {v.empty() ? nullptr : v[0].data(), v.size() * T::SizeAtCompileTime};
}
template <typename T>
std::span<const double> flat(const std::vector<T>& v) {
  return {v.empty() ? nullptr : v[0].data(), v.size() * T::SizeAtCompileTime};
}

Image scaled(const Image& img, double k) {
  Image out = img;
  for (auto& v : out.data()) v *= k;
  return out;
}

Mask coverage_region(const Image& acc, const Mask* within, bool invert) {
  Mask m(acc.height(), acc.width());
  for (std::size_t i = 0; i < m.size(); ++i) {
    bool in = acc[i] > kDepthCoverage;
    if (within && !within->empty()) in = in && ((*within)[i] != 0) != invert;
    m[i] = in;
  }
  return m;
}

Vec6 pose_delta(const Extrinsics& E, const Extrinsics& E0) {
  Vec6 d;
  d << so3_log(E.rotation * E0.rotation.conjugate()), E.translation - E0.translation;
  return d;
}

bool in_mask(const Mask& m, const Vec2& p) {
  if (m.empty()) return false;
  const int x = static_cast<int>(std::lround(p.x())), y = static_cast<int>(std::lround(p.y()));
  return m.contains(y, x) && m(y, x);
}

}  // namespace

Sequence load_sequence(const std::filesystem::path& dir, int resize_short) {
  const auto intr = dir / "intrinsics.txt";
  if (!std::filesystem::exists(intr)) throw Error(ErrorCode::Io, kModule, "missing intrinsics: " + intr.string());
  Sequence seq;
  seq.camera = load_intrinsics(intr);
  int n = 0;
  while (std::filesystem::exists(dir / indexed("frame_%04d.png", n))) ++n;
  if (n == 0) throw Error(ErrorCode::Io, kModule, "no frames: " + (dir / "frame_0000.png").string());
  seq.frames.resize(n);
  for (int t = 0; t < n; ++t) {
    FramePriors& f = seq.frames[t];
    f.rgb = load_png(dir / indexed("frame_%04d.png", t));
    f.depth = to_image(require_tensor(dir / indexed("depth_%04d.gft", t)));
    if (t + 1 < n) f.flow_fwd = require_tensor(dir / indexed("flow_fwd_%04d.gft", t));
    if (t > 0) f.flow_bwd = require_tensor(dir / indexed("flow_bwd_%04d.gft", t));
    const int h = seq.camera.height, w = seq.camera.width;
    auto check = [&](int fh, int fw, const char* what) {
      if (fh != h || fw != w)
        throw Error(ErrorCode::DimMismatch, kModule,
                    std::string(what) + " of frame " + std::to_string(t) + " does not match intrinsics.txt");
    };
    check(f.rgb.height(), f.rgb.width(), "image");
    check(f.depth.height(), f.depth.width(), "depth");
    if (!f.flow_fwd.empty()) check(f.flow_fwd.height(), f.flow_fwd.width(), "forward flow");
    if (!f.flow_bwd.empty()) check(f.flow_bwd.height(), f.flow_bwd.width(), "backward flow");
  }

  const int h = seq.camera.height, w = seq.camera.width;
  if (resize_short > 0 && std::min(h, w) > resize_short) {
    const double s = static_cast<double>(resize_short) / std::min(h, w);
    const int nh = h <= w ? resize_short : static_cast<int>(std::lround(h * s));
    const int nw = w < h ? resize_short : static_cast<int>(std::lround(w * s));
    const double sx = static_cast<double>(nw) / w, sy = static_cast<double>(nh) / h;
    for (auto& f : seq.frames) {
      f.rgb = area_resize(f.rgb, nh, nw);
      f.depth = area_resize(f.depth, nh, nw);
      for (Tensor* fl : {&f.flow_fwd, &f.flow_bwd}) {
        if (fl->empty()) continue;
        *fl = area_resize(*fl, nh, nw);
        for (std::size_t i = 0; i < fl->pixels(); ++i) {
          (*fl)[2 * i] = static_cast<float>((*fl)[2 * i] * sx);
          (*fl)[2 * i + 1] = static_cast<float>((*fl)[2 * i + 1] * sy);
        }
      }
    }
    seq.camera.K = seq.camera.K.scaled(sx, sy);
    seq.camera.width = nw;
    seq.camera.height = nh;
  }
  return seq;
}

double normalize_scene_scale(Sequence& seq) {
  if (seq.frames.empty()) return 1.0;
  std::vector<double> d(seq.frames[0].depth.data().begin(), seq.frames[0].depth.data().end());
  std::erase_if(d, [](double v) { return !(v > 0.0); });
  if (d.empty()) throw Error(ErrorCode::NonPositiveDepth, kModule, "first-frame depth has no positive value");
  std::nth_element(d.begin(), d.begin() + d.size() / 2, d.end());
  const double med = d[d.size() / 2];
  for (auto& f : seq.frames)
    for (auto& v : f.depth.data()) v /= med;
  seq.depth_scale *= med;
  return med;
}

void AdamState::resize(std::size_t n) {
  m.resize(n, 0.0);
  v.resize(n, 0.0);
}

void adam_step(std::span<double> params, std::span<const double> grads, AdamState& state, double lr,
               std::span<const std::uint8_t> frozen) {
  if (grads.size() != params.size() || (!frozen.empty() && frozen.size() != params.size()))
    throw Error(ErrorCode::DimMismatch, kModule, "adam_step: parameter, gradient and mask sizes differ");
  state.resize(params.size());
  ++state.step;
  const double c1 = 1.0 - std::pow(kAdamBeta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(kAdamBeta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!frozen.empty() && frozen[i]) continue;
    const double g = grads[i];
    state.m[i] = kAdamBeta1 * state.m[i] + (1.0 - kAdamBeta1) * g;
    state.v[i] = kAdamBeta2 * state.v[i] + (1.0 - kAdamBeta2) * g * g;
    params[i] -= lr * (state.m[i] / c1) / (std::sqrt(state.v[i] / c2) + kAdamEps);
  }
}

CameraPhaseResult optimize_camera(const CameraPhaseInputs& in, const Extrinsics& E_init, const Config& cfg) {
  if (!in.set || !in.rgb || !in.depth) throw Error(ErrorCode::ConfigInvalid, kModule, "camera phase needs set, image and depth");
  CameraPhaseResult res;
  res.E = E_init;
  const Mask none;
  const Mask& excl = in.exclude ? *in.exclude : none;
  if (!excl.empty() && count(excl) == excl.size()) {
    res.skipped = true;
    return res;
  }
  const RenderOptions opts{Vec3(cfg.background[0], cfg.background[1], cfg.background[2])};
  RenderCamera cam{in.K, E_init, in.width, in.height};
  AdamState st;
  for (int it = 0; it < cfg.iters_cam; ++it) {
    cam.E = res.E;
    const RenderOutput out = render(*in.set, cam, opts);
    LossReport rep;
    RenderAdjoint adj;
    const auto pl = photometric_loss(out.color, *in.rgb, excl, cfg.ssim_blend);
    rep.pho_mse = pl.mse;
    rep.pho_ssim = pl.ssim_term;
    rep.total = cfg.lambda_p * pl.value;
    adj.color = scaled(pl.adjoint, cfg.lambda_p);

    const Mask region = coverage_region(out.acc_alpha, &excl, true);
    if (cfg.lambda_d > 0.0 && count(region) > 0) {
      const auto dl = depth_loss(out.depth, *in.depth, region);
      rep.dep = dl.value;
      rep.a = res.a = dl.a;
      rep.b = res.b = dl.b;
      rep.total += cfg.lambda_d * dl.value;
      adj.depth = scaled(dl.adjoint, cfg.lambda_d);
    }

    if (cfg.lambda_f > 0.0 && in.prev_flow && !in.flow_points.empty()) {
      std::vector<Vec2> curr(out.points.size());
      for (std::size_t i = 0; i < curr.size(); ++i) curr[i] = out.points[i].pixel;
      std::vector<std::size_t> sel;
      for (std::size_t i : in.flow_points)
        if (i < in.prev_pos.size() && i < curr.size() && out.points[i].visible) sel.push_back(i);
      if (!sel.empty()) {
        try {
          std::vector<Vec2> prev(in.prev_pos.begin(), in.prev_pos.end());
          prev.resize(curr.size(), Vec2::Zero());
          const auto fl = flow_loss(curr, prev, *in.prev_flow, sel);
          rep.flo = fl.value;
          rep.total += cfg.lambda_f * fl.value;
          adj.screen.assign(curr.size(), Vec2::Zero());
          for (std::size_t i = 0; i < fl.adjoint.size(); ++i) adj.screen[i] = cfg.lambda_f * fl.adjoint[i];
        } catch (const Error& e) {
          if (e.code() != ErrorCode::EmptyCluster) throw;
        }
      }
    }
    res.losses.push_back({in.frame, "camera", it, rep});

    const RenderGrads g = render_backward(*in.set, cam, adj, opts);
    std::array<double, 6> step{};
    adam_step(step, std::span<const double>(g.camera.data(), 6), st, cfg.lr_cam);
    res.E = retract(res.E, Eigen::Map<const Vec6>(step.data()));
  }
  res.delta = pose_delta(res.E, E_init);
  return res;
}

std::size_t relocate_moving(GaussianSet& set, std::span<const Vec2> prev_pos,
                            std::span<const std::uint8_t> prev_valid, const Tensor& flow,
                            const Image& depth, double a, double b, const Intrinsics& K,
                            const Extrinsics& E) {
  if (prev_pos.size() > set.size() || prev_valid.size() != prev_pos.size())
    throw Error(ErrorCode::DimMismatch, kModule, "relocation: cached positions do not match the set");
  std::size_t moved = 0;
  double f[2];
  for (std::size_t i = 0; i < prev_pos.size(); ++i) {
    if (set.cluster[i] != Cluster::Moving || !prev_valid[i]) continue;
    if (!sample_bilinear(flow, prev_pos[i].x(), prev_pos[i].y(), f)) continue;
    const Vec2 x = prev_pos[i] + Vec2(f[0], f[1]);
    const int px = static_cast<int>(std::lround(x.x())), py = static_cast<int>(std::lround(x.y()));
    if (!depth.contains(py, px)) continue;
    const double d = (depth(py, px) - b) / a;
    if (!(d > 0.0)) continue;
    set.mean[i] = unproject(x, d, K, E);
    ++moved;
  }
  return moved;
}

Engine::Engine(Sequence seq, Config cfg) : seq_(std::move(seq)), cfg_(std::move(cfg)) {
  cfg_.validate();
  if (seq_.frames.empty()) throw Error(ErrorCode::ConfigInvalid, kModule, "sequence has no frames");
  seq_.camera.K.validate(seq_.width(), seq_.height());
}

RenderCamera Engine::camera(const Extrinsics& E) const {
  return {seq_.camera.K, E, seq_.width(), seq_.height()};
}

std::vector<std::uint8_t> Engine::frozen_means() const {
  std::vector<std::uint8_t> frozen(3 * set_.size(), 0);
  for (std::size_t i = 0; i < set_.size(); ++i)
    if (set_.cluster[i] == Cluster::Still) std::fill_n(frozen.begin() + 3 * i, 3, 1);
  return frozen;
}

Extrinsics Engine::initial_pose(int t) const {
  const Extrinsics& prev = traj_.poses[t - 1];
  if (cfg_.camera_init == CameraInit::ConstantVelocity && t >= 2)
    return prev.compose(traj_.poses[t - 2].inverse()).compose(prev);
  return prev;
}

void Engine::gaussian_phase(int t, const Extrinsics& E, const Mask& moving, const Image& depth_scene,
                            FrameResult& res) {
  const FramePriors& f = seq_.frames[t];
  const RenderCamera cam = camera(E);
  const RenderOptions opts{Vec3(cfg_.background[0], cfg_.background[1], cfg_.background[2])};
  const bool first = t == 0;
  const int iters = first ? cfg_.iters_first : cfg_.iters_gauss;
  const auto& steps = first ? cfg_.densify_steps_first : cfg_.densify_steps;
  const InitParams ip{cfg_.scale_gain, static_cast<std::size_t>(cfg_.n_ini), t};
  DensifyInputs din;
  din.rgb = &f.rgb;
  din.depth = &depth_scene;
  din.moving_mask = &moving;
  din.K = seq_.camera.K;
  din.E = E;
  din.n_ini = static_cast<std::size_t>(cfg_.n_ini);

  AdamState st_mean, st_scale, st_op, st_rot;
  int event = 0;
  auto densify_with = [&](const Image* err, const Mask& mask) {
    din.error_map = err;
    din.mask = &mask;
    RngStream rng(cfg_.seed, "densify/" + std::to_string(t) + "/" + std::to_string(event++));
    res.densified.push_back(densify(set_, din, ip, rng));
    set_.quantize();
  };

  for (int it = 0; it < iters; ++it) {
    if (!first && it == 0 && !f.flow_bwd.empty() && !seq_.frames[t - 1].flow_fwd.empty()) {
      const Mask fresh = new_content_mask(f.flow_bwd, seq_.frames[t - 1].flow_fwd, cfg_.fb_threshold);
      densify_with(nullptr, fresh);
    }
    if (std::find(steps.begin(), steps.end(), it) != steps.end()) {
      const RenderOutput cur = render(set_, cam, opts);
      const Image err = photometric_error_map(cur.color, f.rgb);
      Mask high(err.height(), err.width());
      for (std::size_t i = 0; i < err.size(); ++i) high[i] = err[i] > cfg_.err_threshold;
      densify_with(&err, high);
    }

    const RenderOutput out = render(set_, cam, opts);
    LossReport rep;
    RenderAdjoint adj;
    const auto pl = photometric_loss(out.color, f.rgb, {}, cfg_.ssim_blend);
    rep.pho_mse = pl.mse;
    rep.pho_ssim = pl.ssim_term;
    rep.total = cfg_.lambda_p * pl.value;
    adj.color = scaled(pl.adjoint, cfg_.lambda_p);

    const Mask region = coverage_region(out.acc_alpha, first ? nullptr : &moving, false);
    if (cfg_.lambda_d > 0.0 && count(region) > 0) {
      const auto dl = depth_loss(out.depth, f.depth, region);
      rep.dep = dl.value;
      rep.a = dl.a;
      rep.b = dl.b;
      rep.total += cfg_.lambda_d * dl.value;
      adj.depth = scaled(dl.adjoint, cfg_.lambda_d);
    }

    if (!first && cfg_.lambda_f > 0.0) {
      std::vector<std::size_t> sel;
      for (std::size_t i = 0; i < cache_.pos.size(); ++i)
        if (set_.cluster[i] == Cluster::Moving && cache_.valid[i] && out.points[i].visible) sel.push_back(i);
      if (!sel.empty()) {
        std::vector<Vec2> curr(out.points.size());
        for (std::size_t i = 0; i < curr.size(); ++i) curr[i] = out.points[i].pixel;
        // Points born this frame have no previous position and are never selected.
        std::vector<Vec2> prev = cache_.pos;
        prev.resize(curr.size(), Vec2::Zero());
        try {
          const auto fl = flow_loss(curr, prev, seq_.frames[t - 1].flow_fwd, sel);
          rep.flo = fl.value;
          rep.total += cfg_.lambda_f * fl.value;
          adj.screen.assign(curr.size(), Vec2::Zero());
          for (std::size_t i = 0; i < fl.adjoint.size(); ++i) adj.screen[i] = cfg_.lambda_f * fl.adjoint[i];
        } catch (const Error& e) {
          if (e.code() != ErrorCode::EmptyCluster) throw;
        }
      }
    }

    RenderGrads g = render_backward(set_, cam, adj, opts);
    if (cfg_.lambda_i > 0.0) {
      const auto iso = isotropic_loss(set_);
      rep.iso = iso.value;
      rep.total += cfg_.lambda_i * iso.value;
      for (std::size_t i = 0; i < set_.size(); ++i) g.log_scale[i] += cfg_.lambda_i * iso.adjoint[i];
    }
    res.losses.push_back({t, first ? "first" : "gauss", it, rep});

    // Color is never optimized, and Still centers stay where they were born.
    adam_step(flat(set_.mean), flat(g.mean), st_mean, cfg_.lr_gauss, frozen_means());
    adam_step(flat(set_.log_scale), flat(g.log_scale), st_scale, cfg_.lr_gauss);
    adam_step(set_.opacity_logit, g.opacity_logit, st_op, cfg_.lr_gauss);
    adam_step(flat(set_.rotation), flat(g.rotation), st_rot, cfg_.lr_gauss);
    for (auto& q : set_.rotation) q.normalize();
    set_.quantize();
  }

  if (cfg_.prune_opacity > 0.0) {
    std::vector<std::uint8_t> keep(set_.size());
    for (std::size_t i = 0; i < set_.size(); ++i) keep[i] = sigmoid(set_.opacity_logit[i]) >= cfg_.prune_opacity;
    set_.keep_if(keep);
  }
}

void Engine::cache_screen(const Extrinsics& E) {
  const RenderOptions opts{Vec3(cfg_.background[0], cfg_.background[1], cfg_.background[2])};
  const RenderOutput out = render(set_, camera(E), opts);
  cache_.depth = out.depth;
  cache_.pos.resize(set_.size());
  cache_.valid.assign(set_.size(), 0);
  cache_.front.assign(set_.size(), 0);
  for (std::size_t i = 0; i < set_.size(); ++i) {
    const PointScreen& p = out.points[i];
    cache_.pos[i] = p.pixel;
    if (!p.visible) continue;
    cache_.front[i] = 1;
    const int x = static_cast<int>(std::lround(p.pixel.x())), y = static_cast<int>(std::lround(p.pixel.y()));
    if (!out.depth.contains(y, x)) continue;
    const double surface = out.depth(y, x);
    cache_.valid[i] = std::abs(p.depth - surface) <= cfg_.occlusion_tolerance * surface;
  }
}

FrameResult Engine::first_frame() {
  if (next_ != 0) throw Error(ErrorCode::ConfigInvalid, kModule, "first frame already processed");
  const FramePriors& f = seq_.frames[0];
  FrameResult res;
  res.frame = 0;
  const Intrinsics& K = seq_.camera.K;
  if (!f.flow_fwd.empty()) {
    const Tensor* rev = seq_.frames.size() > 1 && !seq_.frames[1].flow_bwd.empty() ? &seq_.frames[1].flow_bwd : nullptr;
    const auto cl = cluster_frame(f.flow_fwd, rev, K, {cfg_.epipolar_threshold});
    res.moving = cl.moving;
  } else {
    res.moving = Mask(seq_.height(), seq_.width());
  }
  RngStream rng(cfg_.seed, "init");
  const InitParams ip{cfg_.scale_gain, static_cast<std::size_t>(cfg_.n_ini), 0};
  set_ = init_gaussians(f.rgb, f.depth, K, Extrinsics::identity(), static_cast<std::size_t>(cfg_.n_ini), res.moving,
                        ip, rng);
  set_.quantize();
  gaussian_phase(0, Extrinsics::identity(), res.moving, f.depth, res);
  pose_lines_.push_back(format_pose_line(0, res.E));
  traj_.poses.push_back(parse_pose_line(pose_lines_.back()));
  cache_screen(res.E);
  res.set = set_;
  res.render = render(set_, camera(res.E), {Vec3(cfg_.background[0], cfg_.background[1], cfg_.background[2])}).color;
  next_ = 1;
  return res;
}

FrameResult Engine::next_frame() {
  if (next_ == 0) throw Error(ErrorCode::ConfigInvalid, kModule, "process the first frame before later frames");
  const int t = next_;
  if (t >= static_cast<int>(seq_.frames.size())) throw Error(ErrorCode::ConfigInvalid, kModule, "sequence exhausted");
  const FramePriors& f = seq_.frames[t];
  const FramePriors& prev = seq_.frames[t - 1];
  if (f.flow_bwd.empty() || prev.flow_fwd.empty())
    throw Error(ErrorCode::Io, kModule, "frame " + std::to_string(t) + " lacks prior flow");
  const Intrinsics& K = seq_.camera.K;
  FrameResult res;
  res.frame = t;

  const auto cl = cluster_frame(f.flow_bwd, &prev.flow_fwd, K, {cfg_.epipolar_threshold});
  res.moving = cl.moving;

  const Extrinsics E_init = initial_pose(t);
  const Mask prev_moving = previous_moving_mask(set_, camera(E_init));
  res.excluded = mask_or(res.moving, prev_moving);

  CameraPhaseInputs cin;
  cin.set = &set_;
  cin.rgb = &f.rgb;
  cin.depth = &f.depth;
  cin.exclude = &res.excluded;
  cin.prev_flow = &prev.flow_fwd;
  cin.prev_pos = cache_.pos;
  for (std::size_t i = 0; i < cache_.pos.size(); ++i)
    if (set_.cluster[i] == Cluster::Still && cache_.valid[i] && !in_mask(prev_moving, cache_.pos[i]))
      cin.flow_points.push_back(i);
  cin.K = K;
  cin.width = seq_.width();
  cin.height = seq_.height();
  cin.frame = t;
  CameraPhaseResult cam = optimize_camera(cin, E_init, cfg_);
  res.camera_skipped = cam.skipped;
  res.losses = std::move(cam.losses);
  // The trajectory file is the source of truth for poses; keep the engine on
  // exactly the pose its line reproduces.
  const std::string line = format_pose_line(t, cam.E);
  res.E = parse_pose_line(line);

  double a = cam.a, b = cam.b;
  if (!(std::isfinite(a) && a > 1e-3) || !std::isfinite(b)) a = 1.0, b = 0.0;
  // Occluded Moving points are advected too; skipping them leaves them a
  // whole frame of motion behind.
  relocate_moving(set_, cache_.pos, cache_.front, prev.flow_fwd, f.depth, a, b, K, res.E);
  set_.quantize();

  Image depth_scene = f.depth;
  for (auto& v : depth_scene.data()) v = std::max(kMinSceneDepth, (v - b) / a);
  gaussian_phase(t, res.E, res.moving, depth_scene, res);

  traj_.poses.push_back(res.E);
  pose_lines_.push_back(line);
  cache_screen(res.E);
  res.set = set_;
  res.render = render(set_, camera(res.E), {Vec3(cfg_.background[0], cfg_.background[1], cfg_.background[2])}).color;
  ++next_;
  return res;
}

void write_losses_csv(const std::filesystem::path& path, const std::vector<LossRecord>& records) {
  std::ofstream os(path);
  if (!os) throw Error(ErrorCode::Io, kModule, "cannot write " + path.string());
  os << "frame,phase,iter,total,pho_mse,pho_ssim,dep,flo,iso,a,b\n" << std::setprecision(9);
  for (const auto& r : records) {
    const auto& l = r.loss;
    os << r.frame << ',' << r.phase << ',' << r.iter << ',' << l.total << ',' << l.pho_mse << ',' << l.pho_ssim << ','
       << l.dep << ',' << l.flo << ',' << l.iso << ',' << l.a << ',' << l.b << '\n';
  }
}

RunResult run(Sequence seq, const Config& cfg, const RunOptions& opts) {
  RunResult result;
  result.depth_scale = normalize_scene_scale(seq);
  const std::filesystem::path& out = opts.out_dir;
  if (!out.empty()) {
    std::filesystem::create_directories(out);
    if (cfg.debug_dumps) std::filesystem::create_directories(out / "debug");
    save_intrinsics(out / "intrinsics.txt", seq.camera);
    save_config(out / "config.txt", cfg);
    std::ofstream(out / "scene_scale.txt") << std::setprecision(17) << result.depth_scale << '\n';
  }
  Engine engine(std::move(seq), cfg);
  const int total = static_cast<int>(engine.sequence().frames.size());
  const int n = opts.max_frames > 0 ? std::min(opts.max_frames, total) : total;
  std::vector<LossRecord> losses;
  for (int t = 0; t < n; ++t) {
    FrameResult fr;
    try {
      fr = t == 0 ? engine.first_frame() : engine.next_frame();
    } catch (const Error& e) {
      throw Error(e.code(), e.module(), "frame " + std::to_string(t) + ": " + e.detail());
    }
    losses.insert(losses.end(), fr.losses.begin(), fr.losses.end());
    if (!out.empty()) {
      save_checkpoint(out / indexed("frame_%04d.gfs", t), fr.set);
      save_png(out / indexed("render_%04d.png", t), fr.render);
      save_pose_lines(out / "trajectory.txt", engine.pose_lines());
      if (cfg.debug_dumps) {
        save_mask_png(out / "debug" / indexed("moving_%04d.png", t), fr.moving);
        if (!fr.excluded.empty()) save_mask_png(out / "debug" / indexed("excluded_%04d.png", t), fr.excluded);
      }
    }
    if (opts.on_frame) opts.on_frame(fr);
    result.frames.push_back(std::move(fr));
  }
  result.trajectory = engine.trajectory();
  if (!out.empty()) write_losses_csv(out / "losses.csv", losses);
  return result;
}

}  // namespace gflow
