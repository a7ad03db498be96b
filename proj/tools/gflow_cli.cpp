// gflow command-line tool.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "gflow/apps.hpp"
#include "gflow/config.hpp"
#include "gflow/engine.hpp"
#include "gflow/error.hpp"
#include "gflow/io.hpp"
#include "gflow/oracle.hpp"
#include "gflow/render.hpp"

namespace fs = std::filesystem;
using namespace gflow;

namespace {

std::string indexed(const char* pattern, int i) {
  char name[64];
  std::snprintf(name, sizeof name, pattern, i);
  return name;
}

std::vector<double> parse_numbers(const std::string& text, std::size_t expected, const char* what) {
  std::vector<double> v;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      v.push_back(std::stod(item));
    } catch (const std::exception&) {
      throw Error(ErrorCode::ConfigInvalid, "cli", std::string("bad number in --") + what + ": " + item);
    }
  }
  if (expected && v.size() != expected)
    throw Error(ErrorCode::ConfigInvalid, "cli",
                std::string("--") + what + " expects " + std::to_string(expected) + " comma-separated values");
  return v;
}

std::vector<std::uint64_t> parse_ids(const std::string& text) {
  std::vector<std::uint64_t> ids;
  for (double d : parse_numbers(text, 0, "ids")) ids.push_back(static_cast<std::uint64_t>(d));
  return ids;
}

// ---- synth

struct SynthArgs {
  std::string spec;
  std::string out;
};

void cmd_synth(const SynthArgs& a) {
  const OracleSpec spec = a.spec.empty() ? OracleSpec{} : load_oracle_spec(a.spec);
  generate(spec, a.out);
  std::cout << "wrote " << spec.frames << " frames to " << a.out << "\n";
}

// ---- reconstruct

struct ReconstructArgs {
  std::string data;
  std::string config;
  std::string out;
  int max_frames = 0;
  std::map<std::string, std::string> overrides;
};

void cmd_reconstruct(const ReconstructArgs& a) {
  Config cfg = a.config.empty() ? Config{} : load_config(a.config);
  for (const auto& [k, v] : a.overrides) config_set(cfg, k, v);
  cfg.validate();
  Sequence seq = load_sequence(a.data, cfg.resize_short);
  RunOptions opts;
  opts.out_dir = a.out;
  opts.max_frames = a.max_frames;
  opts.on_frame = [](const FrameResult& fr) {
    std::cout << "frame " << fr.frame << ": " << fr.set.size() << " points\n" << std::flush;
  };
  run(std::move(seq), cfg, opts);
}

// ---- render

struct RenderArgs {
  std::string checkpoint;
  std::string pose;
  int frame = -1;
  std::string intrinsics;
  double fx = 0, fy = 0, cx = -1, cy = -1;
  int width = 0, height = 0;
  std::string out;
};

void cmd_render(const RenderArgs& a) {
  const GaussianSet set = load_checkpoint(a.checkpoint);
  Extrinsics E;
  if (fs::exists(a.pose)) {
    const Trajectory traj = load_trajectory(a.pose);
    int idx = a.frame;
    if (idx < 0) {
      // default: the pose with the checkpoint's own frame number
      int n = 0;
      if (std::sscanf(fs::path(a.checkpoint).filename().string().c_str(), "frame_%d.gfs", &n) != 1) n = 0;
      idx = n;
    }
    const int k = idx - traj.first_frame;
    if (k < 0 || k >= static_cast<int>(traj.size()))
      throw Error(ErrorCode::LengthMismatch, "cli", "no pose for frame " + std::to_string(idx) + " in " + a.pose);
    E = traj.poses[k];
  } else {
    E = parse_pose_line(a.pose);
  }
  const fs::path intr = a.intrinsics.empty() ? fs::path(a.checkpoint).parent_path() / "intrinsics.txt" : fs::path(a.intrinsics);
  CameraInfo cam = load_intrinsics(intr);
  if (a.fx > 0) cam.K.fx = a.fx;
  if (a.fy > 0) cam.K.fy = a.fy;
  if (a.cx >= 0) cam.K.cx = a.cx;
  if (a.cy >= 0) cam.K.cy = a.cy;
  if (a.width > 0) cam.width = a.width;
  if (a.height > 0) cam.height = a.height;
  cam.K.validate(cam.width, cam.height);
  save_png(a.out, render_novel_view(set, cam.K, E, cam.width, cam.height));
}

// ---- track

struct TrackArgs {
  std::string run;
  std::string query;
  std::string ids;
  std::string out;
};

void cmd_track(const TrackArgs& a) {
  const RunData run = load_run(a.run);
  std::vector<std::uint64_t> ids;
  if (!a.ids.empty()) {
    ids = parse_ids(a.ids);
  } else if (!a.query.empty()) {
    const auto q = parse_numbers(a.query, 3, "query");
    const auto id = query_point(run, static_cast<int>(q[2]), Vec2(q[0], q[1]));
    if (!id) throw Error(ErrorCode::UnknownId, "apps-eval", "no visible point near the query pixel");
    ids.push_back(*id);
  } else {
    ids = run.frames[0].id;
  }
  const fs::path out = a.out.empty() ? fs::path(a.run) / "tracks.csv" : fs::path(a.out);
  save_tracks_csv(out, extract_tracks(run, ids));
  std::cout << "wrote " << ids.size() << " tracks to " << out.string() << "\n";
}

// ---- segment

struct SegmentArgs {
  std::string run;
  std::string mask;
  std::string out;
};

void cmd_segment(const SegmentArgs& a) {
  const RunData run = load_run(a.run);
  const auto masks = propagate_mask(run, load_mask_png(a.mask));
  const fs::path out = a.out.empty() ? fs::path(a.run) / "segment" : fs::path(a.out);
  fs::create_directories(out);
  for (std::size_t t = 0; t < masks.size(); ++t) save_mask_png(out / indexed("mask_%04d.png", static_cast<int>(t)), masks[t]);
  std::cout << "wrote " << masks.size() << " masks to " << out.string() << "\n";
}

// ---- edit

struct EditArgs {
  std::string checkpoint;
  std::string select = "all";
  std::string translate;
  std::string rotate;
  double scale = 1.0;
  std::string color_map = "identity";
  bool remove = false;
  std::string add;
  std::string out;
};

void cmd_edit(const EditArgs& a) {
  const GaussianSet set = load_checkpoint(a.checkpoint);
  Edit e;
  if (a.select == "all") {
    e.selection.kind = Selection::Kind::All;
  } else if (a.select == "moving" || a.select == "still") {
    e.selection.kind = Selection::Kind::Cluster;
    e.selection.cluster = a.select == "moving" ? Cluster::Moving : Cluster::Still;
  } else {
    e.selection.kind = Selection::Kind::Ids;
    e.selection.ids = parse_ids(a.select.rfind("ids:", 0) == 0 ? a.select.substr(4) : a.select);
  }
  if (!a.translate.empty()) {
    const auto t = parse_numbers(a.translate, 3, "translate");
    e.translation = Vec3(t[0], t[1], t[2]);
  }
  if (!a.rotate.empty()) {
    const auto r = parse_numbers(a.rotate, 3, "rotate");
    e.rotation = so3_exp(Vec3(r[0], r[1], r[2]) * (M_PI / 180.0)).toRotationMatrix();
  }
  if (!(a.scale > 0)) throw Error(ErrorCode::ConfigInvalid, "cli", "--scale must be positive");
  e.scale = a.scale;
  parse_color_map(a.color_map, e.color_matrix, e.color_offset);
  e.remove = a.remove;
  if (!a.add.empty()) e.add = load_checkpoint(a.add);
  GaussianSet out = edit(set, e);
  out.quantize();
  save_checkpoint(a.out, out);
  std::cout << "wrote " << out.size() << " points to " << a.out << "\n";
}

// ---- eval

struct EvalArgs {
  std::string run;
  std::string gt;
  std::string out;
};

void cmd_eval(const EvalArgs& a) {
  const fs::path run_dir = a.run, gt_dir = a.gt;
  const CameraInfo cam = load_intrinsics(run_dir / "intrinsics.txt");
  nlohmann::json report;
  std::vector<Image> gt_frames;
  for (int t = 0; fs::exists(run_dir / indexed("render_%04d.png", t)); ++t) {
    const fs::path g = gt_dir / indexed("frame_%04d.png", t);
    if (!fs::exists(g)) throw Error(ErrorCode::Io, "apps-eval", "missing ground-truth frame: " + g.string());
    gt_frames.push_back(load_png(g));
  }
  if (gt_frames.empty()) throw Error(ErrorCode::Io, "apps-eval", "no renders in " + run_dir.string());
  if (gt_frames[0].height() != cam.height || gt_frames[0].width() != cam.width) {
    // the run was downscaled on ingest: compare at the run resolution
    const Sequence seq = load_sequence(gt_dir, std::min(cam.width, cam.height));
    for (std::size_t t = 0; t < gt_frames.size(); ++t) gt_frames[t] = seq.frames.at(t).rgb;
  }
  double sum_p = 0, sum_s = 0;
  nlohmann::json frames = nlohmann::json::array();
  for (std::size_t t = 0; t < gt_frames.size(); ++t) {
    const Image r = load_png(run_dir / indexed("render_%04d.png", static_cast<int>(t)));
    const double p = psnr(r, gt_frames[t]), s = ssim_score(r, gt_frames[t]);
    sum_p += p;
    sum_s += s;
    frames.push_back({{"frame", t}, {"psnr", p}, {"ssim", s}});
  }
  report["frames"] = frames;
  report["mean_psnr"] = sum_p / gt_frames.size();
  report["mean_ssim"] = sum_s / gt_frames.size();

  const fs::path gt_traj = gt_dir / "gt" / "trajectory.txt";
  const fs::path gt_traj_flat = gt_dir / "trajectory.txt";
  const fs::path traj_path = fs::exists(gt_traj) ? gt_traj : gt_traj_flat;
  if (fs::exists(traj_path)) {
    const Trajectory est = load_trajectory(run_dir / "trajectory.txt");
    Trajectory gt = load_trajectory(traj_path);
    if (gt.size() > est.size()) gt.poses.resize(est.size());
    const PoseErrorReport r = pose_errors(est, gt);
    report["ate"] = r.ate;
    report["rpe_t"] = r.rpe_t;
    report["rpe_r_deg"] = r.rpe_r;
    report["rpe_t_mean"] = r.rpe_t_mean();
    report["rpe_r_mean_deg"] = r.rpe_r_mean();
    report["rpe_r_max_deg"] = r.rpe_r_max();
    report["alignment_scale"] = r.alignment.scale;
  }
  const fs::path out = a.out.empty() ? run_dir / "report.json" : fs::path(a.out);
  std::ofstream(out) << report.dump(2) << "\n";
  std::cout << report.dump(2) << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"gflow: dynamic scene reconstruction with Gaussian splats"};
  app.require_subcommand(1);

  SynthArgs synth;
  auto* s = app.add_subcommand("synth", "generate a synthetic dataset with ground truth");
  s->add_option("--spec", synth.spec, "scene description (key=value); default scene when omitted")->check(CLI::ExistingFile);
  s->add_option("--out", synth.out, "output dataset directory")->required();

  ReconstructArgs rec;
  auto* r = app.add_subcommand("reconstruct", "run the full reconstruction pipeline");
  r->add_option("--data", rec.data, "dataset directory")->required();
  r->add_option("--config", rec.config, "config file (key=value)")->check(CLI::ExistingFile);
  r->add_option("--out", rec.out, "output run directory")->required();
  r->add_option("--max-frames", rec.max_frames, "process at most this many frames (0 = all)");
  const Config defaults;
  std::map<std::string, std::string> raw;
  for (const auto& key : config_keys()) {
    r->add_option("--" + key.name, raw[key.name], key.help)->default_str(config_get(defaults, key.name))->group("Config");
  }

  RenderArgs ren;
  auto* rd = app.add_subcommand("render", "render a checkpoint from any camera");
  rd->add_option("--checkpoint", ren.checkpoint, "frame_%04d.gfs checkpoint")->required()->check(CLI::ExistingFile);
  rd->add_option("--pose", ren.pose, "pose line 'idx tx ty tz qx qy qz qw' or a trajectory file")->required();
  rd->add_option("--frame", ren.frame, "frame index when --pose is a trajectory (default: the checkpoint's)");
  rd->add_option("--intrinsics", ren.intrinsics, "intrinsics file (default: next to the checkpoint)");
  rd->add_option("--fx", ren.fx, "override focal length x");
  rd->add_option("--fy", ren.fy, "override focal length y");
  rd->add_option("--cx", ren.cx, "override principal point x");
  rd->add_option("--cy", ren.cy, "override principal point y");
  rd->add_option("--width", ren.width, "override image width");
  rd->add_option("--height", ren.height, "override image height");
  rd->add_option("--out", ren.out, "output PNG")->required();

  TrackArgs trk;
  auto* tk = app.add_subcommand("track", "export 2D/3D point tracks");
  tk->add_option("--run", trk.run, "run directory")->required()->check(CLI::ExistingDirectory);
  auto* q = tk->add_option("--query", trk.query, "u,v,frame: track the point under this pixel");
  tk->add_option("--ids", trk.ids, "comma-separated point ids")->excludes(q);
  tk->add_option("--out", trk.out, "CSV path (default: <run>/tracks.csv)");

  SegmentArgs seg;
  auto* sg = app.add_subcommand("segment", "propagate a first-frame mask through the run");
  sg->add_option("--run", seg.run, "run directory")->required()->check(CLI::ExistingDirectory);
  sg->add_option("--mask", seg.mask, "first-frame mask PNG")->required()->check(CLI::ExistingFile);
  sg->add_option("--out", seg.out, "output directory (default: <run>/segment)");

  EditArgs ed;
  auto* e = app.add_subcommand("edit", "transform, recolor, remove or add points");
  e->add_option("--checkpoint", ed.checkpoint, "input checkpoint")->required()->check(CLI::ExistingFile);
  e->add_option("--select", ed.select, "all | moving | still | ids:1,2,3")->capture_default_str();
  e->add_option("--translate", ed.translate, "x,y,z offset");
  e->add_option("--rotate", ed.rotate, "axis-angle rotation rx,ry,rz in degrees about the selection centroid");
  e->add_option("--scale", ed.scale, "uniform scale about the selection centroid")->capture_default_str();
  e->add_option("--color-map", ed.color_map, "identity | gray | invert | tint:r,g,b | matrix:9 or 12 values")
      ->capture_default_str();
  e->add_flag("--remove", ed.remove, "drop the selected points");
  e->add_option("--add", ed.add, "checkpoint whose points are appended");
  e->add_option("--out", ed.out, "output checkpoint")->required();

  EvalArgs ev;
  auto* v = app.add_subcommand("eval", "PSNR/SSIM per frame and ATE/RPE against ground truth");
  v->add_option("--run", ev.run, "run directory")->required()->check(CLI::ExistingDirectory);
  v->add_option("--gt", ev.gt, "ground-truth dataset directory")->required()->check(CLI::ExistingDirectory);
  v->add_option("--out", ev.out, "report path (default: <run>/report.json)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (s->parsed()) cmd_synth(synth);
    if (r->parsed()) {
      for (const auto& key : config_keys())
        if (r->count("--" + key.name)) rec.overrides[key.name] = raw[key.name];
      cmd_reconstruct(rec);
    }
    if (rd->parsed()) cmd_render(ren);
    if (tk->parsed()) cmd_track(trk);
    if (sg->parsed()) cmd_segment(seg);
    if (e->parsed()) cmd_edit(ed);
    if (v->parsed()) cmd_eval(ev);
  } catch (const Error& err) {
    std::cerr << "gflow: " << err.what() << "\n";
    return 2;
  } catch (const std::exception& err) {
    std::cerr << "gflow: " << err.what() << "\n";
    return 1;
  }
  return 0;
}
