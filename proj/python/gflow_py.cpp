#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "gflow/apps.hpp"
#include "gflow/config.hpp"
#include "gflow/engine.hpp"
#include "gflow/error.hpp"
#include "gflow/io.hpp"
#include "gflow/oracle.hpp"
#include "gflow/render.hpp"

namespace py = pybind11;
using namespace gflow;

namespace {

using F64Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Image to_image(const F64Array& a) {
  if (a.ndim() != 2 && a.ndim() != 3) throw py::value_error("expected an (H, W) or (H, W, C) array");
  const int h = static_cast<int>(a.shape(0)), w = static_cast<int>(a.shape(1));
  const int c = a.ndim() == 3 ? static_cast<int>(a.shape(2)) : 1;
  Image img(h, w, c);
  std::copy(a.data(), a.data() + a.size(), img.data().begin());
  return img;
}

py::array_t<double> from_image(const Image& img) {
  std::vector<py::ssize_t> shape{img.height(), img.width()};
  if (img.channels() > 1) shape.push_back(img.channels());
  py::array_t<double> out(shape);
  std::copy(img.data().begin(), img.data().end(), out.mutable_data());
  return out;
}

py::array_t<bool> from_mask(const Mask& m) {
  py::array_t<bool> out({m.height(), m.width()});
  auto* d = out.mutable_data();
  for (std::size_t i = 0; i < m.size(); ++i) d[i] = m[i] != 0;
  return out;
}

Mask to_mask(const py::array_t<bool, py::array::c_style | py::array::forcecast>& a) {
  if (a.ndim() != 2) throw py::value_error("expected an (H, W) mask");
  Mask m(static_cast<int>(a.shape(0)), static_cast<int>(a.shape(1)));
  for (std::size_t i = 0; i < m.size(); ++i) m[i] = a.data()[i];
  return m;
}

template <typename V>
py::array_t<double> rows(const std::vector<V>& v) {
  py::array_t<double> out({static_cast<py::ssize_t>(v.size()), static_cast<py::ssize_t>(V::SizeAtCompileTime)});
  auto* d = out.mutable_data();
  for (const auto& x : v)
    for (int k = 0; k < V::SizeAtCompileTime; ++k) *d++ = x[k];
  return out;
}

Config make_config(const std::map<std::string, std::string>& overrides) {
  Config cfg;
  for (const auto& [k, v] : overrides) config_set(cfg, k, v);
  cfg.validate();
  return cfg;
}

py::dict checkpoint_dict(const GaussianSet& s) {
  py::dict d;
  d["mean"] = rows(s.mean);
  d["log_scale"] = rows(s.log_scale);
  d["opacity_logit"] = py::array_t<double>(s.opacity_logit.size(), s.opacity_logit.data());
  d["rotation"] = rows(s.rotation);
  d["color"] = rows(s.color);
  d["id"] = py::array_t<std::uint64_t>(s.id.size(), s.id.data());
  std::vector<std::uint8_t> c(s.cluster.size());
  for (std::size_t i = 0; i < c.size(); ++i) c[i] = static_cast<std::uint8_t>(s.cluster[i]);
  d["cluster"] = py::array_t<std::uint8_t>(c.size(), c.data());
  return d;
}

}  // namespace

PYBIND11_MODULE(_gflow, m) {
  m.doc() = "Dynamic scene reconstruction with Gaussian splats";

  py::register_exception<Error>(m, "GflowError", PyExc_RuntimeError);

  m.def("config_defaults", [] {
    std::map<std::string, std::string> out;
    const Config cfg;
    for (const auto& k : config_keys()) out[k.name] = config_get(cfg, k.name);
    return out;
  });

  m.def(
      "synth",
      [](const std::filesystem::path& out, const std::string& spec_text) {
        generate(spec_text.empty() ? OracleSpec{} : parse_oracle_spec(spec_text), out);
      },
      py::arg("out"), py::arg("spec") = "", "Write a synthetic dataset; spec is key=value text.");

  m.def(
      "reconstruct",
      [](const std::filesystem::path& data, const std::filesystem::path& out,
         const std::map<std::string, std::string>& config, int max_frames) {
        const Config cfg = make_config(config);
        Sequence seq = load_sequence(data, cfg.resize_short);
        RunOptions opts;
        opts.out_dir = out;
        opts.max_frames = max_frames;
        RunResult res;
        {
          py::gil_scoped_release release;
          res = run(std::move(seq), cfg, opts);
        }
        py::dict d;
        d["frames"] = res.frames.size();
        d["depth_scale"] = res.depth_scale;
        d["points"] = res.frames.empty() ? 0 : res.frames.back().set.size();
        return d;
      },
      py::arg("data"), py::arg("out"), py::arg("config") = std::map<std::string, std::string>{},
      py::arg("max_frames") = 0);

  m.def(
      "load_checkpoint", [](const std::filesystem::path& p) { return checkpoint_dict(load_checkpoint(p)); },
      py::arg("path"));

  m.def(
      "render",
      [](const std::filesystem::path& checkpoint, const std::string& pose_line, const std::filesystem::path& intrinsics) {
        const GaussianSet set = load_checkpoint(checkpoint);
        const CameraInfo cam = load_intrinsics(intrinsics);
        const RenderOutput r = render(set, {cam.K, parse_pose_line(pose_line), cam.width, cam.height});
        return py::make_tuple(from_image(r.color), from_image(r.depth), from_image(r.acc_alpha));
      },
      py::arg("checkpoint"), py::arg("pose"), py::arg("intrinsics"),
      "Render (color, depth, alpha) under a pose line 'idx tx ty tz qx qy qz qw'.");

  m.def(
      "psnr", [](const F64Array& a, const F64Array& b) { return psnr(to_image(a), to_image(b)); }, py::arg("a"),
      py::arg("b"));
  m.def(
      "ssim", [](const F64Array& a, const F64Array& b) { return ssim_score(to_image(a), to_image(b)); }, py::arg("a"),
      py::arg("b"));

  m.def(
      "pose_errors",
      [](const std::filesystem::path& est, const std::filesystem::path& gt) {
        const Trajectory e = load_trajectory(est);
        Trajectory g = load_trajectory(gt);
        if (g.size() > e.size()) g.poses.resize(e.size());
        const PoseErrorReport r = pose_errors(e, g);
        py::dict d;
        d["ate"] = r.ate;
        d["rpe_t"] = r.rpe_t;
        d["rpe_r"] = r.rpe_r;
        d["scale"] = r.alignment.scale;
        return d;
      },
      py::arg("est"), py::arg("gt"), "ATE/RPE between two trajectory files (gt truncated to the estimate).");

  m.def(
      "tracks",
      [](const std::filesystem::path& run_dir, const std::vector<std::uint64_t>& ids) {
        const RunData run = load_run(run_dir);
        const TrackSet t = extract_tracks(run, ids.empty() ? run.frames[0].id : ids);
        std::vector<std::array<double, 8>> out;
        for (const auto& tr : t.tracks)
          for (const auto& s : tr.samples)
            out.push_back({static_cast<double>(tr.id), static_cast<double>(s.frame), s.world.x(), s.world.y(),
                           s.world.z(), s.pixel.x(), s.pixel.y(), s.visible ? 1.0 : 0.0});
        py::array_t<double> a({static_cast<py::ssize_t>(out.size()), py::ssize_t{8}});
        std::copy(out.empty() ? nullptr : out[0].data(), out.empty() ? nullptr : out[0].data() + 8 * out.size(),
                  a.mutable_data());
        return a;
      },
      py::arg("run"), py::arg("ids") = std::vector<std::uint64_t>{},
      "Rows of (id, frame, X, Y, Z, u, v, visible); all frame-0 points when ids is empty.");

  m.def(
      "segment",
      [](const std::filesystem::path& run_dir, const py::array_t<bool, py::array::c_style | py::array::forcecast>& mask) {
        const auto masks = propagate_mask(load_run(run_dir), to_mask(mask));
        py::list out;
        for (const auto& mk : masks) out.append(from_mask(mk));
        return out;
      },
      py::arg("run"), py::arg("mask"));
}
