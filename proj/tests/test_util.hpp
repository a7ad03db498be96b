#pragma once

#include <filesystem>
#include <random>
#include <string>

#include "gflow/gaussians.hpp"
#include "gflow/render.hpp"
#include "gflow/rng.hpp"

namespace gflow::testing {

inline std::filesystem::path temp_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("gflow_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

inline RenderCamera small_camera(int width = 40, int height = 32, double f = 40.0) {
  RenderCamera cam;
  cam.width = width;
  cam.height = height;
  cam.K = {f, f, (width - 1) / 2.0, (height - 1) / 2.0};
  return cam;
}

inline Vec4 random_unit_quaternion(RngStream& rng) {
  Vec4 q(rng.normal(), rng.normal(), rng.normal(), rng.normal());
  return q / q.norm();
}

// Random Gaussians in front of a camera at the origin looking down +z.
// screen_sigma_px sets the rough footprint size.
inline GaussianSet random_scene(RngStream& rng, std::size_t n, const RenderCamera& cam,
                                double min_sigma_px = 1.0, double max_sigma_px = 6.0) {
  GaussianSet set;
  for (std::size_t i = 0; i < n; ++i) {
    GaussianPoint p;
    const double z = rng.uniform(1.5, 4.0);
    const double u = rng.uniform(-2.0, cam.width + 1.0);
    const double v = rng.uniform(-2.0, cam.height + 1.0);
    p.mean = Vec3((u - cam.K.cx) / cam.K.fx * z, (v - cam.K.cy) / cam.K.fy * z, z);
    for (int k = 0; k < 3; ++k) {
      const double sigma_px = rng.uniform(min_sigma_px, max_sigma_px);
      p.log_scale[k] = std::log(sigma_px * z / cam.K.fx);
    }
    p.opacity_logit = rng.uniform(-2.0, 3.0);
    p.rotation = random_unit_quaternion(rng);
    p.color = Vec3(rng.uniform(), rng.uniform(), rng.uniform());
    set.append(p);
  }
  return set;
}

}  // namespace gflow::testing
