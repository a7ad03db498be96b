#include "gflow/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>

#include "gflow/error.hpp"

namespace gflow {

namespace {

constexpr std::string_view kModule = "core-data";

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

[[noreturn]] void bad_value(const std::string& key, const std::string& value) {
  throw Error(ErrorCode::ConfigInvalid, kModule, "bad value for " + key + ": '" + value + "'");
}

double to_double(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    const double d = std::stod(v, &pos);
    if (pos != v.size()) bad_value(key, v);
    return d;
  } catch (const std::logic_error&) {
    bad_value(key, v);
  }
}

long long to_int(const std::string& key, const std::string& v) {
  long long out = 0;
  const auto* end = v.data() + v.size();
  const auto [p, ec] = std::from_chars(v.data(), end, out);
  if (ec != std::errc() || p != end) bad_value(key, v);
  return out;
}

std::vector<std::string> split_list(const std::string& v) {
  std::vector<std::string> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

// Shortest text that reads back to the same double.
std::string fmt_double(double d) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, d);
  return std::string(buf, r.ptr);
}

std::string join_ints(const std::vector<int>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
  return s;
}

struct Field {
  ConfigKey key;
  std::function<void(Config&, const std::string&)> set;
  std::function<std::string(const Config&)> get;
};

template <typename T>
Field number(std::string name, std::string help, T Config::*member) {
  Field f;
  f.key = {name, std::move(help)};
  f.set = [member, name](Config& c, const std::string& v) {
    if constexpr (std::is_floating_point_v<T>) c.*member = to_double(name, v);
    else c.*member = static_cast<T>(to_int(name, v));
  };
  f.get = [member](const Config& c) {
    if constexpr (std::is_floating_point_v<T>) return fmt_double(c.*member);
    else return std::to_string(c.*member);
  };
  return f;
}

Field int_list(std::string name, std::string help, std::vector<int> Config::*member) {
  Field f;
  f.key = {name, std::move(help)};
  f.set = [member, name](Config& c, const std::string& v) {
    std::vector<int> out;
    for (const auto& item : split_list(v)) out.push_back(static_cast<int>(to_int(name, item)));
    c.*member = out;
  };
  f.get = [member](const Config& c) { return join_ints(c.*member); };
  return f;
}

const std::vector<Field>& fields() {
  static const std::vector<Field> all = [] {
    std::vector<Field> v;
    v.push_back(number("n_ini", "initial Gaussian count", &Config::n_ini));
    v.push_back(number("lambda_p", "photometric loss weight", &Config::lambda_p));
    v.push_back(number("lambda_d", "depth loss weight", &Config::lambda_d));
    v.push_back(number("lambda_f", "flow loss weight", &Config::lambda_f));
    v.push_back(number("lambda_i", "isotropic loss weight", &Config::lambda_i));
    v.push_back(number("lr_gauss", "Adam step size for Gaussian parameters", &Config::lr_gauss));
    v.push_back(number("lr_cam", "Adam step size for the camera tangent", &Config::lr_cam));
    v.push_back(number("iters_first", "Gaussian iterations on the first frame", &Config::iters_first));
    v.push_back(number("iters_cam", "camera iterations per frame", &Config::iters_cam));
    v.push_back(number("iters_gauss", "Gaussian iterations per later frame", &Config::iters_gauss));
    v.push_back(int_list("densify_steps_first", "first-frame densification iterations", &Config::densify_steps_first));
    v.push_back(int_list("densify_steps", "error-threshold densification iterations", &Config::densify_steps));
    v.push_back(number("err_threshold", "photometric error threshold for densification", &Config::err_threshold));
    v.push_back(number("epipolar_threshold", "epipolar distance threshold for motion", &Config::epipolar_threshold));
    v.push_back(number("fb_threshold", "forward-backward flow tolerance (px)", &Config::fb_threshold));
    v.push_back(number("seed", "random seed", &Config::seed));
    v.push_back(number("scale_gain", "initial scale gain", &Config::scale_gain));
    v.push_back(number("ssim_blend", "weight of the SSIM term against MSE", &Config::ssim_blend));
    {
      Field f;
      f.key = {"background", "background color r,g,b"};
      f.set = [](Config& c, const std::string& v) {
        const auto items = split_list(v);
        if (items.size() != 3) bad_value("background", v);
        for (int i = 0; i < 3; ++i) c.background[i] = to_double("background", items[i]);
      };
      f.get = [](const Config& c) {
        return fmt_double(c.background[0]) + "," + fmt_double(c.background[1]) + "," +
               fmt_double(c.background[2]);
      };
      v.push_back(f);
    }
    v.push_back(number("resize_short", "downscale so the shortest side is at most this (0 = off)", &Config::resize_short));
    v.push_back(number("prune_opacity", "drop Gaussians below this opacity after each frame (0 = off)", &Config::prune_opacity));
    {
      Field f;
      f.key = {"camera_init", "pose prior for the next frame: constant | velocity"};
      f.set = [](Config& c, const std::string& v) {
        if (v == "constant") c.camera_init = CameraInit::ConstantPosition;
        else if (v == "velocity") c.camera_init = CameraInit::ConstantVelocity;
        else bad_value("camera_init", v);
      };
      f.get = [](const Config& c) {
        return std::string(c.camera_init == CameraInit::ConstantPosition ? "constant" : "velocity");
      };
      v.push_back(f);
    }
    v.push_back(number("occlusion_tolerance", "relative depth gap treated as occlusion in flow terms", &Config::occlusion_tolerance));
    {
      Field f;
      f.key = {"debug_dumps", "write debug PNGs (0/1)"};
      f.set = [](Config& c, const std::string& v) { c.debug_dumps = to_int("debug_dumps", v) != 0; };
      f.get = [](const Config& c) { return std::string(c.debug_dumps ? "1" : "0"); };
      v.push_back(f);
    }
    return v;
  }();
  return all;
}

const Field& field(const std::string& key) {
  for (const auto& f : fields())
    if (f.key.name == key) return f;
  throw Error(ErrorCode::ConfigInvalid, kModule, "unknown config key '" + key + "'");
}

}  // namespace

void Config::validate() const {
  auto fail = [](const std::string& what) { throw Error(ErrorCode::ConfigInvalid, kModule, what); };
  if (n_ini <= 0 || iters_first <= 0 || iters_cam <= 0 || iters_gauss <= 0) fail("counts must be > 0");
  if (err_threshold <= 0 || epipolar_threshold <= 0 || fb_threshold <= 0) fail("thresholds must be > 0");
  if (lambda_p < 0 || lambda_d < 0 || lambda_f < 0 || lambda_i < 0 || ssim_blend < 0) fail("weights must be >= 0");
  if (lr_gauss <= 0 || lr_cam <= 0) fail("learning rates must be > 0");
  if (scale_gain <= 0) fail("scale_gain must be > 0");
  if (resize_short < 0) fail("resize_short must be >= 0");
  for (int s : densify_steps_first) if (s < 0) fail("densify steps must be >= 0");
  for (int s : densify_steps) if (s < 0) fail("densify steps must be >= 0");
}

const std::vector<ConfigKey>& config_keys() {
  static const std::vector<ConfigKey> keys = [] {
    std::vector<ConfigKey> k;
    for (const auto& f : fields()) k.push_back(f.key);
    return k;
  }();
  return keys;
}

void config_set(Config& cfg, const std::string& key, const std::string& value) {
  field(key).set(cfg, trim(value));
}

std::string config_get(const Config& cfg, const std::string& key) { return field(key).get(cfg); }

Config load_config(const std::filesystem::path& path, Config base) {
  std::ifstream is(path);
  if (!is) throw Error(ErrorCode::Io, kModule, "missing file " + path.string());
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw Error(ErrorCode::ConfigInvalid, kModule,
                  path.string() + ":" + std::to_string(lineno) + ": expected key=value");
    config_set(base, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  base.validate();
  return base;
}

void save_config(const std::filesystem::path& path, const Config& cfg) {
  std::ofstream os(path);
  if (!os) throw Error(ErrorCode::Io, kModule, "cannot write " + path.string());
  for (const auto& f : fields()) os << f.key.name << " = " << f.get(cfg) << "\n";
}

}  // namespace gflow
