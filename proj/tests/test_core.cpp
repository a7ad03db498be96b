#include <cmath>
#include <fstream>
#include <limits>
#include <set>

#include "doctest.h"
#include "gflow/array.hpp"
#include "gflow/config.hpp"
#include "gflow/error.hpp"
#include "gflow/io.hpp"
#include "gflow/parallel.hpp"
#include "gflow/rng.hpp"
#include "test_util.hpp"

using namespace gflow;

namespace {

std::string read_bytes(const std::filesystem::path& p) {
  std::ifstream is(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(is), {}};
}

ErrorCode code_of(auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected an Error");
  return ErrorCode::Io;
}

}  // namespace

TEST_CASE("tensor save/load round trip is byte exact") {
  const auto dir = testing::temp_dir("tensor");
  Tensor t(2, 2);
  t(0, 0) = 1.5f;
  t(0, 1) = -2.25f;
  t(1, 0) = 3.0e-8f;
  t(1, 1) = 1e20f;
  save_tensor(dir / "a.gft", t);
  const Tensor back = load_tensor(dir / "a.gft");
  CHECK(back == t);
  CHECK(back.rank() == 2);
  save_tensor(dir / "b.gft", back);
  CHECK(read_bytes(dir / "a.gft") == read_bytes(dir / "b.gft"));
}

TEST_CASE("tensor header layout") {
  const auto dir = testing::temp_dir("tensor_layout");
  Tensor t(3, 4, 2);
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = static_cast<float>(i);
  save_tensor(dir / "f.gft", t);
  const auto bytes = read_bytes(dir / "f.gft");
  REQUIRE(bytes.size() == 4 + 1 + 3 * 4 + t.size() * 4);
  CHECK(bytes.substr(0, 4) == "GFT1");
  CHECK(bytes[4] == 3);
  CHECK(static_cast<unsigned char>(bytes[5]) == 3);
  CHECK(static_cast<unsigned char>(bytes[9]) == 4);
  CHECK(static_cast<unsigned char>(bytes[13]) == 2);
  const Tensor back = load_tensor(dir / "f.gft");
  CHECK(back.rank() == 3);
  CHECK(back(2, 3, 1) == 23.0f);
}

TEST_CASE("tensor load errors") {
  const auto dir = testing::temp_dir("tensor_err");
  {
    std::ofstream os(dir / "bad.gft", std::ios::binary);
    os << "XXXX\x02";
  }
  CHECK(code_of([&] { load_tensor(dir / "bad.gft"); }) == ErrorCode::BadMagic);

  Tensor t(2, 2, 1, 0.0f);
  t(1, 1) = std::numeric_limits<float>::quiet_NaN();
  save_tensor(dir / "nan.gft", t);
  CHECK(code_of([&] { load_tensor(dir / "nan.gft"); }) == ErrorCode::NonFiniteData);

  Tensor ok(2, 3);
  save_tensor(dir / "short.gft", ok);
  auto bytes = read_bytes(dir / "short.gft");
  bytes.resize(bytes.size() - 4);
  {
    std::ofstream os(dir / "short.gft", std::ios::binary);
    os << bytes;
  }
  CHECK(code_of([&] { load_tensor(dir / "short.gft"); }) == ErrorCode::DimMismatch);
  CHECK(code_of([&] { load_tensor(dir / "missing.gft"); }) == ErrorCode::Io);
}

TEST_CASE("png round trip keeps 8-bit values") {
  const auto dir = testing::temp_dir("png");
  Image img(5, 7, 3);
  for (std::size_t i = 0; i < img.size(); ++i) img[i] = static_cast<double>(i % 256) / 255.0;
  save_png(dir / "x.png", img);
  const Image back = load_png(dir / "x.png");
  REQUIRE(back.same_shape(img));
  for (std::size_t i = 0; i < img.size(); ++i) CHECK(back[i] == doctest::Approx(img[i]).epsilon(1e-12));

  Mask m(4, 6);
  m(1, 2) = 1;
  m(3, 5) = 1;
  save_mask_png(dir / "m.png", m);
  CHECK(load_mask_png(dir / "m.png") == m);
}

TEST_CASE("rng streams are deterministic and label separated") {
  RngStream a(42, "init"), b(42, "init"), c(42, "densify");
  bool differs = false;
  for (int i = 0; i < 100; ++i) {
    const auto va = a.next_u64();
    CHECK(va == b.next_u64());
    differs |= va != c.next_u64();
  }
  CHECK(differs);
}

TEST_CASE("rng seeds do not collide") {
  // 10^4 draws from two seeds: a shared 64-bit value would be a ~1e-11 event
  // for independent streams.
  RngStream a(1, "x"), b(2, "x");
  std::set<std::uint64_t> seen;
  for (int i = 0; i < 10000; ++i) seen.insert(a.next_u64());
  int collisions = 0;
  for (int i = 0; i < 10000; ++i) collisions += seen.count(b.next_u64()) ? 1 : 0;
  CHECK(collisions == 0);

  // Uniform draws should have mean 1/2 and variance 1/12 within 5 sigma.
  RngStream u(7, "stats");
  double s = 0, s2 = 0;
  const int n = 100000;
  for (int i = 0; i < n; ++i) {
    const double v = u.uniform();
    CHECK(v >= 0.0);
    CHECK(v < 1.0);
    s += v;
    s2 += v * v;
  }
  CHECK(std::abs(s / n - 0.5) < 5 * std::sqrt(1.0 / 12.0 / n));
  CHECK(std::abs(s2 / n - (s / n) * (s / n) - 1.0 / 12.0) < 2e-3);
}

TEST_CASE("config defaults, parsing and validation") {
  Config cfg;
  CHECK(cfg.n_ini == 50000);
  CHECK(cfg.lambda_p == 1.0);
  CHECK(cfg.lambda_d == 0.1);
  CHECK(cfg.lambda_f == 0.01);
  CHECK(cfg.lambda_i == 50.0);
  CHECK(cfg.lr_gauss == 4e-3);
  CHECK(cfg.lr_cam == 1e-3);
  CHECK(cfg.iters_first == 500);
  CHECK(cfg.iters_cam == 150);
  CHECK(cfg.iters_gauss == 300);
  CHECK(cfg.densify_steps_first == std::vector<int>{150, 300});
  CHECK(cfg.densify_steps == std::vector<int>{100, 200});
  CHECK(cfg.err_threshold == 0.01);
  CHECK(cfg.epipolar_threshold == 0.01);
  CHECK(cfg.fb_threshold == 1.0);
  cfg.validate();

  const auto dir = testing::temp_dir("config");
  {
    std::ofstream os(dir / "c.txt");
    os << "# comment\n n_ini = 1200\nlambda_i=0\ndensify_steps=5, 7\nbackground=1,0.5,0\ncamera_init=velocity\n";
  }
  const Config loaded = load_config(dir / "c.txt");
  CHECK(loaded.n_ini == 1200);
  CHECK(loaded.lambda_i == 0.0);
  CHECK(loaded.densify_steps == std::vector<int>{5, 7});
  CHECK(loaded.background[1] == 0.5);
  CHECK(loaded.camera_init == CameraInit::ConstantVelocity);

  save_config(dir / "round.txt", loaded);
  const Config again = load_config(dir / "round.txt");
  for (const auto& key : config_keys()) CHECK(config_get(again, key.name) == config_get(loaded, key.name));

  Config bad;
  CHECK_THROWS_AS(config_set(bad, "no_such_key", "1"), Error);
  CHECK_THROWS_AS(config_set(bad, "n_ini", "12abc"), Error);
  bad.iters_cam = 0;
  CHECK_THROWS_AS(bad.validate(), Error);
  Config neg;
  neg.lambda_d = -1;
  CHECK_THROWS_AS(neg.validate(), Error);
}

TEST_CASE("bilinear sampling and masks") {
  Image img(2, 2);
  img(0, 0) = 0;
  img(0, 1) = 1;
  img(1, 0) = 2;
  img(1, 1) = 3;
  double v = 0;
  REQUIRE(sample_bilinear(img, 0.5, 0.5, std::span<double>(&v, 1)));
  CHECK(v == doctest::Approx(1.5));
  CHECK_FALSE(sample_bilinear(img, -0.1, 0.0, std::span<double>(&v, 1)));
  CHECK_FALSE(sample_bilinear(img, 0.0, 1.01, std::span<double>(&v, 1)));

  Mask a(2, 2), b(2, 2);
  a(0, 0) = 1;
  b(0, 0) = 1;
  b(1, 1) = 1;
  CHECK(mask_iou(a, b) == doctest::Approx(0.5));
  CHECK(count(mask_or(a, b)) == 2);
  CHECK(count(mask_not(a)) == 3);
}

TEST_CASE("parallel_for covers every index once") {
  for (int threads : {0, 1, 3}) {
    set_thread_count_override(threads);
    std::vector<int> hits(101, 0);
    parallel_for(hits.size(), [&](std::size_t i) { hits[i] += 1; });
    for (int h : hits) CHECK(h == 1);
  }
  set_thread_count_override(-1);
}

TEST_CASE("parallel_for rethrows worker exceptions") {
  for (int threads : {0, 4}) {
    set_thread_count_override(threads);
    CHECK_THROWS_AS(parallel_for(64, [](std::size_t i) {
                      if (i == 50) throw std::runtime_error("boom");
                    }),
                    std::runtime_error);
  }
  set_thread_count_override(-1);
}
