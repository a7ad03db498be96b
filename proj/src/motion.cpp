#include "gflow/motion.hpp"

#include <Eigen/SVD>
#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>

#include "gflow/error.hpp"
#include "gflow/parallel.hpp"
#include "gflow/rng.hpp"

namespace gflow {

namespace {

constexpr std::string_view kModule = "motion";
constexpr int kIrlsRounds = 5;
constexpr int kLmedsHypotheses = 300;

using Mat3x = Eigen::Matrix3d;

// Hartley normalization: centroid to origin, mean distance sqrt(2).
Mat3x normalizing_transform(const std::vector<Vec2>& pts) {
  Vec2 c = Vec2::Zero();
  for (const auto& p : pts) c += p;
  c /= static_cast<double>(pts.size());
  double d = 0.0;
  for (const auto& p : pts) d += (p - c).norm();
  d /= static_cast<double>(pts.size());
  const double s = d > 0.0 ? std::sqrt(2.0) / d : 1.0;
  Mat3x T;
  T << s, 0, -s * c.x(), 0, s, -s * c.y(), 0, 0, 1;
  return T;
}

Vec2 apply(const Mat3x& T, const Vec2& p) { return {T(0, 0) * p.x() + T(0, 2), T(1, 1) * p.y() + T(1, 2)}; }

Mat3x enforce_rank2(const Mat3x& F) {
  Eigen::JacobiSVD<Mat3x> svd(F, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Vec3 s = svd.singularValues();
  s[2] = 0.0;
  return svd.matrixU() * s.asDiagonal() * svd.matrixV().transpose();
}

Mat3x canonical(Mat3x F) {
  F /= F.norm();
  // Fix the overall sign so results are reproducible.
  Eigen::Index r, c;
  F.cwiseAbs().maxCoeff(&r, &c);
  if (F(r, c) < 0) F = -F;
  return F;
}

// Weighted linear solve of x'^T F x = 0 in normalized coordinates.
Mat3x solve_linear(const std::vector<Vec2>& a, const std::vector<Vec2>& b, const std::vector<double>& w) {
  Eigen::MatrixXd A(a.size(), 9);
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double x = a[i].x(), y = a[i].y(), xp = b[i].x(), yp = b[i].y();
    const double s = std::sqrt(w[i]);
    A.row(static_cast<Eigen::Index>(i)) << xp * x, xp * y, xp, yp * x, yp * y, yp, x, y, 1.0;
    A.row(static_cast<Eigen::Index>(i)) *= s;
  }
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(A, Eigen::ComputeFullV);
  const auto& sv = svd.singularValues();
  if (sv.size() < 8 || sv[7] <= 1e-10 * sv[0])
    throw Error(ErrorCode::DegenerateConfiguration, kModule, "design matrix is rank deficient");
  const Eigen::VectorXd f = svd.matrixV().col(8);
  Mat3x F;
  F << f[0], f[1], f[2], f[3], f[4], f[5], f[6], f[7], f[8];
  return enforce_rank2(F);
}

double median(std::vector<double> v) {
  if (v.empty()) return 0.0;
  const auto mid = v.begin() + static_cast<std::ptrdiff_t>(v.size() / 2);
  std::nth_element(v.begin(), mid, v.end());
  return *mid;
}

Mask morph(const Mask& m, bool erode) {
  const int h = m.height(), w = m.width();
  Mask out(h, w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      bool v = erode;
      for (int dy = -1; dy <= 1; ++dy)
        for (int dx = -1; dx <= 1; ++dx) {
          const int yy = y + dy, xx = x + dx;
          // Outside pixels are neutral for both operations.
          if (yy < 0 || xx < 0 || yy >= h || xx >= w) continue;
          if (erode)
            v = v && m(yy, xx);
          else
            v = v || m(yy, xx);
        }
      out(y, x) = v;
    }
  return out;
}

}  // namespace

double sampson_error(const Mat3& F, const Vec2& x, const Vec2& x_prime) {
  const Vec3 a(x.x(), x.y(), 1.0), b(x_prime.x(), x_prime.y(), 1.0);
  const Vec3 Fa = F * a, Ftb = F.transpose() * b;
  const double num = b.dot(Fa);
  const double den = Fa.x() * Fa.x() + Fa.y() * Fa.y() + Ftb.x() * Ftb.x() + Ftb.y() * Ftb.y();
  if (den <= 0.0) return num == 0.0 ? 0.0 : std::numeric_limits<double>::infinity();
  return num * num / den;
}

double sampson_distance(const Mat3& F, const Vec2& x, const Vec2& x_prime) {
  return std::sqrt(sampson_error(F, x, x_prime));
}

FundamentalMatrix estimate_fundamental(const std::vector<Correspondence>& corr) {
  if (corr.size() < 8) throw Error(ErrorCode::DegenerateConfiguration, kModule, "need at least 8 correspondences");
  std::vector<Vec2> a, b;
  a.reserve(corr.size());
  b.reserve(corr.size());
  for (const auto& c : corr) {
    a.push_back(c.x);
    b.push_back(c.x_prime);
  }
  const Mat3x Ta = normalizing_transform(a), Tb = normalizing_transform(b);
  for (auto& p : a) p = apply(Ta, p);
  for (auto& p : b) p = apply(Tb, p);

  std::vector<double> w(corr.size(), 1.0);
  Mat3x Fn = solve_linear(a, b, w);
  std::vector<double> d(corr.size());
  auto med_residual = [&](const Mat3x& F) {
    for (std::size_t i = 0; i < corr.size(); ++i) d[i] = sampson_error(F, a[i], b[i]);
    return median(d);
  };
  // Least-median-of-squares start over minimal 8-point subsets, so the
  // reweighting below begins inside the inlier basin.
  if (corr.size() > 8) {
    RngStream rng(0, "fundamental-lmeds");
    double best = med_residual(Fn);
    std::vector<Vec2> sa(8), sb(8);
    const std::vector<double> ones(8, 1.0);
    for (int h = 0; h < kLmedsHypotheses; ++h) {
      for (int k = 0; k < 8; ++k) {
        const auto j = rng.below(corr.size());
        sa[k] = a[j];
        sb[k] = b[j];
      }
      Mat3x F;
      try {
        F = solve_linear(sa, sb, ones);
      } catch (const Error&) {
        continue;
      }
      const double m = med_residual(F);
      if (m < best) {
        best = m;
        Fn = F;
      }
    }
  }
  for (int round = 0; round < kIrlsRounds; ++round) {
    for (std::size_t i = 0; i < corr.size(); ++i) d[i] = sampson_distance(Fn, a[i], b[i]);
    // Cauchy weights on the Sampson distance, divided by the Sampson
    // denominator so the algebraic residual becomes a geometric one.
    const double sigma = std::max(1.4826 * median(d), 1e-12);
    for (std::size_t i = 0; i < corr.size(); ++i) {
      const Vec3 x(a[i].x(), a[i].y(), 1.0), xp(b[i].x(), b[i].y(), 1.0);
      const Vec3 Fx = Fn * x, Ftx = Fn.transpose() * xp;
      const double den = std::max(Fx.head<2>().squaredNorm() + Ftx.head<2>().squaredNorm(), 1e-18);
      const double r = d[i] / sigma;
      w[i] = 1.0 / (1.0 + r * r) / den;
    }
    Fn = solve_linear(a, b, w);
  }
  FundamentalMatrix out;
  out.F = canonical(enforce_rank2(Tb.transpose() * Fn * Ta));
  return out;
}

Image epipolar_error_map(const Tensor& flow, const FundamentalMatrix& F, const Intrinsics& K) {
  const Mat3 Kmat = K.matrix();
  const Mat3 Fn = Kmat.transpose() * F.F * Kmat;
  Image err(flow.height(), flow.width());
  parallel_for(static_cast<std::size_t>(flow.height()), [&](std::size_t yi) {
    const int y = static_cast<int>(yi);
    for (int x = 0; x < flow.width(); ++x) {
      const Vec2 p((x - K.cx) / K.fx, (y - K.cy) / K.fy);
      const Vec2 q((x + flow(y, x, 0) - K.cx) / K.fx, (y + flow(y, x, 1) - K.cy) / K.fy);
      err(y, x) = sampson_distance(Fn, p, q);
    }
  });
  return err;
}

Mask morph_open(const Mask& m) { return morph(morph(m, true), false); }
Mask morph_close(const Mask& m) { return morph(morph(m, false), true); }

Mask movement_mask(const Image& err_map, double threshold) {
  Mask m(err_map.height(), err_map.width());
  for (std::size_t i = 0; i < m.size(); ++i) m[i] = err_map[i] > threshold;
  return morph_close(morph_open(m));
}

ClusteringResult cluster_frame(const Tensor& flow, const Tensor* reverse_flow, const Intrinsics& K,
                               const ClusteringParams& params) {
  const int h = flow.height(), w = flow.width();
  ClusteringResult out;

  std::vector<double> mags(static_cast<std::size_t>(h) * w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) mags[static_cast<std::size_t>(y) * w + x] = std::hypot(flow(y, x, 0), flow(y, x, 1));
  if (median(mags) < params.min_parallax_px) {
    // No camera motion to explain: any flow at all is object motion.
    out.static_camera = true;
    out.error_map = Image(h, w);
    const double f = 0.5 * (K.fx + K.fy);
    for (std::size_t i = 0; i < mags.size(); ++i) out.error_map[i] = mags[i] / f;
    out.moving = movement_mask(out.error_map, params.threshold);
    return out;
  }

  struct Candidate {
    double score;
    std::size_t order;
    Correspondence c;
  };
  std::vector<Candidate> cand;
  std::array<double, 2> rb{};
  const int s = std::max(params.grid_stride, 1);
  for (int y = s / 2; y < h; y += s)
    for (int x = s / 2; x < w; x += s) {
      const Vec2 p(x, y), q(x + flow(y, x, 0), y + flow(y, x, 1));
      if (q.x() < 0 || q.y() < 0 || q.x() > w - 1 || q.y() > h - 1) continue;
      double score = 0.0;
      if (reverse_flow) {
        if (!sample_bilinear(*reverse_flow, q.x(), q.y(), rb)) continue;
        score = std::hypot(flow(y, x, 0) + rb[0], flow(y, x, 1) + rb[1]);
      }
      cand.push_back({score, cand.size(), {p, q}});
    }
  std::stable_sort(cand.begin(), cand.end(), [](const Candidate& a, const Candidate& b) { return a.score < b.score; });
  if (reverse_flow) cand.resize((cand.size() + 1) / 2);
  std::vector<Correspondence> corr;
  for (const auto& c : cand) corr.push_back(c.c);

  try {
    out.F = estimate_fundamental(corr);
  } catch (const Error& e) {
    if (e.code() != ErrorCode::DegenerateConfiguration) throw;
    out.all_still = true;
    out.error_map = Image(h, w);
    out.moving = Mask(h, w);
    return out;
  }
  out.error_map = epipolar_error_map(flow, *out.F, K);
  if (median(std::vector<double>(out.error_map.data().begin(), out.error_map.data().end())) > params.threshold) {
    // The two-view model does not explain the bulk of the frame.
    out.all_still = true;
    out.moving = Mask(h, w);
    return out;
  }
  out.moving = movement_mask(out.error_map, params.threshold);
  return out;
}

Mask previous_moving_mask(const GaussianSet& set, const RenderCamera& cam) {
  GaussianSet moving = set.select(Cluster::Moving);
  Mask m(cam.height, cam.width);
  if (moving.empty()) return m;
  // White splats so any covered pixel has positive intensity.
  for (auto& c : moving.color) c = Vec3::Ones();
  const auto out = render(moving, cam, RenderOptions{Vec3::Zero()});
  const Image g = grayscale(out.color);
  for (std::size_t i = 0; i < m.size(); ++i) m[i] = g[i] > 0.0;
  return m;
}

}  // namespace gflow
