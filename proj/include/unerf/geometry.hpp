#pragma once

// Rays, normalized ray distances, conical-frustum Gaussians and the scene
// contraction used to bring unbounded scenes into a radius-2 ball.

#include <Eigen/Dense>

#include <cmath>
#include <concepts>
#include <stdexcept>
#include <string>

namespace unerf {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

struct Ray {
  Vec3 origin = Vec3::Zero();
  Vec3 direction = Vec3::UnitZ();
  double base_radius = 1e-3;  // cone radius at unit distance along direction
  double t_near = 0.1;
  double t_far = 100.0;

  Vec3 at(double t) const { return origin + t * direction; }
};

inline void validate(const Ray& ray) {
  if (std::abs(ray.direction.norm() - 1.0) > 1e-12)
    throw std::invalid_argument("Ray: direction must be unit length");
  if (!(ray.t_near > 0.0) || !(ray.t_far > ray.t_near) || !std::isfinite(ray.t_far))
    throw std::invalid_argument("Ray: require 0 < t_near < t_far < inf");
  if (!(ray.base_radius > 0.0))
    throw std::invalid_argument("Ray: base_radius must be positive");
}

/// Mean and full covariance of one ray interval.
struct GaussianSegment {
  Vec3 mean = Vec3::Zero();
  Mat3 cov = Mat3::Zero();
};

// ---------------------------------------------------------------------------
// Normalized ray distance s in [0, 1]
// ---------------------------------------------------------------------------

/// Curve g used to space samples. Reciprocal spaces samples linearly in
/// disparity, logarithmic gives log spacing, linear gives metric spacing.
enum class DistanceCurve { reciprocal, logarithmic, linear };

inline std::string to_string(DistanceCurve g) {
  switch (g) {
    case DistanceCurve::reciprocal: return "reciprocal";
    case DistanceCurve::logarithmic: return "logarithmic";
    case DistanceCurve::linear: return "linear";
  }
  return "?";
}

inline DistanceCurve parse_distance_curve(const std::string& name) {
  if (name == "reciprocal") return DistanceCurve::reciprocal;
  if (name == "logarithmic" || name == "log") return DistanceCurve::logarithmic;
  if (name == "linear") return DistanceCurve::linear;
  throw std::invalid_argument("unknown distance curve '" + name + "'");
}

namespace detail {

inline double curve_apply(DistanceCurve g, double x) {
  switch (g) {
    case DistanceCurve::reciprocal: return 1.0 / x;
    case DistanceCurve::logarithmic: return std::log(x);
    case DistanceCurve::linear: return x;
  }
  return x;
}

inline double curve_invert(DistanceCurve g, double y) {
  switch (g) {
    case DistanceCurve::reciprocal: return 1.0 / y;
    case DistanceCurve::logarithmic: return std::exp(y);
    case DistanceCurve::linear: return y;
  }
  return y;
}

inline void check_planes(double t_near, double t_far, DistanceCurve g) {
  if (g != DistanceCurve::linear && !(t_near > 0.0))
    throw std::invalid_argument("s/t mapping: t_near must be > 0 for reciprocal or logarithmic curves");
  if (!(t_far > t_near)) throw std::invalid_argument("s/t mapping: t_far must exceed t_near");
}

}  // namespace detail

inline double s_to_t(double s, double t_near, double t_far, DistanceCurve g = DistanceCurve::reciprocal) {
  detail::check_planes(t_near, t_far, g);
  if (!(s >= 0.0 && s <= 1.0)) throw std::invalid_argument("s_to_t: s must lie in [0, 1]");
  if (s == 0.0) return t_near;
  if (s == 1.0) return t_far;
  const double y = s * detail::curve_apply(g, t_far) + (1.0 - s) * detail::curve_apply(g, t_near);
  return detail::curve_invert(g, y);
}

inline double t_to_s(double t, double t_near, double t_far, DistanceCurve g = DistanceCurve::reciprocal) {
  detail::check_planes(t_near, t_far, g);
  if (t == t_near) return 0.0;
  if (t == t_far) return 1.0;
  const double gn = detail::curve_apply(g, t_near);
  const double gf = detail::curve_apply(g, t_far);
  return (detail::curve_apply(g, t) - gn) / (gf - gn);
}

// ---------------------------------------------------------------------------
// Conical frustum moments
// ---------------------------------------------------------------------------

namespace detail {
// Unchecked moments; t1 == t0 gives the zero-length limit (a flat disc).
inline GaussianSegment frustum_moments(const Ray& ray, double t0, double t1) {
  const double mu = 0.5 * (t0 + t1);
  const double hw = 0.5 * (t1 - t0);
  const double mu2 = mu * mu;
  const double hw2 = hw * hw;
  const double denom = 3.0 * mu2 + hw2;
  const double t_mean = mu + (2.0 * mu * hw2) / denom;
  const double t_var = hw2 / 3.0 - (4.0 / 15.0) * (hw2 * hw2 * (12.0 * mu2 - hw2)) / (denom * denom);
  const double r_var =
      ray.base_radius * ray.base_radius * (mu2 / 4.0 + (5.0 / 12.0) * hw2 - (4.0 / 15.0) * (hw2 * hw2) / denom);

  const Vec3& d = ray.direction;
  const Mat3 ddt = d * d.transpose();
  GaussianSegment g;
  g.mean = ray.origin + t_mean * d;
  g.cov = t_var * ddt + r_var * (Mat3::Identity() - ddt);
  return g;
}
}  // namespace detail

/// Gaussian moments of the cone frustum between t0 and t1, where the cone
/// radius grows as base_radius * t. Uses the midpoint/half-width form, which
/// stays accurate for short intervals far from the origin.
inline GaussianSegment conical_frustum_to_gaussian(const Ray& ray, double t0, double t1) {
  if (!(t1 > t0)) throw std::invalid_argument("conical_frustum_to_gaussian: require t1 > t0");
  return detail::frustum_moments(ray, t0, t1);
}

// ---------------------------------------------------------------------------
// Contraction
// ---------------------------------------------------------------------------

/// Identity inside the unit ball, (2 - 1/|x|) x/|x| outside.
inline Vec3 contract(const Vec3& x) {
  const double r = x.norm();
  if (r <= 1.0) return x;
  return ((2.0 - 1.0 / r) / r) * x;
}

/// Analytic Jacobian of contract. On the unit sphere the outside branch's
/// limit is used (which coincides with the identity there).
inline Mat3 contract_jacobian(const Vec3& x) {
  const double r = x.norm();
  if (r < 1.0) return Mat3::Identity();
  const Vec3 u = x / r;
  const Mat3 radial = u * u.transpose();
  const double r2 = r * r;
  return radial / r2 + ((2.0 * r - 1.0) / r2) * (Mat3::Identity() - radial);
}

/// Jacobian-vector product of contract, without forming the Jacobian.
inline Vec3 contract_jvp(const Vec3& x, const Vec3& v) {
  const double r = x.norm();
  if (r < 1.0) return v;
  const Vec3 u = x / r;
  const double along = u.dot(v);
  const double r2 = r * r;
  return (along / r2) * u + ((2.0 * r - 1.0) / r2) * (v - along * u);
}

template <class F>
concept SmoothMap = requires(const F& f, const Vec3& x) {
  { f(x) } -> std::convertible_to<Vec3>;
  { f.jacobian(x) } -> std::convertible_to<Mat3>;
  { f.jvp(x, x) } -> std::convertible_to<Vec3>;
};

struct ContractMap {
  Vec3 operator()(const Vec3& x) const { return contract(x); }
  Mat3 jacobian(const Vec3& x) const { return contract_jacobian(x); }
  Vec3 jvp(const Vec3& x, const Vec3& v) const { return contract_jvp(x, v); }
};

struct IdentityMap {
  Vec3 operator()(const Vec3& x) const { return x; }
  Mat3 jacobian(const Vec3&) const { return Mat3::Identity(); }
  Vec3 jvp(const Vec3&, const Vec3& v) const { return v; }
};

/// Push a Gaussian through f using its linearization at the mean:
/// (f(mu), J Sigma J^T).
template <SmoothMap F>
GaussianSegment warp_gaussian(const GaussianSegment& seg, const F& f) {
  const Mat3 jac = f.jacobian(seg.mean);
  GaussianSegment out;
  out.mean = f(seg.mean);
  out.cov = jac * seg.cov * jac.transpose();
  out.cov = 0.5 * (out.cov + out.cov.transpose()).eval();
  return out;
}

/// Same result as warp_gaussian, but only applies J as a linear operator:
/// once to the columns of Sigma, transpose, and once more.
template <SmoothMap F>
GaussianSegment warp_gaussian_linearized(const GaussianSegment& seg, const F& f) {
  Mat3 half;
  for (int c = 0; c < 3; ++c) half.col(c) = f.jvp(seg.mean, seg.cov.col(c));
  const Mat3 half_t = half.transpose();
  Mat3 full;
  for (int c = 0; c < 3; ++c) full.col(c) = f.jvp(seg.mean, half_t.col(c));
  GaussianSegment out;
  out.mean = f(seg.mean);
  out.cov = 0.5 * (full + full.transpose());
  return out;
}

}  // namespace unerf
