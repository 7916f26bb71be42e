#pragma once

// Analytic scenes made of constant-density primitives with (optionally
// textured) albedo, and their reference renderer.

#include "unerf/histogram.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <istream>
#include <limits>
#include <optional>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace unerf {

enum class PrimitiveKind { sphere, box, shell };

struct Primitive {
  PrimitiveKind kind = PrimitiveKind::sphere;
  Vec3 center = Vec3::Zero();
  Vec3 size = Vec3::Ones();  // sphere: (radius, -, -); box: half extents; shell: (inner, outer, -)
  double density = 0.0;
  Rgb albedo = Rgb::Constant(0.5);
  double texture_amplitude = 0.0;
  double texture_frequency = 0.0;

  /// Channel k: albedo_k + amplitude * sin(frequency * (x - center)_k + k),
  /// clamped to [0, 1].
  Rgb color_at(const Vec3& x) const {
    if (texture_amplitude == 0.0) return albedo;
    Rgb c;
    for (int k = 0; k < 3; ++k)
      c(k) = std::clamp(albedo(k) + texture_amplitude * std::sin(texture_frequency * (x(k) - center(k)) + k), 0.0, 1.0);
    return c;
  }

  /// Parameter ranges [t0, t1] where the ray is inside the primitive (at most two).
  std::vector<std::pair<double, double>> intersect(const Ray& ray) const {
    std::vector<std::pair<double, double>> out;
    const Vec3 oc = ray.origin - center;
    auto ball = [&](double radius) -> std::optional<std::pair<double, double>> {
      const double b = oc.dot(ray.direction);
      const double disc = b * b - (oc.squaredNorm() - radius * radius);
      if (disc <= 0.0) return std::nullopt;
      const double h = std::sqrt(disc);
      return std::make_pair(-b - h, -b + h);
    };
    switch (kind) {
      case PrimitiveKind::sphere:
        if (auto hit = ball(size.x())) out.push_back(*hit);
        break;
      case PrimitiveKind::box: {
        double lo = -std::numeric_limits<double>::infinity(), hi = std::numeric_limits<double>::infinity();
        for (int k = 0; k < 3; ++k) {
          const double d = ray.direction(k);
          if (d == 0.0) {
            if (std::abs(oc(k)) > size(k)) return out;
            continue;
          }
          double a = (-size(k) - oc(k)) / d, b = (size(k) - oc(k)) / d;
          if (a > b) std::swap(a, b);
          lo = std::max(lo, a);
          hi = std::min(hi, b);
        }
        if (hi > lo) out.emplace_back(lo, hi);
        break;
      }
      case PrimitiveKind::shell: {
        const auto outer = ball(size.y());
        if (!outer) break;
        const auto inner = ball(size.x());
        if (!inner) {
          out.push_back(*outer);
        } else {
          out.emplace_back(outer->first, inner->first);
          out.emplace_back(inner->second, outer->second);
        }
        break;
      }
    }
    return out;
  }
};

inline void validate(const Primitive& p) {
  if (!p.center.allFinite() || !p.size.allFinite()) throw std::invalid_argument("Primitive: non-finite geometry");
  if (!(p.density >= 0.0) || !std::isfinite(p.density)) throw std::invalid_argument("Primitive: density must be >= 0");
  if ((p.albedo.array() < 0.0).any() || (p.albedo.array() > 1.0).any())
    throw std::invalid_argument("Primitive: albedo must lie in [0, 1]");
  if (p.kind == PrimitiveKind::sphere && !(p.size.x() > 0.0)) throw std::invalid_argument("sphere: radius must be > 0");
  if (p.kind == PrimitiveKind::box && !(p.size.array() > 0.0).all())
    throw std::invalid_argument("box: half extents must be > 0");
  if (p.kind == PrimitiveKind::shell && !(p.size.x() > 0.0 && p.size.y() > p.size.x()))
    throw std::invalid_argument("shell: need 0 < inner < outer");
}

struct SceneOracle {
  std::vector<Primitive> primitives;
  Rgb background = Rgb::Constant(0.5);
};

inline void validate(const SceneOracle& s) {
  for (const auto& p : s.primitives) validate(p);
  if ((s.background.array() < 0.0).any() || (s.background.array() > 1.0).any())
    throw std::invalid_argument("SceneOracle: background must lie in [0, 1]");
}

/// Textured sphere at the origin, a small sphere off to the side, and an
/// enclosing shell at radius 50.
inline SceneOracle toy_scene() {
  SceneOracle s;
  Primitive center;
  center.kind = PrimitiveKind::sphere;
  center.size = Vec3(0.35, 0, 0);
  center.density = 1e4;
  center.albedo = Rgb(0.75, 0.45, 0.3);
  center.texture_amplitude = 0.2;
  center.texture_frequency = 12.0;
  s.primitives.push_back(center);

  Primitive side;
  side.kind = PrimitiveKind::sphere;
  side.center = Vec3(0.3, -0.35, 0.25);
  side.size = Vec3(0.07, 0, 0);
  side.density = 1e4;
  side.albedo = Rgb(0.2, 0.6, 0.9);
  s.primitives.push_back(side);

  Primitive shell;
  shell.kind = PrimitiveKind::shell;
  shell.size = Vec3(50.0, 60.0, 0);
  shell.density = 1e4;
  shell.albedo = Rgb(0.45, 0.6, 0.5);
  shell.texture_amplitude = 0.3;
  shell.texture_frequency = 0.12;
  s.primitives.push_back(shell);
  return s;
}

/// Sum of densities and density-weighted color at x.
inline std::pair<double, Rgb> scene_field(const SceneOracle& s, const Vec3& x, const std::vector<int>& active) {
  double tau = 0.0;
  Rgb acc = Rgb::Zero();
  for (int k : active) {
    const Primitive& p = s.primitives[static_cast<std::size_t>(k)];
    tau += p.density;
    acc += p.density * p.color_at(x);
  }
  return {tau, tau > 0.0 ? Rgb(acc / tau) : Rgb::Zero()};
}

/// The scene seen through ray intervals, for render_field: the exact mean
/// density over [t0, t1] and the density-weighted color of the primitives
/// occupying it, each sampled at the middle of its overlap.
struct SceneField {
  const SceneOracle* scene = nullptr;

  double mean_density(const Ray& ray, double t0, double t1) const {
    double mass = 0.0;
    for (const auto& p : scene->primitives)
      for (auto [a, b] : p.intersect(ray)) mass += p.density * std::max(0.0, std::min(b, t1) - std::max(a, t0));
    return mass / (t1 - t0);
  }

  Rgb color(const Ray& ray, double t0, double t1) const {
    double mass = 0.0;
    Rgb acc = Rgb::Zero();
    for (const auto& p : scene->primitives)
      for (auto [a, b] : p.intersect(ray)) {
        const double lo = std::max(a, t0), hi = std::min(b, t1);
        if (hi <= lo) continue;
        mass += p.density * (hi - lo);
        acc += p.density * (hi - lo) * p.color_at(ray.at(0.5 * (lo + hi)));
      }
    return mass > 0.0 ? Rgb(acc / mass) : Rgb::Zero();
  }
};

struct OracleSample {
  Rgb rgb = Rgb::Zero();
  double depth = 0.0;
  WeightHistogram histogram;  // t-space quadrature actually used
};

/// Reference render of one ray. The density is exactly piecewise constant
/// between primitive boundaries; occupied pieces are subdivided with a step
/// of min((t_far - t_near) / n, 50 / (n * tau)) so the color texture is
/// resolved, and marching stops once the optical depth exceeds 50.
inline OracleSample oracle_render(const SceneOracle& scene, const Ray& ray, int quadrature_n = 1000) {
  if (quadrature_n < 1) throw std::invalid_argument("oracle_render: quadrature_n must be >= 1");
  std::vector<double> breaks = {ray.t_near, ray.t_far};
  std::vector<std::vector<std::pair<double, double>>> hits(scene.primitives.size());
  for (std::size_t k = 0; k < scene.primitives.size(); ++k) {
    hits[k] = scene.primitives[k].intersect(ray);
    for (auto [a, b] : hits[k])
      for (double t : {a, b})
        if (t > ray.t_near && t < ray.t_far) breaks.push_back(t);
  }
  std::sort(breaks.begin(), breaks.end());
  breaks.erase(std::unique(breaks.begin(), breaks.end()), breaks.end());

  const double base_step = (ray.t_far - ray.t_near) / quadrature_n;
  std::vector<double> edges = {breaks.front()};
  std::vector<double> tau;
  std::vector<Rgb> colors;
  double optical_depth = 0.0;
  std::vector<int> active;
  for (std::size_t s = 0; s + 1 < breaks.size() && optical_depth < 50.0; ++s) {
    const double a = breaks[s], b = breaks[s + 1];
    const double mid = 0.5 * (a + b);
    active.clear();
    for (std::size_t k = 0; k < hits.size(); ++k)
      for (auto [h0, h1] : hits[k])
        if (h0 <= mid && mid < h1) active.push_back(static_cast<int>(k));
    const double seg_tau = scene_field(scene, ray.at(mid), active).first;
    if (seg_tau == 0.0) {
      edges.push_back(b);
      tau.push_back(0.0);
      colors.push_back(Rgb::Zero());
      continue;
    }
    const double step = std::min(base_step, 50.0 / (quadrature_n * seg_tau));
    const int pieces = static_cast<int>(std::clamp(std::ceil((b - a) / step), 1.0, 1e9));
    for (int i = 0; i < pieces && optical_depth < 50.0; ++i) {
      const double t0 = a + (b - a) * i / pieces;
      const double t1 = i + 1 == pieces ? b : a + (b - a) * (i + 1) / pieces;
      edges.push_back(t1);
      tau.push_back(seg_tau);
      colors.push_back(scene_field(scene, ray.at(0.5 * (t0 + t1)), active).second);
      optical_depth += seg_tau * (t1 - t0);
    }
  }

  OracleSample out;
  out.histogram.edges = std::move(edges);
  out.histogram.weights = quadrature_weights(tau, out.histogram.edges);
  out.histogram.domain = Domain::t;
  out.rgb = composite(out.histogram, colors, scene.background);
  // Marching may stop early; the sentinel must still be the far plane.
  out.depth = out.histogram.total() > 0.0 ? median_depth(out.histogram) : ray.t_far;
  return out;
}

// ---------------------------------------------------------------------------
// Scene file: see docs/FORMATS.md
// ---------------------------------------------------------------------------

inline constexpr const char* kSceneFileMagic = "unerf-scene";
inline constexpr int kSceneFileVersion = 1;

inline void write_scene(std::ostream& os, const SceneOracle& s) {
  os << kSceneFileMagic << ' ' << kSceneFileVersion << '\n' << std::setprecision(17);
  os << "background " << s.background.x() << ' ' << s.background.y() << ' ' << s.background.z() << '\n';
  for (const auto& p : s.primitives) {
    switch (p.kind) {
      case PrimitiveKind::sphere:
        os << "sphere " << p.center.x() << ' ' << p.center.y() << ' ' << p.center.z() << ' ' << p.size.x();
        break;
      case PrimitiveKind::box:
        os << "box " << p.center.x() << ' ' << p.center.y() << ' ' << p.center.z() << ' ' << p.size.x() << ' '
           << p.size.y() << ' ' << p.size.z();
        break;
      case PrimitiveKind::shell:
        os << "shell " << p.center.x() << ' ' << p.center.y() << ' ' << p.center.z() << ' ' << p.size.x() << ' '
           << p.size.y();
        break;
    }
    os << ' ' << p.density << ' ' << p.albedo.x() << ' ' << p.albedo.y() << ' ' << p.albedo.z() << ' '
       << p.texture_amplitude << ' ' << p.texture_frequency << '\n';
  }
}

inline SceneOracle read_scene(std::istream& is) {
  std::string magic;
  int version = 0;
  if (!(is >> magic >> version) || magic != kSceneFileMagic)
    throw std::runtime_error("scene file: missing 'unerf-scene' header");
  if (version != kSceneFileVersion) throw std::runtime_error("scene file: unsupported version " + std::to_string(version));
  SceneOracle s;
  std::string line;
  std::getline(is, line);
  int line_no = 1;
  while (std::getline(is, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    std::istringstream ls(line);
    std::string kind;
    if (!(ls >> kind)) continue;
    auto fail = [&] { return std::runtime_error("scene file: malformed '" + kind + "' on line " + std::to_string(line_no)); };
    if (kind == "background") {
      if (!(ls >> s.background.x() >> s.background.y() >> s.background.z())) throw fail();
      continue;
    }
    Primitive p;
    if (!(ls >> p.center.x() >> p.center.y() >> p.center.z())) throw fail();
    if (kind == "sphere") {
      p.kind = PrimitiveKind::sphere;
      ls >> p.size.x();
      p.size.y() = p.size.z() = 0.0;
    } else if (kind == "box") {
      p.kind = PrimitiveKind::box;
      ls >> p.size.x() >> p.size.y() >> p.size.z();
    } else if (kind == "shell") {
      p.kind = PrimitiveKind::shell;
      ls >> p.size.x() >> p.size.y();
      p.size.z() = 0.0;
    } else {
      throw std::runtime_error("scene file: unknown primitive '" + kind + "' on line " + std::to_string(line_no));
    }
    if (!(ls >> p.density >> p.albedo.x() >> p.albedo.y() >> p.albedo.z())) throw fail();
    if (ls >> p.texture_amplitude) {
      if (!(ls >> p.texture_frequency)) throw fail();
    } else {
      p.texture_amplitude = 0.0;
    }
    validate(p);
    s.primitives.push_back(p);
  }
  validate(s);
  return s;
}

}  // namespace unerf
