#pragma once

// Synthetic multi-view datasets rendered from a SceneOracle, plus the image
// formats: binary PPM for color and a text grid for depth.

#include "unerf/camera.hpp"
#include "unerf/scene.hpp"
#include "unerf/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <istream>
#include <numbers>
#include <ostream>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace unerf {

/// Row-major RGB image with values in [0, 1].
struct ImageBuffer {
  int width = 0;
  int height = 0;
  std::vector<Rgb> pixels;

  ImageBuffer() = default;
  ImageBuffer(int w, int h) : width(w), height(h), pixels(static_cast<std::size_t>(w) * h, Rgb::Zero()) {}

  Rgb& at(int col, int row) { return pixels[static_cast<std::size_t>(row) * width + col]; }
  const Rgb& at(int col, int row) const { return pixels[static_cast<std::size_t>(row) * width + col]; }
};

inline void validate(const ImageBuffer& img) {
  if (img.width < 1 || img.height < 1 || img.pixels.size() != static_cast<std::size_t>(img.width) * img.height)
    throw std::invalid_argument("ImageBuffer: size mismatch");
  for (const Rgb& p : img.pixels)
    if (!p.allFinite()) throw std::invalid_argument("ImageBuffer: non-finite pixel");
}

inline std::uint8_t to_byte(double v) { return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)); }

inline void write_ppm(std::ostream& os, const ImageBuffer& img) {
  validate(img);
  os << "P6\n" << img.width << ' ' << img.height << "\n255\n";
  for (const Rgb& p : img.pixels)
    for (int c = 0; c < 3; ++c) os.put(static_cast<char>(to_byte(p(c))));
}

inline ImageBuffer read_ppm(std::istream& is) {
  std::string magic;
  int w = 0, h = 0, maxval = 0;
  if (!(is >> magic >> w >> h >> maxval) || magic != "P6" || maxval != 255 || w < 1 || h < 1)
    throw std::runtime_error("ppm: expected an 8-bit P6 header");
  is.get();  // the single whitespace byte after maxval
  ImageBuffer img(w, h);
  for (Rgb& p : img.pixels)
    for (int c = 0; c < 3; ++c) {
      const int byte = is.get();
      if (byte == std::char_traits<char>::eof()) throw std::runtime_error("ppm: truncated pixel data");
      p(c) = byte / 255.0;
    }
  return img;
}

/// Per-pixel median depth, row-major.
struct DepthGrid {
  int width = 0;
  int height = 0;
  std::vector<double> values;
};

inline void write_depth(std::ostream& os, const DepthGrid& d) {
  os << "unerf-depth 1\n" << d.width << ' ' << d.height << '\n' << std::setprecision(9);
  for (int r = 0; r < d.height; ++r) {
    for (int c = 0; c < d.width; ++c) os << (c ? " " : "") << d.values[static_cast<std::size_t>(r) * d.width + c];
    os << '\n';
  }
}

inline DepthGrid read_depth(std::istream& is) {
  std::string magic;
  int version = 0;
  DepthGrid d;
  if (!(is >> magic >> version >> d.width >> d.height) || magic != "unerf-depth" || version != 1)
    throw std::runtime_error("depth file: bad header");
  d.values.resize(static_cast<std::size_t>(d.width) * d.height);
  for (double& v : d.values)
    if (!(is >> v)) throw std::runtime_error("depth file: truncated");
  return d;
}

// ---------------------------------------------------------------------------
// Cameras and datasets
// ---------------------------------------------------------------------------

/// All pixel-center rays of one camera, row-major.
inline std::vector<Ray> camera_rays(const Pose& pose, const Intrinsics& intr, double t_near, double t_far) {
  std::vector<Ray> rays;
  rays.reserve(static_cast<std::size_t>(intr.width) * intr.height);
  for (int row = 0; row < intr.height; ++row)
    for (int col = 0; col < intr.width; ++col) rays.push_back(pixel_ray(pose, intr, col, row, t_near, t_far));
  return rays;
}

/// Cameras evenly spaced on a unit-radius ring around the origin, heights
/// jittered in [0.15, 0.25], all looking at the origin with a 90 degree
/// horizontal field of view.
template <class Rng>
PoseSet ring_cameras(int n, int image_size, Rng& rng) {
  if (n < 3) throw std::invalid_argument("ring_cameras: need at least 3 cameras");
  std::uniform_real_distribution<double> height(0.15, 0.25);
  PoseSet set;
  set.intrinsics.width = image_size;
  set.intrinsics.height = image_size;
  set.intrinsics.focal = 0.5 * image_size / std::tan(45.0 * std::numbers::pi / 180.0);
  for (int k = 0; k < n; ++k) {
    const double angle = 2.0 * std::numbers::pi * k / n;
    Pose p;
    p.position = Vec3(std::cos(angle), std::sin(angle), height(rng));
    p.rotation = look_at_rotation(p.position, Vec3::Zero());
    set.poses.push_back(p);
  }
  return set;
}

struct Dataset {
  PoseSet cameras;
  std::vector<ImageBuffer> images;
  std::vector<int> train;
  std::vector<int> test;  // every 8th camera, starting with the first
  double t_near = 0.1;
  double t_far = 100.0;
};

inline ImageBuffer render_oracle_image(const SceneOracle& scene, const Pose& pose, const Intrinsics& intr,
                                       double t_near, double t_far, int quadrature_n, DepthGrid* depth = nullptr) {
  ImageBuffer img(intr.width, intr.height);
  if (depth) {
    depth->width = intr.width;
    depth->height = intr.height;
    depth->values.assign(img.pixels.size(), 0.0);
  }
  const auto rays = camera_rays(pose, intr, t_near, t_far);
  for (std::size_t i = 0; i < rays.size(); ++i) {
    const OracleSample s = oracle_render(scene, rays[i], quadrature_n);
    img.pixels[i] = s.rgb;
    if (depth) depth->values[i] = s.depth;
  }
  return img;
}

template <class Rng>
Dataset make_dataset(const SceneOracle& scene, int n_cameras, int image_size, Rng& rng, double t_near = 0.1,
                     double t_far = 100.0, int quadrature_n = 1000) {
  validate(scene);
  Dataset ds;
  ds.t_near = t_near;
  ds.t_far = t_far;
  ds.cameras = ring_cameras(n_cameras, image_size, rng);
  for (int k = 0; k < n_cameras; ++k) {
    ds.images.push_back(render_oracle_image(scene, ds.cameras.poses[static_cast<std::size_t>(k)], ds.cameras.intrinsics,
                                            t_near, t_far, quadrature_n));
    (k % 8 == 0 ? ds.test : ds.train).push_back(k);
  }
  return ds;
}

inline RaySet ray_set(const Dataset& ds, const std::vector<int>& cameras) {
  RaySet out;
  for (int k : cameras) {
    const auto rays = camera_rays(ds.cameras.poses.at(static_cast<std::size_t>(k)), ds.cameras.intrinsics, ds.t_near,
                                  ds.t_far);
    out.rays.insert(out.rays.end(), rays.begin(), rays.end());
    const auto& px = ds.images.at(static_cast<std::size_t>(k)).pixels;
    out.colors.insert(out.colors.end(), px.begin(), px.end());
  }
  return out;
}

/// "toy" or the path of a scene file.
inline SceneOracle load_scene(const std::string& name) {
  if (name == "toy") return toy_scene();
  std::ifstream f(name);
  if (!f) throw std::runtime_error("cannot open scene file '" + name + "'");
  return read_scene(f);
}

/// The dataset a config trains on. Camera jitter is drawn from its own
/// stream so ablations that share a seed share the data.
inline Dataset build_dataset(const TrainConfig& c) {
  std::mt19937_64 rng(c.seed ^ 0x5ca1ab1e5eedULL);
  return make_dataset(load_scene(c.scene), c.cameras, c.image_size, rng, c.t_near, c.t_far);
}

}  // namespace unerf
