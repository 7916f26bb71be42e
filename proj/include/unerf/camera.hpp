#pragma once

// Pinhole cameras, pose normalization and the plain-text pose file.
//
// Convention: right-handed camera frame, +x right, +y up, looking down -z.
// Pixel coordinates are continuous with (0, 0) at the top-left image corner;
// the center of pixel (col, row) sits at (col + 0.5, row + 0.5).

#include "unerf/geometry.hpp"

#include <Eigen/Eigenvalues>

#include <cmath>
#include <iomanip>
#include <istream>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace unerf {

/// Camera-to-world rigid transform.
struct Pose {
  Mat3 rotation = Mat3::Identity();
  Vec3 position = Vec3::Zero();
};

struct Intrinsics {
  double focal = 1.0;  // pixels
  int width = 1;
  int height = 1;
};

struct PoseSet {
  std::vector<Pose> poses;
  Intrinsics intrinsics;
};

inline void validate(const Pose& pose) {
  const Mat3& r = pose.rotation;
  if ((r.transpose() * r - Mat3::Identity()).cwiseAbs().maxCoeff() > 1e-8)
    throw std::invalid_argument("Pose: rotation is not orthonormal");
  if (std::abs(r.determinant() - 1.0) > 1e-8) throw std::invalid_argument("Pose: rotation determinant must be +1");
  if (!pose.position.allFinite()) throw std::invalid_argument("Pose: position must be finite");
}

/// Cone radius at unit distance for one pixel: the pixel footprint 1/focal
/// scaled by 2/sqrt(12) so the disc matches the variance of a square pixel.
inline double pixel_base_radius(const Intrinsics& intr) { return 2.0 / (std::sqrt(12.0) * intr.focal); }

inline Ray generate_ray(const Pose& pose, const Intrinsics& intr, double px, double py, double t_near,
                        double t_far) {
  if (!(px >= 0.0 && px <= intr.width && py >= 0.0 && py <= intr.height))
    throw std::out_of_range("generate_ray: pixel outside image bounds");
  const Vec3 cam_dir((px - 0.5 * intr.width) / intr.focal, -(py - 0.5 * intr.height) / intr.focal, -1.0);
  Ray ray;
  ray.origin = pose.position;
  ray.direction = (pose.rotation * cam_dir).normalized();
  ray.base_radius = pixel_base_radius(intr);
  ray.t_near = t_near;
  ray.t_far = t_far;
  return ray;
}

/// Ray through the center of integer pixel (col, row).
inline Ray pixel_ray(const Pose& pose, const Intrinsics& intr, int col, int row, double t_near, double t_far) {
  if (col < 0 || row < 0 || col >= intr.width || row >= intr.height)
    throw std::out_of_range("pixel_ray: pixel outside image bounds");
  return generate_ray(pose, intr, col + 0.5, row + 0.5, t_near, t_far);
}

/// Camera-to-world rotation for a camera at `eye` looking at `target`.
inline Mat3 look_at_rotation(const Vec3& eye, const Vec3& target, const Vec3& world_up = Vec3::UnitZ()) {
  const Vec3 forward = (target - eye).normalized();
  Vec3 right = forward.cross(world_up);
  if (right.norm() < 1e-9) right = forward.cross(Vec3::UnitX());
  right.normalize();
  const Vec3 up = right.cross(forward);
  Mat3 r;
  r.col(0) = right;
  r.col(1) = up;
  r.col(2) = -forward;
  return r;
}

// ---------------------------------------------------------------------------
// Pose normalization
// ---------------------------------------------------------------------------

struct SimilarityTransform {
  Mat3 rotation = Mat3::Identity();
  Vec3 center = Vec3::Zero();
  double scale = 1.0;

  Vec3 apply_point(const Vec3& p) const { return scale * (rotation * (p - center)); }
};

/// Recenter on the mean camera position, rotate so the smallest principal
/// component of the positions becomes +z, and rescale into [-1, 1]^3.
inline SimilarityTransform pose_normalization(const PoseSet& set) {
  const auto n = set.poses.size();
  if (n < 3) throw std::invalid_argument("normalize_poses: need at least 3 cameras");
  Vec3 mean = Vec3::Zero();
  for (const auto& p : set.poses) mean += p.position;
  mean /= static_cast<double>(n);

  Mat3 scatter = Mat3::Zero();
  for (const auto& p : set.poses) {
    const Vec3 d = p.position - mean;
    scatter += d * d.transpose();
  }
  scatter /= static_cast<double>(n);
  Eigen::SelfAdjointEigenSolver<Mat3> eig(scatter);
  const Vec3 evals = eig.eigenvalues();  // ascending
  if (evals(1) <= 1e-12 * std::max(evals(2), 1e-300))
    throw std::invalid_argument("normalize_poses: camera positions are collinear");

  Mat3 basis;  // rows: largest, middle, smallest component
  basis.row(0) = eig.eigenvectors().col(2).transpose();
  basis.row(1) = eig.eigenvectors().col(1).transpose();
  basis.row(2) = eig.eigenvectors().col(0).transpose();
  if (basis.determinant() < 0) basis.row(1) *= -1.0;

  // Orient +z with the cameras' average up vector.
  Vec3 avg_up = Vec3::Zero();
  for (const auto& p : set.poses) avg_up += p.rotation.col(1);
  if ((basis * avg_up).z() < 0) {
    basis.row(1) *= -1.0;
    basis.row(2) *= -1.0;
  }

  double max_coord = 0.0;
  for (const auto& p : set.poses) max_coord = std::max(max_coord, (basis * (p.position - mean)).cwiseAbs().maxCoeff());

  SimilarityTransform xf;
  xf.rotation = basis;
  xf.center = mean;
  xf.scale = 1.0 / max_coord;
  return xf;
}

inline PoseSet normalize_poses(const PoseSet& set) {
  const SimilarityTransform xf = pose_normalization(set);
  PoseSet out;
  out.intrinsics = set.intrinsics;
  out.poses.reserve(set.poses.size());
  for (const auto& p : set.poses) {
    Pose q;
    q.rotation = xf.rotation * p.rotation;
    q.position = xf.apply_point(p.position);
    out.poses.push_back(q);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Pose file: see docs/FORMATS.md
// ---------------------------------------------------------------------------

inline constexpr const char* kPoseFileMagic = "unerf-poses";
inline constexpr int kPoseFileVersion = 1;

inline void write_poses(std::ostream& os, const PoseSet& set) {
  os << kPoseFileMagic << ' ' << kPoseFileVersion << '\n';
  os << std::setprecision(17);
  for (const auto& p : set.poses) {
    for (int r = 0; r < 3; ++r) {
      for (int c = 0; c < 3; ++c) os << p.rotation(r, c) << ' ';
      os << p.position(r) << ' ';
    }
    os << set.intrinsics.focal << ' ' << set.intrinsics.width << ' ' << set.intrinsics.height << '\n';
  }
}

inline PoseSet read_poses(std::istream& is) {
  std::string magic;
  int version = 0;
  if (!(is >> magic >> version) || magic != kPoseFileMagic)
    throw std::runtime_error("pose file: missing 'unerf-poses' header");
  if (version != kPoseFileVersion) throw std::runtime_error("pose file: unsupported version " + std::to_string(version));
  PoseSet set;
  std::string line;
  std::getline(is, line);
  bool have_intrinsics = false;
  int line_no = 1;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    Pose p;
    for (int r = 0; r < 3; ++r) {
      for (int c = 0; c < 3; ++c) ls >> p.rotation(r, c);
      ls >> p.position(r);
    }
    Intrinsics intr;
    ls >> intr.focal >> intr.width >> intr.height;
    if (!ls) throw std::runtime_error("pose file: malformed record on line " + std::to_string(line_no));
    validate(p);
    if (!have_intrinsics) {
      set.intrinsics = intr;
      have_intrinsics = true;
    } else if (intr.focal != set.intrinsics.focal || intr.width != set.intrinsics.width ||
               intr.height != set.intrinsics.height) {
      throw std::runtime_error("pose file: cameras must share intrinsics (line " + std::to_string(line_no) + ")");
    }
    set.poses.push_back(p);
  }
  return set;
}

}  // namespace unerf
