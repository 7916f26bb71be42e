#pragma once

// Integrated positional encoding of Gaussians projected onto a set of unit
// directions, and the plain positional encoding used for view directions.
//
// Feature layout (fixed; checkpoints depend on it): for m basis rows and L
// levels the vector holds the sin block followed by the cos block, each
// ordered basis-major, level-minor:
//   out[b * L + l]         = sin(2^l p_b.mu) * exp(-2^(2l-1) p_b^T Sigma p_b)
//   out[m * L + b * L + l] = cos(2^l p_b.mu) * exp(-2^(2l-1) p_b^T Sigma p_b)

#include "unerf/geometry.hpp"

#include <cmath>
#include <istream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace unerf {

using BasisMatrix = Eigen::Matrix<double, Eigen::Dynamic, 3>;

struct EncodingBasis {
  BasisMatrix rows;  // m x 3, unit-norm rows

  int size() const { return static_cast<int>(rows.rows()); }
};

inline void validate(const EncodingBasis& basis) {
  if (basis.size() == 0) throw std::invalid_argument("EncodingBasis: empty");
  for (int i = 0; i < basis.size(); ++i)
    if (std::abs(basis.rows.row(i).norm() - 1.0) > 1e-6)
      throw std::invalid_argument("EncodingBasis: row " + std::to_string(i) + " is not unit length");
}

inline EncodingBasis axis_aligned_basis() { return {BasisMatrix::Identity(3, 3)}; }

/// 21 directions: vertices of a twice-tessellated icosahedron with antipodal
/// copies removed. Mirrors assets/off_axis_basis.txt.
inline EncodingBasis off_axis_basis() {
  static const double kRows[21][3] = {
      {0.8506508, 0, 0.5257311},   {0.809017, 0.5, 0.309017},    {0.5257311, 0.8506508, 0},
      {1, 0, 0},                   {0.809017, 0.5, -0.309017},   {0.8506508, 0, -0.5257311},
      {0.309017, 0.809017, -0.5},  {0, 0.5257311, -0.8506508},   {0.5, 0.309017, -0.809017},
      {0, 1, 0},                   {-0.5257311, 0.8506508, 0},   {-0.309017, 0.809017, -0.5},
      {0, 0.5257311, 0.8506508},   {-0.309017, 0.809017, 0.5},   {0.309017, 0.809017, 0.5},
      {0.5, 0.309017, 0.809017},   {0.5, -0.309017, 0.809017},   {0, 0, 1},
      {-0.5, 0.309017, 0.809017},  {-0.809017, 0.5, 0.309017},   {-0.809017, 0.5, -0.309017},
  };
  EncodingBasis basis{BasisMatrix(21, 3)};
  for (int i = 0; i < 21; ++i)
    for (int j = 0; j < 3; ++j) basis.rows(i, j) = kRows[i][j];
  return basis;
}

/// Reads a basis written one "x y z" row per line; '#' starts a comment.
inline EncodingBasis read_basis(std::istream& is) {
  std::vector<Vec3> rows;
  std::string line;
  while (std::getline(is, line)) {
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    std::istringstream ls(line);
    Vec3 v;
    if (!(ls >> v.x())) continue;
    if (!(ls >> v.y() >> v.z())) throw std::runtime_error("basis file: expected three values per row");
    rows.push_back(v);
  }
  EncodingBasis basis{BasisMatrix(static_cast<Eigen::Index>(rows.size()), 3)};
  for (std::size_t i = 0; i < rows.size(); ++i) basis.rows.row(static_cast<Eigen::Index>(i)) = rows[i].transpose();
  validate(basis);
  return basis;
}

/// Variance of the Gaussian along every basis row, diag(P Sigma P^T),
/// computed as the column sums of P^T o (Sigma P^T).
inline Eigen::VectorXd projected_variances(const EncodingBasis& basis, const Mat3& cov) {
  const Eigen::Matrix<double, 3, Eigen::Dynamic> pt = basis.rows.transpose();
  const Eigen::Matrix<double, 3, Eigen::Dynamic> sigma_pt = cov * pt;
  return pt.cwiseProduct(sigma_pt).colwise().sum().transpose();
}

inline int ipe_width(const EncodingBasis& basis, int levels) { return 2 * basis.size() * levels; }

/// Writes ipe_width(basis, levels) features to `out`. Frequencies are
/// generated by angle doubling, attenuations by repeated squaring.
template <class T>
void ipe_features_into(const GaussianSegment& seg, const EncodingBasis& basis, int levels, T* out) {
  if (levels < 1) throw std::invalid_argument("ipe_features: need at least one level");
  if (!seg.cov.allFinite() || !seg.mean.allFinite()) throw std::invalid_argument("ipe_features: non-finite Gaussian");
  const int m = basis.size();
  const Eigen::VectorXd proj_mean = basis.rows * seg.mean;
  const Eigen::VectorXd proj_var = projected_variances(basis, seg.cov);
  T* sin_block = out;
  T* cos_block = out + static_cast<std::ptrdiff_t>(m) * levels;
  for (int b = 0; b < m; ++b) {
    double s = std::sin(proj_mean(b));
    double c = std::cos(proj_mean(b));
    double att = std::exp(-0.5 * std::max(proj_var(b), 0.0));
    for (int l = 0; l < levels; ++l) {
      sin_block[b * levels + l] = static_cast<T>(s * att);
      cos_block[b * levels + l] = static_cast<T>(c * att);
      const double s2 = 2.0 * s * c;
      const double c2 = c * c - s * s;
      s = s2;
      c = c2;
      att *= att;
      att *= att;
    }
  }
}

inline std::vector<double> ipe_features(const GaussianSegment& seg, const EncodingBasis& basis, int levels) {
  std::vector<double> out(static_cast<std::size_t>(ipe_width(basis, levels)));
  ipe_features_into(seg, basis, levels, out.data());
  return out;
}

/// Encodes many Gaussians at once into the columns of `out`. Same values as
/// ipe_features_into, but the sin/cos/exp of level 0 run as array
/// operations in T (vectorized for float).
template <class T>
void ipe_features_batch(const std::vector<GaussianSegment>& segs, const EncodingBasis& basis, int levels,
                        Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>& out) {
  if (levels < 1) throw std::invalid_argument("ipe_features: need at least one level");
  using Array = Eigen::Array<T, Eigen::Dynamic, Eigen::Dynamic>;
  const int m = basis.size();
  const auto count = static_cast<Eigen::Index>(segs.size());
  Array proj_mean(m, count), proj_var(m, count);
  for (Eigen::Index j = 0; j < count; ++j) {
    const GaussianSegment& seg = segs[static_cast<std::size_t>(j)];
    if (!seg.cov.allFinite() || !seg.mean.allFinite()) throw std::invalid_argument("ipe_features: non-finite Gaussian");
    proj_mean.col(j) = (basis.rows * seg.mean).template cast<T>();
    proj_var.col(j) = projected_variances(basis, seg.cov).cwiseMax(0.0).template cast<T>();
  }
  const Array sin0 = proj_mean.sin();
  const Array cos0 = proj_mean.cos();
  const Array att0 = (T(-0.5) * proj_var).exp();
  out.resize(ipe_width(basis, levels), count);
  const std::ptrdiff_t cos_offset = static_cast<std::ptrdiff_t>(m) * levels;
  for (Eigen::Index j = 0; j < count; ++j) {
    T* sin_block = out.col(j).data();
    T* cos_block = sin_block + cos_offset;
    for (int b = 0; b < m; ++b) {
      T s = sin0(b, j), c = cos0(b, j), att = att0(b, j);
      for (int l = 0; l < levels; ++l) {
        sin_block[b * levels + l] = s * att;
        cos_block[b * levels + l] = c * att;
        const T s2 = T(2) * s * c;
        const T c2 = c * c - s * s;
        s = s2;
        c = c2;
        att *= att;
        att *= att;
      }
    }
  }
}

inline int dir_width(int levels) { return 6 * levels; }

template <class T>
void dir_features_into(const Vec3& d, int levels, T* out) {
  if (std::abs(d.norm() - 1.0) > 1e-6) throw std::invalid_argument("dir_features: direction must be unit length");
  GaussianSegment point;
  point.mean = d;
  ipe_features_into(point, axis_aligned_basis(), levels, out);
}

inline std::vector<double> dir_features(const Vec3& d, int levels) {
  std::vector<double> out(static_cast<std::size_t>(dir_width(levels)));
  dir_features_into(d, levels, out.data());
  return out;
}

}  // namespace unerf
