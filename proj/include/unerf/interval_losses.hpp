#pragma once

// Losses defined between or on step-function histograms: the proposal bound
// and its loss (online distillation) and the distortion regularizer.

#include "unerf/histogram.hpp"

#include <cmath>
#include <stdexcept>
#include <vector>

namespace unerf {

/// Sum of proposal weights whose interval intersects [t0, t1).
inline double bound(const WeightHistogram& proposal, double t0, double t1) {
  if (!(t1 > t0)) throw std::invalid_argument("bound: require t0 < t1");
  double sum = 0.0;
  for (std::size_t j = 0; j < proposal.size(); ++j)
    if (proposal.edges[j] < t1 && proposal.edges[j + 1] > t0) sum += proposal.weights[j];
  return sum;
}

struct ProposalLoss {
  double value = 0.0;
  std::vector<double> grad_proposal;  // dL/d(proposal weight j)
};

/// sum_i max(0, w_i - bound_i)^2 / w_i, where bound_i sums the proposal
/// weights overlapping target interval i. Terms with w_i == 0 are zero (the
/// surplus vanishes with w_i). The target histogram is treated as a constant.
///
/// Both edge sets are sorted, so overlap ranges are found with one merge pass
/// and bounds come from a prefix sum of the proposal weights: O(n + m).
inline ProposalLoss proposal_loss(const WeightHistogram& target, const WeightHistogram& proposal) {
  for (double w : target.weights)
    if (std::isnan(w)) throw std::invalid_argument("proposal_loss: NaN target weight");
  for (double w : proposal.weights)
    if (std::isnan(w)) throw std::invalid_argument("proposal_loss: NaN proposal weight");
  if (target.domain != proposal.domain) throw std::invalid_argument("proposal_loss: histograms use different domains");

  const std::size_t n = target.size(), m = proposal.size();
  const auto& e = target.edges;
  const auto& p = proposal.edges;
  std::vector<double> prefix(m + 1, 0.0);
  for (std::size_t j = 0; j < m; ++j) prefix[j + 1] = prefix[j] + proposal.weights[j];

  ProposalLoss out;
  out.grad_proposal.assign(m, 0.0);
  std::vector<double> grad_diff(m + 1, 0.0);
  std::size_t lo = 0, hi = 0;
  for (std::size_t i = 0; i < n; ++i) {
    // first j with p[j+1] > e[i]; first j with p[j] >= e[i+1]
    while (lo < m && !(p[lo + 1] > e[i])) ++lo;
    while (hi < m && p[hi] < e[i + 1]) ++hi;
    const double w = target.weights[i];
    if (!(w > 0.0)) continue;
    const double b = hi > lo ? prefix[hi] - prefix[lo] : 0.0;
    const double excess = w - b;
    if (excess <= 0.0) continue;
    out.value += excess * excess / w;
    if (hi > lo) {
      const double g = -2.0 * excess / w;
      grad_diff[lo] += g;
      grad_diff[hi] -= g;
    }
  }
  double run = 0.0;
  for (std::size_t j = 0; j < m; ++j) out.grad_proposal[j] = (run += grad_diff[j]);
  return out;
}

struct DistortionLoss {
  double value = 0.0;
  std::vector<double> grad_weights;
};

/// sum_{i,j} w_i w_j |m_i - m_j| + (1/3) sum_i w_i^2 (s_{i+1} - s_i) with m_i
/// the interval midpoints. Only defined on normalized (s-space) distances.
/// The pairwise term is evaluated in O(n) with running sums since the
/// midpoints are sorted.
inline DistortionLoss distortion_loss(const WeightHistogram& h) {
  if (h.domain != Domain::s) throw std::invalid_argument("distortion_loss: histogram must use normalized distances");
  if (h.edges.size() != h.weights.size() + 1) throw std::invalid_argument("distortion_loss: size mismatch");
  const std::size_t n = h.size();
  std::vector<double> mid(n);
  for (std::size_t i = 0; i < n; ++i) mid[i] = 0.5 * (h.edges[i] + h.edges[i + 1]);

  DistortionLoss out;
  out.grad_weights.assign(n, 0.0);
  // below[i] = sum_{j<i} w_j (m_i - m_j), above[i] = sum_{j>i} w_j (m_j - m_i)
  double w_sum = 0.0, wm_sum = 0.0;
  std::vector<double> below(n);
  for (std::size_t i = 0; i < n; ++i) {
    below[i] = mid[i] * w_sum - wm_sum;
    w_sum += h.weights[i];
    wm_sum += h.weights[i] * mid[i];
  }
  w_sum = 0.0;
  wm_sum = 0.0;
  double pairwise = 0.0, self = 0.0;
  for (std::size_t i = n; i-- > 0;) {
    const double above = wm_sum - mid[i] * w_sum;
    const double spread = below[i] + above;  // sum_j w_j |m_i - m_j|
    pairwise += h.weights[i] * spread;
    self += h.weights[i] * h.weights[i] * h.width(i);
    out.grad_weights[i] = 2.0 * spread + (2.0 / 3.0) * h.weights[i] * h.width(i);
    w_sum += h.weights[i];
    wm_sum += h.weights[i] * mid[i];
  }
  out.value = pairwise + self / 3.0;
  return out;
}

}  // namespace unerf
