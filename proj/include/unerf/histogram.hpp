#pragma once

// Step-function histograms along a ray: quadrature weights, compositing,
// median depth, annealing, dilation and inverse-transform resampling.
//
// Intervals are half-open, [e_i, e_{i+1}); intervals that only touch at an
// endpoint do not overlap.

#include "unerf/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <istream>
#include <numeric>
#include <ostream>
#include <random>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace unerf {

/// Which distance a histogram's edges are expressed in.
enum class Domain { s, t };

struct WeightHistogram {
  std::vector<double> edges;    // n + 1, non-decreasing
  std::vector<double> weights;  // n, non-negative
  Domain domain = Domain::s;

  std::size_t size() const { return weights.size(); }
  double total() const { return std::accumulate(weights.begin(), weights.end(), 0.0); }
  double width(std::size_t i) const { return edges[i + 1] - edges[i]; }
};

inline void validate(const WeightHistogram& h, bool strict = false) {
  if (h.edges.size() != h.weights.size() + 1)
    throw std::invalid_argument("WeightHistogram: need exactly one more edge than weights");
  for (std::size_t i = 0; i + 1 < h.edges.size(); ++i) {
    if (strict ? !(h.edges[i + 1] > h.edges[i]) : !(h.edges[i + 1] >= h.edges[i]))
      throw std::invalid_argument("WeightHistogram: edges must be sorted");
  }
  for (double w : h.weights) {
    if (std::isnan(w)) throw std::invalid_argument("WeightHistogram: NaN weight");
    if (w < 0.0) throw std::invalid_argument("WeightHistogram: negative weight");
  }
}

// ---------------------------------------------------------------------------
// Quadrature
// ---------------------------------------------------------------------------

/// Alpha-compositing weights w_i = (1 - exp(-tau_i d_i)) exp(-sum_{j<i} tau_j d_j)
/// for metric (t-space) edges.
///
/// Rounding in exp and expm1 can push the sum a few ulps past 1, which would
/// give the background a negative weight. Each weight is capped at what the
/// running sum leaves below 1, so summing in order never exceeds 1. The cap
/// moves a weight by ulps only; the backward pass ignores it.
inline std::vector<double> quadrature_weights(std::span<const double> tau, std::span<const double> edges_t) {
  if (edges_t.size() != tau.size() + 1) throw std::invalid_argument("weights_from_density: size mismatch");
  std::vector<double> w(tau.size());
  double optical_depth = 0.0, sum = 0.0;
  for (std::size_t i = 0; i < tau.size(); ++i) {
    if (!(tau[i] >= 0.0)) throw std::invalid_argument("weights_from_density: density must be non-negative");
    const double a = tau[i] * (edges_t[i + 1] - edges_t[i]);
    const double trans = std::exp(-optical_depth);
    w[i] = std::min(-std::expm1(-a) * trans, 1.0 - sum);
    sum += w[i];
    optical_depth += a;
  }
  return w;
}

inline WeightHistogram weights_from_density(std::span<const double> tau, std::span<const double> edges_t) {
  for (std::size_t i = 0; i + 1 < edges_t.size(); ++i)
    if (!(edges_t[i + 1] > edges_t[i])) throw std::invalid_argument("weights_from_density: edges must increase");
  WeightHistogram h;
  h.edges.assign(edges_t.begin(), edges_t.end());
  h.weights = quadrature_weights(tau, edges_t);
  h.domain = Domain::t;
  return h;
}

/// Reverse-mode companion of quadrature_weights: given dL/dw returns dL/dtau.
inline std::vector<double> quadrature_weights_backward(std::span<const double> tau, std::span<const double> edges_t,
                                                       std::span<const double> weights,
                                                       std::span<const double> grad_w) {
  const std::size_t n = tau.size();
  std::vector<double> grad_tau(n);
  // dw_i/da_j = T_{j+1} for i == j and -w_i for i > j.
  double suffix = 0.0;  // sum_{i>j} g_i w_i
  double optical_depth = 0.0;
  std::vector<double> trans_after(n);
  for (std::size_t i = 0; i < n; ++i) {
    optical_depth += tau[i] * (edges_t[i + 1] - edges_t[i]);
    trans_after[i] = std::exp(-optical_depth);
  }
  for (std::size_t j = n; j-- > 0;) {
    const double grad_a = grad_w[j] * trans_after[j] - suffix;
    grad_tau[j] = grad_a * (edges_t[j + 1] - edges_t[j]);
    suffix += grad_w[j] * weights[j];
  }
  return grad_tau;
}

using Rgb = Eigen::Vector3d;

/// sum_i w_i c_i + (1 - sum_i w_i) background
inline Rgb composite(std::span<const double> weights, std::span<const Rgb> colors, const Rgb& background) {
  if (weights.size() != colors.size()) throw std::invalid_argument("composite: weights/colors size mismatch");
  Rgb acc = Rgb::Zero();
  double total = 0.0;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    acc += weights[i] * colors[i];
    total += weights[i];
  }
  return acc + (1.0 - total) * background;
}

inline Rgb composite(const WeightHistogram& h, std::span<const Rgb> colors, const Rgb& background) {
  return composite(std::span<const double>(h.weights), colors, background);
}

/// Smallest distance where the normalized cumulative weight reaches 1/2,
/// interpolated linearly inside the crossing interval. Returns the last edge
/// when the histogram is empty.
inline double median_depth(const WeightHistogram& h) {
  const double total = h.total();
  if (!(total > 0.0)) return h.edges.back();
  const double target = 0.5 * total;
  double cum = 0.0;
  for (std::size_t i = 0; i < h.size(); ++i) {
    const double next = cum + h.weights[i];
    if (next >= target && h.weights[i] > 0.0) {
      const double frac = std::clamp((target - cum) / h.weights[i], 0.0, 1.0);
      return h.edges[i] + frac * h.width(i);
    }
    cum = next;
  }
  return h.edges.back();
}

// ---------------------------------------------------------------------------
// Annealing
// ---------------------------------------------------------------------------

/// Schlick's bias curve b x / ((b - 1) x + 1) on x in [0, 1].
inline double schlick_bias(double x, double b) { return (b * x) / ((b - 1.0) * x + 1.0); }

inline std::vector<double> anneal_weights(std::span<const double> weights, long step, long total_steps,
                                          double bias = 10.0) {
  if (total_steps <= 0 || step < 0 || step > total_steps)
    throw std::invalid_argument("anneal_weights: step must lie in [0, total_steps]");
  if (!(bias > 0.0)) throw std::invalid_argument("anneal_weights: bias must be positive");
  double sum = 0.0;
  for (double w : weights) {
    if (!(w >= 0.0)) throw std::invalid_argument("anneal_weights: negative weight");
    sum += w;
  }
  const double exponent = schlick_bias(static_cast<double>(step) / static_cast<double>(total_steps), bias);
  std::vector<double> out(weights.size());
  if (exponent == 1.0) {
    out.assign(weights.begin(), weights.end());
    return out;
  }
  double powered_sum = 0.0;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    out[i] = std::pow(weights[i], exponent);  // pow(0, 0) == 1
    powered_sum += out[i];
  }
  if (powered_sum > 0.0)
    for (double& v : out) v *= sum / powered_sum;
  return out;
}

// ---------------------------------------------------------------------------
// Dilation
// ---------------------------------------------------------------------------

/// eps_k = a / prod_{k' < k} n_{k'} + b for 1-based level k.
inline double dilation_epsilon(int level, std::span<const int> sample_counts, double a = 0.5, double b = 0.0025) {
  if (level < 1) throw std::invalid_argument("dilation_epsilon: level is 1-based");
  double prod = 1.0;
  for (int k = 0; k < level - 1 && k < static_cast<int>(sample_counts.size()); ++k) prod *= sample_counts[k];
  return a / prod + b;
}

struct StepDensity {
  std::vector<double> edges;
  std::vector<double> density;
};

/// Max-filter a step density over the window [s - eps, s + eps). The result
/// is exact on the refined edge set sort(e, e - eps, e + eps) clipped to
/// [lo, hi].
inline StepDensity dilate_density(std::span<const double> edges, std::span<const double> density, double eps,
                                  double lo, double hi) {
  const std::size_t n = density.size();
  std::vector<double> cand;
  cand.reserve(3 * edges.size() + 2);
  for (double e : edges) {
    cand.push_back(std::clamp(e, lo, hi));
    cand.push_back(std::clamp(e - eps, lo, hi));
    cand.push_back(std::clamp(e + eps, lo, hi));
  }
  std::sort(cand.begin(), cand.end());
  cand.erase(std::unique(cand.begin(), cand.end()), cand.end());

  StepDensity out;
  out.edges = cand;
  out.density.assign(cand.size() > 0 ? cand.size() - 1 : 0, 0.0);
  // For s inside [a, b) the window touches source bin j iff
  // e_j - eps < b and e_{j+1} + eps > a.
  std::size_t first = 0;
  for (std::size_t k = 0; k + 1 < cand.size(); ++k) {
    const double a = cand[k], b = cand[k + 1];
    while (first < n && !(edges[first + 1] + eps > a)) ++first;
    double best = 0.0;
    for (std::size_t j = first; j < n && edges[j] - eps < b; ++j) best = std::max(best, density[j]);
    out.density[k] = best;
  }
  return out;
}

/// Dilate an s-space histogram: weights -> density, max-filter by eps,
/// back to weights, renormalized to sum to one. In s the support may grow
/// past the histogram's own extent up to [0, 1]; a surface in the last
/// interval of a stage must still end up inside the next stage's range.
inline WeightHistogram dilate(const WeightHistogram& h, double eps) {
  validate(h);
  if (!(eps >= 0.0)) throw std::invalid_argument("dilate: eps must be non-negative");
  std::vector<double> density(h.size());
  for (std::size_t i = 0; i < h.size(); ++i) density[i] = h.width(i) > 0.0 ? h.weights[i] / h.width(i) : 0.0;
  const bool in_s = h.domain == Domain::s;
  const double lo = in_s ? std::min(0.0, h.edges.front()) : h.edges.front();
  const double hi = in_s ? std::max(1.0, h.edges.back()) : h.edges.back();
  StepDensity d = dilate_density(h.edges, density, eps, lo, hi);
  WeightHistogram out;
  out.domain = h.domain;
  out.edges = std::move(d.edges);
  out.weights.resize(d.density.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < out.weights.size(); ++i) {
    out.weights[i] = d.density[i] * (out.edges[i + 1] - out.edges[i]);
    sum += out.weights[i];
  }
  if (sum > 0.0)
    for (double& w : out.weights) w /= sum;
  return out;
}

// ---------------------------------------------------------------------------
// Resampling
// ---------------------------------------------------------------------------

enum class SamplingMode { stratified, deterministic };

/// Adds `floor` to every bin and renormalizes, so an all-zero histogram stays
/// sampleable. floor == 0 leaves the weights untouched.
inline std::vector<double> floored_weights(std::span<const double> weights, double floor) {
  std::vector<double> w(weights.begin(), weights.end());
  if (floor <= 0.0) return w;
  double sum = 0.0;
  for (double& v : w) sum += (v += floor);
  for (double& v : w) v /= sum;
  return w;
}

/// Sorted draws from the piecewise-uniform density of (edges, weights):
/// quantiles (k + 0.5) / n in deterministic mode, (k + U_k) / n otherwise.
template <class Rng>
std::vector<double> sample_quantiles(const WeightHistogram& h, int n, SamplingMode mode, Rng& rng,
                                     double floor = 1e-5) {
  validate(h);
  if (n < 1) throw std::invalid_argument("resample: need at least one sample");
  const std::vector<double> w = floored_weights(h.weights, floor);
  std::vector<double> cdf(w.size() + 1, 0.0);
  for (std::size_t i = 0; i < w.size(); ++i) cdf[i + 1] = cdf[i] + w[i];
  const double total = cdf.back();
  if (!(total > 0.0)) throw std::invalid_argument("resample: histogram has no mass");

  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<double> out(static_cast<std::size_t>(n));
  std::size_t bin = 0;
  for (int k = 0; k < n; ++k) {
    const double jitter = mode == SamplingMode::deterministic ? 0.5 : unit(rng);
    const double u = std::min((k + jitter) / n, std::nextafter(1.0, 0.0)) * total;
    while (bin + 1 < w.size() && (cdf[bin + 1] <= u || w[bin] == 0.0)) ++bin;
    const double frac = w[bin] > 0.0 ? std::clamp((u - cdf[bin]) / w[bin], 0.0, 1.0) : 0.5;
    out[static_cast<std::size_t>(k)] = h.edges[bin] + frac * h.width(bin);
  }
  return out;
}

/// New interval edges from n sorted draws: midpoints of adjacent draws, with
/// the first and last draws reflected about their neighbouring midpoint and
/// clipped to the histogram's extent. Returns n + 1 edges.
template <class Rng>
std::vector<double> resample(const WeightHistogram& h, int n_out, SamplingMode mode, Rng& rng, double floor = 1e-5) {
  const std::vector<double> x = sample_quantiles(h, n_out, mode, rng, floor);
  const double lo = h.edges.front(), hi = h.edges.back();
  std::vector<double> edges(static_cast<std::size_t>(n_out) + 1);
  if (n_out == 1) {
    edges[0] = lo;
    edges[1] = hi;
    return edges;
  }
  for (int i = 1; i < n_out; ++i) edges[static_cast<std::size_t>(i)] = 0.5 * (x[i - 1] + x[i]);
  edges.front() = std::max(lo, 2.0 * x.front() - edges[1]);
  edges.back() = std::min(hi, 2.0 * x.back() - edges[static_cast<std::size_t>(n_out) - 1]);
  return edges;
}

/// Edges of the initial, uniform-in-s stage.
template <class Rng>
std::vector<double> initial_edges(int n, SamplingMode mode, Rng& rng) {
  WeightHistogram unit;
  unit.edges = {0.0, 1.0};
  unit.weights = {1.0};
  return resample(unit, n, mode, rng, 0.0);
}

// ---------------------------------------------------------------------------
// Debug text format: see docs/FORMATS.md
// ---------------------------------------------------------------------------

inline void write_histogram(std::ostream& os, const WeightHistogram& h) {
  os << std::setprecision(17) << "edges " << (h.domain == Domain::s ? 's' : 't');
  for (double e : h.edges) os << ' ' << e;
  os << "\nweights";
  for (double w : h.weights) os << ' ' << w;
  os << '\n';
}

inline WeightHistogram read_histogram(std::istream& is) {
  WeightHistogram h;
  std::string line, tag, domain;
  if (!std::getline(is, line)) throw std::runtime_error("histogram: missing edges line");
  {
    std::istringstream ls(line);
    ls >> tag >> domain;
    if (tag != "edges" || (domain != "s" && domain != "t")) throw std::runtime_error("histogram: bad edges line");
    h.domain = domain == "s" ? Domain::s : Domain::t;
    for (double v; ls >> v;) h.edges.push_back(v);
  }
  if (!std::getline(is, line)) throw std::runtime_error("histogram: missing weights line");
  {
    std::istringstream ls(line);
    ls >> tag;
    if (tag != "weights") throw std::runtime_error("histogram: bad weights line");
    for (double v; ls >> v;) h.weights.push_back(v);
  }
  validate(h);
  return h;
}

}  // namespace unerf
