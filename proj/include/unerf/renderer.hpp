#pragma once

// Hierarchical rendering of ray batches: proposal stages that resample the
// ray intervals, followed by one NeRF stage that is composited.

#include "unerf/config.hpp"
#include "unerf/encoding.hpp"
#include "unerf/histogram.hpp"
#include "unerf/network.hpp"

#include <algorithm>
#include <concepts>
#include <random>
#include <span>
#include <stdexcept>
#include <vector>

namespace unerf {

enum class RenderMode { train, eval };

inline const Rgb kEvalBackground(0.5, 0.5, 0.5);

/// Everything that turns a ray interval into network inputs.
struct Featurizer {
  EncodingBasis basis;
  int proposal_levels = 8;
  int position_levels = 8;
  int dir_levels = 4;
  double input_scale = 1.0;

  static Featurizer from_config(const TrainConfig& c) {
    Featurizer f;
    f.basis = c.off_axis ? off_axis_basis() : axis_aligned_basis();
    f.proposal_levels = c.proposal_levels;
    f.position_levels = c.position_levels;
    f.dir_levels = c.dir_levels;
    f.input_scale = c.input_scale;
    return f;
  }

  int proposal_width() const { return ipe_width(basis, proposal_levels); }
  int nerf_width() const { return ipe_width(basis, position_levels); }
  int dir_width() const { return unerf::dir_width(dir_levels); }

  /// Frustum Gaussian, pushed through the contraction and scaled.
  GaussianSegment contracted_segment(const Ray& ray, double t0, double t1) const {
    GaussianSegment g = warp_gaussian(detail::frustum_moments(ray, t0, t1), ContractMap{});
    g.mean *= input_scale;
    g.cov *= input_scale * input_scale;
    return g;
  }
};

template <class T>
struct Model {
  Featurizer features;
  ProposalNetwork<T> proposal;
  NerfNetwork<T> nerf;
};

inline MlpSpec proposal_spec(const TrainConfig& c, const Featurizer& f) {
  MlpSpec s;
  s.input_dim = f.proposal_width();
  s.depth = c.proposal_depth;
  s.width = c.proposal_width;
  s.density_bias = c.density_bias;
  return s;
}

inline MlpSpec nerf_spec(const TrainConfig& c, const Featurizer& f) {
  MlpSpec s;
  s.input_dim = f.nerf_width();
  s.depth = c.nerf_depth;
  s.width = c.nerf_width;
  const int skip = c.nerf_skip < 0 ? c.nerf_depth / 2 : c.nerf_skip;
  if (skip > 0) s.skip_layers = {skip};
  s.has_color_head = true;
  s.dir_dim = f.dir_width();
  s.bottleneck_width = c.bottleneck_width;
  s.color_width = c.color_width;
  s.density_bias = c.density_bias;
  return s;
}

/// Builds both networks and initializes them from `seed`.
template <class T>
Model<T> make_model(const TrainConfig& c, std::uint64_t seed) {
  const Featurizer f = Featurizer::from_config(c);
  Model<T> m{f, ProposalNetwork<T>(proposal_spec(c, f)), NerfNetwork<T>(nerf_spec(c, f))};
  std::mt19937_64 rng(seed);
  init_params(m.proposal, rng);
  init_params(m.nerf, rng);
  return m;
}

/// One stage for every ray of a batch. Per-ray arrays are concatenated:
/// ray r owns entries [r * n, (r + 1) * n) of the interval arrays and
/// [r * (n + 1), (r + 1) * (n + 1)) of the edge arrays.
template <class T>
struct StageBatch {
  int samples = 0;
  std::vector<double> s_edges;
  std::vector<double> t_edges;
  std::vector<double> tau;
  std::vector<double> weights;
  typename Mlp<T>::Tape tape;

  std::span<const double> ray_s_edges(std::size_t r) const {
    return {s_edges.data() + r * (samples + 1), static_cast<std::size_t>(samples) + 1};
  }
  std::span<const double> ray_t_edges(std::size_t r) const {
    return {t_edges.data() + r * (samples + 1), static_cast<std::size_t>(samples) + 1};
  }
  std::span<const double> ray_tau(std::size_t r) const {
    return {tau.data() + r * samples, static_cast<std::size_t>(samples)};
  }
  std::span<const double> ray_weights(std::size_t r) const {
    return {weights.data() + r * samples, static_cast<std::size_t>(samples)};
  }

  WeightHistogram histogram(std::size_t r, Domain domain) const {
    WeightHistogram h;
    const auto e = domain == Domain::s ? ray_s_edges(r) : ray_t_edges(r);
    const auto w = ray_weights(r);
    h.edges.assign(e.begin(), e.end());
    h.weights.assign(w.begin(), w.end());
    h.domain = domain;
    return h;
  }
};

/// A rendered batch plus everything needed for the losses and backward pass.
template <class T>
struct BatchTrace {
  std::vector<Ray> rays;
  std::vector<Rgb> backgrounds;
  std::vector<StageBatch<T>> stages;  // proposal stages, then the NeRF stage
  std::vector<Rgb> rgb;
  std::vector<double> depth;

  const StageBatch<T>& final_stage() const { return stages.back(); }
  std::size_t size() const { return rays.size(); }

  Rgb sample_color(std::size_t r, int i) const {
    const auto& rgb_mat = final_stage().tape.rgb;
    const Eigen::Index col = static_cast<Eigen::Index>(r) * final_stage().samples + i;
    return rgb_mat.col(col).template cast<double>();
  }
};

struct RenderSettings {
  RenderMode mode = RenderMode::eval;
  long step = 0;          // current training step, for annealing
  long total_steps = 1;
};

namespace detail {

template <class T>
void fill_stage_features(const Featurizer& f, const std::vector<Ray>& rays, StageBatch<T>& st, int levels,
                         Matrix<T>& feats) {
  const int n = st.samples;
  std::vector<GaussianSegment> segs;
  segs.reserve(rays.size() * static_cast<std::size_t>(n));
  for (std::size_t r = 0; r < rays.size(); ++r) {
    const auto t = st.ray_t_edges(r);
    for (int i = 0; i < n; ++i) segs.push_back(f.contracted_segment(rays[r], t[i], t[i + 1]));
  }
  ipe_features_batch(segs, f.basis, levels, feats);
}

template <class T>
void stage_weights(StageBatch<T>& st, std::size_t ray_count) {
  st.weights.resize(st.tau.size());
  for (std::size_t r = 0; r < ray_count; ++r) {
    const auto w = quadrature_weights(st.ray_tau(r), st.ray_t_edges(r));
    std::copy(w.begin(), w.end(), st.weights.begin() + static_cast<std::ptrdiff_t>(r * st.samples));
  }
}

/// The histogram that is sampled to place the next stage's intervals.
inline WeightHistogram sampling_histogram(WeightHistogram h, int level, const TrainConfig& c,
                                          const RenderSettings& rs) {
  const int n_levels = c.proposal_stages();
  const long step = std::clamp(rs.step, 0L, rs.total_steps);
  auto anneal = [&] { h.weights = anneal_weights(h.weights, step, rs.total_steps, c.anneal_b); };
  auto dilate_step = [&] {
    if (level < 2 && !c.dilate_first_level) return;
    const std::span<const int> counts(c.samples_per_stage.data(), static_cast<std::size_t>(n_levels));
    h = dilate(h, dilation_epsilon(level, counts, c.dilation_a, c.dilation_b));
  };
  if (c.anneal_before_dilate) {
    anneal();
    dilate_step();
  } else {
    dilate_step();
    anneal();
  }
  return h;
}

inline SamplingMode sampling_mode(const RenderSettings& rs) {
  return rs.mode == RenderMode::train ? SamplingMode::stratified : SamplingMode::deterministic;
}

/// s-space edges of stage p of one ray: uniform for the first stage, else
/// resampled from the previous stage's (annealed, dilated) histogram.
template <class Rng>
std::vector<double> stage_s_edges(const WeightHistogram* prev_s, int p, const TrainConfig& c, const RenderSettings& rs,
                                  Rng& rng) {
  const int n = c.samples_per_stage[static_cast<std::size_t>(p)];
  if (!prev_s) return initial_edges(n, sampling_mode(rs), rng);
  return resample(sampling_histogram(*prev_s, p, c, rs), n, sampling_mode(rs), rng, c.weight_floor);
}

template <class T, class Rng>
std::vector<double> stage_s_edges(const StageBatch<T>* prev, std::size_t r, int p, const TrainConfig& c,
                                  const RenderSettings& rs, Rng& rng) {
  const WeightHistogram h = prev->histogram(r, Domain::s);
  return stage_s_edges(&h, p, c, rs, rng);
}

}  // namespace detail

/// Renders a batch of rays. In train mode intervals are jittered and each
/// ray gets a random background; eval mode is deterministic with a gray
/// background. With `replay` set, interval edges and backgrounds are copied
/// from an earlier trace instead of being sampled, so the result is a smooth
/// function of the parameters.
template <class T, class Rng>
BatchTrace<T> render_batch(const Model<T>& model, const std::vector<Ray>& rays, const TrainConfig& c,
                           const RenderSettings& rs, Rng& rng, const BatchTrace<T>* replay = nullptr) {
  const std::size_t R = rays.size();
  const int P = c.proposal_stages();
  if (replay && replay->size() != R) throw std::invalid_argument("render_batch: replay has a different batch size");

  BatchTrace<T> out;
  out.rays = rays;
  out.stages.resize(static_cast<std::size_t>(P) + 1);
  out.backgrounds.resize(R);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (std::size_t r = 0; r < R; ++r) {
    if (replay) {
      out.backgrounds[r] = replay->backgrounds[r];
    } else if (rs.mode == RenderMode::train) {
      const double a = unit(rng), b = unit(rng), d = unit(rng);
      out.backgrounds[r] = Rgb(a, b, d);
    } else {
      out.backgrounds[r] = kEvalBackground;
    }
  }

  for (int p = 0; p <= P; ++p) {
    StageBatch<T>& st = out.stages[static_cast<std::size_t>(p)];
    st.samples = c.samples_per_stage[static_cast<std::size_t>(p)];
    if (replay) {
      const auto& rst = replay->stages.at(static_cast<std::size_t>(p));
      if (rst.samples != st.samples) throw std::invalid_argument("render_batch: replay stage size mismatch");
      st.s_edges = rst.s_edges;
    } else {
      st.s_edges.reserve(R * (st.samples + 1));
      for (std::size_t r = 0; r < R; ++r) {
        const auto e = p == 0 ? detail::stage_s_edges(nullptr, p, c, rs, rng)
                              : detail::stage_s_edges(&out.stages[static_cast<std::size_t>(p) - 1], r, p, c, rs, rng);
        st.s_edges.insert(st.s_edges.end(), e.begin(), e.end());
      }
    }
    st.t_edges.resize(st.s_edges.size());
    for (std::size_t r = 0; r < R; ++r) {
      const std::size_t base = r * (st.samples + 1);
      for (int i = 0; i <= st.samples; ++i)
        st.t_edges[base + i] = s_to_t(std::clamp(st.s_edges[base + i], 0.0, 1.0), rays[r].t_near, rays[r].t_far,
                                      c.distance_curve);
    }

    Matrix<T> feats;
    Matrix<T> density;
    if (p < P) {
      detail::fill_stage_features(model.features, rays, st, model.features.proposal_levels, feats);
      model.proposal.mlp.forward(model.proposal.params, std::move(feats), nullptr, st.tape);
    } else {
      detail::fill_stage_features(model.features, rays, st, model.features.position_levels, feats);
      const int dw = model.features.dir_width();
      Matrix<T> dirs(dw, static_cast<Eigen::Index>(R) * st.samples);
      std::vector<T> d(static_cast<std::size_t>(dw));
      for (std::size_t r = 0; r < R; ++r) {
        dir_features_into(rays[r].direction, model.features.dir_levels, d.data());
        for (int i = 0; i < st.samples; ++i)
          dirs.col(static_cast<Eigen::Index>(r) * st.samples + i) = Eigen::Map<const Eigen::Matrix<T, -1, 1>>(d.data(), dw);
      }
      model.nerf.mlp.forward(model.nerf.params, std::move(feats), &dirs, st.tape);
    }
    st.tau.resize(static_cast<std::size_t>(st.tape.density.cols()));
    for (std::size_t k = 0; k < st.tau.size(); ++k) st.tau[k] = static_cast<double>(st.tape.density(0, static_cast<Eigen::Index>(k)));
    detail::stage_weights(st, R);
  }

  const StageBatch<T>& fin = out.final_stage();
  out.rgb.resize(R);
  out.depth.resize(R);
  std::vector<Rgb> colors(static_cast<std::size_t>(fin.samples));
  for (std::size_t r = 0; r < R; ++r) {
    for (int i = 0; i < fin.samples; ++i) colors[static_cast<std::size_t>(i)] = out.sample_color(r, i);
    out.rgb[r] = composite(fin.ray_weights(r), colors, out.backgrounds[r]);
    out.depth[r] = median_depth(fin.histogram(r, Domain::t));
  }
  return out;
}

/// Color and median depth for many rays, rendered in chunks without keeping
/// the traces.
template <class T>
void render_rays(const Model<T>& model, const std::vector<Ray>& rays, const TrainConfig& c, std::vector<Rgb>& rgb,
                 std::vector<double>& depth, std::size_t chunk = 1024) {
  rgb.resize(rays.size());
  depth.resize(rays.size());
  RenderSettings rs;
  rs.mode = RenderMode::eval;
  rs.step = c.total_steps;
  rs.total_steps = c.total_steps;
  std::mt19937_64 unused(0);
  for (std::size_t begin = 0; begin < rays.size(); begin += chunk) {
    const std::size_t end = std::min(rays.size(), begin + chunk);
    const std::vector<Ray> part(rays.begin() + static_cast<std::ptrdiff_t>(begin),
                                rays.begin() + static_cast<std::ptrdiff_t>(end));
    const BatchTrace<T> trace = render_batch(model, part, c, rs, unused);
    for (std::size_t r = 0; r < part.size(); ++r) {
      rgb[begin + r] = trace.rgb[r];
      depth[begin + r] = trace.depth[r];
    }
  }
}

// ---------------------------------------------------------------------------
// Rendering a known field
// ---------------------------------------------------------------------------

/// A density and color source standing in for both networks: the mean
/// density over a ray interval and the color it emits.
template <class F>
concept RayField = requires(const F& f, const Ray& ray, double t0, double t1) {
  { f.mean_density(ray, t0, t1) } -> std::convertible_to<double>;
  { f.color(ray, t0, t1) } -> std::convertible_to<Rgb>;
};

struct FieldTrace {
  Rgb rgb = Rgb::Zero();
  double depth = 0.0;
  std::vector<WeightHistogram> stages_s;  // every stage, proposal stages first
  std::vector<WeightHistogram> stages_t;
};

/// One ray through the same stage pipeline as render_batch (interval
/// placement, annealing, dilation, resampling, quadrature, compositing and
/// median depth) with `field` evaluated at every stage instead of a network.
/// Separates the sampling machinery from anything learned.
template <RayField F, class Rng>
FieldTrace render_field(const F& field, const Ray& ray, const TrainConfig& c, const RenderSettings& rs, Rng& rng) {
  validate(ray);
  FieldTrace out;
  const int P = c.proposal_stages();
  for (int p = 0; p <= P; ++p) {
    WeightHistogram hs;
    hs.domain = Domain::s;
    hs.edges = detail::stage_s_edges(p == 0 ? nullptr : &out.stages_s.back(), p, c, rs, rng);
    WeightHistogram ht;
    ht.domain = Domain::t;
    for (double e : hs.edges) ht.edges.push_back(s_to_t(std::clamp(e, 0.0, 1.0), ray.t_near, ray.t_far, c.distance_curve));
    std::vector<double> tau(hs.edges.size() - 1);
    for (std::size_t i = 0; i < tau.size(); ++i) tau[i] = field.mean_density(ray, ht.edges[i], ht.edges[i + 1]);
    ht.weights = quadrature_weights(tau, ht.edges);
    hs.weights = ht.weights;
    out.stages_s.push_back(std::move(hs));
    out.stages_t.push_back(std::move(ht));
  }
  const WeightHistogram& fin = out.stages_t.back();
  std::vector<Rgb> colors;
  for (std::size_t i = 0; i < fin.size(); ++i) colors.push_back(field.color(ray, fin.edges[i], fin.edges[i + 1]));
  Rgb bg = kEvalBackground;
  if (rs.mode == RenderMode::train) {
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    const double a = unit(rng), b = unit(rng), d = unit(rng);
    bg = Rgb(a, b, d);
  }
  out.rgb = composite(fin, colors, bg);
  out.depth = median_depth(fin);
  return out;
}

}  // namespace unerf
