#pragma once

// Losses, gradients, the optimizer and the training loop.

#include "unerf/interval_losses.hpp"
#include "unerf/renderer.hpp"

#include "json.hpp"

#include <cmath>
#include <limits>
#include <ostream>
#include <random>
#include <sstream>
#include <stdexcept>
#include <vector>

namespace unerf {

inline double charbonnier(double residual, double eps) { return std::sqrt(residual * residual + eps * eps); }

struct LossBreakdown {
  double total = 0.0;
  double recon = 0.0;              // mean over rays, summed over channels
  double distortion = 0.0;         // mean over rays (unweighted)
  std::vector<double> proposal;    // per proposal stage, mean over rays
  double mse = 0.0;                // of the batch colors, for logging
};

/// Loss of a rendered batch. When `grads` is non-null, dL/dparams is
/// accumulated into both of its parameter stores. The NeRF histogram enters
/// the proposal loss as a constant, so that loss only reaches the proposal
/// network.
template <class T>
LossBreakdown batch_loss(const BatchTrace<T>& trace, const std::vector<Rgb>& gt, const TrainConfig& c,
                         Model<T>* grads = nullptr) {
  const std::size_t R = trace.size();
  if (gt.size() != R) throw std::invalid_argument("total_loss: batch has " + std::to_string(R) + " renders but " +
                                                  std::to_string(gt.size()) + " targets");
  if (R == 0) throw std::invalid_argument("total_loss: empty batch");
  const int P = c.proposal_stages();
  const double inv_r = 1.0 / static_cast<double>(R);
  const StageBatch<T>& fin = trace.final_stage();
  const int n = fin.samples;

  LossBreakdown out;
  out.proposal.assign(static_cast<std::size_t>(P), 0.0);

  Matrix<T> grad_density_final, grad_rgb_final;
  std::vector<Matrix<T>> grad_density_prop;
  if (grads) {
    grad_density_final = Matrix<T>::Zero(1, static_cast<Eigen::Index>(R) * n);
    grad_rgb_final = Matrix<T>::Zero(3, static_cast<Eigen::Index>(R) * n);
    for (int p = 0; p < P; ++p)
      grad_density_prop.push_back(
          Matrix<T>::Zero(1, static_cast<Eigen::Index>(R) * trace.stages[static_cast<std::size_t>(p)].samples));
  }

  std::vector<double> grad_w(static_cast<std::size_t>(n));
  for (std::size_t r = 0; r < R; ++r) {
    const auto w = fin.ray_weights(r);
    const Rgb resid = trace.rgb[r] - gt[r];
    Rgb g_rgb;
    for (int ch = 0; ch < 3; ++ch) {
      const double ch_loss = charbonnier(resid(ch), c.charbonnier_eps);
      out.recon += ch_loss * inv_r;
      g_rgb(ch) = c.recon_weight * inv_r * resid(ch) / ch_loss;
      out.mse += resid(ch) * resid(ch) * inv_r / 3.0;
    }
    const WeightHistogram final_s = fin.histogram(r, Domain::s);
    const DistortionLoss dist = distortion_loss(final_s);
    out.distortion += dist.value * inv_r;

    if (grads) {
      for (int i = 0; i < n; ++i) {
        const Rgb col = trace.sample_color(r, i);
        grad_w[static_cast<std::size_t>(i)] =
            g_rgb.dot(col - trace.backgrounds[r]) + c.lambda_dist * inv_r * dist.grad_weights[static_cast<std::size_t>(i)];
        grad_rgb_final.col(static_cast<Eigen::Index>(r) * n + i) = (w[static_cast<std::size_t>(i)] * g_rgb).template cast<T>();
      }
      const auto g_tau = quadrature_weights_backward(fin.ray_tau(r), fin.ray_t_edges(r), w, grad_w);
      for (int i = 0; i < n; ++i)
        grad_density_final(0, static_cast<Eigen::Index>(r) * n + i) = static_cast<T>(g_tau[static_cast<std::size_t>(i)]);
    }

    for (int p = 0; p < P; ++p) {
      const StageBatch<T>& st = trace.stages[static_cast<std::size_t>(p)];
      const ProposalLoss pl = proposal_loss(final_s, st.histogram(r, Domain::s));
      out.proposal[static_cast<std::size_t>(p)] += pl.value * inv_r;
      if (grads && c.use_proposal_loss) {
        std::vector<double> g(pl.grad_proposal.size());
        for (std::size_t j = 0; j < g.size(); ++j) g[j] = pl.grad_proposal[j] * inv_r;
        const auto g_tau = quadrature_weights_backward(st.ray_tau(r), st.ray_t_edges(r), st.ray_weights(r), g);
        for (int j = 0; j < st.samples; ++j)
          grad_density_prop[static_cast<std::size_t>(p)](0, static_cast<Eigen::Index>(r) * st.samples + j) =
              static_cast<T>(g_tau[static_cast<std::size_t>(j)]);
      }
    }
  }

  out.total = c.recon_weight * out.recon + c.lambda_dist * out.distortion;
  if (c.use_proposal_loss)
    for (double v : out.proposal) out.total += v;

  if (grads) {
    grads->nerf.mlp.backward(grads->nerf.params, fin.tape, grad_density_final, &grad_rgb_final);
    if (c.use_proposal_loss)
      for (int p = 0; p < P; ++p)
        grads->proposal.mlp.backward(grads->proposal.params, trace.stages[static_cast<std::size_t>(p)].tape,
                                     grad_density_prop[static_cast<std::size_t>(p)], nullptr);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Optimization
// ---------------------------------------------------------------------------

/// Log-linear decay from lr_init to lr_final, times a linear warmup ramp
/// from warmup_start to 1 over the first warmup_steps steps.
inline double lr_schedule(long step, const TrainConfig& c) {
  const double x = std::clamp(static_cast<double>(step) / c.total_steps, 0.0, 1.0);
  const double lr = std::exp((1.0 - x) * std::log(c.lr_init) + x * std::log(c.lr_final));
  if (c.warmup_steps <= 0 || step >= c.warmup_steps) return lr;
  const double ramp = c.warmup_start + (1.0 - c.warmup_start) * static_cast<double>(step) / c.warmup_steps;
  return lr * ramp;
}

/// Global L2 norm over several gradient arrays.
template <class T>
double global_grad_norm(std::initializer_list<const ParamStore<T>*> stores) {
  double sq = 0.0;
  for (const auto* s : stores)
    for (T g : s->grads()) sq += static_cast<double>(g) * static_cast<double>(g);
  return std::sqrt(sq);
}

/// Rescales all gradients jointly so their global norm is at most
/// `max_norm`. Returns the norm before clipping.
template <class T>
double clip_grad_norm(std::initializer_list<ParamStore<T>*> stores, double max_norm) {
  double sq = 0.0;
  for (const auto* s : stores)
    for (T g : s->grads()) sq += static_cast<double>(g) * static_cast<double>(g);
  const double norm = std::sqrt(sq);
  if (norm > max_norm) {
    const double scale = max_norm / norm;
    for (auto* s : stores)
      for (T& g : s->grads()) g = static_cast<T>(g * scale);
  }
  return norm;
}

template <class T>
struct AdamMoments {
  std::vector<T> m;
  std::vector<T> v;

  explicit AdamMoments(std::size_t n = 0) : m(n, T(0)), v(n, T(0)) {}
};

/// One bias-corrected Adam update; `t` is the 1-based update count.
template <class T>
void adam_update(ParamStore<T>& store, AdamMoments<T>& mom, long t, double lr, const TrainConfig& c) {
  auto& p = store.values();
  const auto& g = store.grads();
  const double bc1 = 1.0 - std::pow(c.adam_beta1, static_cast<double>(t));
  const double bc2 = 1.0 - std::pow(c.adam_beta2, static_cast<double>(t));
  const T b1 = static_cast<T>(c.adam_beta1), b2 = static_cast<T>(c.adam_beta2);
  for (std::size_t i = 0; i < p.size(); ++i) {
    mom.m[i] = b1 * mom.m[i] + (T(1) - b1) * g[i];
    mom.v[i] = b2 * mom.v[i] + (T(1) - b2) * g[i] * g[i];
    const double mhat = static_cast<double>(mom.m[i]) / bc1;
    const double vhat = static_cast<double>(mom.v[i]) / bc2;
    p[i] = static_cast<T>(static_cast<double>(p[i]) - lr * mhat / (std::sqrt(vhat) + c.adam_eps));
  }
}

template <class T>
struct TrainState {
  Model<T> model;
  AdamMoments<T> proposal_moments;
  AdamMoments<T> nerf_moments;
  long step = 0;
  std::mt19937_64 rng;

  TrainState(Model<T> m, std::uint64_t seed)
      : model(std::move(m)),
        proposal_moments(model.proposal.params.size()),
        nerf_moments(model.nerf.params.size()),
        rng(seed) {}
};

template <class T>
TrainState<T> make_train_state(const TrainConfig& c) {
  return TrainState<T>(make_model<T>(c, c.seed), c.seed ^ 0x9e3779b97f4a7c15ULL);
}

struct NonFiniteLoss : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct StepResult {
  LossBreakdown loss;
  double lr = 0.0;
  double grad_norm = 0.0;  // before clipping
};

/// Forward, loss, backward, clip, Adam. Throws NonFiniteLoss (leaving the
/// parameters untouched) if the loss or gradient is not finite.
template <class T>
StepResult train_step(TrainState<T>& state, const std::vector<Ray>& rays, const std::vector<Rgb>& gt,
                      const TrainConfig& c) {
  RenderSettings rs;
  rs.mode = RenderMode::train;
  rs.step = state.step;
  rs.total_steps = c.total_steps;
  const BatchTrace<T> trace = render_batch(state.model, rays, c, rs, state.rng);

  state.model.proposal.params.zero_grad();
  state.model.nerf.params.zero_grad();
  StepResult res;
  res.loss = batch_loss(trace, gt, c, &state.model);
  res.grad_norm = clip_grad_norm<T>({&state.model.proposal.params, &state.model.nerf.params}, c.grad_clip_norm);
  if (!std::isfinite(res.loss.total) || !std::isfinite(res.grad_norm)) {
    std::ostringstream msg;
    msg << "non-finite loss at step " << state.step << ": total=" << res.loss.total << " recon=" << res.loss.recon
        << " dist=" << res.loss.distortion << " grad_norm=" << res.grad_norm;
    for (std::size_t k = 0; k < res.loss.proposal.size(); ++k) msg << " prop" << k << "=" << res.loss.proposal[k];
    throw NonFiniteLoss(msg.str());
  }
  res.lr = lr_schedule(state.step, c);
  ++state.step;
  adam_update(state.model.proposal.params, state.proposal_moments, state.step, res.lr, c);
  adam_update(state.model.nerf.params, state.nerf_moments, state.step, res.lr, c);
  return res;
}

// ---------------------------------------------------------------------------
// Data, evaluation and the training loop
// ---------------------------------------------------------------------------

/// Rays with their target colors.
struct RaySet {
  std::vector<Ray> rays;
  std::vector<Rgb> colors;

  std::size_t size() const { return rays.size(); }
};

/// Uniform draw with replacement.
template <class Rng>
void sample_batch(const RaySet& data, int batch, Rng& rng, std::vector<Ray>& rays, std::vector<Rgb>& gt) {
  std::uniform_int_distribution<std::size_t> pick(0, data.size() - 1);
  rays.resize(static_cast<std::size_t>(batch));
  gt.resize(static_cast<std::size_t>(batch));
  for (int b = 0; b < batch; ++b) {
    const std::size_t k = pick(rng);
    rays[static_cast<std::size_t>(b)] = data.rays[k];
    gt[static_cast<std::size_t>(b)] = data.colors[k];
  }
}

inline double psnr_from_mse(double mse) {
  if (mse <= 0.0) return std::numeric_limits<double>::infinity();
  return -10.0 * std::log10(mse);
}

struct EvalMetrics {
  double mse = 0.0;
  double psnr = 0.0;
  double mean_distortion = 0.0;  // of the final s-space histograms
};

inline EvalMetrics image_metrics(const std::vector<Rgb>& rendered, const std::vector<Rgb>& gt) {
  if (rendered.size() != gt.size() || gt.empty()) throw std::invalid_argument("evaluate: size mismatch");
  double sq = 0.0;
  for (std::size_t i = 0; i < gt.size(); ++i) sq += (rendered[i] - gt[i]).squaredNorm();
  EvalMetrics m;
  m.mse = sq / (3.0 * static_cast<double>(gt.size()));
  m.psnr = psnr_from_mse(m.mse);
  return m;
}

/// Eval-mode render of every ray: even sample spacing, gray background.
template <class T>
EvalMetrics evaluate(const Model<T>& model, const RaySet& data, const TrainConfig& c, std::size_t chunk = 1024) {
  RenderSettings rs;
  rs.mode = RenderMode::eval;
  rs.step = c.total_steps;
  rs.total_steps = c.total_steps;
  std::mt19937_64 unused(0);
  std::vector<Rgb> rendered;
  rendered.reserve(data.size());
  double dist = 0.0;
  for (std::size_t begin = 0; begin < data.size(); begin += chunk) {
    const std::size_t end = std::min(data.size(), begin + chunk);
    const std::vector<Ray> part(data.rays.begin() + static_cast<std::ptrdiff_t>(begin),
                                data.rays.begin() + static_cast<std::ptrdiff_t>(end));
    const BatchTrace<T> trace = render_batch(model, part, c, rs, unused);
    for (std::size_t r = 0; r < part.size(); ++r) {
      rendered.push_back(trace.rgb[r]);
      dist += distortion_loss(trace.final_stage().histogram(r, Domain::s)).value;
    }
  }
  EvalMetrics m = image_metrics(rendered, data.colors);
  m.mean_distortion = dist / static_cast<double>(data.size());
  return m;
}

/// Predicts the mean training color everywhere.
inline EvalMetrics constant_color_baseline(const RaySet& train, const RaySet& test) {
  Rgb mean = Rgb::Zero();
  for (const Rgb& c : train.colors) mean += c;
  mean /= static_cast<double>(train.size());
  return image_metrics(std::vector<Rgb>(test.size(), mean), test.colors);
}

inline nlohmann::json metrics_record(long step, const StepResult& r) {
  nlohmann::json j;
  j["step"] = step;
  j["loss"] = r.loss.total;
  j["recon"] = r.loss.recon;
  j["dist"] = r.loss.distortion;
  j["prop"] = r.loss.proposal;
  j["lr"] = r.lr;
  j["grad_norm"] = r.grad_norm;
  j["psnr"] = psnr_from_mse(r.loss.mse);
  return j;
}

/// Runs train_step until config.total_steps, writing one JSON line per
/// log_every steps (and the last step) to `log`.
template <class T>
void fit(TrainState<T>& state, const RaySet& train, const TrainConfig& c, std::ostream* log = nullptr) {
  validate(c);
  std::vector<Ray> rays;
  std::vector<Rgb> gt;
  while (state.step < c.total_steps) {
    sample_batch(train, c.batch_rays, state.rng, rays, gt);
    const StepResult r = train_step(state, rays, gt, c);
    if (log && (state.step % c.log_every == 0 || state.step == c.total_steps))
      *log << metrics_record(state.step, r).dump() << '\n';
  }
}

}  // namespace unerf
