#pragma once

// Finite-difference oracle for the full training loss: encoding, both MLPs,
// quadrature, compositing, distortion and proposal losses. Shared by the
// unit tests and the acceptance binary.

#include "unerf/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>
#include <string>
#include <vector>

namespace unerf::testing {

inline TrainConfig gradcheck_config() {
  TrainConfig c;
  c.samples_per_stage = {8, 8, 8};
  c.proposal_levels = 2;
  c.position_levels = 2;
  c.dir_levels = 1;
  c.proposal_depth = 2;
  c.proposal_width = 16;
  c.nerf_depth = 3;
  c.nerf_width = 16;
  c.bottleneck_width = 16;
  c.color_width = 16;
  c.total_steps = 100;
  c.t_near = 0.2;
  c.t_far = 20.0;
  return c;
}

struct GradProblem {
  std::vector<Ray> rays;
  std::vector<Rgb> gt;
};

inline GradProblem gradcheck_problem(std::mt19937_64& rng, int ray_count, const TrainConfig& c) {
  std::normal_distribution<double> n(0.0, 1.0);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  GradProblem p;
  for (int k = 0; k < ray_count; ++k) {
    Ray r;
    r.origin = Vec3(n(rng), n(rng), n(rng)) * 0.3 + Vec3(0, 0, 1.5);
    r.direction = (Vec3(n(rng), n(rng), n(rng)) * 0.2 - r.origin).normalized();
    r.base_radius = 0.01;
    r.t_near = c.t_near;
    r.t_far = c.t_far;
    p.rays.push_back(r);
    p.gt.push_back(Rgb(u(rng), u(rng), u(rng)));
  }
  return p;
}

/// Which side of every kink the loss sits on: ReLU activations of every
/// stage and the sign of every proposal-loss surplus.
template <class T>
std::vector<bool> kink_pattern(const BatchTrace<T>& trace) {
  std::vector<bool> out;
  for (const auto& st : trace.stages) {
    for (const auto& h : st.tape.hidden)
      for (Eigen::Index i = 0; i < h.size(); ++i) out.push_back(h.data()[i] > T(0));
    for (Eigen::Index i = 0; i < st.tape.color_hidden.size(); ++i) out.push_back(st.tape.color_hidden.data()[i] > T(0));
  }
  const auto& fin = trace.final_stage();
  for (std::size_t r = 0; r < trace.size(); ++r) {
    const WeightHistogram target = fin.histogram(r, Domain::s);
    for (std::size_t p = 0; p + 1 < trace.stages.size(); ++p) {
      const WeightHistogram prop = trace.stages[p].histogram(r, Domain::s);
      for (std::size_t i = 0; i < target.size(); ++i)
        out.push_back(target.weights[i] > bound(prop, target.edges[i], target.edges[i + 1]));
    }
  }
  return out;
}

struct GradCheckReport {
  bool probe_found = false;   // a probe whose perturbations cross no kink
  int attempts = 0;
  std::size_t checked = 0;
  std::size_t failed = 0;
  double worst_excess = 0.0;  // max of |g - fd| / (rel_tol |fd|) over entries above the floor
  std::string worst;
  double max_abs_error = 0.0;
  double max_abs_grad = 0.0;
};

/// Compares d(total loss)/d(parameter) against central differences for
/// every parameter of both networks, with the proposal-loss target held
/// fixed. Interval edges and backgrounds are
/// replayed from one training-mode render, so the loss is a smooth function
/// of the parameters away from kinks. Probes whose perturbations cross a
/// kink are discarded and redrawn.
inline GradCheckReport check_full_gradient(const TrainConfig& c, std::uint64_t seed, int ray_count = 4,
                                           double h = 1e-6, double rel_tol = 1e-4, double abs_floor = 1e-8,
                                           int max_attempts = 20) {
  GradCheckReport rep;
  std::mt19937_64 rng(seed);
  for (rep.attempts = 1; rep.attempts <= max_attempts; ++rep.attempts) {
    Model<double> model = make_model<double>(c, rng());
    const GradProblem prob = gradcheck_problem(rng, ray_count, c);
    RenderSettings rs;
    rs.mode = RenderMode::train;
    rs.step = c.total_steps / 2;
    rs.total_steps = c.total_steps;
    const BatchTrace<double> base = render_batch(model, prob.rays, c, rs, rng);
    const std::vector<bool> base_pattern = kink_pattern(base);

    // The proposal loss treats the NeRF histogram as a constant target, so
    // NeRF parameters are differenced against the loss without it.
    TrainConfig no_prop = c;
    no_prop.use_proposal_loss = false;
    auto loss_at = [&](bool nerf_param, bool& smooth) {
      std::mt19937_64 unused(0);
      const BatchTrace<double> t = render_batch(model, prob.rays, c, rs, unused, &base);
      smooth = smooth && kink_pattern(t) == base_pattern;
      return batch_loss(t, prob.gt, nerf_param ? no_prop : c).total;
    };

    std::vector<double> fd;
    bool smooth = true;
    for (auto* store : {&model.proposal.params, &model.nerf.params}) {
      auto& v = store->values();
      const bool nerf_param = store == &model.nerf.params;
      for (std::size_t i = 0; i < v.size() && smooth; ++i) {
        const double keep = v[i];
        v[i] = keep + h;
        const double plus = loss_at(nerf_param, smooth);
        v[i] = keep - h;
        const double minus = loss_at(nerf_param, smooth);
        v[i] = keep;
        fd.push_back((plus - minus) / (2 * h));
      }
    }
    if (!smooth) continue;

    model.proposal.params.zero_grad();
    model.nerf.params.zero_grad();
    batch_loss(base, prob.gt, c, &model);
    rep.probe_found = true;
    std::size_t k = 0;
    for (const auto* store : {&model.proposal.params, &model.nerf.params}) {
      for (std::size_t i = 0; i < store->size(); ++i, ++k) {
        const double g = store->grads()[i], d = fd[k];
        const double err = std::abs(g - d);
        ++rep.checked;
        rep.max_abs_error = std::max(rep.max_abs_error, err);
        rep.max_abs_grad = std::max(rep.max_abs_grad, std::abs(g));
        if (err <= abs_floor) continue;
        const double excess = err / (rel_tol * std::abs(d));
        if (excess > 1.0) ++rep.failed;
        if (excess > rep.worst_excess) {
          rep.worst_excess = excess;
          std::ostringstream os;
          os << (store == &model.proposal.params ? "proposal" : "nerf") << "[" << i << "] analytic " << g << " fd " << d;
          rep.worst = os.str();
        }
      }
    }
    return rep;
  }
  return rep;
}

/// NeRF gradients with and without the proposal loss, from one render.
struct StopGradientReport {
  bool nerf_identical = false;      // proposal loss adds exactly nothing to the NeRF gradient
  bool proposal_nonzero = false;    // ... while it does reach the proposal network
  bool proposal_zero_without = false;
};

inline StopGradientReport check_stop_gradient(const TrainConfig& base_config, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  TrainConfig c = base_config;
  Model<double> model = make_model<double>(c, rng());
  const GradProblem prob = gradcheck_problem(rng, 4, c);
  RenderSettings rs;
  rs.mode = RenderMode::train;
  rs.total_steps = c.total_steps;
  const BatchTrace<double> trace = render_batch(model, prob.rays, c, rs, rng);

  StopGradientReport rep;
  c.use_proposal_loss = true;
  batch_loss(trace, prob.gt, c, &model);
  const auto nerf_with = model.nerf.params.grads();
  rep.proposal_nonzero = false;
  for (double g : model.proposal.params.grads()) rep.proposal_nonzero = rep.proposal_nonzero || g != 0.0;

  model.proposal.params.zero_grad();
  model.nerf.params.zero_grad();
  c.use_proposal_loss = false;
  batch_loss(trace, prob.gt, c, &model);
  rep.nerf_identical = model.nerf.params.grads() == nerf_with;
  rep.proposal_zero_without = true;
  for (double g : model.proposal.params.grads()) rep.proposal_zero_without = rep.proposal_zero_without && g == 0.0;
  return rep;
}

}  // namespace unerf::testing
