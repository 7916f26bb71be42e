#pragma once

// Quick self-checks behind `unerf check`: each compares a library routine
// against a brute-force recomputation on random inputs. They take about a
// second in total; the test suite holds the thorough versions.

#include "unerf/interval_losses.hpp"
#include "unerf/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

namespace unerf {

struct CheckResult {
  std::string name;
  bool passed = false;
  std::string detail;
};

namespace verify {

inline CheckResult make(std::string name, bool ok, double measured, double limit) {
  std::ostringstream os;
  os << std::setprecision(3) << "error " << measured << " (limit " << limit << ")";
  return {std::move(name), ok, os.str()};
}

inline WeightHistogram random_histogram(std::mt19937_64& rng, int n, double total) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  WeightHistogram h;
  h.edges = {0.0, 1.0};
  for (int i = 0; i < n - 1; ++i) h.edges.push_back(u(rng));
  std::sort(h.edges.begin(), h.edges.end());
  double sum = 0.0;
  for (int i = 0; i < n; ++i) sum += h.weights.emplace_back(u(rng) * u(rng));
  for (double& w : h.weights) w *= total / sum;
  return h;
}

inline std::vector<CheckResult> geometry() {
  std::vector<CheckResult> out;
  const double e = std::max({std::abs(s_to_t(0.0, 1, 10) - 1.0), std::abs(s_to_t(1.0, 1, 10) - 10.0),
                             std::abs(s_to_t(0.5, 1, 10) - 1.0 / 0.55)});
  out.push_back(make("geometry.normalized_distance", e <= 1e-12, e, 1e-12));

  const double c = std::max((contract(Vec3(0.5, 0, 0)) - Vec3(0.5, 0, 0)).norm(),
                            (contract(Vec3(2, 0, 0)) - Vec3(1.5, 0, 0)).norm());
  out.push_back(make("geometry.contract_examples", c <= 1e-15, c, 1e-15));

  std::mt19937_64 rng(1);
  std::normal_distribution<double> n(0.0, 1.0);
  double worst = 0.0;
  for (int k = 0; k < 200; ++k) {
    Vec3 x(n(rng), n(rng), n(rng));
    x *= (1.001 + 3.0 * std::abs(n(rng))) / x.norm();
    const Mat3 j = contract_jacobian(x);
    for (int a = 0; a < 3; ++a) {
      const double h = 1e-6;
      const Vec3 fd = (contract(x + h * Vec3::Unit(a)) - contract(x - h * Vec3::Unit(a))) / (2 * h);
      worst = std::max(worst, (fd - j.col(a)).cwiseAbs().maxCoeff() / (1e-5 * j.col(a).cwiseAbs().maxCoeff() + 1e-10));
    }
  }
  out.push_back(make("geometry.contract_jacobian_fd", worst <= 1.0, worst, 1.0));
  return out;
}

inline std::vector<CheckResult> encoding() {
  std::vector<CheckResult> out;
  std::mt19937_64 rng(2);
  std::normal_distribution<double> n(0.0, 1.0);
  const EncodingBasis p = off_axis_basis();
  double worst = 0.0;
  for (int k = 0; k < 100; ++k) {
    Mat3 a;
    for (int i = 0; i < 9; ++i) a(i / 3, i % 3) = n(rng);
    const Mat3 s = a + a.transpose();
    worst = std::max(worst, (projected_variances(p, s) - (p.rows * s * p.rows.transpose()).diagonal()).cwiseAbs().maxCoeff());
  }
  out.push_back(make("encoding.diagonal_identity", worst <= 1e-12, worst, 1e-12));

  const GaussianSegment g{Vec3(0.3, -0.2, 0.9), Mat3::Zero()};
  const auto f = ipe_features(g, p, 4);
  double pe = 0.0;
  for (int b = 0; b < p.size(); ++b)
    for (int l = 0; l < 4; ++l) {
      const double x = std::ldexp(p.rows.row(b).dot(g.mean), l);
      pe = std::max({pe, std::abs(f[b * 4 + l] - std::sin(x)), std::abs(f[p.size() * 4 + b * 4 + l] - std::cos(x))});
    }
  out.push_back(make("encoding.zero_variance_is_plain", pe <= 1e-12, pe, 1e-12));
  return out;
}

inline std::vector<CheckResult> histograms() {
  std::vector<CheckResult> out;
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0.0, 1.0);

  double over = 0.0;
  for (int k = 0; k < 500; ++k) {
    std::vector<double> edges{0.0}, tau;
    for (int i = 0; i < 16; ++i) {
      edges.push_back(edges.back() + u(rng));
      tau.push_back(std::exp(6 * u(rng) - 3));
    }
    const auto w = quadrature_weights(tau, edges);
    double sum = 0.0;
    for (double x : w) sum += x;
    over = std::max(over, sum - 1.0);
  }
  out.push_back(make("histograms.weights_sum_at_most_one", over <= 1e-12, std::max(over, 0.0), 1e-12));

  double prop = 0.0, dist = 0.0;
  for (int k = 0; k < 100; ++k) {
    const WeightHistogram target = random_histogram(rng, 9, 0.9);
    const WeightHistogram proposal = random_histogram(rng, 7, 0.8);
    double brute = 0.0;
    for (std::size_t i = 0; i < target.size(); ++i) {
      double b = 0.0;
      for (std::size_t j = 0; j < proposal.size(); ++j)
        if (proposal.edges[j] < target.edges[i + 1] && proposal.edges[j + 1] > target.edges[i]) b += proposal.weights[j];
      const double w = target.weights[i];
      if (w > b) brute += (w - b) * (w - b) / w;
    }
    prop = std::max(prop, std::abs(proposal_loss(target, proposal).value - brute));

    double pairs = 0.0;
    for (std::size_t i = 0; i < target.size(); ++i) {
      const double mi = 0.5 * (target.edges[i] + target.edges[i + 1]);
      for (std::size_t j = 0; j < target.size(); ++j)
        pairs += target.weights[i] * target.weights[j] * std::abs(mi - 0.5 * (target.edges[j] + target.edges[j + 1]));
      pairs += target.weights[i] * target.weights[i] * target.width(i) / 3.0;
    }
    dist = std::max(dist, std::abs(distortion_loss(target).value - pairs));
  }
  out.push_back(make("histograms.proposal_loss_brute_force", prop <= 1e-12, prop, 1e-12));
  out.push_back(make("histograms.distortion_brute_force", dist <= 1e-12, dist, 1e-12));

  bool ok = true;
  for (int k = 0; k < 100 && ok; ++k) {
    const WeightHistogram h = random_histogram(rng, 12, 1.0);
    const auto e = resample(h, 20, SamplingMode::stratified, rng);
    ok = e.size() == 21 && std::is_sorted(e.begin(), e.end()) && e.front() >= 0.0 && e.back() <= 1.0;
  }
  out.push_back({"histograms.resample_sorted_in_range", ok, ok ? "100 draws" : "unsorted or out of range"});
  return out;
}

inline std::vector<CheckResult> schedule() {
  std::vector<CheckResult> out;
  TrainConfig c = desk_preset();
  const double lr = std::abs(lr_schedule(c.total_steps / 2, c) - 2e-4);
  out.push_back(make("schedule.lr_midpoint", lr <= 1e-12, lr, 1e-12));
  const double sb = std::abs(schlick_bias(0.5, 10.0) - 10.0 / 11.0);
  out.push_back(make("schedule.schlick_midpoint", sb <= 1e-12, sb, 1e-12));
  const int counts[] = {64};
  const double eps = std::abs(dilation_epsilon(2, counts) - 0.0103125);
  out.push_back(make("schedule.dilation_epsilon", eps <= 1e-12, eps, 1e-12));
  return out;
}

inline TrainConfig tiny_config() {
  TrainConfig c;
  c.samples_per_stage = {6, 6, 6};
  c.position_levels = c.proposal_levels = 2;
  c.dir_levels = 1;
  c.proposal_width = 8;
  c.nerf_depth = 2;
  c.nerf_width = 8;
  c.bottleneck_width = 8;
  c.color_width = 8;
  c.total_steps = 100;
  return c;
}

/// Central differences for a random subset of parameters of both networks,
/// with interval edges replayed and the proposal-loss target held fixed.
inline std::vector<CheckResult> gradients() {
  std::vector<CheckResult> out;
  const TrainConfig c = tiny_config();
  TrainConfig no_prop = c;
  no_prop.use_proposal_loss = false;
  std::mt19937_64 rng(4);
  std::normal_distribution<double> n(0.0, 1.0);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Model<double> model = make_model<double>(c, 9);
  std::vector<Ray> rays;
  std::vector<Rgb> gt;
  for (int k = 0; k < 3; ++k) {
    Ray r;
    r.origin = Vec3(n(rng), n(rng), n(rng)) * 0.3 + Vec3(0, 0, 1.5);
    r.direction = (Vec3(n(rng), n(rng), n(rng)) * 0.2 - r.origin).normalized();
    r.base_radius = 0.01;
    r.t_near = 0.2;
    r.t_far = 20.0;
    rays.push_back(r);
    gt.push_back(Rgb(u(rng), u(rng), u(rng)));
  }
  RenderSettings rs;
  rs.mode = RenderMode::train;
  rs.step = 50;
  rs.total_steps = 100;
  const BatchTrace<double> base = render_batch(model, rays, c, rs, rng);
  batch_loss(base, gt, c, &model);

  double worst = 0.0;
  int compared = 0;
  for (auto* store : {&model.proposal.params, &model.nerf.params}) {
    const TrainConfig& cfg = store == &model.nerf.params ? no_prop : c;
    std::uniform_int_distribution<std::size_t> pick(0, store->size() - 1);
    for (int k = 0; k < 40; ++k) {
      const std::size_t i = pick(rng);
      const double keep = store->values()[i], h = 1e-6;
      auto loss = [&](double v) {
        store->values()[i] = v;
        std::mt19937_64 unused(0);
        return batch_loss(render_batch(model, rays, c, rs, unused, &base), gt, cfg).total;
      };
      const double fd = (loss(keep + h) - loss(keep - h)) / (2 * h);
      store->values()[i] = keep;
      const double err = std::abs(fd - store->grads()[i]);
      // A kink crossed by the probe shows up as a large error; the
      // thorough test redraws such probes instead.
      if (err > 1e-8) worst = std::max(worst, err / (1e-4 * std::abs(fd)));
      ++compared;
    }
  }
  std::ostringstream os;
  os << compared << " parameters, worst relative error / 1e-4 = " << worst;
  out.push_back({"gradients.finite_differences", worst <= 1.0, os.str()});

  const auto nerf_with = model.nerf.params.grads();
  model.nerf.params.zero_grad();
  model.proposal.params.zero_grad();
  batch_loss(base, gt, no_prop, &model);
  const bool same = model.nerf.params.grads() == nerf_with;
  out.push_back({"gradients.stop_gradient", same, same ? "NeRF gradient unchanged by the proposal loss"
                                                       : "proposal loss leaks into the NeRF gradient"});
  return out;
}

inline const std::vector<std::pair<std::string, std::function<std::vector<CheckResult>()>>>& suites() {
  static const std::vector<std::pair<std::string, std::function<std::vector<CheckResult>()>>> all = {
      {"geometry", geometry}, {"encoding", encoding},   {"histograms", histograms},
      {"schedule", schedule}, {"gradients", gradients},
  };
  return all;
}

}  // namespace verify

/// Runs one named suite, or all of them for "all".
inline std::vector<CheckResult> run_checks(const std::string& suite = "all") {
  std::vector<CheckResult> out;
  bool found = false;
  for (const auto& [name, fn] : verify::suites()) {
    if (suite != "all" && suite != name) continue;
    found = true;
    for (auto& r : fn()) out.push_back(std::move(r));
  }
  if (!found) throw std::invalid_argument("unknown check suite '" + suite + "'");
  return out;
}

}  // namespace unerf
