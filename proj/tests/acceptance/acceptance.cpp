// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any
// fails. `acceptance 3 5` runs only the listed criteria.
//
// Every reference value here is recomputed from scratch (Monte Carlo, naive
// loops, hand arithmetic) rather than taken from the library.

#include "support/gradcheck.hpp"
#include "unerf/alloc.hpp"
#include "unerf/dataset.hpp"
#include "unerf/interval_losses.hpp"

#include <boost/math/distributions/chi_squared.hpp>

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <random>
#include <set>
#include <sstream>
#include <string>

#include <unistd.h>

#ifndef UNERF_CLI
#error "UNERF_CLI must name the unerf executable"
#endif

using namespace unerf;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool passed = true;
  std::ostringstream detail;

  // Records a failed condition without stopping the remaining ones.
  void require(bool ok, const std::string& what) {
    if (!ok) {
      passed = false;
      detail << " [failed: " << what << "]";
    }
  }
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

WeightHistogram random_histogram(std::mt19937_64& rng, int n, double total, bool empties = true) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  WeightHistogram h;
  h.edges = {0.0, 1.0};
  for (int i = 0; i < n - 1; ++i) h.edges.push_back(u(rng));
  std::sort(h.edges.begin(), h.edges.end());
  h.weights.resize(static_cast<std::size_t>(n));
  double sum = 0.0;
  for (double& w : h.weights) sum += (w = empties && u(rng) < 0.25 ? 0.0 : u(rng));
  if (sum == 0.0) h.weights[0] = sum = 1.0;
  for (double& w : h.weights) w *= total / sum;
  return h;
}

// ---------------------------------------------------------------------------

void contraction(Outcome& out) {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(101);
  std::normal_distribution<double> n(0.0, 1.0);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  int inside = 0, changed = 0, unbounded = 0;
  double max_norm = 0.0;
  for (int k = 0; k < 100000; ++k) {
    Vec3 x(n(rng), n(rng), n(rng));
    // half inside the unit ball, half with norms spread over [1, 1e8]
    const double r = k % 2 ? std::cbrt(u(rng)) : std::pow(10.0, 8.0 * u(rng));
    x *= r / x.norm();
    const Vec3 y = contract(x);
    if (x.norm() <= 1.0) {
      ++inside;
      changed += y != x;
    }
    max_norm = std::max(max_norm, y.norm());
    unbounded += !(y.norm() < 2.0);
  }
  const double e = (contract(Vec3(3, 0, 0)) - Vec3(5.0 / 3.0, 0, 0)).cwiseAbs().maxCoeff();
  const double secs = seconds_since(t0);
  out.detail << inside << " of 1e5 points inside, " << changed << " moved; max |c(x)| " << max_norm
             << "; c(3,0,0) error " << e << "; " << secs << " s";
  out.require(changed == 0, "identity inside the ball");
  out.require(unbounded == 0, "|c(x)| < 2");
  out.require(e <= 1e-12, "c(3,0,0) = (5/3,0,0)");
  out.require(secs < 1.0, "runtime < 1 s");
}

void jacobian_and_warp(Outcome& out) {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(202);
  std::normal_distribution<double> n(0.0, 1.0);
  std::uniform_real_distribution<double> u(0.0, 1.0);

  double worst_jac = 0.0;
  int points = 0;
  while (points < 1000) {
    Vec3 x(n(rng), n(rng), n(rng));
    x *= std::pow(10.0, 2.5 * u(rng) - 1.0) / x.norm();  // norms in [0.1, 31.6]
    if (std::abs(x.norm() - 1.0) < 1e-3) continue;
    ++points;
    const double h = 1e-5 * std::max(1.0, x.norm());
    Mat3 fd;
    for (int a = 0; a < 3; ++a)
      fd.col(a) = (contract(x + h * Vec3::Unit(a)) - contract(x - h * Vec3::Unit(a))) / (2 * h);
    const Mat3 j = contract_jacobian(x);
    worst_jac = std::max(worst_jac, (fd - j).norm() / j.norm());
  }

  double worst_mean = 0.0, worst_cov = 0.0;
  const int samples = 1000000;
  for (int g = 0; g < 20; ++g) {
    // alternate between Gaussians well inside the ball and outside it
    Vec3 mean(n(rng), n(rng), n(rng));
    mean *= (g % 2 ? 0.2 + 0.6 * u(rng) : 1.5 + 3.0 * u(rng)) / mean.norm();
    Mat3 a;
    for (int i = 0; i < 9; ++i) a(i / 3, i % 3) = 0.005 * n(rng);
    const GaussianSegment seg{mean, a * a.transpose() + 1e-6 * Mat3::Identity()};
    const GaussianSegment w = warp_gaussian(seg, ContractMap{});

    const Eigen::LLT<Mat3> llt(seg.cov);
    std::vector<Vec3> ys(samples);
    Vec3 m = Vec3::Zero();
    for (auto& y : ys) {
      y = contract(seg.mean + llt.matrixL() * Vec3(n(rng), n(rng), n(rng)));
      m += y;
    }
    m /= samples;
    Mat3 cov = Mat3::Zero();
    for (const auto& y : ys) cov += (y - m) * (y - m).transpose();
    cov /= samples - 1;
    worst_mean = std::max(worst_mean, (w.mean - m).cwiseAbs().maxCoeff());
    worst_cov = std::max(worst_cov, (w.cov - cov).norm() / cov.norm());
  }
  const double secs = seconds_since(t0);
  out.detail << "Jacobian worst rel err " << worst_jac << " over 1000 points; warp worst mean err " << worst_mean
             << ", worst cov rel err " << worst_cov << " over 20 Gaussians; " << secs << " s";
  out.require(worst_jac <= 1e-5, "Jacobian rel err <= 1e-5");
  out.require(worst_mean <= 1e-4, "warp mean within 1e-4");
  out.require(worst_cov <= 0.05, "warp covariance within 5%");
  out.require(secs < 60.0, "runtime < 60 s");
}

void distortion(Outcome& out) {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(303);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  // Monte Carlo estimate of the double integral of w(a) w(b) |a - b| for the
  // step density: draw a, b independently from it and rescale by the mass.
  auto monte_carlo = [&](const WeightHistogram& h, int pairs) {
    std::discrete_distribution<std::size_t> bin(h.weights.begin(), h.weights.end());
    auto draw = [&] {
      const std::size_t i = bin(rng);
      return h.edges[i] + u(rng) * (h.edges[i + 1] - h.edges[i]);
    };
    double acc = 0.0;
    for (int k = 0; k < pairs; ++k) acc += std::abs(draw() - draw());
    double total = 0.0;
    for (double w : h.weights) total += w;
    return total * total * acc / pairs;
  };
  double worst = 0.0;
  for (int k = 0; k < 100; ++k) {
    const WeightHistogram h = random_histogram(rng, 2 + k % 30, 0.2 + 0.8 * u(rng));
    const double closed = distortion_loss(h).value;
    worst = std::max(worst, std::abs(monte_carlo(h, 1000000) - closed) / closed);
  }
  int inexact = 0;
  for (int k = 0; k < 1000; ++k) {
    const double a = u(rng), b = a + u(rng) * (1.0 - a), w = u(rng);
    if (!(b > a)) continue;
    const WeightHistogram one{{a, b}, {w}, Domain::s};
    inexact += distortion_loss(one).value != w * w * (b - a) / 3.0;
  }
  const double secs = seconds_since(t0);
  out.detail << "worst rel err vs Monte Carlo " << worst << " over 100 histograms; single interval inexact in "
             << inexact << " of 1000; " << secs << " s";
  out.require(worst <= 0.01, "within 1% of Monte Carlo");
  out.require(inexact == 0, "single interval w^2 ds / 3 exact");
  out.require(secs < 60.0, "runtime < 60 s");
}

void proposal(Outcome& out) {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(404);
  std::uniform_real_distribution<double> u(0.0, 1.0);

  // Both histograms bin one point set: each bin of either is a union of
  // consecutive atoms, so every target interval is covered by proposal mass
  // at least as large as its own.
  double worst_shared = 0.0;
  for (int k = 0; k < 200; ++k) {
    const int atoms = 10 + k % 90;
    std::vector<double> pts{0.0, 1.0};
    for (int i = 0; i < atoms - 1; ++i) pts.push_back(u(rng));
    std::sort(pts.begin(), pts.end());
    std::vector<double> mass(static_cast<std::size_t>(atoms));
    for (double& m : mass) m = u(rng) < 0.3 ? 0.0 : u(rng);
    auto bin = [&](double split) {
      WeightHistogram h;
      h.edges = {pts.front()};
      double acc = 0.0;
      for (int i = 0; i < atoms; ++i) {
        acc += mass[i];
        if (i == atoms - 1 || u(rng) < split) {
          h.edges.push_back(pts[i + 1]);
          h.weights.push_back(acc);
          acc = 0.0;
        }
      }
      return h;
    };
    const WeightHistogram target = bin(0.6), prop = bin(0.25);
    worst_shared = std::max(worst_shared, proposal_loss(target, prop).value);
  }

  auto naive = [](const WeightHistogram& t, const WeightHistogram& p) {
    double loss = 0.0;
    for (std::size_t i = 0; i + 1 < t.edges.size(); ++i) {
      const double w = t.weights[i];
      if (!(w > 0.0)) continue;
      double b = 0.0;
      for (std::size_t j = 0; j + 1 < p.edges.size(); ++j)
        if (p.edges[j] < t.edges[i + 1] && p.edges[j + 1] > t.edges[i]) b += p.weights[j];
      if (w > b) loss += (w - b) * (w - b) / w;
    }
    return loss;
  };
  double worst_naive = 0.0, worst_warp = 0.0;
  auto warp = [](double x) { return 0.3 + 2.0 * x + std::sinh(4.0 * x); };
  for (int k = 0; k < 200; ++k) {
    WeightHistogram t = random_histogram(rng, 1 + k % 40, u(rng));
    WeightHistogram p = random_histogram(rng, 1 + (7 * k) % 25, u(rng));
    if (k % 3 == 0) {  // coincident edges: touching intervals must not count
      p.edges = t.edges;
      p.weights.assign(t.weights.size(), 0.0);
      for (double& w : p.weights) w = 0.1 * u(rng);
    }
    worst_naive = std::max(worst_naive, std::abs(proposal_loss(t, p).value - naive(t, p)));
    WeightHistogram tw = t, pw = p;
    for (double& e : tw.edges) e = warp(e);
    for (double& e : pw.edges) e = warp(e);
    worst_warp = std::max(worst_warp, std::abs(proposal_loss(tw, pw).value - proposal_loss(t, p).value));
  }
  const double secs = seconds_since(t0);
  out.detail << "shared-point-set max loss " << worst_shared << " over 200; prefix sum vs naive " << worst_naive
             << "; reparameterization " << worst_warp << "; " << secs << " s";
  // Zero up to the round-off of summing runs of atoms in two different orders.
  out.require(worst_shared <= 1e-20, "zero on shared point sets");
  out.require(worst_naive <= 1e-12, "prefix sum equals naive loop");
  out.require(worst_warp <= 1e-12, "monotone reparameterization invariance");
  out.require(secs < 30.0, "runtime < 30 s");
}

void quadrature(Outcome& out) {
  std::mt19937_64 rng(505);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  double worst_sum = -1.0;
  for (int k = 0; k < 10000; ++k) {
    const int n = 1 + k % 64;
    std::vector<double> edges{0.0}, tau;
    for (int i = 0; i < n; ++i) {
      edges.push_back(edges.back() + std::pow(10.0, 4.0 * u(rng) - 3.0));
      tau.push_back(u(rng) < 0.2 ? 0.0 : std::pow(10.0, 10.0 * u(rng) - 5.0));
    }
    double sum = 0.0;
    for (double w : quadrature_weights(tau, edges)) sum += w;
    worst_sum = std::max(worst_sum, sum);
  }

  int not_background = 0;
  for (int k = 0; k < 100; ++k) {
    const int n = 1 + k;
    std::vector<double> edges{u(rng)}, tau(static_cast<std::size_t>(n), 0.0);
    std::vector<Rgb> colors;
    for (int i = 0; i < n; ++i) {
      edges.push_back(edges.back() + u(rng));
      colors.push_back(Rgb(u(rng), u(rng), u(rng)));
    }
    const Rgb bg(u(rng), u(rng), u(rng));
    not_background += composite(quadrature_weights(tau, edges), colors, bg) != bg;
  }

  const double tau2[] = {1.0, 1.0}, edges2[] = {0.0, 1.0, 2.0};
  const auto w = quadrature_weights(tau2, edges2);
  const double a = 1.0 - std::exp(-1.0), b = std::exp(-1.0) * (1.0 - std::exp(-1.0));
  const double e = std::max(std::abs(w[0] - a), std::abs(w[1] - b));
  out.detail << "max sum of weights " << worst_sum << " over 1e4 rays; " << not_background
             << " of 100 empty rays off the background; tau=(1,1) error " << e;
  out.require(worst_sum <= 1.0, "sum of weights <= 1");
  out.require(not_background == 0, "empty rays composite to the background");
  out.require(e <= 1e-12, "tau=(1,1) hand values");
}

void resampler(Outcome& out) {
  std::mt19937_64 rng(606);
  double min_p = 1.0;
  for (int k = 0; k < 10; ++k) {
    const WeightHistogram h = random_histogram(rng, 5 + 4 * k, 1.0);
    const int n = 100000;
    const auto x = sample_quantiles(h, n, SamplingMode::stratified, rng, 0.0);
    std::vector<double> counts(h.weights.size(), 0.0);
    for (double v : x) {
      std::size_t i = 0;
      while (i + 1 < h.weights.size() && v >= h.edges[i + 1]) ++i;
      counts[i] += 1.0;
    }
    double chi2 = 0.0;
    int dof = -1;
    for (std::size_t i = 0; i < counts.size(); ++i) {
      if (h.weights[i] == 0.0) {
        chi2 += counts[i] > 0 ? 1e300 : 0.0;  // any draw in an empty bin is a failure
        continue;
      }
      const double expect = n * h.weights[i];
      chi2 += (counts[i] - expect) * (counts[i] - expect) / expect;
      ++dof;
    }
    min_p = std::min(min_p, boost::math::cdf(boost::math::complement(boost::math::chi_squared(std::max(dof, 1)),
                                                                     std::min(chi2, 1e300))));
  }

  double worst_even = 0.0;
  WeightHistogram flat{{0.0, 1.0}, {1.0}, Domain::s};
  for (int n : {1, 2, 3, 8, 32, 64, 100}) {
    const auto e = resample(flat, n, SamplingMode::deterministic, rng, 0.0);
    if (e.size() != static_cast<std::size_t>(n) + 1) worst_even = 1.0;
    for (std::size_t i = 0; i < e.size(); ++i)
      worst_even = std::max(worst_even, std::abs(e[i] - static_cast<double>(i) / n));
  }
  out.detail << "smallest chi-square p-value " << min_p << " over 10 histograms x 1e5 draws; "
             << "deterministic uniform spacing error " << worst_even;
  out.require(min_p > 1e-3, "chi-square passes at 1e-3");
  out.require(worst_even <= 1e-12, "evenly spaced deterministic edges");
}

void gradients(Outcome& out) {
  const auto t0 = Clock::now();
  const TrainConfig c = testing::gradcheck_config();
  const auto rep = testing::check_full_gradient(c, 7);
  const auto stop = testing::check_stop_gradient(c, 3);
  const double secs = seconds_since(t0);
  out.detail << rep.checked << " parameters, " << rep.failed << " beyond 1e-4 (worst " << rep.worst_excess
             << "x tolerance, max abs err " << rep.max_abs_error << "); stop-gradient "
             << (stop.nerf_identical ? "holds" : "broken") << "; " << secs << " s";
  out.require(rep.probe_found, "a kink-free probe was found");
  out.require(rep.failed == 0, "every parameter within 1e-4");
  out.require(stop.nerf_identical, "proposal loss adds nothing to the NeRF gradient");
  out.require(stop.proposal_nonzero, "proposal loss reaches the proposal network");
  out.require(secs < 300.0, "runtime < 5 min");
}

void desk_training(Outcome& out) {
  const auto t0 = Clock::now();
  const TrainConfig base = preset("desk");
  const Dataset ds = build_dataset(base);
  const RaySet train = ray_set(ds, ds.train), test = ray_set(ds, ds.test);
  const EvalMetrics baseline = constant_color_baseline(train, test);

  auto run = [&](const std::string& name, TrainConfig c) {
    const auto t = Clock::now();
    auto state = make_train_state<float>(c);
    fit(state, train, c);
    const EvalMetrics m = evaluate(state.model, test, c);
    std::cerr << "  " << name << ": held-out PSNR " << m.psnr << ", distortion " << m.mean_distortion << " ("
              << seconds_since(t) << " s)\n";
    return m;
  };
  TrainConfig full = base;
  full.lambda_dist = 0.01;
  TrainConfig no_prop = full;
  no_prop.use_proposal_loss = false;
  TrainConfig no_dist = full;
  no_dist.lambda_dist = 0.0;
  const EvalMetrics m_full = run("complete", full), m_no_prop = run("no proposal loss", no_prop),
                    m_no_dist = run("lambda 0", no_dist);
  const double secs = seconds_since(t0);
  out.detail << "baseline " << baseline.psnr << " dB; complete " << m_full.psnr << " dB (needs >= "
             << baseline.psnr + 10.0 << "); no proposal loss " << m_no_prop.psnr << " dB; distortion lambda 0.01 "
             << m_full.mean_distortion << " vs lambda 0 " << m_no_dist.mean_distortion << "; " << secs << " s";
  out.require(m_full.psnr >= baseline.psnr + 10.0, "baseline + 10 dB");
  out.require(m_no_prop.psnr < m_full.psnr, "dropping the proposal loss scores lower");
  out.require(m_full.mean_distortion < m_no_dist.mean_distortion, "lambda 0.01 lowers distortion");
  out.require(secs <= 1800.0, "runtime <= 30 min");
}

void schedule(Outcome& out) {
  const TrainConfig c = preset("desk");
  const double lr = std::abs(lr_schedule(c.total_steps / 2, c) - 2e-4);
  const double sb = std::abs(schlick_bias(0.5, 10.0) - 10.0 / 11.0);
  const int counts[] = {64};
  // a / (count) + b with a = 0.5, b = 0.0025: 0.5 / 64 + 0.0025
  const double eps = std::abs(dilation_epsilon(2, counts) - (0.5 / 64.0 + 0.0025));
  out.detail << "lr midpoint err " << lr << "; Schlick err " << sb << "; dilation err " << eps;
  out.require(c.total_steps % 2 == 0, "even step count");
  out.require(lr <= 1e-12, "lr at N/2 = 2e-4");
  out.require(sb <= 1e-12, "Schlick bias = 10/11");
  out.require(eps <= 1e-12, "dilation = 0.0103125");
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

void determinism(Outcome& out) {
  const fs::path root = fs::temp_directory_path() / ("unerf_acceptance_" + std::to_string(::getpid()));
  fs::remove_all(root);
  std::vector<std::string> image, depth, log;
  bool commands_ok = true;
  for (const char* run : {"a", "b"}) {
    const fs::path dir = root / run;
    const std::string cli = UNERF_CLI;
    const std::string fit = cli + " fit --set total_steps=100 --set log_every=1 --out " + dir.string() + " >" +
                            (dir.string() + ".fit.txt") + " 2>&1";
    const std::string render = cli + " render --checkpoint " + (dir / "checkpoint.txt").string() + " --out " +
                               (dir / "render").string() + " >/dev/null 2>&1";
    fs::create_directories(root);
    commands_ok = commands_ok && std::system(fit.c_str()) == 0 && std::system(render.c_str()) == 0;
    image.push_back(slurp(dir / "render" / "rgb.ppm"));
    depth.push_back(slurp(dir / "render" / "depth.txt"));
    log.push_back(slurp(dir / "metrics.jsonl"));
  }
  const auto lines = std::count(log[0].begin(), log[0].end(), '\n');
  out.detail << "two fit (100 steps) + render runs: image " << image[0].size() << " bytes, log " << lines << " lines";
  out.require(commands_ok, "fit and render exit 0");
  out.require(!image[0].empty() && image[0] == image[1], "byte-identical images");
  out.require(!depth[0].empty() && depth[0] == depth[1], "identical depth maps");
  out.require(lines == 100 && log[0] == log[1], "identical loss logs");
  fs::remove_all(root);
}

}  // namespace

int main(int argc, char** argv) {
  tune_allocator();
  const std::vector<std::pair<std::string, std::function<void(Outcome&)>>> criteria = {
      {"contraction", contraction},
      {"Jacobian and Gaussian warp", jacobian_and_warp},
      {"distortion", distortion},
      {"proposal loss", proposal},
      {"quadrature", quadrature},
      {"resampler", resampler},
      {"end-to-end gradient", gradients},
      {"desk-scale training", desk_training},
      {"schedules", schedule},
      {"determinism", determinism},
  };
  std::set<int> only;
  for (int i = 1; i < argc; ++i) only.insert(std::atoi(argv[i]));

  int failed = 0;
  for (std::size_t k = 0; k < criteria.size(); ++k) {
    const int id = static_cast<int>(k) + 1;
    if (!only.empty() && !only.count(id)) continue;
    Outcome out;
    try {
      criteria[k].second(out);
    } catch (const std::exception& e) {
      out.require(false, std::string("exception: ") + e.what());
    }
    std::cout << (out.passed ? "PASS" : "FAIL") << "  " << id << ". " << criteria[k].first << ": "
              << out.detail.str() << std::endl;
    failed += !out.passed;
  }
  return failed ? 1 : 0;
}
