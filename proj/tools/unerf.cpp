// unerf: train, render and evaluate radiance fields on synthetic scenes.
//
// Exit codes: 0 success, 1 a check failed, 2 bad config, arguments or IO.

#include "unerf/alloc.hpp"
#include "unerf/checkpoint.hpp"
#include "unerf/dataset.hpp"
#include "unerf/verify.hpp"

#include "CLI11.hpp"
#include "json.hpp"

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

namespace fs = std::filesystem;
using namespace unerf;

namespace {

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ConfigArgs {
  std::string config_file;
  std::string preset = "desk";
  std::vector<std::string> overrides;

  void attach(CLI::App* cmd) {
    cmd->add_option("--config", config_file, "key = value config file");
    cmd->add_option("--preset", preset, "base preset: desk or full")->capture_default_str();
    cmd->add_option("--set", overrides, "override one key, as key=value (repeatable)");
  }

  TrainConfig load() const {
    TrainConfig c = unerf::preset(preset);
    if (!config_file.empty()) {
      std::ifstream f(config_file);
      if (!f) throw UsageError("cannot open config file '" + config_file + "'");
      c = parse_config(f, c);
    }
    for (const std::string& kv : overrides) {
      const auto eq = kv.find('=');
      if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + kv + "'");
      set_key(c, detail::trim(kv.substr(0, eq)), detail::trim(kv.substr(eq + 1)));
    }
    validate(c);
    return c;
  }
};

std::ofstream open_out(const fs::path& p, bool binary = false) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream f(p, binary ? std::ios::binary : std::ios::out);
  if (!f) throw UsageError("cannot write '" + p.string() + "'");
  return f;
}

std::ifstream open_in(const fs::path& p) {
  std::ifstream f(p);
  if (!f) throw UsageError("cannot open '" + p.string() + "'");
  return f;
}

nlohmann::json metrics_json(const EvalMetrics& m, const EvalMetrics& baseline) {
  nlohmann::json j;
  j["test_psnr"] = m.psnr;
  j["test_mse"] = m.mse;
  j["mean_distortion"] = m.mean_distortion;
  j["baseline_psnr"] = baseline.psnr;
  return j;
}

// Dispatches on the precision a checkpoint was stored in.
template <class F>
void with_checkpoint(const std::string& path, F&& f) {
  std::ifstream in = open_in(path);
  const CheckpointHeader h = read_checkpoint_header(in);
  if (h.precision == "float")
    f(read_checkpoint_body<float>(in, h));
  else
    f(read_checkpoint_body<double>(in, h));
}

// ---------------------------------------------------------------------------

template <class T>
int run_fit(const TrainConfig& c, const fs::path& out_dir, const std::string& log_path) {
  const auto t0 = std::chrono::steady_clock::now();
  const Dataset ds = build_dataset(c);
  const RaySet train = ray_set(ds, ds.train), test = ray_set(ds, ds.test);
  {
    auto f = open_out(out_dir / "config.txt");
    write_config(f, c);
  }
  auto log = open_out(log_path.empty() ? out_dir / "metrics.jsonl" : fs::path(log_path));
  TrainState<T> state = make_train_state<T>(c);
  std::vector<Ray> rays;
  std::vector<Rgb> gt;
  while (state.step < c.total_steps) {
    sample_batch(train, c.batch_rays, state.rng, rays, gt);
    const StepResult r = train_step(state, rays, gt, c);
    if (state.step % c.log_every == 0 || state.step == c.total_steps) {
      log << metrics_record(state.step, r).dump() << '\n';
      std::cerr << "step " << state.step << "  loss " << r.loss.total << "  psnr " << psnr_from_mse(r.loss.mse) << '\n';
    }
  }
  {
    auto f = open_out(out_dir / "checkpoint.txt");
    write_checkpoint(f, state.model, c, state.step);
  }
  nlohmann::json summary = metrics_json(evaluate(state.model, test, c), constant_color_baseline(train, test));
  summary["steps"] = state.step;
  summary["seconds"] = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  auto f = open_out(out_dir / "eval.json");
  f << summary.dump(2) << '\n';
  std::cout << summary.dump() << '\n';
  return 0;
}

int cmd_fit(const ConfigArgs& args, const std::string& out, const std::string& log) {
  const TrainConfig c = args.load();
  return c.single_precision ? run_fit<float>(c, out, log) : run_fit<double>(c, out, log);
}

int cmd_eval(const std::string& checkpoint, const std::string& out) {
  with_checkpoint(checkpoint, [&](const auto& ck) {
    const Dataset ds = build_dataset(ck.config);
    const RaySet train = ray_set(ds, ds.train), test = ray_set(ds, ds.test);
    nlohmann::json j = metrics_json(evaluate(ck.model, test, ck.config), constant_color_baseline(train, test));
    j["steps"] = ck.step;
    if (!out.empty()) {
      auto f = open_out(out);
      f << j.dump(2) << '\n';
    }
    std::cout << j.dump() << '\n';
  });
  return 0;
}

// The pose to render: from a pose file if given, else the dataset's camera.
std::pair<Pose, Intrinsics> pick_camera(const TrainConfig& c, const std::string& poses_file, std::optional<int> camera) {
  PoseSet set;
  int k = 0;
  if (!poses_file.empty()) {
    auto f = open_in(poses_file);
    set = read_poses(f);
    k = camera.value_or(0);
  } else {
    std::mt19937_64 rng(c.seed ^ 0x5ca1ab1e5eedULL);
    set = ring_cameras(c.cameras, c.image_size, rng);
    k = camera.value_or(0);  // camera 0 is always held out
  }
  if (k < 0 || k >= static_cast<int>(set.poses.size()))
    throw UsageError("camera " + std::to_string(k) + " out of range (have " + std::to_string(set.poses.size()) + ")");
  return {set.poses[static_cast<std::size_t>(k)], set.intrinsics};
}

int cmd_render(const std::string& checkpoint, const std::string& poses, std::optional<int> camera,
               const fs::path& out_dir) {
  with_checkpoint(checkpoint, [&](const auto& ck) {
    const auto [pose, intr] = pick_camera(ck.config, poses, camera);
    const auto rays = camera_rays(pose, intr, ck.config.t_near, ck.config.t_far);
    ImageBuffer img(intr.width, intr.height);
    DepthGrid depth{intr.width, intr.height, {}};
    render_rays(ck.model, rays, ck.config, img.pixels, depth.values);
    auto rgb_file = open_out(out_dir / "rgb.ppm", true);
    write_ppm(rgb_file, img);
    auto depth_file = open_out(out_dir / "depth.txt");
    write_depth(depth_file, depth);
  });
  return 0;
}

int cmd_plot_histogram(const std::string& checkpoint, const std::string& poses, std::optional<int> camera,
                       std::vector<int> pixel, const std::string& out) {
  with_checkpoint(checkpoint, [&](const auto& ck) {
    const auto [pose, intr] = pick_camera(ck.config, poses, camera);
    if (pixel.empty()) pixel = {intr.width / 2, intr.height / 2};
    if (pixel.size() != 2 || pixel[0] < 0 || pixel[1] < 0 || pixel[0] >= intr.width || pixel[1] >= intr.height)
      throw UsageError("--pixel expects col,row inside the image");
    const Ray ray = pixel_ray(pose, intr, pixel[0], pixel[1], ck.config.t_near, ck.config.t_far);
    RenderSettings rs;
    rs.mode = RenderMode::eval;
    rs.step = rs.total_steps = ck.config.total_steps;
    std::mt19937_64 unused(0);
    const auto trace = render_batch(ck.model, {ray}, ck.config, rs, unused);

    std::ostringstream csv;
    csv << std::setprecision(10) << "stage,index,s_lo,s_hi,t_lo,t_hi,weight\n";
    const std::size_t P = trace.stages.size() - 1;
    for (std::size_t p = 0; p <= P; ++p) {
      const auto s = trace.stages[p].histogram(0, Domain::s), t = trace.stages[p].histogram(0, Domain::t);
      const std::string name = p == P ? "nerf" : "proposal" + std::to_string(p);
      for (std::size_t i = 0; i < s.size(); ++i)
        csv << name << ',' << i << ',' << s.edges[i] << ',' << s.edges[i + 1] << ',' << t.edges[i] << ','
            << t.edges[i + 1] << ',' << s.weights[i] << '\n';
    }
    // Each proposal's bound over the final intervals: the envelope.
    const auto fin_s = trace.final_stage().histogram(0, Domain::s), fin_t = trace.final_stage().histogram(0, Domain::t);
    for (std::size_t p = 0; p < P; ++p) {
      const auto prop = trace.stages[p].histogram(0, Domain::s);
      for (std::size_t i = 0; i < fin_s.size(); ++i)
        csv << "bound" << p << ',' << i << ',' << fin_s.edges[i] << ',' << fin_s.edges[i + 1] << ',' << fin_t.edges[i]
            << ',' << fin_t.edges[i + 1] << ',' << bound(prop, fin_s.edges[i], fin_s.edges[i + 1]) << '\n';
    }
    if (out.empty()) {
      std::cout << csv.str();
    } else {
      auto f = open_out(out);
      f << csv.str();
    }
  });
  return 0;
}

int cmd_dataset(const ConfigArgs& args, const fs::path& out_dir) {
  const TrainConfig c = args.load();
  const Dataset ds = build_dataset(c);
  {
    auto f = open_out(out_dir / "scene.txt");
    write_scene(f, load_scene(c.scene));
  }
  {
    auto f = open_out(out_dir / "poses.txt");
    write_poses(f, ds.cameras);
  }
  for (std::size_t k = 0; k < ds.images.size(); ++k) {
    auto f = open_out(out_dir / ("image_" + std::to_string(k) + ".ppm"), true);
    write_ppm(f, ds.images[k]);
  }
  auto f = open_out(out_dir / "split.txt");
  f << "train";
  for (int k : ds.train) f << ' ' << k;
  f << "\ntest";
  for (int k : ds.test) f << ' ' << k;
  f << '\n';
  return 0;
}

int cmd_check(const std::string& suite) {
  int failed = 0;
  for (const CheckResult& r : run_checks(suite)) {
    std::cout << (r.passed ? "PASS " : "FAIL ") << r.name << "  " << r.detail << '\n';
    failed += !r.passed;
  }
  return failed ? 1 : 0;
}

}  // namespace

int main(int argc, char** argv) {
  tune_allocator();
  CLI::App app{"unerf: unbounded radiance fields at desk scale"};
  app.require_subcommand(1);

  ConfigArgs fit_cfg, data_cfg;
  std::string out, log, checkpoint, poses, suite = "all";
  std::optional<int> camera;
  std::vector<int> pixel;

  auto* fit = app.add_subcommand("fit", "train from a config; writes config, checkpoint, metrics and eval summary");
  fit_cfg.attach(fit);
  fit->add_option("--out", out, "output directory")->required();
  fit->add_option("--log", log, "metrics log (default <out>/metrics.jsonl)");

  auto* render = app.add_subcommand("render", "render RGB and median depth from a checkpoint");
  render->add_option("--checkpoint", checkpoint)->required();
  render->add_option("--poses", poses, "pose file (default: the training ring)");
  render->add_option("--camera", camera, "camera index (default 0, a held-out view)");
  render->add_option("--out", out, "output directory")->required();

  auto* eval = app.add_subcommand("eval", "held-out PSNR/MSE of a checkpoint");
  eval->add_option("--checkpoint", checkpoint)->required();
  eval->add_option("--out", out, "also write the metrics as JSON here");

  auto* check = app.add_subcommand("check", "run the built-in oracle checks");
  check->add_option("--suite", suite, "geometry, encoding, histograms, schedule, gradients or all")
      ->capture_default_str();

  auto* plot = app.add_subcommand("plot-histogram", "per-stage weight histograms of one pixel as CSV");
  plot->add_option("--checkpoint", checkpoint)->required();
  plot->add_option("--poses", poses, "pose file (default: the training ring)");
  plot->add_option("--camera", camera, "camera index (default 0)");
  plot->add_option("--pixel", pixel, "col,row (default: image center)")->delimiter(',')->expected(2);
  plot->add_option("--out", out, "CSV file (default stdout)");

  auto* dataset = app.add_subcommand("dataset", "write the synthetic dataset a config trains on");
  data_cfg.attach(dataset);
  dataset->add_option("--out", out, "output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 2;
  }

  try {
    if (*fit) return cmd_fit(fit_cfg, out, log);
    if (*render) return cmd_render(checkpoint, poses, camera, out);
    if (*eval) return cmd_eval(checkpoint, out);
    if (*check) return cmd_check(suite);
    if (*plot) return cmd_plot_histogram(checkpoint, poses, camera, pixel, out);
    if (*dataset) return cmd_dataset(data_cfg, out);
  } catch (const NonFiniteLoss& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 2;
}
