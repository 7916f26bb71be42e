#pragma once

// Training configuration, presets and the key = value config file.

#include "unerf/geometry.hpp"

#include <cstdint>
#include <iomanip>
#include <istream>
#include <numbers>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace unerf {

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct TrainConfig {
  // loss
  double lambda_dist = 0.01;
  double charbonnier_eps = 1e-3;
  double recon_weight = 1.0;
  bool use_proposal_loss = true;

  // optimization
  int batch_rays = 256;
  int total_steps = 5000;
  double lr_init = 2e-3;
  double lr_final = 2e-5;
  int warmup_steps = 512;
  double warmup_start = 0.1;
  double grad_clip_norm = 1e-3;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-6;
  std::uint64_t seed = 0;

  // sampling
  std::vector<int> samples_per_stage = {32, 32, 16};  // proposal stages..., NeRF stage
  double anneal_b = 10.0;
  bool anneal_before_dilate = true;
  bool dilate_first_level = false;
  double dilation_a = 0.5;
  double dilation_b = 0.0025;
  double weight_floor = 1e-5;
  DistanceCurve distance_curve = DistanceCurve::reciprocal;
  double t_near = 0.5;
  double t_far = 500.0;

  // encoding
  int position_levels = 8;
  int proposal_levels = 8;
  int dir_levels = 4;
  bool off_axis = true;
  double input_scale = std::numbers::pi / 2.0;

  // networks
  int proposal_depth = 2;
  int proposal_width = 64;
  int nerf_depth = 4;
  int nerf_width = 128;
  int nerf_skip = -1;  // trunk layer receiving the input again; -1 = depth / 2, 0 = none
  int bottleneck_width = 128;
  int color_width = 64;
  double density_bias = -2.25;  // initial raw density; softplus(-2.25) ~= 0.1
  bool single_precision = true;

  // data
  std::string scene = "toy";
  int cameras = 8;
  int image_size = 64;
  int log_every = 100;

  int proposal_stages() const { return static_cast<int>(samples_per_stage.size()) - 1; }
};

inline TrainConfig desk_preset() { return TrainConfig{}; }

/// Full-size settings; far too slow for a CPU but kept for reference runs.
inline TrainConfig full_preset() {
  TrainConfig c;
  c.batch_rays = 16384;
  c.total_steps = 250000;
  c.samples_per_stage = {64, 64, 32};
  c.position_levels = 12;
  c.proposal_levels = 12;
  c.proposal_depth = 4;
  c.proposal_width = 256;
  c.nerf_depth = 8;
  c.nerf_width = 1024;
  c.bottleneck_width = 256;
  c.color_width = 128;
  return c;
}

inline TrainConfig preset(const std::string& name) {
  if (name == "desk") return desk_preset();
  if (name == "full") return full_preset();
  throw ConfigError("unknown preset '" + name + "'");
}

inline void validate(const TrainConfig& c) {
  auto require = [](bool ok, const char* what) {
    if (!ok) throw ConfigError(std::string("config: ") + what);
  };
  require(c.lambda_dist >= 0.0, "lambda_dist must be >= 0");
  require(c.charbonnier_eps > 0.0, "charbonnier_eps must be positive");
  require(c.recon_weight >= 0.0, "recon_weight must be >= 0");
  require(c.batch_rays > 0, "batch_rays must be positive");
  require(c.total_steps > 0, "total_steps must be positive");
  require(c.lr_init > 0.0 && c.lr_final > 0.0, "learning rates must be positive");
  require(c.warmup_steps >= 0, "warmup_steps must be >= 0");
  require(c.warmup_start > 0.0 && c.warmup_start <= 1.0, "warmup_start must lie in (0, 1]");
  require(c.grad_clip_norm > 0.0, "grad_clip_norm must be positive");
  require(c.adam_beta1 >= 0.0 && c.adam_beta1 < 1.0 && c.adam_beta2 >= 0.0 && c.adam_beta2 < 1.0,
          "adam betas must lie in [0, 1)");
  require(c.adam_eps > 0.0, "adam_eps must be positive");
  require(c.samples_per_stage.size() >= 1, "samples_per_stage needs at least the NeRF stage");
  for (int n : c.samples_per_stage) require(n >= 1, "samples_per_stage entries must be >= 1");
  require(c.anneal_b > 0.0, "anneal_b must be positive");
  require(c.dilation_a >= 0.0 && c.dilation_b >= 0.0, "dilation constants must be >= 0");
  require(c.weight_floor >= 0.0, "weight_floor must be >= 0");
  require(c.t_near > 0.0 && c.t_far > c.t_near, "require 0 < t_near < t_far");
  require(c.position_levels >= 1 && c.proposal_levels >= 1 && c.dir_levels >= 1, "encoding levels must be >= 1");
  require(c.input_scale > 0.0, "input_scale must be positive");
  require(c.proposal_depth >= 1 && c.proposal_width >= 1, "proposal network shape must be positive");
  require(c.nerf_depth >= 1 && c.nerf_width >= 1, "NeRF network shape must be positive");
  require(c.nerf_skip >= -1 && c.nerf_skip < c.nerf_depth, "nerf_skip out of range");
  require(c.bottleneck_width >= 1 && c.color_width >= 1, "color head widths must be positive");
  require(c.cameras >= 3, "need at least 3 cameras");
  require(c.image_size >= 1, "image_size must be positive");
  require(c.log_every >= 1, "log_every must be positive");
}

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

inline double parse_double(const std::string& key, const std::string& v) {
  std::size_t used = 0;
  double out = 0.0;
  try {
    out = std::stod(v, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != v.size()) throw ConfigError("config: '" + key + "' expects a number, got '" + v + "'");
  return out;
}

inline long long parse_int(const std::string& key, const std::string& v) {
  std::size_t used = 0;
  long long out = 0;
  try {
    out = std::stoll(v, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != v.size()) throw ConfigError("config: '" + key + "' expects an integer, got '" + v + "'");
  return out;
}

inline std::uint64_t parse_seed(const std::string& v) {
  std::size_t used = 0;
  std::uint64_t out = 0;
  try {
    if (!v.empty() && v.front() != '-') out = std::stoull(v, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != v.size())
    throw ConfigError("config: 'seed' expects an unsigned 64-bit integer, got '" + v + "'");
  return out;
}

inline bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError("config: '" + key + "' expects true/false, got '" + v + "'");
}

inline std::string fmt(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

}  // namespace detail

/// Visits every key with a getter and setter, in file order.
template <class Visitor>
void for_each_key(TrainConfig& c, Visitor&& visit) {
  using namespace detail;
  auto dbl = [&](const char* k, double& f) {
    visit(k, [&f] { return fmt(f); }, [&f, k](const std::string& v) { f = parse_double(k, v); });
  };
  auto integer = [&](const char* k, int& f) {
    visit(k, [&f] { return std::to_string(f); },
          [&f, k](const std::string& v) { f = static_cast<int>(parse_int(k, v)); });
  };
  auto boolean = [&](const char* k, bool& f) {
    visit(k, [&f] { return std::string(f ? "true" : "false"); }, [&f, k](const std::string& v) { f = parse_bool(k, v); });
  };
  dbl("lambda_dist", c.lambda_dist);
  dbl("charbonnier_eps", c.charbonnier_eps);
  dbl("recon_weight", c.recon_weight);
  boolean("use_proposal_loss", c.use_proposal_loss);
  integer("batch_rays", c.batch_rays);
  integer("total_steps", c.total_steps);
  dbl("lr_init", c.lr_init);
  dbl("lr_final", c.lr_final);
  integer("warmup_steps", c.warmup_steps);
  dbl("warmup_start", c.warmup_start);
  dbl("grad_clip_norm", c.grad_clip_norm);
  dbl("adam_beta1", c.adam_beta1);
  dbl("adam_beta2", c.adam_beta2);
  dbl("adam_eps", c.adam_eps);
  visit("seed", [&c] { return std::to_string(c.seed); },
        [&c](const std::string& v) { c.seed = parse_seed(v); });
  visit("samples_per_stage",
        [&c] {
          std::string out;
          for (std::size_t i = 0; i < c.samples_per_stage.size(); ++i)
            out += (i ? "," : "") + std::to_string(c.samples_per_stage[i]);
          return out;
        },
        [&c](const std::string& v) {
          std::vector<int> counts;
          std::istringstream ls(v);
          for (std::string item; std::getline(ls, item, ',');)
            counts.push_back(static_cast<int>(parse_int("samples_per_stage", trim(item))));
          c.samples_per_stage = counts;
        });
  dbl("anneal_b", c.anneal_b);
  boolean("anneal_before_dilate", c.anneal_before_dilate);
  boolean("dilate_first_level", c.dilate_first_level);
  dbl("dilation_a", c.dilation_a);
  dbl("dilation_b", c.dilation_b);
  dbl("weight_floor", c.weight_floor);
  visit("distance_curve", [&c] { return to_string(c.distance_curve); },
        [&c](const std::string& v) {
          try {
            c.distance_curve = parse_distance_curve(v);
          } catch (const std::exception& e) {
            throw ConfigError(std::string("config: ") + e.what());
          }
        });
  dbl("t_near", c.t_near);
  dbl("t_far", c.t_far);
  integer("position_levels", c.position_levels);
  integer("proposal_levels", c.proposal_levels);
  integer("dir_levels", c.dir_levels);
  boolean("off_axis", c.off_axis);
  dbl("input_scale", c.input_scale);
  integer("proposal_depth", c.proposal_depth);
  integer("proposal_width", c.proposal_width);
  integer("nerf_depth", c.nerf_depth);
  integer("nerf_width", c.nerf_width);
  integer("nerf_skip", c.nerf_skip);
  integer("bottleneck_width", c.bottleneck_width);
  integer("color_width", c.color_width);
  dbl("density_bias", c.density_bias);
  boolean("single_precision", c.single_precision);
  visit("scene", [&c] { return c.scene; }, [&c](const std::string& v) { c.scene = v; });
  integer("cameras", c.cameras);
  integer("image_size", c.image_size);
  integer("log_every", c.log_every);
}

inline void set_key(TrainConfig& c, const std::string& key, const std::string& value) {
  bool found = false;
  for_each_key(c, [&](const char* k, auto&&, auto&& set) {
    if (key == k) {
      set(value);
      found = true;
    }
  });
  if (!found) throw ConfigError("config: unknown key '" + key + "'");
}

/// Applies "key = value" lines on top of `base`. '#' starts a comment.
inline TrainConfig parse_config(std::istream& is, TrainConfig base = {}) {
  std::string line;
  int line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config line " + std::to_string(line_no) + ": expected 'key = value'");
    set_key(base, detail::trim(line.substr(0, eq)), detail::trim(line.substr(eq + 1)));
  }
  validate(base);
  return base;
}

inline void write_config(std::ostream& os, TrainConfig c) {
  for_each_key(c, [&os](const char* k, auto&& get, auto&&) { os << k << " = " << get() << '\n'; });
}

inline std::string config_text(const TrainConfig& c) {
  std::ostringstream os;
  write_config(os, c);
  return os.str();
}

/// 64-bit FNV-1a of the canonical config text.
inline std::uint64_t config_hash(const TrainConfig& c) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : config_text(c)) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace unerf
