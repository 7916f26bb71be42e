#pragma once

// Text checkpoints: the config, both network shapes and every parameter as
// a hexadecimal float, so a save/load round trip is bit-exact.

#include "unerf/renderer.hpp"

#include <cstdio>
#include <cstdlib>
#include <istream>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <type_traits>

namespace unerf {

inline constexpr const char* kCheckpointMagic = "unerf-checkpoint";
inline constexpr int kCheckpointVersion = 1;

struct CheckpointError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

inline std::string describe(const MlpSpec& s) {
  std::ostringstream os;
  os << "input=" << s.input_dim << " depth=" << s.depth << " width=" << s.width << " skips=";
  for (std::size_t i = 0; i < s.skip_layers.size(); ++i) os << (i ? "," : "") << s.skip_layers[i];
  if (s.skip_layers.empty()) os << '-';
  os << " color=" << (s.has_color_head ? 1 : 0) << " dir=" << s.dir_dim << " bottleneck=" << s.bottleneck_width
     << " color_width=" << s.color_width;
  return os.str();
}

template <class T>
constexpr const char* precision_name() {
  return std::is_same_v<T, float> ? "float" : "double";
}

namespace detail {

template <class T>
void write_store(std::ostream& os, const char* name, const ParamStore<T>& store) {
  os << "store " << name << ' ' << store.size() << '\n';
  char buf[64];
  for (T v : store.values()) {
    std::snprintf(buf, sizeof buf, "%a", static_cast<double>(v));
    os << buf << '\n';
  }
}

template <class T>
void read_store(std::istream& is, const char* name, ParamStore<T>& store) {
  std::string tag, got_name;
  std::size_t count = 0;
  if (!(is >> tag >> got_name >> count) || tag != "store" || got_name != name)
    throw CheckpointError(std::string("checkpoint: expected parameter store '") + name + "'");
  if (count != store.size())
    throw CheckpointError("checkpoint: store '" + std::string(name) + "' has " + std::to_string(count) +
                          " values, network needs " + std::to_string(store.size()));
  std::string token;
  for (T& v : store.values()) {
    if (!(is >> token)) throw CheckpointError("checkpoint: truncated parameter data");
    char* end = nullptr;
    const double d = std::strtod(token.c_str(), &end);
    if (end == token.c_str() || *end != '\0') throw CheckpointError("checkpoint: bad value '" + token + "'");
    v = static_cast<T>(d);
  }
  store.zero_grad();
}

}  // namespace detail

template <class T>
void write_checkpoint(std::ostream& os, const Model<T>& model, const TrainConfig& config, long step) {
  const std::string text = config_text(config);
  std::size_t lines = 0;
  for (char ch : text) lines += ch == '\n';
  char hash[32];
  std::snprintf(hash, sizeof hash, "%016llx", static_cast<unsigned long long>(config_hash(config)));
  os << kCheckpointMagic << ' ' << kCheckpointVersion << '\n';
  os << "precision " << precision_name<T>() << '\n';
  os << "step " << step << '\n';
  os << "config_hash " << hash << '\n';
  os << "config " << lines << '\n' << text;
  os << "mlp proposal " << describe(model.proposal.mlp.spec()) << '\n';
  os << "mlp nerf " << describe(model.nerf.mlp.spec()) << '\n';
  detail::write_store(os, "proposal", model.proposal.params);
  detail::write_store(os, "nerf", model.nerf.params);
}

template <class T>
struct LoadedCheckpoint {
  TrainConfig config;
  Model<T> model;
  long step = 0;
};

/// Reads only the header and config; lets a caller pick the precision.
struct CheckpointHeader {
  std::string precision;
  long step = 0;
  TrainConfig config;
};

inline CheckpointHeader read_checkpoint_header(std::istream& is) {
  std::string magic, tag;
  int version = 0;
  if (!(is >> magic >> version) || magic != kCheckpointMagic)
    throw CheckpointError("checkpoint: missing 'unerf-checkpoint' header");
  if (version != kCheckpointVersion) throw CheckpointError("checkpoint: unsupported version " + std::to_string(version));
  CheckpointHeader h;
  std::string hash;
  std::size_t lines = 0;
  if (!(is >> tag >> h.precision) || tag != "precision") throw CheckpointError("checkpoint: missing precision");
  if (!(is >> tag >> h.step) || tag != "step") throw CheckpointError("checkpoint: missing step");
  if (!(is >> tag >> hash) || tag != "config_hash") throw CheckpointError("checkpoint: missing config hash");
  if (!(is >> tag >> lines) || tag != "config") throw CheckpointError("checkpoint: missing config");
  std::string line;
  std::getline(is, line);
  std::ostringstream text;
  for (std::size_t i = 0; i < lines; ++i) {
    if (!std::getline(is, line)) throw CheckpointError("checkpoint: truncated config");
    text << line << '\n';
  }
  std::istringstream cfg(text.str());
  h.config = parse_config(cfg);
  char expect[32];
  std::snprintf(expect, sizeof expect, "%016llx", static_cast<unsigned long long>(config_hash(h.config)));
  if (hash != expect) throw CheckpointError("checkpoint: config hash mismatch");
  return h;
}

/// Reads the remainder of a checkpoint after read_checkpoint_header.
template <class T>
LoadedCheckpoint<T> read_checkpoint_body(std::istream& is, const CheckpointHeader& h) {
  if (h.precision != precision_name<T>())
    throw CheckpointError("checkpoint: stored as " + h.precision + ", requested " + precision_name<T>());
  LoadedCheckpoint<T> out{h.config, make_model<T>(h.config, 0), h.step};
  std::string line;
  for (const auto& [name, spec] : {std::pair{"proposal", out.model.proposal.mlp.spec()},
                                   std::pair{"nerf", out.model.nerf.mlp.spec()}}) {
    if (!std::getline(is, line) || line != std::string("mlp ") + name + " " + describe(spec))
      throw CheckpointError(std::string("checkpoint: network shape for '") + name + "' does not match its config");
  }
  detail::read_store(is, "proposal", out.model.proposal.params);
  detail::read_store(is, "nerf", out.model.nerf.params);
  return out;
}

template <class T>
LoadedCheckpoint<T> read_checkpoint(std::istream& is) {
  return read_checkpoint_body<T>(is, read_checkpoint_header(is));
}

}  // namespace unerf
