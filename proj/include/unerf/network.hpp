#pragma once

// Density (proposal) and density+color (NeRF) MLPs with hand-written reverse
// mode. Samples are stored column-wise: a batch of B inputs is a (dim x B)
// matrix.

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace unerf {

template <class T>
using Matrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>;

struct MlpSpec {
  int input_dim = 0;
  int depth = 1;  // hidden ReLU layers in the trunk
  int width = 1;
  std::vector<int> skip_layers;  // trunk layers that also receive the raw input
  bool has_color_head = false;
  int dir_dim = 0;
  int bottleneck_width = 0;
  int color_width = 0;
  double density_bias = -2.25;  // softplus(-2.25) ~= 0.1
};

inline void validate(const MlpSpec& spec) {
  if (spec.input_dim < 1) throw std::invalid_argument("MlpSpec: input_dim must be positive");
  if (spec.depth < 1 || spec.width < 1) throw std::invalid_argument("MlpSpec: depth and width must be >= 1");
  for (int s : spec.skip_layers)
    if (s <= 0 || s >= spec.depth) throw std::invalid_argument("MlpSpec: skip layer index out of range");
  if (spec.has_color_head && (spec.bottleneck_width < 1 || spec.color_width < 1 || spec.dir_dim < 0))
    throw std::invalid_argument("MlpSpec: color head needs bottleneck_width and color_width");
}

/// Flat parameter and gradient arrays with named (rows x cols) slots.
template <class T>
class ParamStore {
 public:
  struct Slot {
    std::string name;
    std::size_t offset = 0;
    int rows = 0;
    int cols = 0;
  };

  int add(std::string name, int rows, int cols) {
    slots_.push_back({std::move(name), values_.size(), rows, cols});
    values_.resize(values_.size() + static_cast<std::size_t>(rows) * cols, T(0));
    grads_.resize(values_.size(), T(0));
    return static_cast<int>(slots_.size()) - 1;
  }

  std::size_t size() const { return values_.size(); }
  const std::vector<Slot>& slots() const { return slots_; }
  std::vector<T>& values() { return values_; }
  const std::vector<T>& values() const { return values_; }
  std::vector<T>& grads() { return grads_; }
  const std::vector<T>& grads() const { return grads_; }

  Eigen::Map<Matrix<T>> param(int slot) { return map(values_, slot); }
  Eigen::Map<const Matrix<T>> param(int slot) const { return cmap(values_, slot); }
  Eigen::Map<Matrix<T>> grad(int slot) { return map(grads_, slot); }
  Eigen::Map<const Matrix<T>> grad(int slot) const { return cmap(grads_, slot); }

  int find(const std::string& name) const {
    for (std::size_t i = 0; i < slots_.size(); ++i)
      if (slots_[i].name == name) return static_cast<int>(i);
    throw std::out_of_range("ParamStore: no slot named '" + name + "'");
  }

  void zero_grad() { std::fill(grads_.begin(), grads_.end(), T(0)); }

 private:
  Eigen::Map<Matrix<T>> map(std::vector<T>& v, int slot) {
    const Slot& s = slots_.at(static_cast<std::size_t>(slot));
    return Eigen::Map<Matrix<T>>(v.data() + s.offset, s.rows, s.cols);
  }
  Eigen::Map<const Matrix<T>> cmap(const std::vector<T>& v, int slot) const {
    const Slot& s = slots_.at(static_cast<std::size_t>(slot));
    return Eigen::Map<const Matrix<T>>(v.data() + s.offset, s.rows, s.cols);
  }

  std::vector<Slot> slots_;
  std::vector<T> values_;
  std::vector<T> grads_;
};

/// Z = W X + b
template <class T>
struct DenseLayer {
  int weight = -1;
  int bias = -1;
  int in = 0;
  int out = 0;

  static DenseLayer create(ParamStore<T>& store, const std::string& name, int in_dim, int out_dim) {
    DenseLayer l;
    l.in = in_dim;
    l.out = out_dim;
    l.weight = store.add(name + ".weight", out_dim, in_dim);
    l.bias = store.add(name + ".bias", out_dim, 1);
    return l;
  }

  Matrix<T> forward(const ParamStore<T>& store, const Matrix<T>& x) const {
    Matrix<T> z(out, x.cols());
    z.noalias() = store.param(weight) * x;
    z.colwise() += store.param(bias).col(0);
    return z;
  }

  /// Accumulates dW, db; returns dX when `want_input` is set.
  Matrix<T> backward(ParamStore<T>& store, const Matrix<T>& x, const Matrix<T>& grad_z, bool want_input) const {
    store.grad(weight).noalias() += grad_z * x.transpose();
    // Reduce into owned storage first: summation order into a Map depends on
    // its address, which would make training depend on heap layout.
    const Matrix<T> db = grad_z.rowwise().sum();
    store.grad(bias) += db;
    if (!want_input) return {};
    Matrix<T> gx(in, x.cols());
    gx.noalias() = store.param(weight).transpose() * grad_z;
    return gx;
  }

  void init(ParamStore<T>& store, std::mt19937_64& rng, double limit_scale) const {
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    const double limit = std::sqrt(limit_scale / in);
    auto w = store.param(weight);
    for (Eigen::Index c = 0; c < w.cols(); ++c)
      for (Eigen::Index r = 0; r < w.rows(); ++r) w(r, c) = static_cast<T>(limit * u(rng));
    store.param(bias).setZero();
  }
};

template <class T>
T softplus(T x) {
  return std::max(x, T(0)) + std::log1p(std::exp(-std::abs(x)));
}

template <class T>
T sigmoid(T x) {
  return x >= T(0) ? T(1) / (T(1) + std::exp(-x)) : std::exp(x) / (T(1) + std::exp(x));
}

template <class T>
class Mlp {
 public:
  /// Everything backward needs from one forward pass.
  struct Tape {
    bool valid = false;
    std::vector<Matrix<T>> layer_inputs;  // input to trunk layer l
    std::vector<Matrix<T>> hidden;        // ReLU output of trunk layer l
    Matrix<T> raw_density;                // 1 x B
    Matrix<T> density;                    // 1 x B, softplus(raw)
    Matrix<T> color_input;                // [bottleneck; dirs]
    Matrix<T> color_hidden;
    Matrix<T> rgb;                        // 3 x B
  };

  Mlp() = default;

  Mlp(const MlpSpec& spec, ParamStore<T>& store, const std::string& prefix = "") : spec_(spec) {
    validate(spec_);
    for (int l = 0; l < spec_.depth; ++l) {
      int in = l == 0 ? spec_.input_dim : spec_.width;
      if (is_skip(l)) in += spec_.input_dim;
      trunk_.push_back(DenseLayer<T>::create(store, prefix + "trunk." + std::to_string(l), in, spec_.width));
    }
    density_ = DenseLayer<T>::create(store, prefix + "density", spec_.width, 1);
    if (spec_.has_color_head) {
      bottleneck_ = DenseLayer<T>::create(store, prefix + "bottleneck", spec_.width, spec_.bottleneck_width);
      color_hidden_ = DenseLayer<T>::create(store, prefix + "color_hidden", spec_.bottleneck_width + spec_.dir_dim,
                                            spec_.color_width);
      rgb_ = DenseLayer<T>::create(store, prefix + "rgb", spec_.color_width, 3);
    }
  }

  const MlpSpec& spec() const { return spec_; }
  const std::vector<DenseLayer<T>>& trunk() const { return trunk_; }
  const DenseLayer<T>& density_layer() const { return density_; }

  /// Fan-in scaled uniform weights (He for ReLU layers, LeCun for heads),
  /// zero biases, and a negative density bias so initial densities are small.
  void init(ParamStore<T>& store, std::mt19937_64& rng) const {
    for (const auto& l : trunk_) l.init(store, rng, 6.0);
    density_.init(store, rng, 3.0);
    store.param(density_.bias)(0, 0) = static_cast<T>(spec_.density_bias);
    if (spec_.has_color_head) {
      bottleneck_.init(store, rng, 3.0);
      color_hidden_.init(store, rng, 6.0);
      rgb_.init(store, rng, 3.0);
    }
    store.zero_grad();
  }

  void forward(const ParamStore<T>& store, Matrix<T> features, const Matrix<T>* dirs, Tape& tape) const {
    if (features.rows() != spec_.input_dim)
      throw std::invalid_argument("Mlp::forward: expected " + std::to_string(spec_.input_dim) + " input features, got " +
                                  std::to_string(features.rows()));
    const Eigen::Index batch = features.cols();
    if (spec_.has_color_head) {
      if (dirs == nullptr || dirs->rows() != spec_.dir_dim || dirs->cols() != batch)
        throw std::invalid_argument("Mlp::forward: direction features missing or mis-sized");
    }
    tape = Tape{};
    tape.layer_inputs.resize(trunk_.size());
    tape.hidden.resize(trunk_.size());
    tape.layer_inputs[0] = std::move(features);
    const Matrix<T>& raw_input = tape.layer_inputs[0];
    for (std::size_t l = 0; l < trunk_.size(); ++l) {
      if (l > 0) {
        if (is_skip(static_cast<int>(l))) {
          Matrix<T> cat(spec_.width + spec_.input_dim, batch);
          cat.topRows(spec_.width) = tape.hidden[l - 1];
          cat.bottomRows(spec_.input_dim) = raw_input;
          tape.layer_inputs[l] = std::move(cat);
        } else {
          tape.layer_inputs[l] = tape.hidden[l - 1];
        }
      }
      tape.hidden[l] = trunk_[l].forward(store, tape.layer_inputs[l]).cwiseMax(T(0));
    }
    const Matrix<T>& top = tape.hidden.back();
    tape.raw_density = density_.forward(store, top);
    tape.density = tape.raw_density.unaryExpr([](T x) { return softplus(x); });
    if (spec_.has_color_head) {
      tape.color_input.resize(spec_.bottleneck_width + spec_.dir_dim, batch);
      tape.color_input.topRows(spec_.bottleneck_width) = bottleneck_.forward(store, top);
      if (spec_.dir_dim > 0) tape.color_input.bottomRows(spec_.dir_dim) = *dirs;
      tape.color_hidden = color_hidden_.forward(store, tape.color_input).cwiseMax(T(0));
      tape.rgb = rgb_.forward(store, tape.color_hidden).unaryExpr([](T x) { return sigmoid(x); });
    }
    tape.valid = true;
  }

  /// Accumulates parameter gradients into `store`. grad_density is 1 x B,
  /// grad_rgb 3 x B (required for color MLPs, may be null otherwise). If
  /// grad_input is non-null it receives dL/dfeatures.
  void backward(ParamStore<T>& store, const Tape& tape, const Matrix<T>& grad_density, const Matrix<T>* grad_rgb,
                Matrix<T>* grad_input = nullptr) const {
    if (!tape.valid) throw std::logic_error("Mlp::backward: no recorded forward pass");
    const Eigen::Index batch = tape.density.cols();
    if (grad_density.rows() != 1 || grad_density.cols() != batch)
      throw std::invalid_argument("Mlp::backward: grad_density must be 1 x batch");
    const Matrix<T>& top = tape.hidden.back();

    // d softplus(x)/dx = sigmoid(x)
    const Matrix<T> grad_raw =
        grad_density.cwiseProduct(tape.raw_density.unaryExpr([](T x) { return sigmoid(x); }));
    Matrix<T> grad_h = density_.backward(store, top, grad_raw, true);

    if (spec_.has_color_head) {
      if (grad_rgb == nullptr || grad_rgb->rows() != 3 || grad_rgb->cols() != batch)
        throw std::invalid_argument("Mlp::backward: grad_rgb must be 3 x batch");
      const Matrix<T> grad_rgb_raw =
          grad_rgb->cwiseProduct(tape.rgb.cwiseProduct((Matrix<T>::Ones(3, batch) - tape.rgb)));
      Matrix<T> grad_ch = rgb_.backward(store, tape.color_hidden, grad_rgb_raw, true);
      grad_ch = (tape.color_hidden.array() > T(0)).select(grad_ch, T(0));
      const Matrix<T> grad_cin = color_hidden_.backward(store, tape.color_input, grad_ch, true);
      const Matrix<T> grad_bottleneck = grad_cin.topRows(spec_.bottleneck_width);
      grad_h += bottleneck_.backward(store, top, grad_bottleneck, true);
    }

    Matrix<T> grad_raw_input;
    if (grad_input != nullptr) grad_raw_input = Matrix<T>::Zero(spec_.input_dim, batch);
    for (std::size_t l = trunk_.size(); l-- > 0;) {
      // ReLU subgradient at exactly zero is zero.
      const Matrix<T> grad_z = (tape.hidden[l].array() > T(0)).select(grad_h, T(0));
      const bool need_input = l > 0 || grad_input != nullptr;
      Matrix<T> grad_in = trunk_[l].backward(store, tape.layer_inputs[l], grad_z, need_input);
      if (!need_input) break;
      if (l == 0) {
        grad_raw_input += grad_in;
      } else if (is_skip(static_cast<int>(l))) {
        if (grad_input != nullptr) grad_raw_input += grad_in.bottomRows(spec_.input_dim);
        grad_h = grad_in.topRows(spec_.width);
      } else {
        grad_h = std::move(grad_in);
      }
    }
    if (grad_input != nullptr) *grad_input = std::move(grad_raw_input);
  }

 private:
  bool is_skip(int l) const {
    for (int s : spec_.skip_layers)
      if (s == l) return true;
    return false;
  }

  MlpSpec spec_;
  std::vector<DenseLayer<T>> trunk_;
  DenseLayer<T> density_;
  DenseLayer<T> bottleneck_;
  DenseLayer<T> color_hidden_;
  DenseLayer<T> rgb_;
};

/// Density-only network plus its parameters.
template <class T>
struct ProposalNetwork {
  ParamStore<T> params;
  Mlp<T> mlp;

  explicit ProposalNetwork(MlpSpec spec) {
    spec.has_color_head = false;
    mlp = Mlp<T>(spec, params);
  }
};

/// Density + color network plus its parameters.
template <class T>
struct NerfNetwork {
  ParamStore<T> params;
  Mlp<T> mlp;

  explicit NerfNetwork(MlpSpec spec) {
    spec.has_color_head = true;
    mlp = Mlp<T>(spec, params);
  }
};

template <class T>
void init_params(ProposalNetwork<T>& net, std::mt19937_64& rng) {
  net.mlp.init(net.params, rng);
}

template <class T>
void init_params(NerfNetwork<T>& net, std::mt19937_64& rng) {
  net.mlp.init(net.params, rng);
}

/// Per-sample densities tau >= 0 for a (input_dim x B) feature batch.
template <class T>
Matrix<T> proposal_forward(const ProposalNetwork<T>& net, Matrix<T> features,
                           typename Mlp<T>::Tape* tape = nullptr) {
  typename Mlp<T>::Tape local;
  auto& t = tape ? *tape : local;
  net.mlp.forward(net.params, std::move(features), nullptr, t);
  return t.density;
}

template <class T>
std::pair<Matrix<T>, Matrix<T>> nerf_forward(const NerfNetwork<T>& net, Matrix<T> features, const Matrix<T>& dirs,
                                             typename Mlp<T>::Tape* tape = nullptr) {
  typename Mlp<T>::Tape local;
  auto& t = tape ? *tape : local;
  net.mlp.forward(net.params, std::move(features), &dirs, t);
  return {t.density, t.rgb};
}

}  // namespace unerf
