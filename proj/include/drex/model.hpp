#pragma once

// Attention fusion of a DINO [CLS] vector and a multi-scale ResNet vector,
// followed by the regression head:
//
//   d' = GELU(LN(W_d f_dino + b_d))         r' = GELU(LN(W_r f_resnet + b_r))
//   [w_d, w_r] = softmax(MLP([d'; r']) / tau)
//   f = LN(w_d d' + w_r r' + alpha (d' + r'))
//   c = head(f),   head: proj -> 128 -> 64 -> 32 -> 1, GELU + dropout on hidden layers

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "drex/matrix.hpp"
#include "drex/nn/ops.hpp"
#include "drex/nn/params.hpp"
#include "drex/nn/tape.hpp"
#include "drex/rng.hpp"

namespace drex {

struct FusionConfig {
  std::size_t dino_dim = 384;
  std::size_t resnet_dim = 3840;
  std::size_t proj_dim = 384;
  std::size_t attn_hidden = 128;
  std::vector<std::size_t> head_dims = {128, 64, 32};
  double dropout_p = 0.1;
  double tau_init = 1.0;
  double alpha_init = 0.1;
  std::uint64_t seed = 0;

  void validate() const {
    if (dino_dim == 0 || resnet_dim == 0 || proj_dim == 0 || attn_hidden == 0)
      throw std::invalid_argument("FusionConfig: dimensions must be positive");
    if (head_dims.empty()) throw std::invalid_argument("FusionConfig: head needs at least one hidden layer");
    for (auto d : head_dims)
      if (d == 0) throw std::invalid_argument("FusionConfig: head dims must be positive");
    if (!(dropout_p >= 0.0 && dropout_p < 1.0)) throw std::invalid_argument("FusionConfig: dropout_p outside [0, 1)");
    if (!(tau_init > 0.0)) throw std::invalid_argument("FusionConfig: tau_init must be positive");
  }
  friend bool operator==(const FusionConfig&, const FusionConfig&) = default;
};

/// Which projected branch embedding to replace with zeros (branch ablation).
enum class ZeroBranch { none, dino, resnet };

template <class T>
class DrexModel {
 public:
  struct Outputs {
    nn::Var d_proj;      // d'
    nn::Var r_proj;      // r'
    nn::Var weights;     // [B, 2] = [w_d, w_r]
    nn::Var fused_raw;   // before the final LayerNorm
    nn::Var fused;       // f
    nn::Var prediction;  // [B, 1]
  };

  struct Prediction {
    std::vector<T> score;
    std::vector<T> w_dino;
  };

  explicit DrexModel(FusionConfig config) : config_(std::move(config)) {
    config_.validate();
    build_layout();
    initialize(config_.seed);
  }

  const FusionConfig& config() const { return config_; }
  nn::ParamStore<T>& params() { return params_; }
  const nn::ParamStore<T>& params() const { return params_; }
  std::size_t param_count() const { return params_.scalar_count(); }

  /// Re-draws every parameter from `seed`: uniform(+-sqrt(1/fan_in)) for
  /// linear weights and biases, LayerNorm gain 1 / offset 0, tau and alpha
  /// from the config.
  void initialize(std::uint64_t seed) {
    Rng rng(derive_seed(seed, 0x1417));
    for (auto& p : params_) {
      const auto& name = p.name;
      if (name.ends_with(".gain")) {
        p.value.fill(T(1));
      } else if (name.ends_with(".offset")) {
        p.value.fill(T(0));
      } else if (name == "fusion.log_tau") {
        p.value.fill(T(std::log(config_.tau_init)));
      } else if (name == "fusion.alpha") {
        p.value.fill(T(config_.alpha_init));
      } else {
        const std::size_t fan_in = name.ends_with(".weight") ? p.value.rows() : fan_in_of_bias(name);
        const double bound = std::sqrt(1.0 / static_cast<double>(fan_in));
        for (auto& v : p.value.flat()) v = T(rng.uniform(-bound, bound));
      }
    }
    params_.zero_grad();
  }

  double tau() const { return std::exp(static_cast<double>(params_[idx_.log_tau].value(0, 0))); }
  double alpha() const { return static_cast<double>(params_[idx_.alpha].value(0, 0)); }

  /// d' for a batch of raw DINO vectors.
  nn::Var project_dino(nn::Tape<T>& tape, nn::Var dino, bool trainable = false) const {
    check_width(tape.value(dino), config_.dino_dim, "dino");
    return project(tape, dino, idx_.dino, trainable);
  }

  /// r' for a batch of raw ResNet vectors.
  nn::Var project_resnet(nn::Tape<T>& tape, nn::Var resnet, bool trainable = false) const {
    check_width(tape.value(resnet), config_.resnet_dim, "resnet");
    return project(tape, resnet, idx_.resnet, trainable);
  }

  /// Attention fusion + head from already projected branches.
  Outputs fuse_projected(nn::Tape<T>& tape, nn::Var d_proj, nn::Var r_proj, bool training, Rng* rng,
                         bool trainable = false) const {
    auto bind = [&](std::size_t i) { return binder(tape, i, trainable); };
    Outputs out;
    out.d_proj = d_proj;
    out.r_proj = r_proj;
    auto joined = nn::concat_cols(tape, d_proj, r_proj);
    auto hidden = nn::gelu(tape, nn::linear(tape, joined, bind(idx_.attn1_w), bind(idx_.attn1_b)));
    auto logits = nn::linear(tape, hidden, bind(idx_.attn2_w), bind(idx_.attn2_b));
    out.weights = nn::softmax_temperature(tape, logits, bind(idx_.log_tau));
    out.fused_raw = nn::weighted_fusion(tape, d_proj, r_proj, out.weights, bind(idx_.alpha));
    out.fused = nn::layer_norm(tape, out.fused_raw, bind(idx_.fused_gain), bind(idx_.fused_offset));
    auto x = out.fused;
    for (std::size_t l = 0; l < idx_.head.size(); ++l) {
      x = nn::linear(tape, x, bind(idx_.head[l].first), bind(idx_.head[l].second));
      if (l + 1 < idx_.head.size()) {
        x = nn::gelu(tape, x);
        x = nn::dropout(tape, x, config_.dropout_p, training, rng);
      }
    }
    out.prediction = x;
    return out;
  }

  /// Full forward pass. With `zero`, the named branch's projected embedding is
  /// replaced by zeros before attention, so the weights respond to the zeroed
  /// branch and the residual term carries the zero.
  Outputs forward(nn::Tape<T>& tape, nn::Var dino, nn::Var resnet, bool training, Rng* rng,
                  ZeroBranch zero = ZeroBranch::none, bool trainable = false) const {
    const std::size_t rows = tape.value(dino).rows();
    if (tape.value(resnet).rows() != rows) throw nn::ShapeError("forward: dino/resnet batch sizes differ");
    auto d = zero == ZeroBranch::dino ? tape.input(Matrix<T>(rows, config_.proj_dim)) : project_dino(tape, dino, trainable);
    auto r = zero == ZeroBranch::resnet ? tape.input(Matrix<T>(rows, config_.proj_dim))
                                        : project_resnet(tape, resnet, trainable);
    return fuse_projected(tape, d, r, training, rng, trainable);
  }

  /// Inference over a batch (no dropout).
  Prediction predict(const Matrix<T>& dino, const Matrix<T>& resnet, ZeroBranch zero = ZeroBranch::none) const {
    nn::Tape<T> tape;
    auto out = forward(tape, tape.input(dino), tape.input(resnet), false, nullptr, zero);
    return collect(tape, out);
  }

  /// Reads predictions and w_d off a finished forward pass.
  static Prediction collect(const nn::Tape<T>& tape, const Outputs& out) {
    const auto& p = tape.value(out.prediction);
    const auto& w = tape.value(out.weights);
    Prediction res;
    res.score.resize(p.rows());
    res.w_dino.resize(p.rows());
    for (std::size_t r = 0; r < p.rows(); ++r) {
      res.score[r] = p(r, 0);
      res.w_dino[r] = w(r, 0);
    }
    return res;
  }

  /// Same architecture and weights in another precision.
  template <class U>
  DrexModel<U> cast() const {
    DrexModel<U> out(config_);
    for (std::size_t k = 0; k < params_.size(); ++k) out.params()[k].value = params_[k].value.template cast<U>();
    return out;
  }

 private:
  struct Projection {
    std::size_t w, b, gain, offset;
  };
  struct Layout {
    Projection dino{}, resnet{};
    std::size_t attn1_w = 0, attn1_b = 0, attn2_w = 0, attn2_b = 0;
    std::size_t log_tau = 0, alpha = 0, fused_gain = 0, fused_offset = 0;
    std::vector<std::pair<std::size_t, std::size_t>> head;
  };

  void build_layout() {
    auto add = [&](const std::string& name, std::size_t rows, std::size_t cols) {
      params_.add(name, rows, cols);
      return params_.size() - 1;
    };
    const std::size_t p = config_.proj_dim;
    idx_.dino = {add("dino_proj.weight", config_.dino_dim, p), add("dino_proj.bias", 1, p),
                 add("dino_norm.gain", 1, p), add("dino_norm.offset", 1, p)};
    idx_.resnet = {add("resnet_proj.weight", config_.resnet_dim, p), add("resnet_proj.bias", 1, p),
                   add("resnet_norm.gain", 1, p), add("resnet_norm.offset", 1, p)};
    idx_.attn1_w = add("attention.fc1.weight", 2 * p, config_.attn_hidden);
    idx_.attn1_b = add("attention.fc1.bias", 1, config_.attn_hidden);
    idx_.attn2_w = add("attention.fc2.weight", config_.attn_hidden, 2);
    idx_.attn2_b = add("attention.fc2.bias", 1, 2);
    idx_.log_tau = add("fusion.log_tau", 1, 1);
    idx_.alpha = add("fusion.alpha", 1, 1);
    idx_.fused_gain = add("fused_norm.gain", 1, p);
    idx_.fused_offset = add("fused_norm.offset", 1, p);
    std::size_t in = p;
    auto widths = config_.head_dims;
    widths.push_back(1);
    for (std::size_t l = 0; l < widths.size(); ++l) {
      const std::string prefix = "head." + std::to_string(l);
      idx_.head.emplace_back(add(prefix + ".weight", in, widths[l]), add(prefix + ".bias", 1, widths[l]));
      in = widths[l];
    }
  }

  std::size_t fan_in_of_bias(const std::string& bias_name) const {
    const std::string weight = bias_name.substr(0, bias_name.size() - std::string(".bias").size()) + ".weight";
    return params_.at(weight).value.rows();
  }

  nn::Var binder(nn::Tape<T>& tape, std::size_t i, bool trainable) const {
    // Gradients are written only through a trainable binding; only the trainer
    // asks for one, on a model it owns.
    auto& p = const_cast<nn::Parameter<T>&>(params_[i]);
    return trainable ? tape.param(p) : tape.constant(p.value);
  }

  nn::Var project(nn::Tape<T>& tape, nn::Var x, const Projection& pr, bool trainable) const {
    auto y = nn::linear(tape, x, binder(tape, pr.w, trainable), binder(tape, pr.b, trainable));
    y = nn::layer_norm(tape, y, binder(tape, pr.gain, trainable), binder(tape, pr.offset, trainable));
    return nn::gelu(tape, y);
  }

  static void check_width(const Matrix<T>& m, std::size_t expected, const char* what) {
    if (m.cols() != expected)
      throw nn::ShapeError(std::string(what) + " input has " + std::to_string(m.cols()) + " features, model expects " +
                           std::to_string(expected));
  }

  FusionConfig config_;
  nn::ParamStore<T> params_;
  Layout idx_;
};

}  // namespace drex
