#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numbers>
#include <stdexcept>
#include <string>
#include <vector>

#include "drex/matrix.hpp"
#include "drex/nn/params.hpp"

namespace drex::nn {

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
};

/// Decoupled weight decay Adam (Loshchilov & Hutter), with bias correction.
template <class T>
class AdamW {
 public:
  AdamW(const ParamStore<T>& params, AdamWConfig config = {}) : config_(config) {
    for (const auto& p : params) {
      first_.emplace_back(p.value.rows(), p.value.cols());
      second_.emplace_back(p.value.rows(), p.value.cols());
    }
  }

  const AdamWConfig& config() const { return config_; }
  std::uint64_t step_count() const { return step_; }
  const std::vector<Matrix<T>>& first_moments() const { return first_; }
  const std::vector<Matrix<T>>& second_moments() const { return second_; }

  void step(ParamStore<T>& params, double lr) {
    if (params.size() != first_.size()) throw std::invalid_argument("AdamW: parameter store changed shape");
    ++step_;
    const double bc1 = 1.0 - std::pow(config_.beta1, static_cast<double>(step_));
    const double bc2 = 1.0 - std::pow(config_.beta2, static_cast<double>(step_));
    const T b1 = T(config_.beta1), b2 = T(config_.beta2);
    const T decay = T(1.0 - lr * config_.weight_decay);
    const T step_size = T(lr / bc1);
    const T inv_sqrt_bc2 = T(1.0 / std::sqrt(bc2));
    const T eps = T(config_.eps);
    for (std::size_t k = 0; k < params.size(); ++k) {
      auto& p = params[k];
      T* w = p.value.data();
      const T* g = p.grad.data();
      T* m = first_[k].data();
      T* v = second_[k].data();
      for (std::size_t i = 0; i < p.value.size(); ++i) {
        m[i] = b1 * m[i] + (T(1) - b1) * g[i];
        v[i] = b2 * v[i] + (T(1) - b2) * g[i] * g[i];
        w[i] *= decay;
        w[i] -= step_size * m[i] / (std::sqrt(v[i]) * inv_sqrt_bc2 + eps);
      }
    }
  }

 private:
  AdamWConfig config_;
  std::vector<Matrix<T>> first_;
  std::vector<Matrix<T>> second_;
  std::uint64_t step_ = 0;
};

/// One-cycle learning rate: cosine warm-up from max_lr/div_factor to max_lr at
/// pct_start*total_steps, then cosine decay to max_lr/final_div_factor.
struct OneCycleSchedule {
  double max_lr = 1e-3;
  std::uint64_t total_steps = 1;
  double pct_start = 0.3;
  double div_factor = 25.0;
  double final_div_factor = 1e4;

  double initial_lr() const { return max_lr / div_factor; }
  double final_lr() const { return max_lr / final_div_factor; }

  void validate() const {
    if (!(max_lr > 0) || total_steps == 0 || !(pct_start > 0 && pct_start < 1) || !(div_factor > 0) ||
        !(final_div_factor > 0))
      throw std::invalid_argument("OneCycleSchedule: invalid hyperparameters");
  }
};

inline double onecycle_lr(const OneCycleSchedule& s, std::uint64_t t) {
  s.validate();
  if (t > s.total_steps)
    throw std::out_of_range("onecycle_lr: step " + std::to_string(t) + " beyond total " +
                            std::to_string(s.total_steps));
  auto anneal = [](double from, double to, double frac) {
    return to + (from - to) * 0.5 * (1.0 + std::cos(std::numbers::pi * frac));
  };
  const double peak = s.pct_start * static_cast<double>(s.total_steps);
  const double x = static_cast<double>(t);
  if (x <= peak) return anneal(s.initial_lr(), s.max_lr, x / peak);
  return anneal(s.max_lr, s.final_lr(), (x - peak) / (static_cast<double>(s.total_steps) - peak));
}

/// Exponential moving average of parameter values.
template <class T>
class Ema {
 public:
  /// Shadow starts as a copy of `params`.
  Ema(const ParamStore<T>& params, double decay) : decay_(decay), shadow_(clone_values(params)) {
    if (!(decay >= 0.0 && decay < 1.0)) throw std::invalid_argument("Ema: decay must lie in [0, 1)");
  }

  /// Shadow starting from explicit values (e.g. zeros, or a restored checkpoint).
  static Ema with_shadow(ParamStore<T> shadow, double decay) {
    Ema ema(ParamStore<T>{}, decay);
    ema.shadow_ = std::move(shadow);
    return ema;
  }

  /// Zero shadow whose average() divides out the missing mass, 1 - decay^k,
  /// so the initial values carry no weight.
  static Ema zero_debiased(const ParamStore<T>& params, double decay) {
    auto shadow = clone_values(params);
    for (auto& p : shadow) p.value.fill(T(0));
    Ema ema = with_shadow(std::move(shadow), decay);
    ema.debias_ = true;
    return ema;
  }

  double decay() const { return decay_; }
  std::size_t updates() const { return updates_; }
  bool debiased() const { return debias_; }
  const ParamStore<T>& shadow() const { return shadow_; }
  ParamStore<T>& shadow() { return shadow_; }

  void update(const ParamStore<T>& params) {
    shadow_.check_layout(params);
    const T d = T(decay_), c = T(1.0 - decay_);
    for (std::size_t k = 0; k < params.size(); ++k) {
      T* s = shadow_[k].value.data();
      const T* p = params[k].value.data();
      for (std::size_t i = 0; i < params[k].value.size(); ++i) s[i] = d * s[i] + c * p[i];
    }
    ++updates_;
  }

  /// The averaged weights: the shadow, bias-corrected in debiased mode.
  ParamStore<T> average() const {
    ParamStore<T> out = clone_values(shadow_);
    if (!debias_ || updates_ == 0) return out;
    const T scale = T(1.0 / (1.0 - std::pow(decay_, static_cast<double>(updates_))));
    for (auto& p : out)
      for (auto& v : p.value.flat()) v *= scale;
    return out;
  }

 private:
  static ParamStore<T> clone_values(const ParamStore<T>& params) {
    ParamStore<T> out;
    for (const auto& p : params) out.add(p.name, p.value.rows(), p.value.cols()).value = p.value;
    return out;
  }

  double decay_;
  ParamStore<T> shadow_;
  std::size_t updates_ = 0;
  bool debias_ = false;
};

template <class T>
void ema_update(Ema<T>& ema, const ParamStore<T>& params) {
  ema.update(params);
}

}  // namespace drex::nn
