#pragma once

// Pointwise and per-vector primitives. The autograd ops in tape.hpp call these
// same kernels, so a value computed here and one computed through a tape agree
// to the bit.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numbers>
#include <span>
#include <stdexcept>
#include <vector>

#include "drex/rng.hpp"

namespace drex::nn {

inline constexpr double kLayerNormEps = 1e-5;
inline constexpr double kHuberDelta = 1.0;

class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Exact GELU, x * Phi(x).
template <class T>
T gelu(T x) {
  return T(0.5) * x * (T(1) + std::erf(x * T(std::numbers::sqrt2 / 2)));
}

/// d/dx [x * Phi(x)] = Phi(x) + x * phi(x).
template <class T>
T gelu_grad(T x) {
  const T cdf = T(0.5) * (T(1) + std::erf(x * T(std::numbers::sqrt2 / 2)));
  const T pdf = std::exp(T(-0.5) * x * x) * T(std::numbers::inv_sqrtpi / std::numbers::sqrt2);
  return cdf + x * pdf;
}

template <class T>
std::vector<T> gelu(std::span<const T> x) {
  std::vector<T> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = gelu(x[i]);
  return out;
}

/// Statistics LayerNorm needs to run its backward pass.
template <class T>
struct NormStats {
  T mean;
  T inv_std;
};

template <class T>
NormStats<T> layer_norm_into(std::span<const T> x, std::span<const T> gain, std::span<const T> offset, T eps,
                             std::span<T> out) {
  const std::size_t n = x.size();
  T sum = 0;
  for (std::size_t i = 0; i < n; ++i) sum += x[i];
  const T mean = sum / T(n);
  T sq = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const T c = x[i] - mean;
    sq += c * c;
  }
  const T var = sq / T(n);
  const T inv_std = T(1) / std::sqrt(var + eps);
  for (std::size_t i = 0; i < n; ++i) out[i] = (x[i] - mean) * inv_std * gain[i] + offset[i];
  return {mean, inv_std};
}

template <class T>
std::vector<T> layer_norm(std::span<const T> x, std::span<const T> gain, std::span<const T> offset,
                          T eps = T(kLayerNormEps)) {
  if (gain.size() != x.size() || offset.size() != x.size())
    throw ShapeError("layer_norm: gain/offset length must match input");
  std::vector<T> out(x.size());
  layer_norm_into(x, gain, offset, eps, std::span<T>(out));
  return out;
}

template <class T>
void softmax_scaled_into(std::span<const T> logits, T inv_tau, std::span<T> out) {
  T peak = logits[0] * inv_tau;
  for (std::size_t k = 1; k < logits.size(); ++k) peak = std::max(peak, logits[k] * inv_tau);
  T total = 0;
  for (std::size_t k = 0; k < logits.size(); ++k) {
    out[k] = std::exp(logits[k] * inv_tau - peak);
    total += out[k];
  }
  for (std::size_t k = 0; k < logits.size(); ++k) out[k] /= total;
}

/// softmax(logits / tau).
template <class T>
std::vector<T> softmax_temperature(std::span<const T> logits, T tau) {
  if (!(tau > T(0))) throw DomainError("softmax_temperature: tau must be positive");
  if (logits.empty()) throw ShapeError("softmax_temperature: empty logits");
  std::vector<T> out(logits.size());
  softmax_scaled_into(logits, T(1) / tau, std::span<T>(out));
  return out;
}

/// Inverted dropout. Returns the per-element multiplier (0 or 1/(1-p)) so the
/// caller can reuse it as the backward mask.
template <class T>
std::vector<T> dropout_mask(std::size_t n, double p, bool training, Rng* rng) {
  if (p < 0.0 || p >= 1.0) throw DomainError("dropout: p must lie in [0, 1)");
  std::vector<T> mask(n, T(1));
  if (!training || p == 0.0) return mask;
  if (rng == nullptr) throw std::invalid_argument("dropout: training mode needs a generator");
  const T keep_scale = T(1.0 / (1.0 - p));
  for (auto& m : mask) m = rng->uniform() < p ? T(0) : keep_scale;
  return mask;
}

template <class T>
std::vector<T> dropout(std::span<const T> x, double p, bool training, Rng* rng) {
  const auto mask = dropout_mask<T>(x.size(), p, training, rng);
  std::vector<T> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] * mask[i];
  return out;
}

template <class T>
T huber(T residual, T delta) {
  const T a = std::abs(residual);
  return a <= delta ? T(0.5) * residual * residual : delta * (a - T(0.5) * delta);
}

template <class T>
T huber_grad(T residual, T delta) {
  if (std::abs(residual) <= delta) return residual;
  return residual > T(0) ? delta : -delta;
}

/// Mean Huber loss over paired elements.
template <class T>
T huber_loss(std::span<const T> pred, std::span<const T> target, T delta = T(kHuberDelta)) {
  if (pred.size() != target.size()) throw ShapeError("huber_loss: length mismatch");
  if (!(delta > T(0))) throw DomainError("huber_loss: delta must be positive");
  if (pred.empty()) throw ShapeError("huber_loss: empty input");
  T total = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) total += huber(pred[i] - target[i], delta);
  return total / T(pred.size());
}

}  // namespace drex::nn
