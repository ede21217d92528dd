#pragma once

// Differentiable ops recorded on a Tape. Matrices are [batch, features].
// Every kernel processes rows independently, so a record's result does not
// depend on the batch it was evaluated in.

#include <cmath>
#include <cstddef>
#include <memory>
#include <string>
#include <vector>

#include "drex/matrix.hpp"
#include "drex/nn/primitives.hpp"
#include "drex/nn/tape.hpp"
#include "drex/rng.hpp"

namespace drex::nn {

namespace detail {

inline void require(bool ok, const char* op, const std::string& what) {
  if (!ok) throw ShapeError(std::string(op) + ": " + what);
}

// y[r, :] = b + sum_i x[r, i] * W[i, :]   (W is [in, out])
template <class T>
void linear_forward(const Matrix<T>& x, const Matrix<T>& w, const Matrix<T>& b, Matrix<T>& y) {
  const std::size_t rows = x.rows(), in = w.rows(), out = w.cols();
  for (std::size_t r = 0; r < rows; ++r) {
    T* yr = y.data() + r * out;
    for (std::size_t o = 0; o < out; ++o) yr[o] = b.data()[o];
  }
  // Rows inner so each weight row is reused across the batch while hot.
  for (std::size_t i = 0; i < in; ++i) {
    const T* wi = w.data() + i * out;
    for (std::size_t r = 0; r < rows; ++r) {
      const T xv = x.data()[r * in + i];
      T* yr = y.data() + r * out;
      for (std::size_t o = 0; o < out; ++o) yr[o] += xv * wi[o];
    }
  }
}

}  // namespace detail

/// x[B, in] * W[in, out] + b[1, out].
template <class T>
Var linear(Tape<T>& tape, Var x, Var w, Var b) {
  const auto& xv = tape.value(x);
  const auto& wv = tape.value(w);
  const auto& bv = tape.value(b);
  detail::require(xv.cols() == wv.rows(), "linear",
                  "input width " + std::to_string(xv.cols()) + " vs weight rows " + std::to_string(wv.rows()));
  detail::require(bv.rows() == 1 && bv.cols() == wv.cols(), "linear", "bias shape");
  Matrix<T> y(xv.rows(), wv.cols());
  detail::linear_forward(xv, wv, bv, y);
  return tape.push(std::move(y), {x, w, b}, [x, w, b](Tape<T>& t, const Matrix<T>& dy) {
    const auto& xv = t.value(x);
    const auto& wv = t.value(w);
    const std::size_t rows = xv.rows(), in = wv.rows(), out = wv.cols();
    if (t.needs_grad(w)) {
      auto& dw = t.grad_ref(w);
      for (std::size_t i = 0; i < in; ++i) {
        T* dwi = dw.data() + i * out;
        for (std::size_t r = 0; r < rows; ++r) {
          const T xv_ri = xv.data()[r * in + i];
          const T* dyr = dy.data() + r * out;
          for (std::size_t o = 0; o < out; ++o) dwi[o] += xv_ri * dyr[o];
        }
      }
    }
    if (t.needs_grad(b)) {
      auto& db = t.grad_ref(b);
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t o = 0; o < out; ++o) db.data()[o] += dy.data()[r * out + o];
    }
    if (t.needs_grad(x)) {
      auto& dx = t.grad_ref(x);
      for (std::size_t r = 0; r < rows; ++r) {
        const T* dyr = dy.data() + r * out;
        for (std::size_t i = 0; i < in; ++i) {
          const T* wi = wv.data() + i * out;
          T acc = 0;
#pragma omp simd reduction(+ : acc)
          for (std::size_t o = 0; o < out; ++o) acc += dyr[o] * wi[o];
          dx.data()[r * in + i] += acc;
        }
      }
    }
  });
}

/// Row-wise LayerNorm with gain[1, n] and offset[1, n].
template <class T>
Var layer_norm(Tape<T>& tape, Var x, Var gain, Var offset, T eps = T(kLayerNormEps)) {
  const auto& xv = tape.value(x);
  const auto& gv = tape.value(gain);
  const auto& ov = tape.value(offset);
  const std::size_t n = xv.cols();
  detail::require(gv.rows() == 1 && gv.cols() == n && ov.rows() == 1 && ov.cols() == n, "layer_norm",
                  "gain/offset must be [1, " + std::to_string(n) + "]");
  Matrix<T> y(xv.rows(), n);
  auto stats = std::make_shared<std::vector<NormStats<T>>>(xv.rows());
  for (std::size_t r = 0; r < xv.rows(); ++r)
    (*stats)[r] = layer_norm_into<T>(xv.row(r), gv.row(0), ov.row(0), eps, y.row(r));
  return tape.push(std::move(y), {x, gain, offset}, [x, gain, offset, stats](Tape<T>& t, const Matrix<T>& dy) {
    const auto& xv = t.value(x);
    const auto& gv = t.value(gain);
    const std::size_t n = xv.cols();
    std::vector<T> xhat(n), dxhat(n);
    for (std::size_t r = 0; r < xv.rows(); ++r) {
      const auto [mean, inv_std] = (*stats)[r];
      for (std::size_t i = 0; i < n; ++i) {
        xhat[i] = (xv(r, i) - mean) * inv_std;
        dxhat[i] = dy(r, i) * gv(0, i);
      }
      if (t.needs_grad(gain)) {
        auto& dg = t.grad_ref(gain);
        for (std::size_t i = 0; i < n; ++i) dg(0, i) += dy(r, i) * xhat[i];
      }
      if (t.needs_grad(offset)) {
        auto& db = t.grad_ref(offset);
        for (std::size_t i = 0; i < n; ++i) db(0, i) += dy(r, i);
      }
      if (t.needs_grad(x)) {
        T mean_d = 0, mean_dx = 0;
        for (std::size_t i = 0; i < n; ++i) {
          mean_d += dxhat[i];
          mean_dx += dxhat[i] * xhat[i];
        }
        mean_d /= T(n);
        mean_dx /= T(n);
        auto& dx = t.grad_ref(x);
        for (std::size_t i = 0; i < n; ++i) dx(r, i) += inv_std * (dxhat[i] - mean_d - xhat[i] * mean_dx);
      }
    }
  });
}

template <class T>
Var gelu(Tape<T>& tape, Var x) {
  const auto& xv = tape.value(x);
  Matrix<T> y(xv.rows(), xv.cols());
  for (std::size_t i = 0; i < xv.size(); ++i) y.data()[i] = gelu(xv.data()[i]);
  return tape.push(std::move(y), {x}, [x](Tape<T>& t, const Matrix<T>& dy) {
    const auto& xv = t.value(x);
    auto& dx = t.grad_ref(x);
    for (std::size_t i = 0; i < xv.size(); ++i) dx.data()[i] += dy.data()[i] * gelu_grad(xv.data()[i]);
  });
}

/// [a | b] along the feature axis.
template <class T>
Var concat_cols(Tape<T>& tape, Var a, Var b) {
  const auto& av = tape.value(a);
  const auto& bv = tape.value(b);
  detail::require(av.rows() == bv.rows(), "concat_cols", "row count mismatch");
  const std::size_t na = av.cols(), nb = bv.cols();
  Matrix<T> y(av.rows(), na + nb);
  for (std::size_t r = 0; r < av.rows(); ++r) {
    for (std::size_t i = 0; i < na; ++i) y(r, i) = av(r, i);
    for (std::size_t i = 0; i < nb; ++i) y(r, na + i) = bv(r, i);
  }
  return tape.push(std::move(y), {a, b}, [a, b, na, nb](Tape<T>& t, const Matrix<T>& dy) {
    if (t.needs_grad(a)) {
      auto& da = t.grad_ref(a);
      for (std::size_t r = 0; r < dy.rows(); ++r)
        for (std::size_t i = 0; i < na; ++i) da(r, i) += dy(r, i);
    }
    if (t.needs_grad(b)) {
      auto& db = t.grad_ref(b);
      for (std::size_t r = 0; r < dy.rows(); ++r)
        for (std::size_t i = 0; i < nb; ++i) db(r, i) += dy(r, na + i);
    }
  });
}

/// Row-wise softmax(logits / tau) with tau = exp(log_tau[0, 0]).
template <class T>
Var softmax_temperature(Tape<T>& tape, Var logits, Var log_tau) {
  const auto& lv = tape.value(logits);
  const auto& tv = tape.value(log_tau);
  detail::require(tv.rows() == 1 && tv.cols() == 1, "softmax_temperature", "log_tau must be [1, 1]");
  const T tau = std::exp(tv(0, 0));
  if (!(tau > T(0)) || !std::isfinite(tau)) throw DomainError("softmax_temperature: tau must be positive and finite");
  const T inv_tau = T(1) / tau;
  Matrix<T> y(lv.rows(), lv.cols());
  for (std::size_t r = 0; r < lv.rows(); ++r) softmax_scaled_into<T>(lv.row(r), inv_tau, y.row(r));
  auto out_values = std::make_shared<Matrix<T>>(y);
  return tape.push(std::move(y), {logits, log_tau},
                   [logits, log_tau, out_values, inv_tau](Tape<T>& t, const Matrix<T>& dy) {
                     const auto& yv = *out_values;
                     const auto& lv = t.value(logits);
                     T dlog_tau = 0;
                     for (std::size_t r = 0; r < yv.rows(); ++r) {
                       T dot = 0;
                       for (std::size_t k = 0; k < yv.cols(); ++k) dot += dy(r, k) * yv(r, k);
                       for (std::size_t k = 0; k < yv.cols(); ++k) {
                         const T ds = yv(r, k) * (dy(r, k) - dot);  // d/d(logits/tau)
                         if (t.needs_grad(logits)) t.grad_ref(logits)(r, k) += ds * inv_tau;
                         dlog_tau -= ds * lv(r, k) * inv_tau;
                       }
                     }
                     if (t.needs_grad(log_tau)) t.grad_ref(log_tau)(0, 0) += dlog_tau;
                   });
}

/// Attention-weighted fusion: w0 * a + w1 * b + alpha * (a + b), row-wise,
/// with w[B, 2] and alpha[1, 1].
template <class T>
Var weighted_fusion(Tape<T>& tape, Var a, Var b, Var w, Var alpha) {
  const auto& av = tape.value(a);
  const auto& bv = tape.value(b);
  const auto& wv = tape.value(w);
  const auto& alv = tape.value(alpha);
  detail::require(av.same_shape(bv), "weighted_fusion", "branch shapes differ");
  detail::require(wv.rows() == av.rows() && wv.cols() == 2, "weighted_fusion", "weights must be [B, 2]");
  detail::require(alv.rows() == 1 && alv.cols() == 1, "weighted_fusion", "alpha must be [1, 1]");
  const T al = alv(0, 0);
  Matrix<T> y(av.rows(), av.cols());
  for (std::size_t r = 0; r < av.rows(); ++r) {
    const T wa = wv(r, 0), wb = wv(r, 1);
    for (std::size_t i = 0; i < av.cols(); ++i) y(r, i) = wa * av(r, i) + wb * bv(r, i) + al * (av(r, i) + bv(r, i));
  }
  return tape.push(std::move(y), {a, b, w, alpha}, [a, b, w, alpha](Tape<T>& t, const Matrix<T>& dy) {
    const auto& av = t.value(a);
    const auto& bv = t.value(b);
    const auto& wv = t.value(w);
    const T al = t.value(alpha)(0, 0);
    T dal = 0;
    for (std::size_t r = 0; r < av.rows(); ++r) {
      T dwa = 0, dwb = 0;
      for (std::size_t i = 0; i < av.cols(); ++i) {
        const T g = dy(r, i);
        dwa += g * av(r, i);
        dwb += g * bv(r, i);
        dal += g * (av(r, i) + bv(r, i));
      }
      if (t.needs_grad(w)) {
        auto& dw = t.grad_ref(w);
        dw(r, 0) += dwa;
        dw(r, 1) += dwb;
      }
      if (t.needs_grad(a)) {
        auto& da = t.grad_ref(a);
        const T s = wv(r, 0) + al;
        for (std::size_t i = 0; i < av.cols(); ++i) da(r, i) += dy(r, i) * s;
      }
      if (t.needs_grad(b)) {
        auto& db = t.grad_ref(b);
        const T s = wv(r, 1) + al;
        for (std::size_t i = 0; i < av.cols(); ++i) db(r, i) += dy(r, i) * s;
      }
    }
    if (t.needs_grad(alpha)) t.grad_ref(alpha)(0, 0) += dal;
  });
}

/// Inverted dropout; identity outside training.
template <class T>
Var dropout(Tape<T>& tape, Var x, double p, bool training, Rng* rng) {
  if (!training || p == 0.0) {
    if (p < 0.0 || p >= 1.0) throw DomainError("dropout: p must lie in [0, 1)");
    return x;
  }
  const auto& xv = tape.value(x);
  auto mask = std::make_shared<std::vector<T>>(dropout_mask<T>(xv.size(), p, training, rng));
  Matrix<T> y(xv.rows(), xv.cols());
  for (std::size_t i = 0; i < xv.size(); ++i) y.data()[i] = xv.data()[i] * (*mask)[i];
  return tape.push(std::move(y), {x}, [x, mask](Tape<T>& t, const Matrix<T>& dy) {
    auto& dx = t.grad_ref(x);
    for (std::size_t i = 0; i < dy.size(); ++i) dx.data()[i] += dy.data()[i] * (*mask)[i];
  });
}

/// Mean Huber loss between pred[B, 1] and target[B, 1]; returns [1, 1].
template <class T>
Var huber_loss(Tape<T>& tape, Var pred, Var target, T delta = T(kHuberDelta)) {
  const auto& pv = tape.value(pred);
  const auto& tv = tape.value(target);
  detail::require(pv.same_shape(tv), "huber_loss", "prediction/target shape mismatch");
  Matrix<T> y(1, 1);
  y(0, 0) = huber_loss<T>(pv.flat(), tv.flat(), delta);
  return tape.push(std::move(y), {pred, target}, [pred, target, delta](Tape<T>& t, const Matrix<T>& dy) {
    const auto& pv = t.value(pred);
    const auto& tv = t.value(target);
    const T scale = dy(0, 0) / T(pv.size());
    for (std::size_t i = 0; i < pv.size(); ++i) {
      const T g = scale * huber_grad(pv.data()[i] - tv.data()[i], delta);
      if (t.needs_grad(pred)) t.grad_ref(pred).data()[i] += g;
      if (t.needs_grad(target)) t.grad_ref(target).data()[i] -= g;
    }
  });
}

/// Sum of all elements; returns [1, 1].
template <class T>
Var sum(Tape<T>& tape, Var x) {
  const auto& xv = tape.value(x);
  Matrix<T> y(1, 1);
  for (T v : xv.flat()) y(0, 0) += v;
  return tape.push(std::move(y), {x}, [x](Tape<T>& t, const Matrix<T>& dy) {
    auto& dx = t.grad_ref(x);
    for (auto& g : dx.flat()) g += dy(0, 0);
  });
}

/// Elementwise product of equal-shaped matrices.
template <class T>
Var multiply(Tape<T>& tape, Var a, Var b) {
  const auto& av = tape.value(a);
  const auto& bv = tape.value(b);
  detail::require(av.same_shape(bv), "multiply", "shape mismatch");
  Matrix<T> y(av.rows(), av.cols());
  for (std::size_t i = 0; i < av.size(); ++i) y.data()[i] = av.data()[i] * bv.data()[i];
  return tape.push(std::move(y), {a, b}, [a, b](Tape<T>& t, const Matrix<T>& dy) {
    const auto& av = t.value(a);
    const auto& bv = t.value(b);
    if (t.needs_grad(a)) {
      auto& da = t.grad_ref(a);
      for (std::size_t i = 0; i < dy.size(); ++i) da.data()[i] += dy.data()[i] * bv.data()[i];
    }
    if (t.needs_grad(b)) {
      auto& db = t.grad_ref(b);
      for (std::size_t i = 0; i < dy.size(); ++i) db.data()[i] += dy.data()[i] * av.data()[i];
    }
  });
}

}  // namespace drex::nn
