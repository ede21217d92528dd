#pragma once

#include <chrono>
#include <cmath>
#include <cstddef>
#include <cstdio>
#include <functional>
#include <limits>
#include <numeric>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "drex/checkpoint.hpp"
#include "drex/feature_store.hpp"
#include "drex/matrix.hpp"
#include "drex/metrics.hpp"
#include "drex/model.hpp"
#include "drex/nn/ops.hpp"
#include "drex/nn/optim.hpp"
#include "drex/parallel.hpp"
#include "drex/rng.hpp"
#include "drex/train_config.hpp"

namespace drex {

class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Feature matrices for a manifest, rows in manifest order.
struct FeatureBatch {
  Matrix<float> dino;
  Matrix<float> resnet;
  std::vector<float> scores;  // empty unless every record is scored

  std::size_t size() const { return dino.rows(); }
};

inline FeatureBatch to_batch(const DatasetManifest& m) {
  const std::size_t n = m.size(), dd = m.dims.dino_dim, rd = m.dims.resnet_dim();
  FeatureBatch b{Matrix<float>(n, dd), Matrix<float>(n, rd), {}};
  for (std::size_t i = 0; i < n; ++i) {
    const auto& r = m.records[i];
    if (r.dino.size() != dd || r.resnet.size() != rd)
      throw FeatureDimensionError("record '" + r.id + "' does not match manifest dims");
    std::copy(r.dino.begin(), r.dino.end(), b.dino.row(i).begin());
    std::copy(r.resnet.begin(), r.resnet.end(), b.resnet.row(i).begin());
  }
  if (m.all_scored()) {
    b.scores.reserve(n);
    for (const auto& r : m.records) b.scores.push_back(*r.score);
  }
  return b;
}

/// Rows `idx` of `src`.
template <class T>
Matrix<T> gather_rows(const Matrix<T>& src, std::span<const std::size_t> idx) {
  Matrix<T> out(idx.size(), src.cols());
  for (std::size_t k = 0; k < idx.size(); ++k) std::copy(src.row(idx[k]).begin(), src.row(idx[k]).end(), out.row(k).begin());
  return out;
}

inline void check_model_dims(const FusionConfig& c, const FeatureDims& d, const std::string& what) {
  if (c.dino_dim != d.dino_dim || c.resnet_dim != d.resnet_dim())
    throw FeatureDimensionError(what + ": features are " + std::to_string(d.dino_dim) + "+" +
                                std::to_string(d.resnet_dim()) + " wide, model expects " + std::to_string(c.dino_dim) +
                                "+" + std::to_string(c.resnet_dim));
}

struct Predictions {
  std::vector<double> score;
  std::vector<double> w_dino;
};

/// Inference over a feature matrix in fixed-size chunks (results do not
/// depend on chunking or thread count).
inline Predictions predict_batch(const DrexModel<float>& model, const Matrix<float>& dino, const Matrix<float>& resnet,
                                 ZeroBranch zero = ZeroBranch::none, std::size_t threads = 1) {
  constexpr std::size_t kChunk = 128;
  const std::size_t n = dino.rows();
  Predictions out{std::vector<double>(n), std::vector<double>(n)};
  const std::size_t chunks = (n + kChunk - 1) / kChunk;
  parallel_for(chunks, threads, [&](std::size_t c) {
    const std::size_t lo = c * kChunk, hi = std::min(n, lo + kChunk);
    std::vector<std::size_t> idx(hi - lo);
    std::iota(idx.begin(), idx.end(), lo);
    const auto p = model.predict(gather_rows(dino, idx), gather_rows(resnet, idx), zero);
    for (std::size_t k = 0; k < idx.size(); ++k) {
      out.score[lo + k] = p.score[k];
      out.w_dino[lo + k] = p.w_dino[k];
    }
  });
  return out;
}

inline Predictions predict_manifest(const DrexModel<float>& model, const DatasetManifest& m,
                                    ZeroBranch zero = ZeroBranch::none, std::size_t threads = 1) {
  check_model_dims(model.config(), m.dims, "predict");
  const auto b = to_batch(m);
  return predict_batch(model, b.dino, b.resnet, zero, threads);
}

inline std::vector<double> require_scores(const DatasetManifest& m, const std::string& what) {
  for (const auto& r : m.records)
    if (!r.score) throw std::invalid_argument(what + ": record '" + r.id + "' has no ground-truth score");
  return m.scores();
}

/// Metrics of `ck` on a scored set; EMA weights unless disabled. Correlations
/// are NaN when either side has zero variance.
inline metrics::MetricReport evaluate(const Checkpoint& ck, const DatasetManifest& eval_set,
                                      std::optional<bool> use_ema = std::nullopt, std::size_t threads = 1) {
  const auto targets = require_scores(eval_set, "evaluate");
  const auto model = ck.eval_model(use_ema.value_or(ck.train_config.eval_with_ema));
  const auto preds = predict_manifest(model, eval_set, ZeroBranch::none, threads);
  try {
    return metrics::evaluate(targets, preds.score);
  } catch (const metrics::DegenerateVarianceError&) {
    // Constant targets or predictions: correlations are undefined, errors are not.
    metrics::MetricReport m;
    m.n = targets.size();
    m.pearson_r = m.spearman_rho = std::numeric_limits<double>::quiet_NaN();
    const auto e = metrics::error_metrics(targets, preds.score);
    m.rmse = e.rmse;
    m.mae = e.mae;
    return m;
  }
}

struct TrainReport {
  std::vector<double> epoch_loss;
  std::vector<double> epoch_seconds;
  std::vector<double> lr_trace;  // lr used at each optimizer step
  std::size_t steps = 0;
  std::optional<metrics::MetricReport> validation;
};

struct StepInfo {
  std::size_t step;
  std::size_t epoch;
  std::size_t batch;
  double lr;
  double loss;
  const DrexModel<float>& model;
  const nn::Ema<float>& ema;
};

using StepObserver = std::function<void(const StepInfo&)>;

struct TrainResult {
  Checkpoint checkpoint;
  TrainReport report;
};

/// Mini-batch training over precomputed features. Only fusion and head
/// parameters exist here; the feature manifests are read-only inputs.
inline TrainResult train(const FusionConfig& model_config, const TrainConfig& train_config,
                         const DatasetManifest& train_set, const DatasetManifest& val_set,
                         const StepObserver& observer = {}) {
  train_config.validate();
  model_config.validate();
  if (train_set.empty()) throw std::invalid_argument("train: empty training manifest");
  require_scores(train_set, "train");
  check_model_dims(model_config, train_set.dims, "train");

  DrexModel<float> model(model_config);
  auto& params = model.params();
  nn::AdamW<float> optimizer(params, train_config.adamw);
  auto ema = nn::Ema<float>::zero_debiased(params, train_config.ema_decay);
  const auto schedule = train_config.schedule(train_set.size());

  const auto data = to_batch(train_set);
  Rng shuffle_rng(derive_seed(train_config.seed, 1));
  Rng dropout_rng(derive_seed(train_config.seed, 2));
  const float delta = static_cast<float>(train_config.huber_delta);

  TrainReport report;
  report.lr_trace.reserve(schedule.total_steps);
  std::vector<std::size_t> order(train_set.size());
  std::size_t step = 0;
  for (std::size_t epoch = 0; epoch < train_config.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    std::iota(order.begin(), order.end(), std::size_t{0});
    shuffle(order.begin(), order.end(), shuffle_rng);
    double loss_sum = 0;
    const std::size_t n_batches = train_config.steps_per_epoch(order.size());
    for (std::size_t b = 0; b < n_batches; ++b) {
      const std::size_t lo = b * train_config.batch_size;
      const std::size_t hi = std::min(order.size(), lo + train_config.batch_size);
      const std::span<const std::size_t> idx(order.data() + lo, hi - lo);
      Matrix<float> target(idx.size(), 1);
      for (std::size_t k = 0; k < idx.size(); ++k) target(k, 0) = data.scores[idx[k]];

      params.zero_grad();
      nn::Tape<float> tape;
      const auto out = model.forward(tape, tape.input(gather_rows(data.dino, idx)),
                                     tape.input(gather_rows(data.resnet, idx)), true, &dropout_rng,
                                     ZeroBranch::none, /*trainable=*/true);
      const auto loss = nn::huber_loss(tape, out.prediction, tape.input(std::move(target)), delta);
      const double loss_value = tape.value(loss)(0, 0);
      if (!std::isfinite(loss_value))
        throw TrainingError("non-finite loss at epoch " + std::to_string(epoch) + ", batch " + std::to_string(b) +
                            " (step " + std::to_string(step) + ")");
      tape.backward(loss);

      const double lr = nn::onecycle_lr(schedule, step);
      optimizer.step(params, lr);
      ema.update(params);
      report.lr_trace.push_back(lr);
      loss_sum += loss_value;
      if (observer) observer(StepInfo{step, epoch, b, lr, loss_value, model, ema});
      ++step;
    }
    if (!params.all_finite()) throw TrainingError("parameters became non-finite in epoch " + std::to_string(epoch));
    report.epoch_loss.push_back(loss_sum / static_cast<double>(n_batches));
    report.epoch_seconds.push_back(std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
  }
  report.steps = step;

  Checkpoint ck(std::move(model), train_config, ema.average());
  ck.ema_shadow->zero_grad();
  if (!val_set.empty()) report.validation = evaluate(ck, val_set);
  return {std::move(ck), std::move(report)};
}

/// Plain-text report. Wall-clock timings are left out so that reruns produce
/// identical files; write_timings() emits them separately.
inline std::string format_train_report(const TrainReport& r) {
  std::string s = "steps: " + std::to_string(r.steps) + "\n";
  char buf[128];
  for (std::size_t e = 0; e < r.epoch_loss.size(); ++e) {
    std::snprintf(buf, sizeof buf, "epoch_%zu_loss: %.8f\n", e + 1, r.epoch_loss[e]);
    s += buf;
  }
  if (r.validation) s += metrics::format_report(*r.validation, "val_");
  return s;
}

inline std::string format_timings(const TrainReport& r) {
  std::string s;
  char buf[128];
  for (std::size_t e = 0; e < r.epoch_seconds.size(); ++e) {
    std::snprintf(buf, sizeof buf, "epoch_%zu_seconds: %.3f\n", e + 1, r.epoch_seconds[e]);
    s += buf;
  }
  return s;
}

}  // namespace drex
