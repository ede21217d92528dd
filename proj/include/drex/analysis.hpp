#pragma once

// Ablation and attribution analyses over a frozen model.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "drex/checkpoint.hpp"
#include "drex/feature_store.hpp"
#include "drex/matrix.hpp"
#include "drex/metrics.hpp"
#include "drex/model.hpp"
#include "drex/nn/ops.hpp"
#include "drex/parallel.hpp"
#include "drex/rng.hpp"
#include "drex/trainer.hpp"

namespace drex::analysis {

struct AblationResult {
  std::string name;
  metrics::MetricReport baseline;
  metrics::MetricReport ablated;
  double delta_r = 0;    // ablated.r - baseline.r
  double delta_rho = 0;  // ablated.rho - baseline.rho
  double p_value = 1;
  bool fdr_significant = false;
};

struct Options {
  std::size_t n_perm = 10000;
  std::uint64_t seed = 0;
  double fdr_alpha = 0.01;
  std::size_t threads = 1;
};

// ---------------------------------------------------------------------------
// Statistics

/// Paired-swap permutation test on r(a, t) - r(b, t). Each permutation swaps
/// (a_i, b_i) with probability 1/2; two-sided; p = (1 + #extreme) / (n_perm + 1).
inline double permutation_test_delta(std::span<const double> preds_a, std::span<const double> preds_b,
                                     std::span<const double> targets, std::size_t n_perm, std::uint64_t seed) {
  const std::size_t n = targets.size();
  if (preds_a.size() != n || preds_b.size() != n)
    throw std::invalid_argument("permutation_test_delta: length mismatch");
  if (n < 3) throw std::invalid_argument("permutation_test_delta: needs at least 3 paired values");
  if (n_perm < 1) throw std::invalid_argument("permutation_test_delta: n_perm must be >= 1");

  const double mean_t = std::accumulate(targets.begin(), targets.end(), 0.0) / static_cast<double>(n);
  std::vector<double> tc(n);
  double stt = 0;
  for (std::size_t i = 0; i < n; ++i) {
    tc[i] = targets[i] - mean_t;
    stt += tc[i] * tc[i];
  }
  // Sums over the pair total are swap-invariant; one side's sums fix the other.
  double tot_s = 0, tot_ss = 0, tot_st = 0;
  for (std::size_t i = 0; i < n; ++i) {
    tot_s += preds_a[i] + preds_b[i];
    tot_ss += preds_a[i] * preds_a[i] + preds_b[i] * preds_b[i];
    tot_st += (preds_a[i] + preds_b[i]) * tc[i];
  }
  const double dn = static_cast<double>(n);
  auto corr = [&](double s, double ss, double st) {
    const double sxx = ss - s * s / dn;
    return sxx > 0.0 ? st / std::sqrt(sxx * stt) : 0.0;
  };
  auto delta = [&](double s, double ss, double st) {
    return corr(s, ss, st) - corr(tot_s - s, tot_ss - ss, tot_st - st);
  };

  double s = 0, ss = 0, st = 0;
  for (std::size_t i = 0; i < n; ++i) {
    s += preds_a[i];
    ss += preds_a[i] * preds_a[i];
    st += preds_a[i] * tc[i];
  }
  if (stt == 0.0 || ss - s * s / dn <= 0.0 || (tot_ss - ss) - (tot_s - s) * (tot_s - s) / dn <= 0.0)
    throw metrics::DegenerateVarianceError("permutation_test_delta: constant predictions or targets");
  const double observed = std::abs(delta(s, ss, st));
  const double threshold = observed - 1e-12 * std::max(1.0, observed);

  Rng rng(seed);
  std::size_t extreme = 0;
  for (std::size_t p = 0; p < n_perm; ++p) {
    double ps = 0, pss = 0, pst = 0;
    for (std::size_t i = 0; i < n; ++i) {
      const double v = rng.coin() ? preds_b[i] : preds_a[i];
      ps += v;
      pss += v * v;
      pst += v * tc[i];
    }
    if (std::abs(delta(ps, pss, pst)) >= threshold) ++extreme;
  }
  return static_cast<double>(1 + extreme) / static_cast<double>(n_perm + 1);
}

/// Benjamini-Hochberg step-up: reject the k smallest p-values, k being the
/// largest rank with p_(k) <= k * alpha / m (ties at the bound are rejected).
inline std::vector<bool> bh_fdr(std::span<const double> p_values, double alpha) {
  for (double p : p_values)
    if (!(p > 0.0 && p <= 1.0)) throw std::domain_error("bh_fdr: p-values must lie in (0, 1]");
  if (!(alpha > 0.0 && alpha < 1.0)) throw std::domain_error("bh_fdr: alpha must lie in (0, 1)");
  const std::size_t m = p_values.size();
  std::vector<std::size_t> order(m);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return p_values[a] < p_values[b]; });
  std::size_t cutoff = 0;
  for (std::size_t k = 1; k <= m; ++k)
    if (p_values[order[k - 1]] <= static_cast<double>(k) * alpha / static_cast<double>(m)) cutoff = k;
  std::vector<bool> reject(m, false);
  for (std::size_t k = 0; k < cutoff; ++k) reject[order[k]] = true;
  return reject;
}

struct Skewness {
  double g1 = 0;  // adjusted Fisher-Pearson coefficient
  double p_value = 1;
};

inline double adjusted_skewness(std::span<const double> x) {
  const std::size_t n = x.size();
  if (n < 3) throw std::invalid_argument("skewness: needs at least 3 values");
  const double dn = static_cast<double>(n);
  const double mean = std::accumulate(x.begin(), x.end(), 0.0) / dn;
  double m2 = 0, m3 = 0;
  for (double v : x) {
    const double c = v - mean;
    m2 += c * c;
    m3 += c * c * c;
  }
  m2 /= dn;
  m3 /= dn;
  if (m2 == 0.0) throw metrics::DegenerateVarianceError("skewness: constant sample");
  return std::sqrt(dn * (dn - 1.0)) / (dn - 2.0) * m3 / std::pow(m2, 1.5);
}

/// Skewness with a one-sided p-value for positive skew. Null resamples come
/// from the sign-symmetrized deviations about the mean: each bootstrap draw
/// picks a deviation with replacement and flips its sign with probability 1/2.
inline Skewness skewness(std::span<const double> sample, std::size_t n_boot = 10000, std::uint64_t seed = 0) {
  Skewness out;
  out.g1 = adjusted_skewness(sample);
  const std::size_t n = sample.size();
  const double mean = std::accumulate(sample.begin(), sample.end(), 0.0) / static_cast<double>(n);
  std::vector<double> dev(n), draw(n);
  for (std::size_t i = 0; i < n; ++i) dev[i] = sample[i] - mean;
  Rng rng(seed);
  std::size_t extreme = 0;
  for (std::size_t b = 0; b < n_boot; ++b) {
    for (auto& v : draw) {
      const double d = dev[rng.below(n)];
      v = rng.coin() ? -d : d;
    }
    double g;
    try {
      g = adjusted_skewness(draw);
    } catch (const metrics::DegenerateVarianceError&) {
      g = 0.0;
    }
    if (g >= out.g1) ++extreme;
  }
  out.p_value = static_cast<double>(1 + extreme) / static_cast<double>(n_boot + 1);
  return out;
}

// ---------------------------------------------------------------------------
// Ablations

enum class Branch { dino, resnet };

inline Branch parse_branch(const std::string& s) {
  if (s == "dino") return Branch::dino;
  if (s == "resnet") return Branch::resnet;
  throw std::invalid_argument("unknown branch '" + s + "' (expected dino or resnet)");
}

inline AblationResult make_result(std::string name, std::span<const double> targets, std::span<const double> base,
                                  std::span<const double> ablated, std::size_t n_perm, std::uint64_t seed) {
  AblationResult r;
  r.name = std::move(name);
  r.baseline = metrics::evaluate(targets, base);
  r.ablated = metrics::evaluate(targets, ablated);
  r.delta_r = r.ablated.pearson_r - r.baseline.pearson_r;
  r.delta_rho = r.ablated.spearman_rho - r.baseline.spearman_rho;
  bool identical = true;
  for (std::size_t i = 0; i < base.size() && identical; ++i) identical = base[i] == ablated[i];
  r.p_value = identical ? 1.0 : permutation_test_delta(base, ablated, targets, n_perm, seed);
  return r;
}

/// Replaces one branch's projected embedding with zeros; attention weights are
/// recomputed from the zeroed input and the residual term keeps the zero.
inline AblationResult ablate_branch(const DrexModel<float>& model, const DatasetManifest& eval_set, Branch branch,
                                    const Options& opt = {}) {
  const auto targets = require_scores(eval_set, "ablate_branch");
  check_model_dims(model.config(), eval_set.dims, "ablate_branch");
  const auto data = to_batch(eval_set);
  const auto base = predict_batch(model, data.dino, data.resnet, ZeroBranch::none, opt.threads);
  const auto zero = branch == Branch::dino ? ZeroBranch::dino : ZeroBranch::resnet;
  const auto abl = predict_batch(model, data.dino, data.resnet, zero, opt.threads);
  return make_result(branch == Branch::dino ? "branch:dino" : "branch:resnet", targets, base.score, abl.score,
                     opt.n_perm, derive_seed(opt.seed, branch == Branch::dino ? 11 : 12));
}

inline AblationResult ablate_branch(const Checkpoint& ck, const DatasetManifest& eval_set, Branch branch,
                                    const Options& opt = {}) {
  return ablate_branch(ck.eval_model(), eval_set, branch, opt);
}

namespace detail {

/// Predictions with DINO input `dino` and a precomputed r' (row-aligned).
inline std::vector<double> predict_with_resnet_projection(const DrexModel<float>& model, const Matrix<float>& dino,
                                                          const Matrix<float>& r_proj) {
  nn::Tape<float> tape;
  const auto d = model.project_dino(tape, tape.input(dino));
  const auto out = model.fuse_projected(tape, d, tape.constant(r_proj), false, nullptr);
  const auto& p = tape.value(out.prediction);
  std::vector<double> s(p.rows());
  for (std::size_t r = 0; r < p.rows(); ++r) s[r] = p(r, 0);
  return s;
}

inline Matrix<float> resnet_projection(const DrexModel<float>& model, const Matrix<float>& resnet) {
  nn::Tape<float> tape;
  const auto r = model.project_resnet(tape, tape.input(resnet));
  return tape.value(r);
}

}  // namespace detail

/// Zeroes raw DINO dimension j in every record before projection.
inline AblationResult ablate_dino_dim(const DrexModel<float>& model, const DatasetManifest& eval_set, std::size_t j,
                                      const Options& opt = {}) {
  if (j >= model.config().dino_dim)
    throw std::out_of_range("ablate_dino_dim: dimension " + std::to_string(j) + " outside [0, " +
                            std::to_string(model.config().dino_dim) + ")");
  const auto targets = require_scores(eval_set, "ablate_dino_dim");
  check_model_dims(model.config(), eval_set.dims, "ablate_dino_dim");
  auto data = to_batch(eval_set);
  const auto base = predict_batch(model, data.dino, data.resnet, ZeroBranch::none, opt.threads);
  for (std::size_t r = 0; r < data.dino.rows(); ++r) data.dino(r, j) = 0.0f;
  const auto abl = predict_batch(model, data.dino, data.resnet, ZeroBranch::none, opt.threads);
  return make_result("dino:" + std::to_string(j), targets, base.score, abl.score, opt.n_perm,
                     derive_seed(opt.seed, 1000 + j));
}

/// All single-dimension DINO ablations with BH-FDR across them. The ResNet
/// projection is computed once and reused, since it does not see f_DINO.
inline std::vector<AblationResult> ablate_dino_dims(const DrexModel<float>& model, const DatasetManifest& eval_set,
                                                    const Options& opt = {}) {
  const auto targets = require_scores(eval_set, "ablate_dino_dims");
  check_model_dims(model.config(), eval_set.dims, "ablate_dino_dims");
  const auto data = to_batch(eval_set);
  const auto base = predict_batch(model, data.dino, data.resnet, ZeroBranch::none, opt.threads);
  const auto r_proj = detail::resnet_projection(model, data.resnet);
  const std::size_t dims = model.config().dino_dim;
  std::vector<AblationResult> results(dims);
  parallel_for(dims, opt.threads, [&](std::size_t j) {
    Matrix<float> dino = data.dino;
    for (std::size_t r = 0; r < dino.rows(); ++r) dino(r, j) = 0.0f;
    const auto abl = detail::predict_with_resnet_projection(model, dino, r_proj);
    results[j] = make_result("dino:" + std::to_string(j), targets, base.score, abl, opt.n_perm,
                             derive_seed(opt.seed, 1000 + j));
  });
  std::vector<double> p(dims);
  for (std::size_t j = 0; j < dims; ++j) p[j] = results[j].p_value;
  const auto mask = bh_fdr(p, opt.fdr_alpha);
  for (std::size_t j = 0; j < dims; ++j) results[j].fdr_significant = mask[j];
  return results;
}

/// Zeroes ResNet block `block` (1-based) of the raw multi-scale vector.
inline AblationResult ablate_resnet_block(const DrexModel<float>& model, const DatasetManifest& eval_set,
                                          std::size_t block, const Options& opt = {}) {
  const auto& blocks = eval_set.dims.block_dims;
  if (block < 1 || block > blocks.size())
    throw std::out_of_range("ablate_resnet_block: block " + std::to_string(block) + " outside [1, " +
                            std::to_string(blocks.size()) + "]");
  const auto targets = require_scores(eval_set, "ablate_resnet_block");
  check_model_dims(model.config(), eval_set.dims, "ablate_resnet_block");
  auto data = to_batch(eval_set);
  const auto base = predict_batch(model, data.dino, data.resnet, ZeroBranch::none, opt.threads);
  const std::size_t lo = eval_set.dims.block_offset(block - 1), hi = lo + blocks[block - 1];
  for (std::size_t r = 0; r < data.resnet.rows(); ++r)
    for (std::size_t c = lo; c < hi; ++c) data.resnet(r, c) = 0.0f;
  const auto abl = predict_batch(model, data.dino, data.resnet, ZeroBranch::none, opt.threads);
  return make_result("resnet_block:" + std::to_string(block), targets, base.score, abl.score, opt.n_perm,
                     derive_seed(opt.seed, 500 + block));
}

/// Every block ablation with BH-FDR across the blocks.
inline std::vector<AblationResult> ablate_resnet_blocks(const DrexModel<float>& model, const DatasetManifest& eval_set,
                                                        const Options& opt = {}) {
  std::vector<AblationResult> results;
  for (std::size_t b = 1; b <= eval_set.dims.block_dims.size(); ++b)
    results.push_back(ablate_resnet_block(model, eval_set, b, opt));
  std::vector<double> p;
  for (const auto& r : results) p.push_back(r.p_value);
  const auto mask = bh_fdr(p, opt.fdr_alpha);
  for (std::size_t i = 0; i < results.size(); ++i) results[i].fdr_significant = mask[i];
  return results;
}

// ---------------------------------------------------------------------------
// Attribution

struct ImportanceProfile {
  std::vector<double> importance;  // I_j, one per DINO dimension
  double skewness = 0;
  double skewness_p = 1;
};

/// I_j = mean_i |d c_i / d x_ij * x_ij| given row-aligned gradients.
template <class T>
std::vector<double> gradient_activation_importance(const Matrix<T>& inputs, const Matrix<T>& grads) {
  if (!inputs.same_shape(grads)) throw std::invalid_argument("importance: gradient shape mismatch");
  if (inputs.rows() == 0) throw std::invalid_argument("importance: empty evaluation set");
  std::vector<double> imp(inputs.cols(), 0.0);
  for (std::size_t r = 0; r < inputs.rows(); ++r)
    for (std::size_t j = 0; j < inputs.cols(); ++j)
      imp[j] += std::abs(static_cast<double>(grads(r, j)) * static_cast<double>(inputs(r, j)));
  for (auto& v : imp) v /= static_cast<double>(inputs.rows());
  return imp;
}

/// d(prediction)/d(raw f_DINO) for every row, inference mode.
template <class T>
Matrix<T> dino_input_gradients(const DrexModel<T>& model, const Matrix<T>& dino, const Matrix<T>& resnet) {
  nn::Tape<T> tape;
  const auto x = tape.input(dino, /*requires_grad=*/true);
  const auto out = model.forward(tape, x, tape.input(resnet), false, nullptr);
  // Rows are independent, so the gradient of the batch sum is per-row.
  tape.backward(nn::sum(tape, out.prediction));
  return tape.grad(x);
}

inline ImportanceProfile grad_importance(const DrexModel<float>& model, const DatasetManifest& eval_set,
                                         const Options& opt = {}) {
  if (eval_set.empty()) throw std::invalid_argument("grad_importance: empty evaluation set");
  check_model_dims(model.config(), eval_set.dims, "grad_importance");
  const auto data = to_batch(eval_set);
  constexpr std::size_t kChunk = 128;
  const std::size_t n = data.size();
  Matrix<float> grads(n, data.dino.cols());
  parallel_for((n + kChunk - 1) / kChunk, opt.threads, [&](std::size_t c) {
    const std::size_t lo = c * kChunk, hi = std::min(n, lo + kChunk);
    std::vector<std::size_t> idx(hi - lo);
    std::iota(idx.begin(), idx.end(), lo);
    const auto g = dino_input_gradients(model, gather_rows(data.dino, idx), gather_rows(data.resnet, idx));
    for (std::size_t k = 0; k < idx.size(); ++k) std::copy(g.row(k).begin(), g.row(k).end(), grads.row(lo + k).begin());
  });
  ImportanceProfile out;
  out.importance = gradient_activation_importance(data.dino, grads);
  const auto sk = skewness(out.importance, opt.n_perm, derive_seed(opt.seed, 77));
  out.skewness = sk.g1;
  out.skewness_p = sk.p_value;
  return out;
}

/// Pearson correlation between w_d and the ground-truth score.
inline double attention_weight_correlation(const DrexModel<float>& model, const DatasetManifest& eval_set,
                                           std::size_t threads = 1) {
  const auto targets = require_scores(eval_set, "attention_weight_correlation");
  const auto preds = predict_manifest(model, eval_set, ZeroBranch::none, threads);
  try {
    return metrics::pearson(preds.w_dino, targets);
  } catch (const metrics::DegenerateVarianceError&) {
    throw metrics::DegenerateVarianceError(
        "attention_weight_correlation: w_d is constant over the evaluation set (uniform attention)");
  }
}

}  // namespace drex::analysis
