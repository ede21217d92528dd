#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdio>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace drex::metrics {

/// Raised when a correlation is undefined (a constant input).
class DegenerateVarianceError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

struct MetricReport {
  double pearson_r = 0;
  double spearman_rho = 0;
  double rmse = 0;
  double mae = 0;
  std::size_t n = 0;
};

namespace detail {
inline void check_pair(std::span<const double> a, std::span<const double> b, std::size_t min_n, const char* what) {
  if (a.size() != b.size())
    throw std::invalid_argument(std::string(what) + ": length mismatch (" + std::to_string(a.size()) + " vs " +
                                std::to_string(b.size()) + ")");
  if (a.size() < min_n)
    throw std::invalid_argument(std::string(what) + ": needs at least " + std::to_string(min_n) + " values");
}
}  // namespace detail

/// Pearson correlation of targets `c` and predictions `c_hat`.
inline double pearson(std::span<const double> c, std::span<const double> c_hat) {
  detail::check_pair(c, c_hat, 2, "pearson");
  const double n = static_cast<double>(c.size());
  const double mean_c = std::accumulate(c.begin(), c.end(), 0.0) / n;
  const double mean_h = std::accumulate(c_hat.begin(), c_hat.end(), 0.0) / n;
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < c.size(); ++i) {
    const double dx = c[i] - mean_c;
    const double dy = c_hat[i] - mean_h;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (sxx == 0.0 || syy == 0.0) throw DegenerateVarianceError("pearson: zero variance input");
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

/// 1-based ranks; ties share the mean of the ranks they span.
inline std::vector<double> average_ranks(std::span<const double> x) {
  std::vector<std::size_t> order(x.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return x[a] < x[b]; });
  std::vector<double> ranks(x.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i + 1;
    while (j < order.size() && x[order[j]] == x[order[i]]) ++j;
    const double avg = 0.5 * static_cast<double>(i + 1 + j);  // mean of ranks i+1 .. j
    for (std::size_t k = i; k < j; ++k) ranks[order[k]] = avg;
    i = j;
  }
  return ranks;
}

inline double spearman(std::span<const double> c, std::span<const double> c_hat) {
  detail::check_pair(c, c_hat, 2, "spearman");
  const auto rc = average_ranks(c);
  const auto rh = average_ranks(c_hat);
  return pearson(rc, rh);
}

struct ErrorMetrics {
  double rmse;
  double mae;
};

inline ErrorMetrics error_metrics(std::span<const double> c, std::span<const double> c_hat) {
  detail::check_pair(c, c_hat, 1, "error_metrics");
  double sq = 0, ab = 0;
  for (std::size_t i = 0; i < c.size(); ++i) {
    const double r = c[i] - c_hat[i];
    sq += r * r;
    ab += std::abs(r);
  }
  const double n = static_cast<double>(c.size());
  return {std::sqrt(sq / n), ab / n};
}

inline MetricReport evaluate(std::span<const double> c, std::span<const double> c_hat) {
  MetricReport m;
  m.n = c.size();
  m.pearson_r = pearson(c, c_hat);
  m.spearman_rho = spearman(c, c_hat);
  const auto e = error_metrics(c, c_hat);
  m.rmse = e.rmse;
  m.mae = e.mae;
  return m;
}

/// Key/value lines, 4 decimals (the precision results are tabulated at).
inline std::string format_report(const MetricReport& m, const std::string& prefix = "") {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%spearson_r: %.4f\n%sspearman_rho: %.4f\n%srmse: %.4f\n%smae: %.4f\n%sn: %zu\n",
                prefix.c_str(), m.pearson_r, prefix.c_str(), m.spearman_rho, prefix.c_str(), m.rmse, prefix.c_str(),
                m.mae, prefix.c_str(), m.n);
  return buf;
}

}  // namespace drex::metrics
