#pragma once

#include <cmath>
#include <vector>

#include "drex/rng.hpp"

namespace drex::testing {

// Brute-force oracles: quadratic ranks, textbook two-pass formulas.
inline double oracle_pearson(const std::vector<double>& x, const std::vector<double>& y) {
  const std::size_t n = x.size();
  long double mx = 0, my = 0;
  for (std::size_t i = 0; i < n; ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= n;
  my /= n;
  long double num = 0, dx = 0, dy = 0;
  for (std::size_t i = 0; i < n; ++i) {
    num += (x[i] - mx) * (y[i] - my);
    dx += (x[i] - mx) * (x[i] - mx);
    dy += (y[i] - my) * (y[i] - my);
  }
  return static_cast<double>(num / std::sqrt(dx * dy));
}

inline std::vector<double> oracle_ranks(const std::vector<double>& x) {
  std::vector<double> r(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    double below = 0, equal = 0;
    for (double v : x) {
      if (v < x[i]) below += 1;
      if (v == x[i]) equal += 1;
    }
    r[i] = below + (equal + 1) / 2;
  }
  return r;
}

inline std::vector<double> with_ties(Rng& rng, std::size_t n) {
  std::vector<double> v(n);
  for (auto& x : v) x = std::round(rng.uniform(0, 10)) / 10.0;  // 11 levels, many ties
  return v;
}

}  // namespace drex::testing
