#pragma once

// Seeded synthetic feature sets with known structure. Features follow a
// low-rank latent model (DINO from one latent, each ResNet block from its own
// latent) plus isotropic noise; the score is a noisy sigmoid of a projection
// chosen by `target`. Splits drawn from the same spec share loadings.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "drex/feature_store.hpp"
#include "drex/rng.hpp"

namespace drex::synthetic {

enum class Target {
  both,            // DINO latent and all ResNet block latents
  dino_only,       // DINO latent only
  resnet_only,     // ResNet block latents only
  dino_dimension,  // a single independent raw DINO dimension
  resnet_block,    // one ResNet block's latent
  constant,        // every score equals constant_score
};

struct Spec {
  FeatureDims dims{};
  std::size_t latent_dim = 8;
  double feature_noise = 0.3;
  double score_noise = 0.05;  // on the logit scale
  double gain = 1.5;          // logit slope
  Target target = Target::both;
  std::size_t dino_dimension = 7;
  std::size_t resnet_block = 2;  // 0-based
  float constant_score = 0.5f;
  bool shuffle_dino = false;    // permute DINO vectors across records (branch carries no signal)
  bool shuffle_resnet = false;
  std::uint64_t seed = 0;
};

namespace detail {
inline std::vector<double> gaussian(Rng& rng, std::size_t n, double scale) {
  std::vector<double> v(n);
  for (auto& x : v) x = rng.normal() * scale;
  return v;
}
inline std::vector<double> unit_vector(Rng& rng, std::size_t n) {
  auto v = gaussian(rng, n, 1.0);
  double norm = 0;
  for (double x : v) norm += x * x;
  norm = std::sqrt(norm);
  for (auto& x : v) x /= norm;
  return v;
}
inline double dot(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}
}  // namespace detail

/// Draws `n` records for split number `split` (e.g. 0 = train, 1 = test).
inline DatasetManifest generate(const Spec& spec, std::size_t n, std::uint64_t split, std::string split_name = {}) {
  const std::size_t k = spec.latent_dim;
  const std::size_t dd = spec.dims.dino_dim;
  const std::size_t n_blocks = spec.dims.block_dims.size();
  if (k == 0 || dd == 0 || n_blocks == 0) throw std::invalid_argument("synthetic: empty dims");
  if (spec.target == Target::dino_dimension && spec.dino_dimension >= dd)
    throw std::invalid_argument("synthetic: dino_dimension out of range");
  if (spec.target == Target::resnet_block && spec.resnet_block >= n_blocks)
    throw std::invalid_argument("synthetic: resnet_block out of range");

  // Loadings depend on the spec seed only.
  Rng world(derive_seed(spec.seed, 100));
  const double load = 1.0 / std::sqrt(static_cast<double>(k));
  const auto dino_load = detail::gaussian(world, dd * k, load);
  std::vector<std::vector<double>> block_load(n_blocks);
  for (std::size_t b = 0; b < n_blocks; ++b) block_load[b] = detail::gaussian(world, spec.dims.block_dims[b] * k, load);
  const auto dino_dir = detail::unit_vector(world, k);
  std::vector<std::vector<double>> block_dir(n_blocks);
  for (auto& d : block_dir) d = detail::unit_vector(world, k);

  Rng rng(derive_seed(spec.seed, 200 + split));
  DatasetManifest m;
  m.split_name = std::move(split_name);
  m.dims = spec.dims;
  m.records.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    FeatureRecord r;
    r.id = (m.split_name.empty() ? std::string("img") : m.split_name) + "_" + std::to_string(i);
    const auto zd = detail::gaussian(rng, k, 1.0);
    r.dino.resize(dd);
    for (std::size_t j = 0; j < dd; ++j) {
      double v = 0;
      for (std::size_t a = 0; a < k; ++a) v += dino_load[j * k + a] * zd[a];
      r.dino[j] = static_cast<float>(v + spec.feature_noise * rng.normal());
    }
    double s_blocks = 0;
    double s_block = 0;
    r.resnet.reserve(spec.dims.resnet_dim());
    for (std::size_t b = 0; b < n_blocks; ++b) {
      const auto zb = detail::gaussian(rng, k, 1.0);
      const double proj = detail::dot(block_dir[b], zb);
      s_blocks += proj;
      if (b == spec.resnet_block) s_block = proj;
      for (std::size_t j = 0; j < spec.dims.block_dims[b]; ++j) {
        double v = 0.5;
        for (std::size_t a = 0; a < k; ++a) v += block_load[b][j * k + a] * zb[a];
        r.resnet.push_back(static_cast<float>(v + spec.feature_noise * rng.normal()));
      }
    }
    s_blocks /= std::sqrt(static_cast<double>(n_blocks));

    double s = 0;
    switch (spec.target) {
      case Target::both: s = (detail::dot(dino_dir, zd) + s_blocks) / std::sqrt(2.0); break;
      case Target::dino_only: s = detail::dot(dino_dir, zd); break;
      case Target::resnet_only: s = s_blocks; break;
      case Target::dino_dimension: {
        const double x = rng.normal();
        r.dino[spec.dino_dimension] = static_cast<float>(x);
        s = x;
        break;
      }
      case Target::resnet_block: s = s_block; break;
      case Target::constant: break;
    }
    if (spec.target == Target::constant) {
      r.score = spec.constant_score;
    } else {
      const double logit = spec.gain * s + spec.score_noise * rng.normal();
      r.score = static_cast<float>(1.0 / (1.0 + std::exp(-logit)));
    }
    m.records.push_back(std::move(r));
  }

  auto permute = [&](auto member) {
    std::vector<std::size_t> perm(n);
    for (std::size_t i = 0; i < n; ++i) perm[i] = i;
    Rng prng(derive_seed(spec.seed, 300 + split));
    shuffle(perm.begin(), perm.end(), prng);
    std::vector<std::vector<float>> moved(n);
    for (std::size_t i = 0; i < n; ++i) moved[i] = std::move(m.records[perm[i]].*member);
    for (std::size_t i = 0; i < n; ++i) m.records[i].*member = std::move(moved[i]);
  };
  if (spec.shuffle_dino) permute(&FeatureRecord::dino);
  if (spec.shuffle_resnet) permute(&FeatureRecord::resnet);
  return m;
}

}  // namespace drex::synthetic
