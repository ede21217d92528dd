#pragma once

// Flat dotted-key JSON codec for FusionConfig and TrainConfig, shared by the
// checkpoint header and the CLI's resolved-config files.

#include <stdexcept>
#include <string>

#include "json.hpp"

#include "drex/model.hpp"
#include "drex/train_config.hpp"

namespace drex {

using Json = nlohmann::json;

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

inline void to_flat(const FusionConfig& c, Json& j) {
  j["model.dino_dim"] = c.dino_dim;
  j["model.resnet_dim"] = c.resnet_dim;
  j["model.proj_dim"] = c.proj_dim;
  j["model.attn_hidden"] = c.attn_hidden;
  j["model.head_dims"] = c.head_dims;
  j["model.dropout_p"] = c.dropout_p;
  j["model.tau_init"] = c.tau_init;
  j["model.alpha_init"] = c.alpha_init;
  j["model.seed"] = c.seed;
}

inline void to_flat(const TrainConfig& c, Json& j) {
  j["train.epochs"] = c.epochs;
  j["train.batch_size"] = c.batch_size;
  j["train.max_lr"] = c.max_lr;
  j["train.ema_decay"] = c.ema_decay;
  j["train.huber_delta"] = c.huber_delta;
  j["train.seed"] = c.seed;
  j["train.pct_start"] = c.pct_start;
  j["train.div_factor"] = c.div_factor;
  j["train.final_div_factor"] = c.final_div_factor;
  j["train.adamw.beta1"] = c.adamw.beta1;
  j["train.adamw.beta2"] = c.adamw.beta2;
  j["train.adamw.eps"] = c.adamw.eps;
  j["train.adamw.weight_decay"] = c.adamw.weight_decay;
  j["train.eval_with_ema"] = c.eval_with_ema;
}

namespace detail {
template <class V>
void assign(V& field, const Json& value, const std::string& key) {
  try {
    field = value.get<V>();
  } catch (const Json::exception& e) {
    throw ConfigError("config key '" + key + "': " + e.what());
  }
}
}  // namespace detail

/// Applies one key if it belongs to the model or train config. Returns false for unknown keys.
inline bool apply_key(FusionConfig& m, TrainConfig& t, const std::string& key, const Json& v) {
  using detail::assign;
  if (key == "model.dino_dim") assign(m.dino_dim, v, key);
  else if (key == "model.resnet_dim") assign(m.resnet_dim, v, key);
  else if (key == "model.proj_dim") assign(m.proj_dim, v, key);
  else if (key == "model.attn_hidden") assign(m.attn_hidden, v, key);
  else if (key == "model.head_dims") assign(m.head_dims, v, key);
  else if (key == "model.dropout_p") assign(m.dropout_p, v, key);
  else if (key == "model.tau_init") assign(m.tau_init, v, key);
  else if (key == "model.alpha_init") assign(m.alpha_init, v, key);
  else if (key == "model.seed") assign(m.seed, v, key);
  else if (key == "train.epochs") assign(t.epochs, v, key);
  else if (key == "train.batch_size") assign(t.batch_size, v, key);
  else if (key == "train.max_lr") assign(t.max_lr, v, key);
  else if (key == "train.ema_decay") assign(t.ema_decay, v, key);
  else if (key == "train.huber_delta") assign(t.huber_delta, v, key);
  else if (key == "train.seed") assign(t.seed, v, key);
  else if (key == "train.pct_start") assign(t.pct_start, v, key);
  else if (key == "train.div_factor") assign(t.div_factor, v, key);
  else if (key == "train.final_div_factor") assign(t.final_div_factor, v, key);
  else if (key == "train.adamw.beta1") assign(t.adamw.beta1, v, key);
  else if (key == "train.adamw.beta2") assign(t.adamw.beta2, v, key);
  else if (key == "train.adamw.eps") assign(t.adamw.eps, v, key);
  else if (key == "train.adamw.weight_decay") assign(t.adamw.weight_decay, v, key);
  else if (key == "train.eval_with_ema") assign(t.eval_with_ema, v, key);
  else return false;
  return true;
}

/// Parses a flat object holding exactly model.* and train.* keys.
inline void from_flat(const Json& j, FusionConfig& m, TrainConfig& t) {
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  for (const auto& [key, value] : j.items()) {
    if (!apply_key(m, t, key, value)) throw ConfigError("unknown config key '" + key + "'");
  }
}

}  // namespace drex
