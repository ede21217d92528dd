#pragma once

// Checkpoint container ("DRXC"):
//   "DRXC" | version u32 | header_len u32 | header JSON (flat config + decisions) |
//   array_count u32 | per array: name_len u32, name, kind u8 (0 weights, 1 EMA shadow),
//   rows u32, cols u32, f32 LE x rows*cols |
//   FNV-1a 64 checksum of everything before it (u64 LE)

#include <array>
#include <bit>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "drex/config_json.hpp"
#include "drex/feature_store.hpp"
#include "drex/model.hpp"
#include "drex/nn/params.hpp"
#include "drex/train_config.hpp"

namespace drex {

inline constexpr std::array<char, 4> kCheckpointMagic = {'D', 'R', 'X', 'C'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};
class CheckpointVersionError : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};
class CheckpointCorruptError : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};

struct Checkpoint {
  FusionConfig model_config;
  TrainConfig train_config;
  DrexModel<float> model;
  std::optional<nn::ParamStore<float>> ema_shadow;

  explicit Checkpoint(DrexModel<float> m, TrainConfig t = {}, std::optional<nn::ParamStore<float>> ema = {})
      : model_config(m.config()), train_config(t), model(std::move(m)), ema_shadow(std::move(ema)) {}

  /// The weights evaluation runs on: the EMA shadow when enabled and present.
  DrexModel<float> eval_model() const { return eval_model(train_config.eval_with_ema); }

  DrexModel<float> eval_model(bool use_ema) const {
    DrexModel<float> out = model;
    if (use_ema && ema_shadow) out.params().assign_values(*ema_shadow);
    return out;
  }
};

namespace detail {

inline std::uint64_t fnv1a(std::span<const char> bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (char c : bytes) {
    h ^= static_cast<std::uint8_t>(c);
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline void put_array(std::vector<char>& buf, const nn::Parameter<float>& p, std::uint8_t kind) {
  put_u32(buf, static_cast<std::uint32_t>(p.name.size()));
  buf.insert(buf.end(), p.name.begin(), p.name.end());
  buf.push_back(static_cast<char>(kind));
  put_u32(buf, static_cast<std::uint32_t>(p.value.rows()));
  put_u32(buf, static_cast<std::uint32_t>(p.value.cols()));
  for (float v : p.value.flat()) put_f32(buf, v);
}

}  // namespace detail

inline Json checkpoint_header(const Checkpoint& ck) {
  Json cfg = Json::object();
  to_flat(ck.model_config, cfg);
  to_flat(ck.train_config, cfg);
  Json h;
  h["format_version"] = kCheckpointVersion;
  h["config"] = cfg;
  h["decisions"] = {{"gelu", "erf"},
                    {"layer_norm_eps", nn::kLayerNormEps},
                    {"huber_delta", ck.train_config.huber_delta},
                    {"optimizer", "adamw"},
                    {"schedule", "onecycle-cosine"},
                    {"ema_decay", ck.train_config.ema_decay},
                    {"eval_with_ema", ck.train_config.eval_with_ema},
                    {"weight_init", "uniform(+-sqrt(1/fan_in))"},
                    {"tau_parameterization", "log"}};
  h["has_ema"] = ck.ema_shadow.has_value();
  return h;
}

inline std::vector<char> encode_checkpoint(const Checkpoint& ck) {
  std::vector<char> buf(kCheckpointMagic.begin(), kCheckpointMagic.end());
  detail::put_u32(buf, kCheckpointVersion);
  const std::string header = checkpoint_header(ck).dump();
  detail::put_u32(buf, static_cast<std::uint32_t>(header.size()));
  buf.insert(buf.end(), header.begin(), header.end());
  const auto& params = ck.model.params();
  const std::size_t n_arrays = params.size() * (ck.ema_shadow ? 2 : 1);
  detail::put_u32(buf, static_cast<std::uint32_t>(n_arrays));
  for (const auto& p : params) detail::put_array(buf, p, 0);
  if (ck.ema_shadow)
    for (const auto& p : *ck.ema_shadow) detail::put_array(buf, p, 1);
  detail::put_u64(buf, detail::fnv1a(buf));
  return buf;
}

inline void save_checkpoint(const Checkpoint& ck, const std::filesystem::path& path) {
  const auto buf = encode_checkpoint(ck);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw CheckpointError("cannot open " + path.string() + " for writing");
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!out) throw CheckpointError("write failed: " + path.string());
}

inline Checkpoint decode_checkpoint(std::span<const char> bytes) {
  detail::ByteReader in(bytes);
  if (!in.has(8) || in.str(4) != std::string(kCheckpointMagic.begin(), kCheckpointMagic.end()))
    throw CheckpointCorruptError("not a DRXC checkpoint (bad magic)");
  const auto version = in.u32();
  if (version != kCheckpointVersion)
    throw CheckpointVersionError("checkpoint format version " + std::to_string(version) + " is not supported (expected " +
                                 std::to_string(kCheckpointVersion) + ")");
  if (bytes.size() < 8 + 4 + 8) throw CheckpointCorruptError("checkpoint truncated");
  std::uint64_t stored = 0;
  for (int i = 0; i < 8; ++i)
    stored |= std::uint64_t{static_cast<std::uint8_t>(bytes[bytes.size() - 8 + static_cast<std::size_t>(i)])} << (8 * i);
  if (stored != detail::fnv1a(bytes.first(bytes.size() - 8)))
    throw CheckpointCorruptError("checkpoint checksum mismatch");

  detail::ByteReader body(bytes.first(bytes.size() - 8));
  body.str(8);
  const auto header_len = body.u32();
  if (!body.has(header_len)) throw CheckpointCorruptError("checkpoint header truncated");
  Json header;
  try {
    header = Json::parse(body.str(header_len));
  } catch (const Json::exception& e) {
    throw CheckpointCorruptError(std::string("checkpoint header: ") + e.what());
  }
  FusionConfig mc;
  TrainConfig tc;
  try {
    from_flat(header.at("config"), mc, tc);
  } catch (const std::exception& e) {
    throw CheckpointCorruptError(std::string("checkpoint config: ") + e.what());
  }
  const bool has_ema = header.value("has_ema", false);

  DrexModel<float> model(mc);
  std::optional<nn::ParamStore<float>> ema;
  if (has_ema) ema = model.params();

  if (!body.has(4)) throw CheckpointCorruptError("checkpoint truncated");
  const auto n_arrays = body.u32();
  const std::size_t expected = model.params().size() * (has_ema ? 2 : 1);
  if (n_arrays != expected)
    throw CheckpointCorruptError("checkpoint holds " + std::to_string(n_arrays) + " arrays, expected " +
                                 std::to_string(expected));
  for (std::uint32_t a = 0; a < n_arrays; ++a) {
    const bool shadow = a >= model.params().size();
    auto& store = shadow ? *ema : model.params();
    auto& p = store[shadow ? a - model.params().size() : a];
    if (!body.has(4)) throw CheckpointCorruptError("checkpoint truncated");
    const auto name_len = body.u32();
    if (!body.has(std::size_t{name_len} + 9)) throw CheckpointCorruptError("checkpoint truncated");
    const auto name = body.str(name_len);
    const auto kind = body.u8();
    const auto rows = body.u32();
    const auto cols = body.u32();
    if (name != p.name || kind != (shadow ? 1 : 0) || rows != p.value.rows() || cols != p.value.cols())
      throw CheckpointCorruptError("checkpoint array '" + name + "' does not match the configured model");
    if (!body.has(std::size_t{4} * rows * cols)) throw CheckpointCorruptError("checkpoint truncated in '" + name + "'");
    for (auto& v : p.value.flat()) v = body.f32();
  }
  if (body.remaining() != 0) throw CheckpointCorruptError("trailing bytes in checkpoint");
  if (ema) ema->zero_grad();
  return Checkpoint(std::move(model), tc, std::move(ema));
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open " + path.string());
  std::vector<char> bytes{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
  return decode_checkpoint(bytes);
}

}  // namespace drex
