#pragma once

// Precomputed backbone features and the DRXF v1 container.
//
// Layout (all integers and floats little-endian):
//   "DRXF" | version u32 = 1 | record_count u64 | dino_dim u32 | n_blocks u32 |
//   block_dims u32 x n_blocks |
//   per record: id_len u32, id bytes, score_flag u8, [score f32], dino f32 x dino_dim,
//               resnet f32 x sum(block_dims)

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <numeric>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <vector>

namespace drex {

inline constexpr std::array<char, 4> kFeatureMagic = {'D', 'R', 'X', 'F'};
inline constexpr std::uint32_t kFeatureVersion = 1;

struct FeatureDims {
  std::uint32_t dino_dim = 384;
  std::vector<std::uint32_t> block_dims = {256, 512, 1024, 2048};

  std::size_t resnet_dim() const {
    return std::accumulate(block_dims.begin(), block_dims.end(), std::size_t{0});
  }
  /// Offset of block `i` (0-based) inside the concatenated ResNet vector.
  std::size_t block_offset(std::size_t i) const {
    return std::accumulate(block_dims.begin(), block_dims.begin() + static_cast<std::ptrdiff_t>(i),
                           std::size_t{0});
  }
  friend bool operator==(const FeatureDims&, const FeatureDims&) = default;
};

struct FeatureRecord {
  std::string id;
  std::vector<float> dino;
  std::vector<float> resnet;
  std::optional<float> score;
};

struct DatasetManifest {
  std::vector<FeatureRecord> records;
  std::string split_name;
  FeatureDims dims;

  std::size_t size() const { return records.size(); }
  bool empty() const { return records.empty(); }
  bool all_scored() const {
    for (const auto& r : records)
      if (!r.score) return false;
    return true;
  }
  std::vector<double> scores() const {
    std::vector<double> out;
    out.reserve(records.size());
    for (const auto& r : records) out.push_back(r.score.value_or(0.0f));
    return out;
  }
};

/// Bitwise comparison of the record payloads and dims (split_name is not part of the file).
inline bool same_contents(const DatasetManifest& a, const DatasetManifest& b) {
  auto bits_equal = [](std::span<const float> x, std::span<const float> y) {
    if (x.size() != y.size()) return false;
    for (std::size_t i = 0; i < x.size(); ++i)
      if (std::bit_cast<std::uint32_t>(x[i]) != std::bit_cast<std::uint32_t>(y[i])) return false;
    return true;
  };
  if (!(a.dims == b.dims) || a.records.size() != b.records.size()) return false;
  for (std::size_t i = 0; i < a.records.size(); ++i) {
    const auto& ra = a.records[i];
    const auto& rb = b.records[i];
    if (ra.id != rb.id || ra.score.has_value() != rb.score.has_value()) return false;
    if (ra.score && std::bit_cast<std::uint32_t>(*ra.score) != std::bit_cast<std::uint32_t>(*rb.score))
      return false;
    if (!bits_equal(ra.dino, rb.dino) || !bits_equal(ra.resnet, rb.resnet)) return false;
  }
  return true;
}

class FeatureStoreError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};
class FeatureIoError : public FeatureStoreError {
 public:
  using FeatureStoreError::FeatureStoreError;
};
/// Bad magic, unsupported version, malformed header or trailing bytes.
class FeatureFormatError : public FeatureStoreError {
 public:
  using FeatureStoreError::FeatureStoreError;
};
class FeatureTruncatedError : public FeatureStoreError {
 public:
  FeatureTruncatedError(std::uint64_t record_index, const std::string& what)
      : FeatureStoreError(what), record_index_(record_index) {}
  std::uint64_t record_index() const { return record_index_; }

 private:
  std::uint64_t record_index_;
};
class FeatureNonFiniteError : public FeatureStoreError {
 public:
  using FeatureStoreError::FeatureStoreError;
};
class FeatureDimensionError : public FeatureStoreError {
 public:
  using FeatureStoreError::FeatureStoreError;
};
/// Raised by write_features when the manifest breaks an invariant.
class FeatureValidationError : public FeatureStoreError {
 public:
  using FeatureStoreError::FeatureStoreError;
};

struct Violation {
  std::string record_id;
  std::string rule;
  friend bool operator==(const Violation&, const Violation&) = default;
};

namespace detail {
inline bool all_finite(std::span<const float> v) {
  for (float x : v)
    if (!std::isfinite(x)) return false;
  return true;
}
}  // namespace detail

inline std::vector<Violation> validate_manifest(const DatasetManifest& m) {
  std::vector<Violation> out;
  if (m.dims.dino_dim == 0) out.push_back({"", "dino_dim must be positive"});
  if (m.dims.block_dims.empty()) out.push_back({"", "at least one resnet block required"});
  for (auto d : m.dims.block_dims)
    if (d == 0) out.push_back({"", "block dims must be positive"});

  const std::size_t resnet_dim = m.dims.resnet_dim();
  std::unordered_set<std::string> seen;
  for (const auto& r : m.records) {
    if (!seen.insert(r.id).second) out.push_back({r.id, "duplicate id"});
    if (r.dino.size() != m.dims.dino_dim) out.push_back({r.id, "dino length mismatch"});
    if (r.resnet.size() != resnet_dim) out.push_back({r.id, "resnet length mismatch"});
    if (!detail::all_finite(r.dino) || !detail::all_finite(r.resnet) ||
        (r.score && !std::isfinite(*r.score))) {
      out.push_back({r.id, "non-finite value"});
    } else if (r.score && (*r.score < 0.0f || *r.score > 1.0f)) {
      out.push_back({r.id, "score out of [0,1]"});
    }
  }
  return out;
}

namespace detail {

inline void put_u32(std::vector<char>& buf, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xFFu));
}
inline void put_u64(std::vector<char>& buf, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xFFu));
}
inline void put_f32(std::vector<char>& buf, float v) { put_u32(buf, std::bit_cast<std::uint32_t>(v)); }

/// Bounds-checked little-endian reader over an in-memory file image.
class ByteReader {
 public:
  explicit ByteReader(std::span<const char> bytes) : bytes_(bytes) {}
  std::size_t remaining() const { return bytes_.size() - pos_; }
  bool has(std::size_t n) const { return remaining() >= n; }
  std::uint8_t u8() { return static_cast<std::uint8_t>(bytes_[pos_++]); }
  std::uint32_t u32() {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= std::uint32_t{static_cast<std::uint8_t>(bytes_[pos_++])} << (8 * i);
    return v;
  }
  std::uint64_t u64() {
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= std::uint64_t{static_cast<std::uint8_t>(bytes_[pos_++])} << (8 * i);
    return v;
  }
  float f32() { return std::bit_cast<float>(u32()); }
  std::string str(std::size_t n) {
    std::string s(bytes_.data() + pos_, n);
    pos_ += n;
    return s;
  }

 private:
  std::span<const char> bytes_;
  std::size_t pos_ = 0;
};

inline std::vector<char> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FeatureIoError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace detail

inline std::vector<char> encode_features(const DatasetManifest& m) {
  if (auto v = validate_manifest(m); !v.empty()) {
    throw FeatureValidationError("invalid record '" + v.front().record_id + "': " + v.front().rule);
  }
  std::vector<char> buf;
  buf.insert(buf.end(), kFeatureMagic.begin(), kFeatureMagic.end());
  detail::put_u32(buf, kFeatureVersion);
  detail::put_u64(buf, m.records.size());
  detail::put_u32(buf, m.dims.dino_dim);
  detail::put_u32(buf, static_cast<std::uint32_t>(m.dims.block_dims.size()));
  for (auto d : m.dims.block_dims) detail::put_u32(buf, d);
  for (const auto& r : m.records) {
    detail::put_u32(buf, static_cast<std::uint32_t>(r.id.size()));
    buf.insert(buf.end(), r.id.begin(), r.id.end());
    buf.push_back(r.score ? char{1} : char{0});
    if (r.score) detail::put_f32(buf, *r.score);
    for (float x : r.dino) detail::put_f32(buf, x);
    for (float x : r.resnet) detail::put_f32(buf, x);
  }
  return buf;
}

inline void write_features(const DatasetManifest& m, const std::filesystem::path& path) {
  const auto buf = encode_features(m);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FeatureIoError("cannot open " + path.string() + " for writing");
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!out) throw FeatureIoError("write failed: " + path.string());
}

inline DatasetManifest decode_features(std::span<const char> bytes, std::string split_name = {}) {
  detail::ByteReader in(bytes);
  if (!in.has(4) || in.str(4) != std::string(kFeatureMagic.begin(), kFeatureMagic.end()))
    throw FeatureFormatError("not a DRXF file (bad magic)");
  if (!in.has(4 + 8 + 4 + 4)) throw FeatureFormatError("truncated DRXF header");
  const auto version = in.u32();
  if (version != kFeatureVersion)
    throw FeatureFormatError("unsupported DRXF version " + std::to_string(version));

  DatasetManifest m;
  m.split_name = std::move(split_name);
  const std::uint64_t count = in.u64();
  m.dims.dino_dim = in.u32();
  const std::uint32_t n_blocks = in.u32();
  if (m.dims.dino_dim == 0 || n_blocks == 0)
    throw FeatureFormatError("DRXF header declares empty feature dims");
  if (!in.has(std::size_t{4} * n_blocks)) throw FeatureFormatError("truncated DRXF header");
  m.dims.block_dims.resize(n_blocks);
  for (auto& d : m.dims.block_dims) {
    d = in.u32();
    if (d == 0) throw FeatureFormatError("DRXF header declares a zero-width block");
  }
  const std::size_t resnet_dim = m.dims.resnet_dim();

  // A corrupt count must not drive the allocation.
  const std::size_t min_record = 4 + 1 + 4 * (m.dims.dino_dim + resnet_dim);
  m.records.reserve(static_cast<std::size_t>(std::min<std::uint64_t>(count, in.remaining() / min_record)));

  auto truncated = [](std::uint64_t i) {
    return FeatureTruncatedError(i, "DRXF payload truncated in record " + std::to_string(i));
  };
  for (std::uint64_t i = 0; i < count; ++i) {
    FeatureRecord r;
    if (!in.has(4)) throw truncated(i);
    const auto id_len = in.u32();
    if (!in.has(std::size_t{id_len} + 1)) throw truncated(i);
    r.id = in.str(id_len);
    const auto flag = in.u8();
    if (flag > 1) throw FeatureFormatError("bad score flag in record " + std::to_string(i));
    if (flag == 1) {
      if (!in.has(4)) throw truncated(i);
      r.score = in.f32();
    }
    if (!in.has(4 * (std::size_t{m.dims.dino_dim} + resnet_dim))) throw truncated(i);
    r.dino.resize(m.dims.dino_dim);
    for (auto& x : r.dino) x = in.f32();
    r.resnet.resize(resnet_dim);
    for (auto& x : r.resnet) x = in.f32();
    if (!detail::all_finite(r.dino) || !detail::all_finite(r.resnet) || (r.score && !std::isfinite(*r.score)))
      throw FeatureNonFiniteError("non-finite value in record " + std::to_string(i) + " ('" + r.id + "')");
    m.records.push_back(std::move(r));
  }
  if (in.remaining() != 0)
    throw FeatureFormatError(std::to_string(in.remaining()) + " trailing bytes after last record");
  return m;
}

inline DatasetManifest read_features(const std::filesystem::path& path) {
  const auto bytes = detail::read_file(path);
  return decode_features(bytes, path.stem().string());
}

/// Reads a file and requires it to carry `expected` dims.
inline DatasetManifest read_features(const std::filesystem::path& path, const FeatureDims& expected) {
  auto m = read_features(path);
  if (!(m.dims == expected)) {
    throw FeatureDimensionError(path.string() + ": feature dims do not match the expected layout (dino " +
                                std::to_string(m.dims.dino_dim) + " vs " + std::to_string(expected.dino_dim) +
                                ", resnet " + std::to_string(m.dims.resnet_dim()) + " vs " +
                                std::to_string(expected.resnet_dim()) + ")");
  }
  return m;
}

}  // namespace drex
