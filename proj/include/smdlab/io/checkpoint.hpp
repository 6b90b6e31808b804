#pragma once

// Binary checkpoints. Layout, all little-endian:
//   0  char[8]  "SMDLABCK"
//   8  u32      format version
//   12 u32      potential kind (0 q-norm, 1 negative entropy)
//   16 f64      q (0 for entropy)
//   24 u64      p
//   32 u64      model spec hash
//   40 u64      seed
//   48 u64      step count
//   56 u64      FNV-1a checksum of bytes [0, 56) and the payload
//   64 f64[p]   parameters

#include "smdlab/mirror.hpp"
#include "smdlab/model.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <optional>
#include <string>
#include <vector>

namespace smdlab::io {

inline constexpr std::uint32_t kCheckpointVersion = 1;
inline constexpr std::size_t kCheckpointHeaderBytes = 64;
inline constexpr char kCheckpointMagic[8] = {'S', 'M', 'D', 'L', 'A', 'B', 'C', 'K'};

struct Checkpoint {
  std::uint32_t version = kCheckpointVersion;
  Potential pot = Potential::qnorm(2.0);
  std::uint64_t spec_hash = 0;
  std::uint64_t seed = 0;
  std::uint64_t steps = 0;
  ParamVector w;

  bool operator==(const Checkpoint& o) const {
    if (version != o.version || !(pot == o.pot) || spec_hash != o.spec_hash || seed != o.seed || steps != o.steps ||
        w.size() != o.w.size())
      return false;
    return w.size() == 0 || std::memcmp(w.data(), o.w.data(), sizeof(double) * static_cast<std::size_t>(w.size())) == 0;
  }
};

namespace detail {

inline void put_u32(std::vector<unsigned char>& b, std::uint32_t v) {
  for (int k = 0; k < 4; ++k) b.push_back(static_cast<unsigned char>(v >> (8 * k)));
}
inline void put_u64(std::vector<unsigned char>& b, std::uint64_t v) {
  for (int k = 0; k < 8; ++k) b.push_back(static_cast<unsigned char>(v >> (8 * k)));
}
inline std::uint32_t get_u32(const unsigned char* p) {
  std::uint32_t v = 0;
  for (int k = 3; k >= 0; --k) v = (v << 8) | p[k];
  return v;
}
inline std::uint64_t get_u64(const unsigned char* p) {
  std::uint64_t v = 0;
  for (int k = 7; k >= 0; --k) v = (v << 8) | p[k];
  return v;
}
inline std::uint64_t fnv1a(const unsigned char* p, std::size_t n, std::uint64_t h = 1469598103934665603ULL) {
  for (std::size_t k = 0; k < n; ++k) {
    h ^= p[k];
    h *= 1099511628211ULL;
  }
  return h;
}

}  // namespace detail

inline std::vector<unsigned char> encode_checkpoint(const Checkpoint& c) {
  std::vector<unsigned char> b(kCheckpointMagic, kCheckpointMagic + 8);
  detail::put_u32(b, c.version);
  detail::put_u32(b, c.pot.is_entropy() ? 1u : 0u);
  detail::put_u64(b, std::bit_cast<std::uint64_t>(c.pot.is_entropy() ? 0.0 : c.pot.q));
  detail::put_u64(b, static_cast<std::uint64_t>(c.w.size()));
  detail::put_u64(b, c.spec_hash);
  detail::put_u64(b, c.seed);
  detail::put_u64(b, c.steps);
  std::vector<unsigned char> payload;
  payload.reserve(8 * static_cast<std::size_t>(c.w.size()));
  for (Eigen::Index j = 0; j < c.w.size(); ++j) detail::put_u64(payload, std::bit_cast<std::uint64_t>(c.w[j]));
  const std::uint64_t sum = detail::fnv1a(payload.data(), payload.size(), detail::fnv1a(b.data(), b.size()));
  detail::put_u64(b, sum);
  b.insert(b.end(), payload.begin(), payload.end());
  return b;
}

/// Rejects bad magic, unknown versions, checksum failures and truncation.
/// When expected_hash is given a different model spec hash is refused unless
/// allow_hash_mismatch is set.
inline Checkpoint decode_checkpoint(const std::vector<unsigned char>& b, std::optional<std::uint64_t> expected_hash = {},
                                    bool allow_hash_mismatch = false, const std::string& what = "checkpoint") {
  if (b.size() < kCheckpointHeaderBytes) throw FormatError(what + ": truncated header");
  if (std::memcmp(b.data(), kCheckpointMagic, 8) != 0) throw FormatError(what + ": not a checkpoint (bad magic)");
  Checkpoint c;
  c.version = detail::get_u32(b.data() + 8);
  if (c.version != kCheckpointVersion)
    throw FormatError(what + ": unsupported version " + std::to_string(c.version));
  const std::uint32_t kind = detail::get_u32(b.data() + 12);
  const double q = std::bit_cast<double>(detail::get_u64(b.data() + 16));
  const std::uint64_t p = detail::get_u64(b.data() + 24);
  c.spec_hash = detail::get_u64(b.data() + 32);
  c.seed = detail::get_u64(b.data() + 40);
  c.steps = detail::get_u64(b.data() + 48);
  const std::uint64_t sum = detail::get_u64(b.data() + 56);
  if (p > (b.size() - kCheckpointHeaderBytes) / 8 || b.size() != kCheckpointHeaderBytes + 8 * p)
    throw FormatError(what + ": payload length does not match p = " + std::to_string(p));
  const unsigned char* payload = b.data() + kCheckpointHeaderBytes;
  if (detail::fnv1a(payload, 8 * p, detail::fnv1a(b.data(), 56)) != sum)
    throw FormatError(what + ": checksum mismatch (corrupted file)");
  if (kind == 1) c.pot = Potential::entropy();
  else if (kind == 0 && q > 1.0) c.pot = Potential::qnorm(q);
  else throw FormatError(what + ": invalid potential descriptor");
  if (expected_hash && *expected_hash != c.spec_hash && !allow_hash_mismatch)
    throw FormatError(what + ": model spec hash mismatch (checkpoint was written for a different model)");
  c.w.resize(static_cast<Eigen::Index>(p));
  for (std::uint64_t j = 0; j < p; ++j)
    c.w[static_cast<Eigen::Index>(j)] = std::bit_cast<double>(detail::get_u64(payload + 8 * j));
  return c;
}

inline void save_checkpoint(const std::string& path, const Checkpoint& c) {
  const auto bytes = encode_checkpoint(c);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write '" + path + "'");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for '" + path + "'");
}

inline Checkpoint load_checkpoint(const std::string& path, std::optional<std::uint64_t> expected_hash = {},
                                  bool allow_hash_mismatch = false) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "'");
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes, expected_hash, allow_hash_mismatch, path);
}

inline Checkpoint make_checkpoint(const Model& model, const Potential& pot, const ParamVector& w, std::uint64_t seed,
                                  std::uint64_t steps) {
  if (w.size() != model.param_count()) throw ArgumentError("make_checkpoint: parameter count mismatch");
  return Checkpoint{kCheckpointVersion, pot, model.spec_hash(), seed, steps, w};
}

}  // namespace smdlab::io
