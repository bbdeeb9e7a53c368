#pragma once

// Checkpoint file layout (all integers little-endian):
//
//   "FQFM0001"                              8-byte magic
//   u32 entry_count
//   entry_count x {
//     u32 name_len, name bytes (UTF-8)
//     u8  dtype (1 = float32)
//     u8  rank, rank x u32 extents
//     product(extents) x f32 payload
//   }
//   u32 crc32 (zlib polynomial) of every byte after the magic and before the crc
//
// Parameters are always stored as float32; f64 models are narrowed on save.

#include <zlib.h>

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "freqformer/params.hpp"

namespace fqf {

inline constexpr std::string_view kCheckpointMagic = "FQFM0001";
inline constexpr std::uint8_t kDtypeF32 = 1;

struct CheckpointEntry {
  std::string name;
  Shape shape;
  std::vector<float> data;
};

namespace detail {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

inline void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

inline std::uint32_t crc32_of(const std::uint8_t* p, std::size_t n) {
  uLong crc = ::crc32(0L, Z_NULL, 0);
  while (n > 0) {
    const auto chunk = static_cast<uInt>(std::min<std::size_t>(n, 1u << 30));
    crc = ::crc32(crc, p, chunk);
    p += chunk;
    n -= chunk;
  }
  return static_cast<std::uint32_t>(crc);
}

class Reader {
 public:
  Reader(const std::uint8_t* p, std::size_t n) : p_(p), n_(n) {}

  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(p_[pos_ + static_cast<std::size_t>(i)]) << (8 * i);
    pos_ += 4;
    return v;
  }
  std::uint8_t u8() {
    need(1);
    return p_[pos_++];
  }
  const std::uint8_t* bytes(std::size_t n) {
    need(n);
    const auto* p = p_ + pos_;
    pos_ += n;
    return p;
  }
  bool done() const { return pos_ == n_; }

 private:
  void need(std::size_t k) const {
    if (n_ - pos_ < k) throw CheckpointError(CheckpointError::Kind::Format, "checkpoint truncated inside an entry");
  }
  const std::uint8_t* p_;
  std::size_t n_;
  std::size_t pos_ = 0;
};

}  // namespace detail

template <class T>
std::vector<std::uint8_t> encode_checkpoint(const ParamList<T>& params) {
  std::vector<std::uint8_t> out(kCheckpointMagic.begin(), kCheckpointMagic.end());
  detail::put_u32(out, static_cast<std::uint32_t>(params.size()));
  for (const auto& [name, t] : params) {
    detail::put_u32(out, static_cast<std::uint32_t>(name.size()));
    out.insert(out.end(), name.begin(), name.end());
    out.push_back(kDtypeF32);
    out.push_back(static_cast<std::uint8_t>(t.rank()));
    for (int a = 0; a < t.rank(); ++a) detail::put_u32(out, static_cast<std::uint32_t>(t.dim(a)));
    for (T v : t.data()) detail::put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
  }
  detail::put_u32(out, detail::crc32_of(out.data() + kCheckpointMagic.size(), out.size() - kCheckpointMagic.size()));
  return out;
}

/// Parses and validates a checkpoint image. Checks run in the order: length,
/// magic, checksum, then per-entry dtype and structure.
inline std::vector<CheckpointEntry> decode_checkpoint(const std::vector<std::uint8_t>& bytes) {
  using Kind = CheckpointError::Kind;
  const std::size_t m = kCheckpointMagic.size();
  if (bytes.size() < m + 8) throw CheckpointError(Kind::Checksum, "checkpoint truncated (" + std::to_string(bytes.size()) + " bytes)");
  if (std::string_view(reinterpret_cast<const char*>(bytes.data()), m) != kCheckpointMagic) {
    throw CheckpointError(Kind::Magic, "bad checkpoint magic");
  }
  detail::Reader tail(bytes.data() + bytes.size() - 4, 4);
  const std::uint32_t stored = tail.u32();
  if (detail::crc32_of(bytes.data() + m, bytes.size() - m - 4) != stored) {
    throw CheckpointError(Kind::Checksum, "checkpoint checksum mismatch");
  }
  detail::Reader r(bytes.data() + m, bytes.size() - m - 4);
  const std::uint32_t count = r.u32();
  std::vector<CheckpointEntry> entries;
  std::set<std::string> seen;
  for (std::uint32_t e = 0; e < count; ++e) {
    CheckpointEntry entry;
    const std::uint32_t len = r.u32();
    const auto* name = r.bytes(len);
    entry.name.assign(reinterpret_cast<const char*>(name), len);
    if (!seen.insert(entry.name).second) throw CheckpointError(Kind::Format, "duplicate entry " + entry.name);
    const std::uint8_t dtype = r.u8();
    if (dtype != kDtypeF32) {
      throw CheckpointError(Kind::Dtype, "unknown dtype tag " + std::to_string(dtype) + " for " + entry.name);
    }
    const std::uint8_t rank = r.u8();
    if (rank > 4) throw CheckpointError(Kind::Format, "rank " + std::to_string(rank) + " > 4 for " + entry.name);
    std::array<std::int64_t, 4> dims{};
    for (std::uint8_t a = 0; a < rank; ++a) dims[a] = r.u32();
    entry.shape = Shape(std::span<const std::int64_t>(dims.data(), rank));
    const auto n = static_cast<std::size_t>(entry.shape.numel());
    if (n > (bytes.size() / 4)) throw CheckpointError(Kind::Format, "entry " + entry.name + " larger than the file");
    const auto* payload = r.bytes(4 * n);
    entry.data.resize(n);
    std::memcpy(entry.data.data(), payload, 4 * n);
    entries.push_back(std::move(entry));
  }
  if (!r.done()) throw CheckpointError(Kind::Format, "trailing bytes after the last entry");
  return entries;
}

inline std::vector<std::uint8_t> read_file_bytes(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path);
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

inline void write_file_bytes(const std::string& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot write " + path);
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw IoError("write failed: " + path);
}

template <class T>
void save_checkpoint(const ParamList<T>& params, const std::string& path) {
  write_file_bytes(path, encode_checkpoint(params));
}

/// Copies decoded entries into `params`. Every parameter must be present with
/// a matching shape; entries with no matching parameter are an error unless
/// `allow_extra` is set.
template <class T>
void assign_checkpoint(const ParamList<T>& params, const std::vector<CheckpointEntry>& entries, bool allow_extra = false) {
  using Kind = CheckpointError::Kind;
  std::set<std::string> used;
  for (const auto& e : entries) {
    const Tensor<T>* p = params.find(e.name);
    if (!p) {
      if (allow_extra) continue;
      throw CheckpointError(Kind::Format, "checkpoint entry " + e.name + " has no matching parameter");
    }
    if (!(p->shape() == e.shape)) {
      throw CheckpointError(Kind::Shape, "shape mismatch for " + e.name + ": checkpoint " + e.shape.str() + ", model " +
                                             p->shape().str());
    }
    used.insert(e.name);
  }
  for (const auto& [name, t] : params) {
    if (!used.count(name)) throw CheckpointError(Kind::Missing, "checkpoint lacks parameter " + name);
  }
  for (const auto& e : entries) {
    const Tensor<T>* p = params.find(e.name);
    if (!p) continue;
    Tensor<T> t = *p;
    auto dst = t.mutable_data();
    for (std::size_t i = 0; i < e.data.size(); ++i) dst[i] = static_cast<T>(e.data[i]);
  }
}

template <class T>
void load_checkpoint(const ParamList<T>& params, const std::string& path, bool allow_extra = false) {
  std::vector<std::uint8_t> bytes;
  try {
    bytes = read_file_bytes(path);
  } catch (const IoError& e) {
    throw CheckpointError(CheckpointError::Kind::Io, e.what());
  }
  assign_checkpoint(params, decode_checkpoint(bytes), allow_extra);
}

}  // namespace fqf
