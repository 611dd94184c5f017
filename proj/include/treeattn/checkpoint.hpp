// SPDX-License-Identifier: Apache-2.0
#ifndef TREEATTN_CHECKPOINT_HPP
#define TREEATTN_CHECKPOINT_HPP

// Binary checkpoint container. All integers are little-endian.
//
//   offset  size      field
//   0       8         magic "TREEATTN"
//   8       4         u32 format version (kCheckpointVersion)
//   12      4         u32 float width in bits (32 or 64)
//   16      4         u32 metadata length M
//   20      M         metadata, UTF-8 "key=value\n" lines sorted by key
//   ..      4         u32 parameter count P
//   then P records:
//           4         u32 name length
//           ..        name, UTF-8
//           4         u32 rank r
//           8*r       u64 extents
//           w/8*N     payload, IEEE-754 little-endian, N = product of extents

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <map>
#include <string>
#include <type_traits>
#include <vector>

#include "treeattn/error.hpp"
#include "treeattn/tensor.hpp"

namespace treeattn {

inline constexpr std::uint32_t kCheckpointVersion = 1;
inline constexpr char kCheckpointMagic[8] = {'T', 'R', 'E', 'E', 'A', 'T', 'T', 'N'};

template <typename T>
struct NamedTensor {
  std::string name;
  Shape shape;
  std::vector<T> data;

  friend bool operator==(const NamedTensor&, const NamedTensor&) = default;
};

template <typename T>
struct Checkpoint {
  std::map<std::string, std::string> metadata;
  std::vector<NamedTensor<T>> params;

  const NamedTensor<T>* find(const std::string& name) const {
    for (const auto& p : params)
      if (p.name == name) return &p;
    return nullptr;
  }

  friend bool operator==(const Checkpoint&, const Checkpoint&) = default;
};

namespace detail {

template <typename U>
void put_le(std::vector<std::uint8_t>& out, U v) {
  static_assert(std::is_unsigned_v<U>);
  for (std::size_t i = 0; i < sizeof(U); ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

class ByteReader {
 public:
  explicit ByteReader(const std::vector<std::uint8_t>& bytes) : bytes_(bytes) {}

  template <typename U>
  U get() {
    need(sizeof(U));
    U v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(static_cast<U>(bytes_[pos_ + i]) << (8 * i));
    pos_ += sizeof(U);
    return v;
  }

  std::string get_string(std::size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
    pos_ += n;
    return s;
  }

  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > bytes_.size()) throw DataError("checkpoint truncated at byte " + std::to_string(pos_));
  }
  const std::vector<std::uint8_t>& bytes_;
  std::size_t pos_ = 0;
};

template <typename T>
using FloatBits = std::conditional_t<sizeof(T) == 8, std::uint64_t, std::uint32_t>;

}  // namespace detail

template <typename T>
std::vector<std::uint8_t> checkpoint_to_bytes(const Checkpoint<T>& ckpt) {
  static_assert(std::is_same_v<T, float> || std::is_same_v<T, double>);
  std::vector<std::uint8_t> out(kCheckpointMagic, kCheckpointMagic + 8);
  detail::put_le<std::uint32_t>(out, kCheckpointVersion);
  detail::put_le<std::uint32_t>(out, sizeof(T) * 8);
  std::string meta;
  for (const auto& [k, v] : ckpt.metadata) {
    if (k.find_first_of("=\n") != std::string::npos || v.find('\n') != std::string::npos) {
      throw DataError("metadata key/value may not contain '=' (key) or newlines: " + k);
    }
    meta += k + "=" + v + "\n";
  }
  detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(meta.size()));
  out.insert(out.end(), meta.begin(), meta.end());
  detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(ckpt.params.size()));
  for (const auto& p : ckpt.params) {
    if (shape_size(p.shape) != p.data.size()) throw DimensionError("checkpoint entry " + p.name + " shape/data mismatch");
    detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(p.name.size()));
    out.insert(out.end(), p.name.begin(), p.name.end());
    detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(p.shape.size()));
    for (auto e : p.shape) detail::put_le<std::uint64_t>(out, e);
    for (T v : p.data) detail::put_le(out, std::bit_cast<detail::FloatBits<T>>(v));
  }
  return out;
}

/// Float width recorded in a serialized checkpoint (32 or 64).
inline std::uint32_t checkpoint_float_width(const std::vector<std::uint8_t>& bytes) {
  detail::ByteReader r(bytes);
  if (r.get_string(8) != std::string(kCheckpointMagic, 8)) throw DataError("not a checkpoint (bad magic)");
  r.get<std::uint32_t>();
  return r.get<std::uint32_t>();
}

template <typename T>
Checkpoint<T> checkpoint_from_bytes(const std::vector<std::uint8_t>& bytes) {
  detail::ByteReader r(bytes);
  if (r.get_string(8) != std::string(kCheckpointMagic, 8)) throw DataError("not a checkpoint (bad magic)");
  const auto version = r.get<std::uint32_t>();
  if (version != kCheckpointVersion) throw DataError("unsupported checkpoint version " + std::to_string(version));
  const auto width = r.get<std::uint32_t>();
  if (width != sizeof(T) * 8) {
    throw DataError("checkpoint float width " + std::to_string(width) + " does not match requested " +
                    std::to_string(sizeof(T) * 8));
  }
  Checkpoint<T> ckpt;
  const std::string meta = r.get_string(r.get<std::uint32_t>());
  std::size_t start = 0;
  while (start < meta.size()) {
    const std::size_t end = meta.find('\n', start);
    if (end == std::string::npos) throw DataError("checkpoint metadata not newline-terminated");
    const std::string line = meta.substr(start, end - start);
    const std::size_t eq = line.find('=');
    if (eq == std::string::npos) throw DataError("checkpoint metadata line without '='");
    ckpt.metadata[line.substr(0, eq)] = line.substr(eq + 1);
    start = end + 1;
  }
  const auto count = r.get<std::uint32_t>();
  for (std::uint32_t n = 0; n < count; ++n) {
    NamedTensor<T> p;
    p.name = r.get_string(r.get<std::uint32_t>());
    const auto rank = r.get<std::uint32_t>();
    for (std::uint32_t k = 0; k < rank; ++k) p.shape.push_back(static_cast<std::size_t>(r.get<std::uint64_t>()));
    const std::size_t len = shape_size(p.shape);
    p.data.resize(len);
    for (std::size_t i = 0; i < len; ++i) p.data[i] = std::bit_cast<T>(r.get<detail::FloatBits<T>>());
    ckpt.params.push_back(std::move(p));
  }
  if (!r.done()) throw DataError("trailing bytes after checkpoint payload");
  return ckpt;
}

inline std::vector<std::uint8_t> read_file_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

inline void write_file_bytes(const std::string& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("short write to " + path);
}

template <typename T>
void save_checkpoint(const std::string& path, const Checkpoint<T>& ckpt) {
  write_file_bytes(path, checkpoint_to_bytes(ckpt));
}

template <typename T>
Checkpoint<T> load_checkpoint(const std::string& path) {
  return checkpoint_from_bytes<T>(read_file_bytes(path));
}

}  // namespace treeattn

#endif  // TREEATTN_CHECKPOINT_HPP
