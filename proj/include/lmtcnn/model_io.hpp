#pragma once

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "lmtcnn/network.hpp"

// Model file layout (byte-exact, little-endian; version 1):
//
//   offset  size  field
//   0       4     magic "LMTC"
//   4       2     format version, u16
//   6       56    config block: 14 x u32 in this order: input_size,
//                 alpha1_num, alpha1_den, alpha2_num, alpha2_den,
//                 conv1_kernel, conv1_stride, conv1_channels, ds_kernel,
//                 pw1_base, pw2_base, fc_width, age_classes, gender_classes
//   62      4     tensor count, u32
//   ...           per tensor, in fixed definition order:
//                   u32 name length, name bytes (UTF-8),
//                   u32 rank, u32 extent per axis,
//                   f32 values (row-major, IEEE-754 bits)
//   end-4   4     CRC-32 (IEEE reflected) of every preceding byte
//
// docs/model-format.md carries the same description for consumers that do
// not read this header.

namespace lmtcnn {

struct IoFailure : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct BadMagic : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct UnsupportedVersion : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ChecksumMismatch : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct TruncatedFile : std::runtime_error {
  using std::runtime_error::runtime_error;
};

inline constexpr std::uint16_t kModelFormatVersion = 1;
inline constexpr std::array<std::uint8_t, 4> kModelMagic{'L', 'M', 'T', 'C'};

inline std::uint32_t crc32(const std::uint8_t* data, std::size_t n) {
  static const auto table = [] {
    std::array<std::uint32_t, 256> t{};
    for (std::uint32_t i = 0; i < 256; ++i) {
      std::uint32_t c = i;
      for (int k = 0; k < 8; ++k) c = (c & 1u) ? 0xEDB88320u ^ (c >> 1) : c >> 1;
      t[i] = c;
    }
    return t;
  }();
  std::uint32_t crc = 0xFFFFFFFFu;
  for (std::size_t i = 0; i < n; ++i) crc = table[(crc ^ data[i]) & 0xFFu] ^ (crc >> 8);
  return crc ^ 0xFFFFFFFFu;
}

namespace detail {

inline void put_u16(std::vector<std::uint8_t>& out, std::uint16_t v) {
  out.push_back(static_cast<std::uint8_t>(v & 0xFF));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
}
inline void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xFF));
}
inline void put_f32(std::vector<std::uint8_t>& out, float v) {
  put_u32(out, std::bit_cast<std::uint32_t>(v));
}

struct Cursor {
  const std::uint8_t* data;
  std::size_t size;
  std::size_t pos = 0;

  void need(std::size_t n) const {
    if (pos + n > size) throw TruncatedFile("model file ends mid-record");
  }
  std::uint16_t u16() {
    need(2);
    std::uint16_t v = static_cast<std::uint16_t>(data[pos] | (data[pos + 1] << 8));
    pos += 2;
    return v;
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(data[pos + i]) << (8 * i);
    pos += 4;
    return v;
  }
  float f32() { return std::bit_cast<float>(u32()); }
  std::string str(std::size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(data + pos), n);
    pos += n;
    return s;
  }
};

inline std::vector<std::uint32_t> config_words(const NetworkConfig& c) {
  return {static_cast<std::uint32_t>(c.input_size),
          c.alpha1.num,
          c.alpha1.den,
          c.alpha2.num,
          c.alpha2.den,
          static_cast<std::uint32_t>(c.conv1_kernel),
          static_cast<std::uint32_t>(c.conv1_stride),
          static_cast<std::uint32_t>(c.conv1_channels),
          static_cast<std::uint32_t>(c.ds_kernel),
          static_cast<std::uint32_t>(c.pw1_base),
          static_cast<std::uint32_t>(c.pw2_base),
          static_cast<std::uint32_t>(c.fc_width),
          static_cast<std::uint32_t>(c.age_classes),
          static_cast<std::uint32_t>(c.gender_classes)};
}

}  // namespace detail

/// Serializes a model to the version-1 byte layout. Byte-identical output
/// for identical parameters.
inline std::vector<std::uint8_t> serialize_model(const ModelParams<float>& params) {
  std::vector<std::uint8_t> out;
  out.insert(out.end(), kModelMagic.begin(), kModelMagic.end());
  detail::put_u16(out, kModelFormatVersion);
  for (std::uint32_t w : detail::config_words(params.config)) detail::put_u32(out, w);

  std::uint32_t count = 0;
  for_each_tensor(params, [&count](const char*, const Tensor<float>&) { ++count; });
  detail::put_u32(out, count);
  for_each_tensor(params, [&out](const char* name, const Tensor<float>& t) {
    const std::string n(name);
    detail::put_u32(out, static_cast<std::uint32_t>(n.size()));
    out.insert(out.end(), n.begin(), n.end());
    detail::put_u32(out, static_cast<std::uint32_t>(t.rank()));
    for (int e : t.shape) detail::put_u32(out, static_cast<std::uint32_t>(e));
    for (float v : t.data) detail::put_f32(out, v);
  });
  detail::put_u32(out, crc32(out.data(), out.size()));
  return out;
}

/// Exact size in bytes of serialize_model's output, without serializing.
inline std::uint64_t serialized_size_bytes(const ModelParams<float>& params) {
  std::uint64_t n = 4 + 2 + 14 * 4 + 4 + 4;  // magic, version, config, count, crc
  for_each_tensor(params, [&n](const char* name, const Tensor<float>& t) {
    n += 4 + std::strlen(name) + 4 + 4ULL * static_cast<std::uint64_t>(t.rank()) + 4ULL * t.numel();
  });
  return n;
}

/// Parses version-1 bytes back into a model. Structural problems raise
/// TruncatedFile before the checksum is consulted; an intact structure with
/// a wrong trailer raises ChecksumMismatch.
inline ModelParams<float> parse_model(const std::vector<std::uint8_t>& bytes) {
  detail::Cursor cur{bytes.data(), bytes.size()};
  cur.need(4);
  if (!std::equal(kModelMagic.begin(), kModelMagic.end(), bytes.begin()))
    throw BadMagic("not a model file (magic mismatch)");
  cur.pos = 4;
  const std::uint16_t version = cur.u16();
  if (version != kModelFormatVersion)
    throw UnsupportedVersion("model format version " + std::to_string(version) + " unsupported");

  NetworkConfig cfg;
  cfg.input_size = static_cast<int>(cur.u32());
  cfg.alpha1.num = cur.u32();
  cfg.alpha1.den = cur.u32();
  cfg.alpha2.num = cur.u32();
  cfg.alpha2.den = cur.u32();
  cfg.conv1_kernel = static_cast<int>(cur.u32());
  cfg.conv1_stride = static_cast<int>(cur.u32());
  cfg.conv1_channels = static_cast<int>(cur.u32());
  cfg.ds_kernel = static_cast<int>(cur.u32());
  cfg.pw1_base = static_cast<int>(cur.u32());
  cfg.pw2_base = static_cast<int>(cur.u32());
  cfg.fc_width = static_cast<int>(cur.u32());
  cfg.age_classes = static_cast<int>(cur.u32());
  cfg.gender_classes = static_cast<int>(cur.u32());

  struct NamedTensor {
    std::string name;
    Tensor<float> tensor;
  };
  std::vector<NamedTensor> loaded;
  const std::uint32_t count = cur.u32();
  for (std::uint32_t i = 0; i < count; ++i) {
    NamedTensor nt;
    nt.name = cur.str(cur.u32());
    const std::uint32_t rank = cur.u32();
    std::vector<int> shape(rank);
    for (auto& e : shape) e = static_cast<int>(cur.u32());
    nt.tensor = Tensor<float>(shape);
    cur.need(4ULL * nt.tensor.numel());
    for (auto& v : nt.tensor.data) v = cur.f32();
    loaded.push_back(std::move(nt));
  }
  cur.need(4);  // checksum trailer

  const std::uint32_t stored = static_cast<std::uint32_t>(bytes[bytes.size() - 4]) |
                               (static_cast<std::uint32_t>(bytes[bytes.size() - 3]) << 8) |
                               (static_cast<std::uint32_t>(bytes[bytes.size() - 2]) << 16) |
                               (static_cast<std::uint32_t>(bytes[bytes.size() - 1]) << 24);
  if (crc32(bytes.data(), bytes.size() - 4) != stored)
    throw ChecksumMismatch("model file checksum does not match its contents");

  ModelParams<float> params;
  params.config = cfg;
  std::size_t assigned = 0;
  for_each_tensor(params, [&](const char* name, Tensor<float>& dst) {
    for (auto& nt : loaded) {
      if (nt.name == name) {
        dst = std::move(nt.tensor);
        ++assigned;
        return;
      }
    }
  });
  if (assigned != loaded.size() || assigned != 18)
    throw ShapeMismatch("model file tensor directory does not match the expected layer set");
  return params;
}

/// Writes the model file; returns the byte count on disk.
inline std::uint64_t save_model(const ModelParams<float>& params, const std::string& path) {
  const auto bytes = serialize_model(params);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoFailure("cannot open " + path + " for writing");
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw IoFailure("short write to " + path);
  return bytes.size();
}

inline ModelParams<float> load_model(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoFailure("cannot open " + path + " for reading");
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)),
                                  std::istreambuf_iterator<char>());
  return parse_model(bytes);
}

}  // namespace lmtcnn
