#pragma once

// Binary map files. Layout (little-endian):
//   bytes 0-3   "OTLX"
//   bytes 4-7   u32 d
//   byte  8     orthogonal flag (0/1)
//   byte  9     format version
//   bytes 10-15 reserved, zero
// followed by d*d IEEE-754 doubles, row-major.

#include "otlex/common.hpp"
#include "otlex/linear_map.hpp"

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

namespace otlex {

inline constexpr std::uint8_t kMapFormatVersion = 1;
inline constexpr std::size_t kMapHeaderBytes = 16;

namespace detail {

inline void put_u32(unsigned char* p, std::uint32_t v) {
  for (int b = 0; b < 4; ++b) p[b] = static_cast<unsigned char>((v >> (8 * b)) & 0xffu);
}

inline std::uint32_t get_u32(const unsigned char* p) {
  std::uint32_t v = 0;
  for (int b = 0; b < 4; ++b) v |= static_cast<std::uint32_t>(p[b]) << (8 * b);
  return v;
}

inline void put_f64(unsigned char* p, double x) {
  const auto bits = std::bit_cast<std::uint64_t>(x);
  for (int b = 0; b < 8; ++b) p[b] = static_cast<unsigned char>((bits >> (8 * b)) & 0xffu);
}

inline double get_f64(const unsigned char* p) {
  std::uint64_t bits = 0;
  for (int b = 0; b < 8; ++b) bits |= static_cast<std::uint64_t>(p[b]) << (8 * b);
  return std::bit_cast<double>(bits);
}

}  // namespace detail

inline std::vector<unsigned char> encode_map(const LinearMap& q) {
  const auto d = static_cast<std::size_t>(q.dim());
  std::vector<unsigned char> buf(kMapHeaderBytes + 8 * d * d, 0);
  std::memcpy(buf.data(), "OTLX", 4);
  detail::put_u32(buf.data() + 4, static_cast<std::uint32_t>(d));
  buf[8] = q.orthogonal() ? 1 : 0;
  buf[9] = kMapFormatVersion;
  unsigned char* p = buf.data() + kMapHeaderBytes;
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = 0; j < d; ++j, p += 8)
      detail::put_f64(p, q.matrix()(static_cast<Index>(i), static_cast<Index>(j)));
  return buf;
}

inline LinearMap decode_map(const std::vector<unsigned char>& buf, const std::string& what = "map") {
  if (buf.size() < kMapHeaderBytes || std::memcmp(buf.data(), "OTLX", 4) != 0)
    throw FormatError(what + ": not an OTLX map file");
  if (buf[9] != kMapFormatVersion)
    throw FormatError(what + ": unsupported map format version " + std::to_string(buf[9]));
  const std::uint32_t d = detail::get_u32(buf.data() + 4);
  if (d == 0) throw FormatError(what + ": zero dimension");
  const std::size_t want = kMapHeaderBytes + 8 * static_cast<std::size_t>(d) * d;
  if (buf.size() != want)
    throw FormatError(what + ": expected " + std::to_string(want) + " bytes, found " +
                      std::to_string(buf.size()));
  Matrix m(d, d);
  const unsigned char* p = buf.data() + kMapHeaderBytes;
  for (Index i = 0; i < static_cast<Index>(d); ++i)
    for (Index j = 0; j < static_cast<Index>(d); ++j, p += 8) m(i, j) = detail::get_f64(p);
  return LinearMap(std::move(m), buf[8] != 0);
}

inline void save_map(const LinearMap& q, const std::string& path) {
  const auto buf = encode_map(q);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path + " for writing");
  out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  if (!out) throw IoError("write failed: " + path);
}

inline LinearMap load_map(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  std::vector<unsigned char> buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_map(buf, path);
}

}  // namespace otlex
