#pragma once

// ETNS1 tensor container.
//
//   bytes 0..7    "ETNS1\0\0\0"
//   byte  8       dtype code (1 = float32, IEEE-754 little-endian)
//   byte  9       ndim
//   bytes 10..11  zero
//   ndim x u64    dims, little-endian
//   payload       C-order, last dim fastest
//
// Reads and writes are byte-exact on any host endianness.

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "echoflow/error.hpp"

namespace echoflow {

inline constexpr std::array<char, 8> kEtnsMagic = {'E', 'T', 'N', 'S', '1', '\0', '\0', '\0'};
inline constexpr std::uint8_t kDtypeFloat32 = 1;
inline constexpr std::size_t kEtnsFixedHeader = 12;

struct NdArray {
  std::vector<std::uint64_t> dims;
  std::vector<float> data;

  std::uint64_t element_count() const {
    std::uint64_t n = 1;
    for (auto d : dims) n *= d;
    return n;
  }
};

namespace detail {

inline void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

inline std::uint64_t get_u64(const unsigned char* p) {
  std::uint64_t v = 0;
  for (int i = 7; i >= 0; --i) v = (v << 8) | p[i];
  return v;
}

inline void put_f32(std::string& out, float f) {
  const auto bits = std::bit_cast<std::uint32_t>(f);
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xFF));
}

inline float get_f32(const unsigned char* p) {
  std::uint32_t bits = 0;
  for (int i = 3; i >= 0; --i) bits = (bits << 8) | p[i];
  return std::bit_cast<float>(bits);
}

}  // namespace detail

inline std::string encode_etns(const NdArray& array) {
  require(array.dims.size() <= 255, ErrorCode::dim_overflow, "ETNS1 supports at most 255 dims");
  require(array.element_count() == array.data.size(), ErrorCode::shape_mismatch,
          "NdArray dims do not match data length");
  std::string out;
  out.reserve(kEtnsFixedHeader + 8 * array.dims.size() + 4 * array.data.size());
  out.append(kEtnsMagic.data(), kEtnsMagic.size());
  out.push_back(static_cast<char>(kDtypeFloat32));
  out.push_back(static_cast<char>(array.dims.size()));
  out.push_back('\0');
  out.push_back('\0');
  for (auto d : array.dims) detail::put_u64(out, d);
  for (float v : array.data) detail::put_f32(out, v);
  return out;
}

// Decodes one tensor from the front of `bytes`. When `consumed` is null the
// buffer must hold exactly one tensor; otherwise trailing bytes are allowed and
// the number of bytes used is reported.
inline NdArray decode_etns(std::span<const unsigned char> bytes, std::size_t* consumed = nullptr) {
  require(bytes.size() >= kEtnsFixedHeader, ErrorCode::truncated, "ETNS1 header truncated");
  require(std::memcmp(bytes.data(), kEtnsMagic.data(), kEtnsMagic.size()) == 0, ErrorCode::bad_magic,
          "not an ETNS1 container (bad magic)");
  require(bytes[8] == kDtypeFloat32, ErrorCode::unsupported_dtype,
          "unsupported ETNS1 dtype code " + std::to_string(bytes[8]));
  require(bytes[10] == 0 && bytes[11] == 0, ErrorCode::bad_magic, "ETNS1 reserved bytes are nonzero");
  const std::size_t ndim = bytes[9];
  const std::size_t header = kEtnsFixedHeader + 8 * ndim;
  require(bytes.size() >= header, ErrorCode::truncated, "ETNS1 dims truncated");

  NdArray out;
  out.dims.resize(ndim);
  std::uint64_t count = 1;
  constexpr std::uint64_t kMaxElements = std::numeric_limits<std::uint64_t>::max() / 4;
  for (std::size_t i = 0; i < ndim; ++i) {
    const std::uint64_t d = detail::get_u64(bytes.data() + kEtnsFixedHeader + 8 * i);
    out.dims[i] = d;
    if (d != 0 && count > kMaxElements / d) fail(ErrorCode::dim_overflow, "ETNS1 dims product overflows");
    count *= d;
  }
  const std::size_t available = bytes.size() - header;
  require(count <= available / 4, ErrorCode::truncated,
          "ETNS1 payload truncated: header declares " + std::to_string(count) + " elements, " +
              std::to_string(available / 4) + " present");
  const std::size_t payload = static_cast<std::size_t>(count) * 4;
  if (consumed == nullptr) {
    require(available == payload, ErrorCode::truncated,
            "ETNS1 payload length " + std::to_string(available) + " does not match dims (" +
                std::to_string(payload) + " bytes)");
  } else {
    *consumed = header + payload;
  }
  out.data.resize(static_cast<std::size_t>(count));
  const unsigned char* p = bytes.data() + header;
  for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] = detail::get_f32(p + 4 * i);
  return out;
}

inline std::vector<unsigned char> read_file_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), ErrorCode::io, "cannot open " + path);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_file_bytes(const std::string& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  require(static_cast<bool>(out), ErrorCode::io, "cannot write " + path);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  require(static_cast<bool>(out), ErrorCode::io, "short write to " + path);
}

inline NdArray read_etns(const std::string& path) {
  const auto bytes = read_file_bytes(path);
  return decode_etns(bytes);
}

inline void write_etns(const std::string& path, const NdArray& array) {
  write_file_bytes(path, encode_etns(array));
}

}  // namespace echoflow
