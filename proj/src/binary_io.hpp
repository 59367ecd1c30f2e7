#pragma once

// Little-endian primitives shared by the index and checkpoint formats.

#include <bit>
#include <cstdint>
#include <istream>
#include <ostream>
#include <string>
#include <string_view>

#include "synthrank/error.hpp"

namespace synthrank::binary {

template <typename UInt>
void write_uint(std::ostream& out, UInt value) {
  char bytes[sizeof(UInt)];
  for (std::size_t i = 0; i < sizeof(UInt); ++i) {
    bytes[i] = static_cast<char>((value >> (8 * i)) & 0xFF);
  }
  out.write(bytes, sizeof(UInt));
}

template <typename UInt>
UInt read_uint(std::istream& in) {
  unsigned char bytes[sizeof(UInt)];
  if (!in.read(reinterpret_cast<char*>(bytes), sizeof(UInt))) {
    throw Error(ErrorCode::kParse, "unexpected end of binary stream");
  }
  UInt value = 0;
  for (std::size_t i = 0; i < sizeof(UInt); ++i) {
    value |= static_cast<UInt>(bytes[i]) << (8 * i);
  }
  return value;
}

inline void write_f64(std::ostream& out, double v) {
  write_uint<std::uint64_t>(out, std::bit_cast<std::uint64_t>(v));
}

inline double read_f64(std::istream& in) {
  return std::bit_cast<double>(read_uint<std::uint64_t>(in));
}

inline void write_string(std::ostream& out, std::string_view s) {
  write_uint<std::uint32_t>(out, static_cast<std::uint32_t>(s.size()));
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline std::string read_string(std::istream& in) {
  const auto len = read_uint<std::uint32_t>(in);
  std::string s(len, '\0');
  if (len > 0 && !in.read(s.data(), len)) {
    throw Error(ErrorCode::kParse, "unexpected end of binary stream");
  }
  return s;
}

inline void write_magic(std::ostream& out, std::string_view magic, std::uint32_t version) {
  out.write(magic.data(), static_cast<std::streamsize>(magic.size()));
  write_uint<std::uint32_t>(out, version);
}

/// Returns the stored version; throws on a magic mismatch.
inline std::uint32_t read_magic(std::istream& in, std::string_view magic) {
  std::string got(magic.size(), '\0');
  if (!in.read(got.data(), static_cast<std::streamsize>(got.size())) || got != magic) {
    throw Error(ErrorCode::kParse, "bad file header, expected " + std::string(magic.substr(0, 5)));
  }
  return read_uint<std::uint32_t>(in);
}

}  // namespace synthrank::binary
