#pragma once

#include <algorithm>
#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <string>

#include "odml/error.hpp"

// Little-endian primitives for the on-disk formats.
namespace odml::io {

template <typename T>
T to_little_endian(T value) {
  if constexpr (std::endian::native == std::endian::little) {
    return value;
  } else {
    std::array<unsigned char, sizeof(T)> bytes;
    std::memcpy(bytes.data(), &value, sizeof(T));
    std::reverse(bytes.begin(), bytes.end());
    std::memcpy(&value, bytes.data(), sizeof(T));
    return value;
  }
}

inline void write_u32(std::ostream& out, std::uint32_t v) {
  v = to_little_endian(v);
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

inline void write_f64(std::ostream& out, double v) {
  std::uint64_t bits = to_little_endian(std::bit_cast<std::uint64_t>(v));
  out.write(reinterpret_cast<const char*>(&bits), sizeof bits);
}

inline std::uint32_t read_u32(std::istream& in, const char* what) {
  std::uint32_t v = 0;
  if (!in.read(reinterpret_cast<char*>(&v), sizeof v)) {
    throw FormatError(std::string("truncated file while reading ") + what);
  }
  return to_little_endian(v);
}

inline double read_f64(std::istream& in, const char* what) {
  std::uint64_t bits = 0;
  if (!in.read(reinterpret_cast<char*>(&bits), sizeof bits)) {
    throw FormatError(std::string("truncated file while reading ") + what);
  }
  return std::bit_cast<double>(to_little_endian(bits));
}

inline void write_magic(std::ostream& out, const char (&magic)[5]) {
  out.write(magic, 4);
}

inline void expect_magic(std::istream& in, const char (&magic)[5]) {
  char buf[4] = {};
  if (!in.read(buf, 4) || std::memcmp(buf, magic, 4) != 0) {
    throw FormatError(std::string("bad magic header, expected '") + magic +
                      "'");
  }
}

}  // namespace odml::io
