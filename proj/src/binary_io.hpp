#pragma once

// Little-endian primitives shared by the checkpoint and dataset containers.
// Values are assembled byte by byte so files are identical on any host.

#include <bit>
#include <cstdint>
#include <istream>
#include <ostream>
#include <string>

#include "ibpd/errors.hpp"

namespace ibpd::io {

inline void put_u32(std::ostream& os, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) os.put(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline void put_u64(std::ostream& os, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) os.put(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline void put_f64(std::ostream& os, double v) { put_u64(os, std::bit_cast<std::uint64_t>(v)); }

inline void put_bytes(std::ostream& os, const std::string& s) {
  put_u64(os, s.size());
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

class Reader {
 public:
  Reader(std::istream& is, std::string what) : is_(is), what_(std::move(what)) {}

  std::uint8_t u8() {
    char c;
    if (!is_.get(c)) truncated();
    return static_cast<std::uint8_t>(c);
  }

  std::uint32_t u32() {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(u8()) << (8 * i);
    return v;
  }

  std::uint64_t u64() {
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(u8()) << (8 * i);
    return v;
  }

  double f64() { return std::bit_cast<double>(u64()); }

  std::string bytes(std::uint64_t limit) {
    const std::uint64_t n = u64();
    if (n > limit) throw FormatError(what_ + ": string length " + std::to_string(n) + " too large");
    std::string s(n, '\0');
    if (!is_.read(s.data(), static_cast<std::streamsize>(n))) truncated();
    return s;
  }

  void expect_magic(const std::string& magic) {
    std::string got(magic.size(), '\0');
    if (!is_.read(got.data(), static_cast<std::streamsize>(got.size())) || got != magic) {
      throw FormatError(what_ + ": bad magic (not a " + magic + " file)");
    }
  }

  void expect_end() {
    if (is_.peek() != std::char_traits<char>::eof()) throw FormatError(what_ + ": trailing bytes");
  }

  [[noreturn]] void truncated() { throw FormatError(what_ + ": truncated file"); }

 private:
  std::istream& is_;
  std::string what_;
};

}  // namespace ibpd::io
