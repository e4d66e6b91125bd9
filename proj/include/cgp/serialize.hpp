#pragma once

// Flat binary artifact format shared by network and replay files.
//
//   bytes 0..3   magic (4 ASCII chars, identifies the payload kind)
//   bytes 4..7   format version, uint32 little-endian
//   then         payload: uint64 counts/sizes, raw IEEE-754 float64 arrays
//
// Doubles are stored as their raw bit patterns so a save/load round trip is bit-exact.

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace cgp::io {

class BinaryWriter {
 public:
  BinaryWriter(std::ostream& out, std::string_view magic, std::uint32_t version);

  void u32(std::uint32_t v);
  void u64(std::uint64_t v);
  void f64(double v);
  void f64s(std::span<const double> values);
  void str(std::string_view s);

 private:
  void raw(const void* data, std::size_t bytes);
  std::ostream& out_;
};

class BinaryReader {
 public:
  /// Validates magic and version; throws FormatError on mismatch.
  BinaryReader(std::istream& in, std::string_view magic, std::uint32_t version);

  std::uint32_t u32();
  std::uint64_t u64();
  double f64();
  void f64s(std::span<double> out);
  std::string str();

 private:
  void raw(void* data, std::size_t bytes);
  std::istream& in_;
};

/// Shortest decimal representation that parses back to the identical double.
std::string format_double(double v);

}  // namespace cgp::io
