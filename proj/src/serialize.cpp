#include "cgp/serialize.hpp"

#include <bit>
#include <charconv>
#include <cmath>
#include <istream>
#include <ostream>

#include "cgp/errors.hpp"

namespace cgp::io {

static_assert(std::endian::native == std::endian::little, "artifact format assumes little-endian hosts");

BinaryWriter::BinaryWriter(std::ostream& out, std::string_view magic, std::uint32_t version) : out_(out) {
  if (magic.size() != 4) throw FormatError("magic must be 4 bytes");
  raw(magic.data(), 4);
  u32(version);
}

void BinaryWriter::raw(const void* data, std::size_t bytes) {
  out_.write(static_cast<const char*>(data), static_cast<std::streamsize>(bytes));
  if (!out_) throw FormatError("write failed");
}

void BinaryWriter::u32(std::uint32_t v) { raw(&v, sizeof v); }
void BinaryWriter::u64(std::uint64_t v) { raw(&v, sizeof v); }
void BinaryWriter::f64(double v) { raw(&v, sizeof v); }
void BinaryWriter::f64s(std::span<const double> values) { raw(values.data(), values.size_bytes()); }

void BinaryWriter::str(std::string_view s) {
  u64(s.size());
  raw(s.data(), s.size());
}

BinaryReader::BinaryReader(std::istream& in, std::string_view magic, std::uint32_t version) : in_(in) {
  char got[4];
  raw(got, 4);
  if (std::string_view(got, 4) != magic) {
    throw FormatError("bad magic: expected '" + std::string(magic) + "'");
  }
  const auto v = u32();
  if (v != version) {
    throw FormatError("unsupported version " + std::to_string(v) + " for '" + std::string(magic) + "'");
  }
}

void BinaryReader::raw(void* data, std::size_t bytes) {
  in_.read(static_cast<char*>(data), static_cast<std::streamsize>(bytes));
  if (!in_) throw FormatError("unexpected end of file");
}

std::uint32_t BinaryReader::u32() {
  std::uint32_t v;
  raw(&v, sizeof v);
  return v;
}

std::uint64_t BinaryReader::u64() {
  std::uint64_t v;
  raw(&v, sizeof v);
  return v;
}

double BinaryReader::f64() {
  double v;
  raw(&v, sizeof v);
  return v;
}

void BinaryReader::f64s(std::span<double> out) { raw(out.data(), out.size_bytes()); }

std::string BinaryReader::str() {
  const auto n = u64();
  if (n > (1u << 20)) throw FormatError("string field too long");
  std::string s(n, '\0');
  raw(s.data(), n);
  return s;
}

std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  if (ec != std::errc{}) throw FormatError("double formatting failed");
  return std::string(buf, end);
}

}  // namespace cgp::io
