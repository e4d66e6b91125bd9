#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>
#include <vector>

namespace cgp {

using Rng = std::mt19937_64;

/// Derives an independent 64-bit seed from a list of integers (master seed, stream ids, ...).
inline std::uint64_t derive_seed(std::initializer_list<std::uint64_t> parts) {
  std::vector<std::uint32_t> words;
  words.reserve(parts.size() * 2);
  for (auto p : parts) {
    words.push_back(static_cast<std::uint32_t>(p & 0xffffffffu));
    words.push_back(static_cast<std::uint32_t>(p >> 32));
  }
  std::seed_seq mixed(words.begin(), words.end());
  std::uint32_t out[2];
  mixed.generate(out, out + 2);
  return (static_cast<std::uint64_t>(out[1]) << 32) | out[0];
}

inline Rng make_rng(std::initializer_list<std::uint64_t> parts) { return Rng(derive_seed(parts)); }

}  // namespace cgp
