#pragma once

#include <cstdint>
#include <span>

#include "mkwm/types.hpp"

namespace mkwm {

// 64-bit avalanche finalizer (SplitMix64 / Stafford "Mix13" constants).
// These constants are frozen: changing them changes every green list,
// every synthetic logit and every golden value in the test suite.
constexpr std::uint64_t mix64(std::uint64_t x) noexcept {
  x ^= x >> 30;
  x *= 0xbf58476d1ce4e5b9ULL;
  x ^= x >> 27;
  x *= 0x94d049bb133111ebULL;
  x ^= x >> 31;
  return x;
}

inline constexpr std::uint64_t kGolden = 0x9e3779b97f4a7c15ULL;

// Hash of one token id, domain-separated from raw seeds.
constexpr std::uint64_t token_hash(TokenId t) noexcept {
  return mix64(static_cast<std::uint64_t>(t) + kGolden);
}

// Order-sensitive hash of a token window; the empty window hashes to a fixed
// non-zero constant.
constexpr std::uint64_t window_hash(std::span<const TokenId> window) noexcept {
  std::uint64_t h = 0x6a09e667f3bcc909ULL;
  for (TokenId t : window) h = mix64(h ^ token_hash(t)) + kGolden;
  return h;
}

// Maps a 64-bit value to the open interval (0, 1) using its top 52 bits; the
// largest result is 1 - 2^-53.
constexpr double to_unit(std::uint64_t x) noexcept {
  return (static_cast<double>(x >> 12) + 0.5) * 0x1.0p-52;
}

}  // namespace mkwm
