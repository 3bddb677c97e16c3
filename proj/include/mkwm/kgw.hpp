#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>

#include "mkwm/rng.hpp"
#include "mkwm/synth_lm.hpp"
#include "mkwm/types.hpp"

namespace mkwm {

struct WatermarkKey {
  std::uint64_t seed = 0;
  friend bool operator==(const WatermarkKey&, const WatermarkKey&) = default;
};

enum class Variant { Soft, Hard, SelfHash, Unigram };

std::string_view to_string(Variant v);
// Accepts "soft", "kgw-soft", "hard", "selfhash", "kgw-selfhash", "unigram"
// in any case. Throws InputError otherwise.
Variant parse_variant(std::string_view name);

// Green-red scheme hyperparameters. Construct through make(), which forces
// the variant-determined fields:
//   Unigram: h = 0; Soft, Hard: h = 1; SelfHash: h = 3 with self-seeding.
struct SchemeConfig {
  Variant variant = Variant::Soft;
  double gamma = 0.25;
  double delta = 4.0;
  std::size_t h = 1;
  bool self_seeding = false;
  // Score each distinct (context window, token) pair once.
  bool ignore_repeated = true;

  static SchemeConfig make(Variant variant, double gamma = 0.25, double delta = 4.0);

  void validate() const;

  friend bool operator==(const SchemeConfig&, const SchemeConfig&) = default;
};

struct ZScore {
  double value = 0.0;
  std::size_t green_count = 0;
  std::size_t scored_count = 0;
};

// (g - gamma T) / sqrt(T gamma (1 - gamma)); T must be positive.
double z_score(std::size_t green, std::size_t scored, double gamma);

// Unsigned threshold gamma * 2^64 used by the green test.
std::uint64_t green_threshold(double gamma);

// Per-position seed from the key and the last h tokens (min-aggregated
// token hashes for h > 1; zero contribution for h = 0).
std::uint64_t context_seed(const WatermarkKey& key, const SchemeConfig& cfg,
                           std::span<const TokenId> context);

// Green test given a precomputed context seed.
inline bool is_green_seeded(std::uint64_t ctx_seed, bool self_seeding, std::uint64_t threshold,
                            TokenId candidate) {
  const std::uint64_t cand = token_hash(candidate);
  const std::uint64_t step = mix64(ctx_seed ^ (self_seeding ? cand : 0));
  return mix64(step ^ cand) < threshold;
}

// `context` holds the h tokens preceding `candidate` (only the last h are used).
bool is_green(const WatermarkKey& key, const SchemeConfig& cfg,
              std::span<const TokenId> context, TokenId candidate);

struct EmbedStats {
  // Hard-variant steps where every candidate was red and sampling fell back
  // to the unbiased distribution.
  std::size_t degenerate_steps = 0;
};

// Watermarked continuation of `prompt`. Positions with fewer than h preceding
// tokens are sampled without bias. Soft, SelfHash and Unigram add delta to
// green logits; Hard removes red tokens.
TokenSequence embed(const LmSpec& spec, const WatermarkKey& key, const SchemeConfig& cfg,
                    const TokenSequence& prompt, std::size_t length, Rng& rng,
                    double temperature = 1.0, EmbedStats* stats = nullptr);

// Scores every generated position that has h preceding tokens (prompt tokens
// may serve as context but are never scored). Throws InputError when no
// position is scorable.
ZScore detect(const WatermarkKey& key, const SchemeConfig& cfg, const TokenSequence& text);

}  // namespace mkwm
