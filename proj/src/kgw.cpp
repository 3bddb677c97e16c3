#include "mkwm/kgw.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <limits>
#include <unordered_set>

#include "mkwm/hash.hpp"

namespace mkwm {

std::string_view to_string(Variant v) {
  switch (v) {
    case Variant::Soft: return "soft";
    case Variant::Hard: return "hard";
    case Variant::SelfHash: return "selfhash";
    case Variant::Unigram: return "unigram";
  }
  return "unknown";
}

Variant parse_variant(std::string_view name) {
  std::string s(name);
  std::transform(s.begin(), s.end(), s.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  if (s.starts_with("kgw-")) s = s.substr(4);
  if (s == "soft") return Variant::Soft;
  if (s == "hard") return Variant::Hard;
  if (s == "selfhash" || s == "self-hash") return Variant::SelfHash;
  if (s == "unigram") return Variant::Unigram;
  throw InputError("unknown watermark variant '" + std::string(name) + "'");
}

SchemeConfig SchemeConfig::make(Variant variant, double gamma, double delta) {
  SchemeConfig cfg;
  cfg.variant = variant;
  cfg.gamma = gamma;
  cfg.delta = delta;
  switch (variant) {
    case Variant::Unigram: cfg.h = 0; break;
    case Variant::Soft:
    case Variant::Hard: cfg.h = 1; break;
    case Variant::SelfHash: cfg.h = 3; break;
  }
  cfg.self_seeding = variant == Variant::SelfHash;
  cfg.validate();
  return cfg;
}

void SchemeConfig::validate() const {
  if (!(gamma > 0.0 && gamma < 1.0)) throw InputError("gamma must lie in (0, 1)");
  if (!(delta >= 0.0) || !std::isfinite(delta)) {
    throw InputError("delta must be a finite non-negative real");
  }
  const std::size_t forced_h = variant == Variant::Unigram    ? 0
                               : variant == Variant::SelfHash ? 3
                                                              : 1;
  if (h != forced_h) throw InputError("context width h does not match the variant");
  if (self_seeding != (variant == Variant::SelfHash)) {
    throw InputError("self-seeding is enabled exactly for the SelfHash variant");
  }
}

double z_score(std::size_t green, std::size_t scored, double gamma) {
  const auto t = static_cast<double>(scored);
  return (static_cast<double>(green) - gamma * t) / std::sqrt(t * gamma * (1.0 - gamma));
}

std::uint64_t green_threshold(double gamma) {
  const double scaled = std::ldexp(gamma, 64);
  if (scaled >= 0x1.0p64) return std::numeric_limits<std::uint64_t>::max();
  return static_cast<std::uint64_t>(scaled);
}

std::uint64_t context_seed(const WatermarkKey& key, const SchemeConfig& cfg,
                           std::span<const TokenId> context) {
  if (cfg.h == 0) return key.seed;
  const auto window = context.last(std::min(cfg.h, context.size()));
  std::uint64_t agg = std::numeric_limits<std::uint64_t>::max();
  for (TokenId t : window) agg = std::min(agg, token_hash(t));
  return key.seed ^ agg;
}

bool is_green(const WatermarkKey& key, const SchemeConfig& cfg,
              std::span<const TokenId> context, TokenId candidate) {
  return is_green_seeded(context_seed(key, cfg, context), cfg.self_seeding,
                         green_threshold(cfg.gamma), candidate);
}

TokenSequence embed(const LmSpec& spec, const WatermarkKey& key, const SchemeConfig& cfg,
                    const TokenSequence& prompt, std::size_t length, Rng& rng,
                    double temperature, EmbedStats* stats) {
  if (length < 1) throw InputError("generation length must be at least 1");
  if (!(temperature > 0.0)) throw InputError("temperature must be positive");
  cfg.validate();
  validate(prompt, spec.vocab);

  TokenSequence out;
  out.tokens.reserve(prompt.size() + length);
  out.tokens = prompt.tokens;
  out.prompt_len = prompt.size();

  const auto n = static_cast<Eigen::Index>(spec.vocab.size());
  const std::uint64_t threshold = green_threshold(cfg.gamma);
  const bool hard = cfg.variant == Variant::Hard;
  const float red_bias = hard ? -std::numeric_limits<float>::infinity() : 0.0f;
  const float green_bias = hard ? 0.0f : static_cast<float>(cfg.delta);

  std::vector<std::uint64_t> cand(static_cast<std::size_t>(n));
  for (Eigen::Index t = 0; t < n; ++t) cand[static_cast<std::size_t>(t)] = token_hash(static_cast<TokenId>(t));

  // Additive logit bias for one context seed; returns whether any token is green.
  Eigen::VectorXf bias(n);
  auto fill_bias = [&](std::uint64_t seed) {
    bool any_green = false;
    const std::uint64_t plain_step = mix64(seed);
    for (Eigen::Index t = 0; t < n; ++t) {
      const std::uint64_t c = cand[static_cast<std::size_t>(t)];
      const std::uint64_t step = cfg.self_seeding ? mix64(seed ^ c) : plain_step;
      const bool green = mix64(step ^ c) < threshold;
      any_green |= green;
      bias[t] = green ? green_bias : red_bias;
    }
    return any_green;
  };
  // Unigram lists never change.
  const bool static_list = cfg.h == 0;
  const bool static_any_green = static_list ? fill_bias(context_seed(key, cfg, {})) : false;

  Eigen::VectorXf l(n);
  Eigen::VectorXf biased(n);
  Eigen::VectorXf scratch;
  for (std::size_t step = 0; step < length; ++step) {
    logits_into<float>(spec, out.tokens, l);
    if (out.tokens.size() < cfg.h) {
      out.tokens.push_back(sample_from_logits<float>(l, rng, temperature, scratch));
      continue;
    }
    const bool any_green =
        static_list ? static_any_green : fill_bias(context_seed(key, cfg, out.tokens));
    if (hard && !any_green) {
      if (stats) ++stats->degenerate_steps;
      out.tokens.push_back(sample_from_logits<float>(l, rng, temperature, scratch));
      continue;
    }
    biased = l + bias;
    out.tokens.push_back(sample_from_logits<float>(biased, rng, temperature, scratch));
  }
  return out;
}

ZScore detect(const WatermarkKey& key, const SchemeConfig& cfg, const TokenSequence& text) {
  if (text.prompt_len > text.tokens.size()) {
    throw InputError("prompt_len exceeds sequence length");
  }
  const std::uint64_t threshold = green_threshold(cfg.gamma);
  const std::span<const TokenId> toks(text.tokens);
  std::unordered_set<std::uint64_t> seen;
  ZScore z;
  for (std::size_t i = std::max(text.prompt_len, cfg.h); i < toks.size(); ++i) {
    const auto context = toks.subspan(i - cfg.h, cfg.h);
    if (cfg.ignore_repeated && !seen.insert(window_hash(toks.subspan(i - cfg.h, cfg.h + 1))).second) {
      continue;
    }
    ++z.scored_count;
    if (is_green_seeded(context_seed(key, cfg, context), cfg.self_seeding, threshold, toks[i])) {
      ++z.green_count;
    }
  }
  if (z.scored_count == 0) throw InputError("insufficient scorable tokens");
  z.value = z_score(z.green_count, z.scored_count, cfg.gamma);
  return z;
}

}  // namespace mkwm
