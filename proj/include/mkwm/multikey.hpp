#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "mkwm/kgw.hpp"
#include "mkwm/rng.hpp"
#include "mkwm/synth_lm.hpp"

namespace mkwm {

// The provider's r secret keys.
struct KeySet {
  std::vector<WatermarkKey> keys;

  std::size_t r() const noexcept { return keys.size(); }

  // Throws InputError when empty or when two seeds coincide.
  void validate() const;

  // r pairwise-distinct keys drawn from `rng`.
  static KeySet generate(std::size_t r, Rng& rng);
};

struct EnsembleMember {
  SchemeConfig scheme;
  WatermarkKey key;
};

// Scheme/key pairs the provider picks from uniformly at generation time.
// Plain multi-key watermarking is the special case where every member shares
// one SchemeConfig.
struct Ensemble {
  std::vector<EnsembleMember> members;

  std::size_t size() const noexcept { return members.size(); }
  void validate() const;

  static Ensemble uniform(const SchemeConfig& scheme, const KeySet& keys);
  // Member i uses schemes[i % schemes.size()] with keys.keys[i].
  static Ensemble mixed(std::span<const SchemeConfig> schemes, const KeySet& keys);
};

enum class CalibrationSource { Analytic, Empirical };

struct Calibration {
  double alpha_fw = 0.01;
  std::size_t r = 1;
  double alpha = 0.01;  // per-key false-positive rate
  double tau = 0.0;     // per-key z threshold
  std::optional<double> beta;
  CalibrationSource source = CalibrationSource::Analytic;
};

enum class DecisionKind { Unwatermarked, Genuine, Forged };

struct Decision {
  DecisionKind kind = DecisionKind::Unwatermarked;
  std::size_t member = 0;  // meaningful only for Genuine

  friend bool operator==(const Decision&, const Decision&) = default;
};

struct DetectionReport {
  std::vector<double> z;
  std::vector<bool> indicators;  // z_i > tau
  std::optional<double> gap;     // top z minus second-highest z; needs >= 2 members
  Decision decision;
  double tau = 0.0;
};

// Exactly-one rule over per-member z-scores: no indicator -> Unwatermarked,
// one -> Genuine(i), two or more -> Forged.
DetectionReport classify(std::vector<double> z, double tau);

struct Generation {
  TokenSequence text;
  std::size_t member = 0;  // bookkeeping only; never handed to an attacker
};

// Picks a member uniformly with `rng` and watermarks under it.
Generation mk_generate(const LmSpec& spec, const Ensemble& ensemble, const TokenSequence& prompt,
                       std::size_t length, Rng& rng, double temperature = 1.0);

// Runs every member's detector on `text` and applies the exactly-one rule.
DetectionReport mk_detect(const Ensemble& ensemble, const Calibration& calib,
                          const TokenSequence& text);

// Per-key level 1 - (1 - alpha_fw)^(1/r).
double sidak_alpha(double alpha_fw, std::size_t r);

// Per-key level from sidak_alpha, tau = Phi^-1(1 - alpha).
Calibration calibrate_analytic(double alpha_fw, std::size_t r);

// (1 - alpha) quantile of a pooled null z sample; alpha from sidak_alpha.
Calibration calibrate_from_null(std::vector<double> null_scores, double alpha_fw, std::size_t r);

struct NullSampling {
  std::size_t prompt_len = 8;
  std::size_t length = 256;
  double temperature = 1.0;
};

// Generates n_null unwatermarked texts from `spec`, scores each under every
// member and calibrates on the pooled scores. Warns on stderr when
// n_null < 1000.
Calibration calibrate_empirical(const Ensemble& ensemble, const LmSpec& spec, double alpha_fw,
                                std::size_t n_null, Rng& rng, const NullSampling& sampling = {});

// Linear interpolation between order statistics at rank p (n - 1)
// (the inclusive / "type 7" estimator).
double empirical_quantile(std::vector<double> values, double p);

// Chance that a non-watermarked text trips at least one of r keys, each with
// per-key rate alpha.
double family_fpr(const Calibration& calib, double alpha);

}  // namespace mkwm
