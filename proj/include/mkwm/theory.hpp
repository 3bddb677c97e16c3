#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <vector>

#include "mkwm/normal.hpp"
#include "mkwm/rng.hpp"

namespace mkwm {

// Idealized per-key detector: indicator Z_i fires with probability alpha on
// content not watermarked under key i, beta on content that is, and the
// indicators are mutually independent.
struct DetectorModel {
  std::size_t r = 1;
  double alpha = 0.01;
  double beta = 1.0;

  void validate() const;
};

// Chance that exactly one of r independent Bernoulli(alpha) indicators fires:
// r alpha (1 - alpha)^(r - 1).
double blind_success(std::size_t r, double alpha);

// max over alpha of blind_success, attained at alpha = 1/r:
// (1 - 1/r)^(r - 1), with blind_bound(1) = 1.
double blind_bound(std::size_t r);

// Chance that one of the r - 1 unused keys fires when their z-scores are
// independent N(0, 1): 1 - Phi(tau)^(r - 1).
double fnr_bound(double tau, std::size_t r);

struct ModelSimulation {
  std::vector<std::uint64_t> histogram;  // counts of sum_i Z_i over 0..r
  std::uint64_t trials = 0;
  double exactly_one_rate = 0.0;

  double rate(std::size_t k) const {
    return static_cast<double>(histogram.at(k)) / static_cast<double>(trials);
  }
};

// Draws independent indicators per trial. watermarked_member = nullopt is the
// null condition; otherwise that member fires with beta and the rest with alpha.
ModelSimulation simulate_detector_model(const DetectorModel& model,
                                        std::optional<std::size_t> watermarked_member,
                                        std::uint64_t trials, Rng& rng);

// Monte Carlo false-negative rate: the used key fires with probability beta,
// the r - 1 unused keys draw N(0, 1) z-scores; a trial is a false negative
// unless exactly the used key exceeds tau.
double simulate_fnr(double tau, std::size_t r, double beta, std::uint64_t trials, Rng& rng);

}  // namespace mkwm
