#include "mkwm/multikey.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <unordered_set>

#include "mkwm/normal.hpp"

namespace mkwm {

void KeySet::validate() const {
  if (keys.empty()) throw InputError("a key set needs at least one key");
  std::unordered_set<std::uint64_t> seen;
  for (const auto& k : keys) {
    if (!seen.insert(k.seed).second) throw InputError("key seeds must be pairwise distinct");
  }
}

KeySet KeySet::generate(std::size_t r, Rng& rng) {
  if (r < 1) throw InputError("r must be at least 1");
  KeySet ks;
  std::unordered_set<std::uint64_t> seen;
  while (ks.keys.size() < r) {
    const std::uint64_t s = rng.next_u64();
    if (seen.insert(s).second) ks.keys.push_back(WatermarkKey{s});
  }
  return ks;
}

void Ensemble::validate() const {
  if (members.empty()) throw InputError("an ensemble needs at least one member");
  std::unordered_set<std::uint64_t> seen;
  for (const auto& m : members) {
    m.scheme.validate();
    if (!seen.insert(m.key.seed).second) throw InputError("key seeds must be pairwise distinct");
  }
}

Ensemble Ensemble::uniform(const SchemeConfig& scheme, const KeySet& keys) {
  keys.validate();
  Ensemble e;
  for (const auto& k : keys.keys) e.members.push_back({scheme, k});
  e.validate();
  return e;
}

Ensemble Ensemble::mixed(std::span<const SchemeConfig> schemes, const KeySet& keys) {
  if (schemes.empty()) throw InputError("a mixed ensemble needs at least one scheme");
  keys.validate();
  Ensemble e;
  for (std::size_t i = 0; i < keys.r(); ++i) {
    e.members.push_back({schemes[i % schemes.size()], keys.keys[i]});
  }
  e.validate();
  return e;
}

DetectionReport classify(std::vector<double> z, double tau) {
  DetectionReport report;
  report.tau = tau;
  report.indicators.reserve(z.size());
  std::size_t fired = 0;
  std::size_t last = 0;
  for (std::size_t i = 0; i < z.size(); ++i) {
    const bool on = z[i] > tau;
    report.indicators.push_back(on);
    if (on) {
      ++fired;
      last = i;
    }
  }
  if (fired == 0) {
    report.decision = {DecisionKind::Unwatermarked, 0};
  } else if (fired == 1) {
    report.decision = {DecisionKind::Genuine, last};
  } else {
    report.decision = {DecisionKind::Forged, 0};
  }
  if (z.size() >= 2) {
    std::vector<double> sorted = z;
    std::partial_sort(sorted.begin(), sorted.begin() + 2, sorted.end(), std::greater<>());
    report.gap = sorted[0] - sorted[1];
  }
  report.z = std::move(z);
  return report;
}

Generation mk_generate(const LmSpec& spec, const Ensemble& ensemble, const TokenSequence& prompt,
                       std::size_t length, Rng& rng, double temperature) {
  ensemble.validate();
  const auto member = static_cast<std::size_t>(rng.below(ensemble.size()));
  const auto& m = ensemble.members[member];
  return {embed(spec, m.key, m.scheme, prompt, length, rng, temperature), member};
}

DetectionReport mk_detect(const Ensemble& ensemble, const Calibration& calib,
                          const TokenSequence& text) {
  if (calib.r != ensemble.size()) {
    throw InputError("calibration is for r = " + std::to_string(calib.r) +
                     " keys but the ensemble has " + std::to_string(ensemble.size()));
  }
  std::vector<double> z;
  z.reserve(ensemble.size());
  for (std::size_t i = 0; i < ensemble.size(); ++i) {
    const auto& m = ensemble.members[i];
    try {
      z.push_back(detect(m.key, m.scheme, text).value);
    } catch (const InputError& e) {
      throw InputError("member " + std::to_string(i) + " (" +
                       std::string(to_string(m.scheme.variant)) + "): " + e.what());
    }
  }
  return classify(std::move(z), calib.tau);
}

double sidak_alpha(double alpha_fw, std::size_t r) {
  if (!(alpha_fw > 0.0 && alpha_fw < 1.0)) throw InputError("alpha_fw must lie in (0, 1)");
  if (r < 1) throw InputError("r must be at least 1");
  // -expm1(log1p(-a) / r) keeps precision when alpha is tiny.
  return -std::expm1(std::log1p(-alpha_fw) / static_cast<double>(r));
}

Calibration calibrate_analytic(double alpha_fw, std::size_t r) {
  Calibration c;
  c.alpha_fw = alpha_fw;
  c.r = r;
  c.alpha = sidak_alpha(alpha_fw, r);
  c.tau = -normal_quantile(c.alpha);
  c.source = CalibrationSource::Analytic;
  return c;
}

double empirical_quantile(std::vector<double> values, double p) {
  if (values.empty()) throw InputError("empirical quantile of an empty sample");
  if (!(p >= 0.0 && p <= 1.0)) throw InputError("quantile level must lie in [0, 1]");
  std::sort(values.begin(), values.end());
  const double rank = p * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(rank));
  const std::size_t hi = std::min(lo + 1, values.size() - 1);
  const double frac = rank - static_cast<double>(lo);
  return values[lo] + frac * (values[hi] - values[lo]);
}

Calibration calibrate_from_null(std::vector<double> null_scores, double alpha_fw, std::size_t r) {
  Calibration c;
  c.alpha_fw = alpha_fw;
  c.r = r;
  c.alpha = sidak_alpha(alpha_fw, r);
  c.tau = empirical_quantile(std::move(null_scores), 1.0 - c.alpha);
  c.source = CalibrationSource::Empirical;
  return c;
}

Calibration calibrate_empirical(const Ensemble& ensemble, const LmSpec& spec, double alpha_fw,
                                std::size_t n_null, Rng& rng, const NullSampling& sampling) {
  ensemble.validate();
  if (n_null < 1) throw InputError("n_null must be positive");
  if (n_null < 1000) {
    std::cerr << "warning: empirical calibration with n_null = " << n_null
              << " < 1000; the tail quantile will be noisy\n";
  }
  std::vector<double> pool;
  pool.reserve(n_null * ensemble.size());
  for (std::size_t i = 0; i < n_null; ++i) {
    const auto prompt = random_prompt(spec.vocab, sampling.prompt_len, rng);
    const auto text = generate(spec, prompt, sampling.length, rng, sampling.temperature);
    for (const auto& m : ensemble.members) pool.push_back(detect(m.key, m.scheme, text).value);
  }
  return calibrate_from_null(std::move(pool), alpha_fw, ensemble.size());
}

double family_fpr(const Calibration& calib, double alpha) {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw InputError("alpha must lie in [0, 1]");
  return -std::expm1(static_cast<double>(calib.r) * std::log1p(-alpha));
}

}  // namespace mkwm
