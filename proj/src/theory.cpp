#include "mkwm/theory.hpp"

#include <cmath>

#include "mkwm/types.hpp"

namespace mkwm {

void DetectorModel::validate() const {
  if (r < 1) throw InputError("r must be at least 1");
  if (!(alpha > 0.0 && alpha < 1.0)) throw InputError("alpha must lie in (0, 1)");
  if (!(beta > 0.0 && beta <= 1.0)) throw InputError("beta must lie in (0, 1]");
}

double blind_success(std::size_t r, double alpha) {
  if (r < 1) throw InputError("r must be at least 1");
  if (!(alpha > 0.0 && alpha < 1.0)) throw InputError("alpha must lie in (0, 1)");
  const auto rr = static_cast<double>(r);
  return rr * alpha * std::pow(1.0 - alpha, rr - 1.0);
}

double blind_bound(std::size_t r) {
  if (r < 1) throw InputError("r must be at least 1");
  if (r == 1) return 1.0;
  const auto rr = static_cast<double>(r);
  return std::pow(1.0 - 1.0 / rr, rr - 1.0);
}

double fnr_bound(double tau, std::size_t r) {
  if (r < 1) throw InputError("r must be at least 1");
  return 1.0 - std::pow(normal_cdf(tau), static_cast<double>(r - 1));
}

ModelSimulation simulate_detector_model(const DetectorModel& model,
                                        std::optional<std::size_t> watermarked_member,
                                        std::uint64_t trials, Rng& rng) {
  model.validate();
  if (trials == 0) throw InputError("trials must be positive");
  if (watermarked_member && *watermarked_member >= model.r) {
    throw InputError("watermarked member index out of range");
  }
  ModelSimulation sim;
  sim.histogram.assign(model.r + 1, 0);
  sim.trials = trials;
  for (std::uint64_t t = 0; t < trials; ++t) {
    std::size_t fired = 0;
    for (std::size_t i = 0; i < model.r; ++i) {
      const double p = watermarked_member == i ? model.beta : model.alpha;
      fired += rng.bernoulli(p) ? 1 : 0;
    }
    ++sim.histogram[fired];
  }
  if (model.r >= 1) sim.exactly_one_rate = sim.rate(1);
  return sim;
}

double simulate_fnr(double tau, std::size_t r, double beta, std::uint64_t trials, Rng& rng) {
  if (r < 1) throw InputError("r must be at least 1");
  if (trials == 0) throw InputError("trials must be positive");
  std::uint64_t misses = 0;
  for (std::uint64_t t = 0; t < trials; ++t) {
    bool ok = rng.bernoulli(beta);
    for (std::size_t j = 1; j < r; ++j) {
      if (rng.normal() > tau) ok = false;
    }
    misses += ok ? 0 : 1;
  }
  return static_cast<double>(misses) / static_cast<double>(trials);
}

}  // namespace mkwm
