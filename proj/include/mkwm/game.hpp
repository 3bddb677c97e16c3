#pragma once

// Monte Carlo forgery game. Per seed and cell: build keys and ensemble,
// calibrate, let the attacker collect N provider texts, score its forgeries
// with the multi-key detector, and measure provider FNR and null FPR on the
// side. Cells and seeds run on a bounded worker pool and are merged in cell
// order.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "mkwm/attacks.hpp"
#include "mkwm/kgw.hpp"
#include "mkwm/multikey.hpp"
#include "mkwm/synth_lm.hpp"

namespace mkwm {

enum class AttackerKind { BlindAvg, AdaptiveCluster, BernoulliAbstract };
enum class CalibrationMode { Analytic, Empirical };
enum class CiMethod { Normal, Wilson };

std::string_view to_string(AttackerKind a);
AttackerKind parse_attacker(std::string_view name);

struct ExperimentConfig {
  std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5};
  LmSpec lm;
  std::optional<LmSpec> surrogate_lm;

  // Ensemble grid: one cell per (variant, r, N); `mixed` adds a cell per (r, N)
  // whose members cycle through `variants`.
  std::vector<Variant> variants{Variant::Soft, Variant::Hard, Variant::SelfHash,
                                Variant::Unigram};
  bool mixed = false;
  bool single_variant_cells = true;
  std::vector<std::size_t> r{1, 2, 3, 4};
  double gamma = 0.25;
  double delta = 4.0;
  bool ignore_repeated = true;

  double alpha_fw = 0.01;
  CalibrationMode calibration = CalibrationMode::Analytic;
  std::size_t n_null = 1000;

  std::vector<std::size_t> N_grid{1000};
  std::size_t n_forgeries = 100;  // per seed and cell
  std::size_t length = 256;
  std::size_t prompt_len = 8;
  double temperature = 1.0;

  AttackerKind attacker = AttackerKind::BlindAvg;
  std::vector<double> strength_grid{1.0, 2.0, 4.0, 8.0};
  std::size_t tuning_prompts = 25;       // held-out forgeries per grid strength
  std::optional<std::size_t> steal_order;  // unset: 0 for Unigram, 1 otherwise
  double pseudo_count = 0.5;
  double min_bucket_count = 1.0;
  double forge_temperature = 1.0;

  // adaptive-cluster
  bool oracle_clusters = false;  // cluster on the provider's hidden labels
  ClusterFeatures cluster_features = ClusterFeatures::TokenFrequency;
  std::size_t cluster_iters = 50;
  std::size_t top_k_dims = 0;
  std::optional<std::size_t> r_hat;  // unset: the true r

  // bernoulli-abstract
  std::optional<double> model_alpha;  // unset: the calibrated per-key alpha
  double model_beta = 1.0;

  // Provider-utility and null side measurements, per seed and cell.
  std::size_t n_fnr = 100;
  std::size_t n_null_texts = 100;

  CiMethod ci = CiMethod::Normal;
  std::size_t threads = 0;  // 0: hardware concurrency, capped by MKWM_THREADS

  // Throws InputError naming the first inconsistent field.
  void validate() const;
};

struct Cell {
  std::string variant;  // variant name or "mixed"
  std::size_t r = 1;
  std::size_t N = 0;
};

// Cells in report order: variants (then mixed) x r x N.
std::vector<Cell> enumerate_cells(const ExperimentConfig& cfg);

struct Interval {
  double lo = 0.0;
  double hi = 0.0;
};

// 95% binomial interval for k successes out of n, clipped to [0, 1].
// Normal: p +- 1.959964 sqrt(p (1 - p) / n). Wilson: score interval.
Interval binomial_ci(std::uint64_t k, std::uint64_t n, CiMethod method);

struct SeedOutcome {
  std::uint64_t seed = 0;
  std::uint64_t genuine = 0;
  std::uint64_t forged = 0;
  std::uint64_t unwatermarked = 0;
  std::uint64_t provider_queries = 0;
  double strength = 0.0;
  std::optional<double> cluster_accuracy;
  double tau = 0.0;
};

struct GameResult {
  Cell cell;
  std::string attacker;
  std::uint64_t trials = 0;
  std::uint64_t genuine = 0;
  std::uint64_t forged = 0;
  std::uint64_t unwatermarked = 0;
  std::uint64_t fnr_trials = 0;
  std::uint64_t fnr_misses = 0;
  std::uint64_t null_trials = 0;
  std::uint64_t null_alarms = 0;
  double forgery_success = 0.0;
  Interval ci;
  double fnr = 0.0;
  double fpr_fw = 0.0;
  std::vector<SeedOutcome> per_seed;

  std::size_t seed_count() const noexcept { return per_seed.size(); }
};

// Provider oracle for the attacker. Text i is a pure function of the stream
// seed and i, so replaying after rewind() returns identical texts; queries()
// counts calls since construction or the last rewind().
class Provider {
 public:
  Provider(const LmSpec& spec, const Ensemble& ensemble, std::uint64_t stream, std::size_t prompt_len,
           std::size_t length, double temperature);

  TokenSequence query();
  std::size_t queries() const noexcept { return count_; }
  void rewind() noexcept { count_ = 0; }

  // Hidden generating member of each text served so far (evaluation only).
  std::vector<std::size_t> member_log() const;

 private:
  const LmSpec& spec_;
  const Ensemble& ensemble_;
  std::uint64_t stream_;
  std::size_t prompt_len_;
  std::size_t length_;
  double temperature_;
  std::vector<Generation> cache_;
  std::size_t count_ = 0;
};

// Runs every cell for every seed; results follow enumerate_cells order.
std::vector<GameResult> run_game(const ExperimentConfig& cfg);

// Worker count: cfg.threads (or hardware concurrency) capped by MKWM_THREADS.
std::size_t worker_count(std::size_t requested);

}  // namespace mkwm
