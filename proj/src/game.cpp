#include "mkwm/game.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cmath>
#include <cstdlib>
#include <exception>
#include <string>
#include <thread>
#include <unordered_set>

#include "mkwm/hash.hpp"
#include "mkwm/normal.hpp"
#include "mkwm/theory.hpp"

namespace mkwm {

std::string_view to_string(AttackerKind a) {
  switch (a) {
    case AttackerKind::BlindAvg: return "blind-avg";
    case AttackerKind::AdaptiveCluster: return "adaptive-cluster";
    case AttackerKind::BernoulliAbstract: return "bernoulli-abstract";
  }
  return "unknown";
}

AttackerKind parse_attacker(std::string_view name) {
  if (name == "blind-avg") return AttackerKind::BlindAvg;
  if (name == "adaptive-cluster") return AttackerKind::AdaptiveCluster;
  if (name == "bernoulli-abstract") return AttackerKind::BernoulliAbstract;
  throw InputError("unknown attacker '" + std::string(name) + "'");
}

void ExperimentConfig::validate() const {
  if (seeds.empty()) throw InputError("seeds: at least one seed is required");
  std::unordered_set<std::uint64_t> distinct(seeds.begin(), seeds.end());
  if (distinct.size() != seeds.size()) throw InputError("seeds: values must be distinct");
  lm.validate();
  if (surrogate_lm) {
    surrogate_lm->validate();
    if (surrogate_lm->vocab.size() != lm.vocab.size()) {
      throw InputError("surrogate_lm: vocabulary must match lm");
    }
  }
  if (variants.empty()) throw InputError("variants: at least one variant is required");
  if (!single_variant_cells && !mixed) throw InputError("no cells: enable mixed or single-variant cells");
  if (r.empty()) throw InputError("r: at least one value is required");
  for (auto v : r) {
    if (v < 1) throw InputError("r: values must be at least 1");
  }
  for (auto v : variants) SchemeConfig::make(v, gamma, delta);
  if (!(alpha_fw > 0.0 && alpha_fw < 1.0)) throw InputError("alpha_fw must lie in (0, 1)");
  if (calibration == CalibrationMode::Empirical && n_null < 1) {
    throw InputError("n_null must be positive");
  }
  if (N_grid.empty()) throw InputError("N_grid: at least one value is required");
  const bool text_attacker = attacker != AttackerKind::BernoulliAbstract;
  if (text_attacker) {
    for (auto n : N_grid) {
      if (n < 1) throw InputError("N_grid: values must be at least 1");
    }
  }
  if (n_forgeries < 1) throw InputError("n_forgeries must be positive");
  if (length < 1) throw InputError("length must be positive");
  if (!(temperature > 0.0) || !(forge_temperature > 0.0)) {
    throw InputError("temperatures must be positive");
  }
  if (strength_grid.empty()) throw InputError("strength_grid: at least one value is required");
  for (double s : strength_grid) {
    if (!std::isfinite(s)) throw InputError("strength_grid: values must be finite");
  }
  if (strength_grid.size() > 1 && tuning_prompts < 1 && text_attacker) {
    throw InputError("tuning_prompts must be positive when strength_grid has several values");
  }
  if (!(pseudo_count > 0.0)) throw InputError("pseudo_count must be positive");
  if (r_hat && *r_hat < 2) throw InputError("r_hat must be at least 2");
  if (model_alpha && !(*model_alpha > 0.0 && *model_alpha < 1.0)) {
    throw InputError("model_alpha must lie in (0, 1)");
  }
  if (!(model_beta > 0.0 && model_beta <= 1.0)) throw InputError("model_beta must lie in (0, 1]");
}

std::vector<Cell> enumerate_cells(const ExperimentConfig& cfg) {
  std::vector<Cell> cells;
  std::vector<std::string> labels;
  if (cfg.single_variant_cells) {
    for (auto v : cfg.variants) labels.emplace_back(to_string(v));
  }
  if (cfg.mixed) labels.emplace_back("mixed");
  for (const auto& label : labels) {
    for (auto r : cfg.r) {
      for (auto n : cfg.N_grid) cells.push_back({label, r, n});
    }
  }
  return cells;
}

Interval binomial_ci(std::uint64_t k, std::uint64_t n, CiMethod method) {
  if (n == 0) return {0.0, 1.0};
  constexpr double z = 1.959963984540054;
  const double nn = static_cast<double>(n);
  const double p = static_cast<double>(k) / nn;
  double lo = 0.0;
  double hi = 0.0;
  if (method == CiMethod::Normal) {
    const double half = z * std::sqrt(p * (1.0 - p) / nn);
    lo = p - half;
    hi = p + half;
  } else {
    const double denom = 1.0 + z * z / nn;
    const double centre = (p + z * z / (2.0 * nn)) / denom;
    const double half = z * std::sqrt(p * (1.0 - p) / nn + z * z / (4.0 * nn * nn)) / denom;
    lo = centre - half;
    hi = centre + half;
  }
  return {std::clamp(lo, 0.0, 1.0), std::clamp(hi, 0.0, 1.0)};
}

Provider::Provider(const LmSpec& spec, const Ensemble& ensemble, std::uint64_t stream,
                   std::size_t prompt_len, std::size_t length, double temperature)
    : spec_(spec),
      ensemble_(ensemble),
      stream_(stream),
      prompt_len_(prompt_len),
      length_(length),
      temperature_(temperature) {}

TokenSequence Provider::query() {
  if (count_ == cache_.size()) {
    Rng rng = Rng::derive(stream_, count_);
    const TokenSequence prompt = random_prompt(spec_.vocab, prompt_len_, rng);
    cache_.push_back(mk_generate(spec_, ensemble_, prompt, length_, rng, temperature_));
  }
  return cache_[count_++].text;
}

std::vector<std::size_t> Provider::member_log() const {
  std::vector<std::size_t> out;
  out.reserve(count_);
  for (std::size_t i = 0; i < count_; ++i) out.push_back(cache_[i].member);
  return out;
}

std::size_t worker_count(std::size_t requested) {
  std::size_t n = requested;
  if (n == 0) n = std::max(1u, std::thread::hardware_concurrency());
  if (const char* env = std::getenv("MKWM_THREADS"); env && *env) {
    std::size_t cap = 0;
    const char* end = env + std::char_traits<char>::length(env);
    const auto [ptr, ec] = std::from_chars(env, end, cap);
    if (ec != std::errc() || ptr != end || cap == 0) {
      throw InputError("MKWM_THREADS must be a positive integer");
    }
    n = std::min(n, cap);
  }
  return n;
}

namespace {

enum Purpose : std::uint64_t {
  kKeys = 1,
  kCalibration,
  kProvider,
  kTuning,
  kForgery,
  kUtility,
  kNull,
  kCluster,
  kModel,
};

std::uint64_t label_hash(const std::string& label) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : label) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

struct Stream {
  std::uint64_t base;
  std::uint64_t of(Purpose p) const { return mix64(base ^ mix64(static_cast<std::uint64_t>(p) * kGolden)); }
};

Stream stream_for(std::uint64_t seed, const std::string& label, std::size_t r) {
  return {mix64(seed ^ mix64(label_hash(label) ^ mix64(static_cast<std::uint64_t>(r) + kGolden)))};
}

std::size_t default_steal_order(const ExperimentConfig& cfg, const std::string& label) {
  if (cfg.steal_order) return *cfg.steal_order;
  return label == to_string(Variant::Unigram) ? 0 : 1;
}

Ensemble build_ensemble(const ExperimentConfig& cfg, const std::string& label, const KeySet& keys) {
  if (label == "mixed") {
    std::vector<SchemeConfig> schemes;
    for (auto v : cfg.variants) {
      auto s = SchemeConfig::make(v, cfg.gamma, cfg.delta);
      s.ignore_repeated = cfg.ignore_repeated;
      schemes.push_back(s);
    }
    return Ensemble::mixed(schemes, keys);
  }
  auto s = SchemeConfig::make(parse_variant(label), cfg.gamma, cfg.delta);
  s.ignore_repeated = cfg.ignore_repeated;
  return Ensemble::uniform(s, keys);
}

struct GroupOutput {
  std::vector<SeedOutcome> per_n;  // one per N_grid entry
  std::uint64_t fnr_trials = 0;
  std::uint64_t fnr_misses = 0;
  std::uint64_t null_trials = 0;
  std::uint64_t null_alarms = 0;
};

void tally(SeedOutcome& out, const DetectionReport& rep) {
  switch (rep.decision.kind) {
    case DecisionKind::Genuine: ++out.genuine; break;
    case DecisionKind::Forged: ++out.forged; break;
    case DecisionKind::Unwatermarked: ++out.unwatermarked; break;
  }
}

// Forges with each grid strength on held-out prompts and keeps the one with
// the most Genuine verdicts (ties: earliest in the grid).
double tune_strength(const ExperimentConfig& cfg, const StolenSignal& signal, const LmSpec& base,
                     const Ensemble& ens, const Calibration& calib, std::uint64_t stream) {
  if (cfg.strength_grid.size() == 1) return cfg.strength_grid.front();
  double best = cfg.strength_grid.front();
  std::size_t best_wins = 0;
  bool first = true;
  for (double s : cfg.strength_grid) {
    std::size_t wins = 0;
    for (std::size_t j = 0; j < cfg.tuning_prompts; ++j) {
      Rng rng = Rng::derive(stream, j);
      const auto prompt = random_prompt(base.vocab, cfg.prompt_len, rng);
      const auto x = forge(signal, base, prompt, cfg.length, s, rng, cfg.forge_temperature);
      if (mk_detect(ens, calib, x).decision.kind == DecisionKind::Genuine) ++wins;
    }
    if (first || wins > best_wins) {
      best = s;
      best_wins = wins;
      first = false;
    }
  }
  return best;
}

GroupOutput run_abstract(const ExperimentConfig& cfg, std::size_t r, const Calibration& calib,
                         const Stream& st) {
  GroupOutput out;
  const double alpha = cfg.model_alpha.value_or(calib.alpha);
  const DetectorModel model{r, alpha, cfg.model_beta};
  Rng model_rng(st.of(kModel));
  for (std::size_t ni = 0; ni < cfg.N_grid.size(); ++ni) {
    const auto sim = simulate_detector_model(model, std::nullopt, cfg.n_forgeries, model_rng);
    SeedOutcome o;
    o.genuine = sim.histogram[1];
    o.unwatermarked = sim.histogram[0];
    o.forged = sim.trials - o.genuine - o.unwatermarked;
    o.tau = -normal_quantile(alpha);
    out.per_n.push_back(o);
  }
  if (cfg.n_fnr > 0) {
    Rng rng(st.of(kUtility));
    const double rate = simulate_fnr(-normal_quantile(alpha), r, cfg.model_beta, cfg.n_fnr, rng);
    out.fnr_trials = cfg.n_fnr;
    out.fnr_misses = static_cast<std::uint64_t>(std::llround(rate * static_cast<double>(cfg.n_fnr)));
  }
  if (cfg.n_null_texts > 0) {
    Rng rng(st.of(kNull));
    const auto sim = simulate_detector_model(model, std::nullopt, cfg.n_null_texts, rng);
    out.null_trials = sim.trials;
    out.null_alarms = sim.trials - sim.histogram[0];
  }
  return out;
}

GroupOutput run_group(const ExperimentConfig& cfg, const std::string& label, std::size_t r,
                      std::uint64_t seed) {
  const Stream st = stream_for(seed, label, r);
  Rng key_rng(st.of(kKeys));
  const Ensemble ens = build_ensemble(cfg, label, KeySet::generate(r, key_rng));

  Calibration calib;
  if (cfg.calibration == CalibrationMode::Analytic) {
    calib = calibrate_analytic(cfg.alpha_fw, r);
  } else {
    Rng rng(st.of(kCalibration));
    calib = calibrate_empirical(ens, cfg.lm, cfg.alpha_fw, cfg.n_null, rng,
                                NullSampling{cfg.prompt_len, cfg.length, cfg.temperature});
  }

  if (cfg.attacker == AttackerKind::BernoulliAbstract) {
    auto out = run_abstract(cfg, r, calib, st);
    for (auto& o : out.per_n) o.seed = seed;
    return out;
  }

  GroupOutput out;
  for (std::size_t j = 0; j < cfg.n_fnr; ++j) {
    Rng rng = Rng::derive(st.of(kUtility), j);
    const auto prompt = random_prompt(cfg.lm.vocab, cfg.prompt_len, rng);
    const auto g = mk_generate(cfg.lm, ens, prompt, cfg.length, rng, cfg.temperature);
    const auto d = mk_detect(ens, calib, g.text).decision;
    ++out.fnr_trials;
    if (!(d.kind == DecisionKind::Genuine && d.member == g.member)) ++out.fnr_misses;
  }
  for (std::size_t j = 0; j < cfg.n_null_texts; ++j) {
    Rng rng = Rng::derive(st.of(kNull), j);
    const auto prompt = random_prompt(cfg.lm.vocab, cfg.prompt_len, rng);
    const auto x = generate(cfg.lm, prompt, cfg.length, rng, cfg.temperature);
    ++out.null_trials;
    if (mk_detect(ens, calib, x).decision.kind != DecisionKind::Unwatermarked) ++out.null_alarms;
  }

  const LmSpec& base = cfg.surrogate_lm ? *cfg.surrogate_lm : cfg.lm;
  StealOptions steal_opts;
  steal_opts.order = default_steal_order(cfg, label);
  steal_opts.pseudo_count = cfg.pseudo_count;
  steal_opts.min_bucket_count = cfg.min_bucket_count;

  Provider provider(cfg.lm, ens, st.of(kProvider), cfg.prompt_len, cfg.length, cfg.temperature);
  for (std::size_t n : cfg.N_grid) {
    SeedOutcome o;
    o.seed = seed;
    o.tau = calib.tau;

    provider.rewind();
    std::vector<TokenSequence> samples;
    samples.reserve(n);
    for (std::size_t i = 0; i < n; ++i) samples.push_back(provider.query());
    o.provider_queries = provider.queries();
    if (o.provider_queries != n) throw InternalError("provider budget accounting mismatch");

    std::vector<TokenSequence> training;
    if (cfg.attacker == AttackerKind::AdaptiveCluster && r >= 2 && n >= 2) {
      const auto hidden = provider.member_log();
      ClusterAssignment assignment;
      if (cfg.oracle_clusters) {
        assignment.labels = hidden;
        assignment.r_hat = r;
        assignment.accuracy = 1.0;
      } else {
        ClusterOptions copts;
        copts.features = cfg.cluster_features;
        copts.iters = cfg.cluster_iters;
        copts.top_k_dims = cfg.top_k_dims;
        Rng crng(st.of(kCluster) ^ n);
        const std::size_t k = std::min(cfg.r_hat.value_or(r), n);
        assignment = cluster_by_key(samples, cfg.lm.vocab.size(), k, copts, crng,
                                    std::span<const std::size_t>(hidden));
      }
      o.cluster_accuracy = assignment.accuracy;
      training = largest_cluster_samples(samples, assignment);
    } else {
      training = std::move(samples);
    }

    const StolenSignal signal = steal(training, base, steal_opts);
    o.strength = tune_strength(cfg, signal, base, ens, calib, st.of(kTuning) ^ n);
    for (std::size_t j = 0; j < cfg.n_forgeries; ++j) {
      Rng rng = Rng::derive(st.of(kForgery), j);
      const auto prompt = random_prompt(base.vocab, cfg.prompt_len, rng);
      const auto x = forge(signal, base, prompt, cfg.length, o.strength, rng, cfg.forge_temperature);
      tally(o, mk_detect(ens, calib, x));
    }
    out.per_n.push_back(o);
  }
  return out;
}

}  // namespace

std::vector<GameResult> run_game(const ExperimentConfig& cfg) {
  cfg.validate();

  // One job per (ensemble label, r, seed); each job covers every N.
  struct Job {
    std::string label;
    std::size_t r;
    std::size_t seed_index;
  };
  std::vector<std::string> labels;
  if (cfg.single_variant_cells) {
    for (auto v : cfg.variants) labels.emplace_back(to_string(v));
  }
  if (cfg.mixed) labels.emplace_back("mixed");
  std::vector<Job> jobs;
  for (const auto& label : labels) {
    for (auto r : cfg.r) {
      for (std::size_t s = 0; s < cfg.seeds.size(); ++s) jobs.push_back({label, r, s});
    }
  }

  std::vector<GroupOutput> outputs(jobs.size());
  std::vector<std::exception_ptr> errors(jobs.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t j = next++; j < jobs.size(); j = next++) {
      try {
        outputs[j] = run_group(cfg, jobs[j].label, jobs[j].r, cfg.seeds[jobs[j].seed_index]);
      } catch (...) {
        errors[j] = std::current_exception();
      }
    }
  };
  const std::size_t n_workers = std::min(worker_count(cfg.threads), jobs.size());
  if (n_workers <= 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t w = 0; w < n_workers; ++w) pool.emplace_back(worker);
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }

  std::vector<GameResult> results;
  std::size_t job = 0;
  for (const auto& label : labels) {
    for (auto r : cfg.r) {
      for (std::size_t ni = 0; ni < cfg.N_grid.size(); ++ni) {
        GameResult res;
        res.cell = {label, r, cfg.N_grid[ni]};
        res.attacker = std::string(to_string(cfg.attacker));
        for (std::size_t s = 0; s < cfg.seeds.size(); ++s) {
          const GroupOutput& g = outputs[job + s];
          const SeedOutcome& o = g.per_n[ni];
          res.per_seed.push_back(o);
          res.genuine += o.genuine;
          res.forged += o.forged;
          res.unwatermarked += o.unwatermarked;
          res.fnr_trials += g.fnr_trials;
          res.fnr_misses += g.fnr_misses;
          res.null_trials += g.null_trials;
          res.null_alarms += g.null_alarms;
        }
        res.trials = res.genuine + res.forged + res.unwatermarked;
        res.forgery_success = static_cast<double>(res.genuine) / static_cast<double>(res.trials);
        res.ci = binomial_ci(res.genuine, res.trials, cfg.ci);
        res.fnr = res.fnr_trials ? static_cast<double>(res.fnr_misses) / static_cast<double>(res.fnr_trials) : 0.0;
        res.fpr_fw = res.null_trials ? static_cast<double>(res.null_alarms) / static_cast<double>(res.null_trials) : 0.0;
        results.push_back(std::move(res));
      }
      job += cfg.seeds.size();
    }
  }
  return results;
}

}  // namespace mkwm
