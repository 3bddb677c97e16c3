// mkwm: command-line front end.
//   exit 0 success, 1 data error, 2 usage error
//   stdout carries data only; diagnostics go to stderr.

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "mkwm/attacks.hpp"
#include "mkwm/game.hpp"
#include "mkwm/io.hpp"
#include "mkwm/multikey.hpp"
#include "mkwm/report.hpp"
#include "mkwm/theory.hpp"

namespace fs = std::filesystem;
using namespace mkwm;

namespace {

struct LmFlags {
  std::string file;
  std::size_t vocab = 1024;
  std::size_t order = 2;
  double entropy_scale = 1.0;
  std::uint64_t lm_seed = 0;

  void add(CLI::App* app, const std::string& prefix = "") {
    app->add_option("--" + prefix + "lm", file, "LM spec file (TOML or JSON table)")
        ->check(CLI::ExistingFile);
    app->add_option("--" + prefix + "vocab", vocab, "vocabulary size")->check(CLI::Range(2, 1 << 24));
    app->add_option("--" + prefix + "order", order, "context tokens the LM conditions on");
    app->add_option("--" + prefix + "entropy-scale", entropy_scale, "logit scale of the synthetic LM")
        ->check(CLI::NonNegativeNumber);
    app->add_option("--" + prefix + "lm-seed", lm_seed, "synthetic LM seed");
  }

  LmSpec resolve() const {
    if (!file.empty()) return lm_from_json(load_config_file(file), fs::path(file).parent_path());
    return LmSpec::hash_synthetic(Vocabulary(vocab), entropy_scale, order, lm_seed);
  }
};

void note(const std::string& cmd, const Json& resolved) {
  std::cerr << "mkwm " << cmd << ": " << resolved.dump() << '\n';
}

std::vector<TokenSequence> read_input(const std::string& path, std::size_t prompt_len) {
  std::vector<TokenSequence> texts;
  if (path == "-") {
    texts = read_corpus(std::cin);
  } else {
    std::ifstream in(path);
    if (!in) throw InputError("cannot open '" + path + "'");
    texts = read_corpus(in);
  }
  for (auto& t : texts) t.prompt_len = std::min(prompt_len, t.tokens.size());
  return texts;
}

void write_or_print(const std::string& out, const std::string& body, bool force) {
  if (out.empty() || out == "-") {
    std::cout << body;
    return;
  }
  if (fs::exists(out) && !force) {
    throw CLI::ValidationError("--out", "'" + out + "' exists; pass --force to overwrite");
  }
  std::ofstream f(out, std::ios::binary);
  if (!f) throw InputError("cannot write '" + out + "'");
  f << body;
}

std::vector<GameResult> results_from_manifest(const Json& m) {
  std::vector<GameResult> out;
  for (const auto& c : m.at("cells")) {
    GameResult r;
    r.cell = {c.at("variant").get<std::string>(), c.at("r").get<std::size_t>(),
              c.at("N").get<std::size_t>()};
    r.attacker = c.at("attacker").get<std::string>();
    r.trials = c.at("trials").get<std::uint64_t>();
    r.genuine = c.at("genuine").get<std::uint64_t>();
    r.forged = c.at("forged").get<std::uint64_t>();
    r.unwatermarked = c.at("unwatermarked").get<std::uint64_t>();
    r.forgery_success = c.at("forgery_success").get<double>();
    r.ci = {c.at("ci").at(0).get<double>(), c.at("ci").at(1).get<double>()};
    r.fnr = c.at("fnr").get<double>();
    r.fpr_fw = c.at("fpr_fw").get<double>();
    for (const auto& s : c.at("per_seed")) {
      SeedOutcome o;
      o.seed = s.at("seed").get<std::uint64_t>();
      r.per_seed.push_back(o);
    }
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-key watermarking experiments over synthetic language models", "mkwm"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "expand help for all subcommands");

  // keygen
  auto* keygen = app.add_subcommand("keygen", "write a key file with r distinct keys");
  std::size_t kg_r = 0;
  std::string kg_out;
  std::uint64_t kg_seed = 1;
  std::vector<std::string> kg_variants{"soft"};
  double kg_gamma = 0.25, kg_delta = 4.0;
  bool kg_force = false;
  keygen->add_option("--r", kg_r, "number of keys")->required()->check(CLI::Range(1, 1 << 20));
  keygen->add_option("--out", kg_out, "output path ('-' for stdout)")->required();
  keygen->add_option("--seed", kg_seed, "key generation seed")->capture_default_str();
  keygen->add_option("--scheme", kg_variants,
                     "variant(s); several values make a mixed ensemble (member i uses entry i mod n)")
      ->capture_default_str();
  keygen->add_option("--gamma", kg_gamma)->capture_default_str();
  keygen->add_option("--delta", kg_delta)->capture_default_str();
  keygen->add_flag("--force", kg_force, "overwrite an existing file");

  // generate
  auto* gen = app.add_subcommand("generate", "sample texts (watermarked unless --keys is omitted)");
  LmFlags gen_lm;
  gen_lm.add(gen);
  std::string gen_keys, gen_out, gen_labels;
  std::size_t gen_n = 1, gen_length = 256, gen_prompt = 8;
  std::uint64_t gen_seed = 1;
  double gen_temp = 1.0;
  bool gen_force = false;
  gen->add_option("--keys", gen_keys, "key file; omit for unwatermarked text")->check(CLI::ExistingFile);
  gen->add_option("--n", gen_n, "number of texts")->check(CLI::PositiveNumber)->capture_default_str();
  gen->add_option("--length", gen_length, "generated tokens per text")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  gen->add_option("--prompt-len", gen_prompt, "random prompt tokens")->capture_default_str();
  gen->add_option("--seed", gen_seed)->capture_default_str();
  gen->add_option("--temperature", gen_temp)->check(CLI::PositiveNumber)->capture_default_str();
  gen->add_option("--out", gen_out, "corpus output path (default stdout)");
  gen->add_option("--labels", gen_labels, "JSON-lines sidecar with the generating member per text");
  gen->add_flag("--force", gen_force);

  // detect
  auto* det = app.add_subcommand("detect", "multi-key detection, one JSON report per input line");
  std::string det_keys, det_input = "-", det_scheme;
  double det_alpha = 0.01;
  std::optional<double> det_tau;
  std::size_t det_prompt = 8, det_vocab = 1024;
  det->add_option("--keys", det_keys)->required()->check(CLI::ExistingFile);
  det->add_option("--scheme", det_scheme, "override the key file's variant");
  det->add_option("--alpha-fw", det_alpha, "family-wise false-positive budget")
      ->check(CLI::Bound(1e-300, 1.0 - 1e-16))
      ->capture_default_str();
  det->add_option("--tau", det_tau, "explicit per-key threshold (skips analytic calibration)");
  det->add_option("--input", det_input, "corpus file ('-' for stdin)")->capture_default_str();
  det->add_option("--prompt-len", det_prompt, "leading tokens per line that are prompt")
      ->capture_default_str();
  det->add_option("--vocab", det_vocab)->check(CLI::Range(2, 1 << 24))->capture_default_str();

  // calibrate
  auto* cal = app.add_subcommand("calibrate", "per-key threshold from a family-wise budget");
  LmFlags cal_lm;
  cal_lm.add(cal);
  std::string cal_keys, cal_method = "analytic";
  std::size_t cal_r = 0, cal_null = 1000, cal_length = 256, cal_prompt = 8;
  double cal_alpha = 0.01;
  std::uint64_t cal_seed = 1;
  cal->add_option("--keys", cal_keys, "key file (required for empirical)")->check(CLI::ExistingFile);
  cal->add_option("--r", cal_r, "number of keys (analytic, without --keys)");
  cal->add_option("--alpha-fw", cal_alpha)->check(CLI::Bound(1e-300, 1.0 - 1e-16))->capture_default_str();
  cal->add_option("--method", cal_method)
      ->check(CLI::IsMember({"analytic", "empirical"}))
      ->capture_default_str();
  cal->add_option("--n-null", cal_null)->check(CLI::PositiveNumber)->capture_default_str();
  cal->add_option("--length", cal_length)->check(CLI::PositiveNumber)->capture_default_str();
  cal->add_option("--prompt-len", cal_prompt)->capture_default_str();
  cal->add_option("--seed", cal_seed)->capture_default_str();

  // attack
  auto* atk = app.add_subcommand("attack", "watermark stealing, forgery and key clustering");
  atk->require_subcommand(1);
  auto* steal_cmd = atk->add_subcommand("steal", "learn a stolen signal from watermarked texts");
  LmFlags st_lm;
  st_lm.add(steal_cmd);
  std::string st_input = "-", st_out;
  std::size_t st_order = 0, st_prompt = 8;
  double st_pc = 0.5;
  bool st_force = false;
  steal_cmd->add_option("--input", st_input)->capture_default_str();
  steal_cmd->add_option("--out", st_out, "signal file")->required();
  steal_cmd->add_option("--context-order", st_order)->capture_default_str();
  steal_cmd->add_option("--pseudo-count", st_pc)->check(CLI::PositiveNumber)->capture_default_str();
  steal_cmd->add_option("--prompt-len", st_prompt)->capture_default_str();
  steal_cmd->add_flag("--force", st_force);

  auto* forge_cmd = atk->add_subcommand("forge", "sample forgeries from a stolen signal");
  LmFlags fg_lm;
  fg_lm.add(forge_cmd);
  std::string fg_signal;
  std::size_t fg_n = 1, fg_length = 256, fg_prompt = 8;
  double fg_strength = 2.0, fg_temp = 1.0;
  std::uint64_t fg_seed = 1;
  forge_cmd->add_option("--signal", fg_signal)->required()->check(CLI::ExistingFile);
  forge_cmd->add_option("--n", fg_n)->check(CLI::PositiveNumber)->capture_default_str();
  forge_cmd->add_option("--length", fg_length)->check(CLI::PositiveNumber)->capture_default_str();
  forge_cmd->add_option("--prompt-len", fg_prompt)->capture_default_str();
  forge_cmd->add_option("--strength", fg_strength)->capture_default_str();
  forge_cmd->add_option("--temperature", fg_temp)->check(CLI::PositiveNumber)->capture_default_str();
  forge_cmd->add_option("--seed", fg_seed)->capture_default_str();

  auto* cluster_cmd = atk->add_subcommand("cluster", "k-means key clustering of texts");
  std::string cl_input = "-", cl_labels, cl_features = "token-frequency";
  std::size_t cl_rhat = 2, cl_vocab = 1024, cl_iters = 50, cl_topk = 0, cl_prompt = 8;
  std::uint64_t cl_seed = 1;
  cluster_cmd->add_option("--input", cl_input)->capture_default_str();
  cluster_cmd->add_option("--r-hat", cl_rhat)->check(CLI::Range(2, 1 << 20))->capture_default_str();
  cluster_cmd->add_option("--vocab", cl_vocab)->check(CLI::Range(2, 1 << 24))->capture_default_str();
  cluster_cmd->add_option("--features", cl_features)
      ->check(CLI::IsMember({"token-frequency", "transition-signature"}))
      ->capture_default_str();
  cluster_cmd->add_option("--iters", cl_iters)->capture_default_str();
  cluster_cmd->add_option("--top-k", cl_topk)->capture_default_str();
  cluster_cmd->add_option("--prompt-len", cl_prompt)->capture_default_str();
  cluster_cmd->add_option("--seed", cl_seed)->capture_default_str();
  cluster_cmd->add_option("--oracle-labels", cl_labels,
                          "generate --labels sidecar; only used to score accuracy")
      ->check(CLI::ExistingFile);

  // simulate
  auto* sim = app.add_subcommand("simulate", "run the forgery game described by a config file");
  std::string sim_config, sim_out;
  bool sim_svg = false;
  std::size_t sim_threads = 0;
  sim->add_option("--config", sim_config, "TOML or JSON experiment config")
      ->required()
      ->check(CLI::ExistingFile);
  sim->add_option("--out", sim_out, "directory for results.csv, manifest.json and charts");
  sim->add_flag("--svg", sim_svg, "also write SVG charts (needs --out)");
  sim->add_option("--threads", sim_threads, "worker cap (MKWM_THREADS also applies)");

  // theory
  auto* th = app.add_subcommand("theory", "closed-form quantities");
  std::string th_fn;
  std::size_t th_r = 1;
  double th_alpha = 0.0, th_tau = 0.0, th_alpha_fw = 0.01, th_p = 0.5;
  th->add_option("--fn", th_fn)
      ->required()
      ->check(CLI::IsMember({"blind-bound", "blind-success", "fnr-bound", "sidak", "tau",
                             "family-fpr", "normal-cdf", "normal-quantile"}));
  th->add_option("--r", th_r)->check(CLI::PositiveNumber);
  th->add_option("--alpha", th_alpha);
  th->add_option("--tau", th_tau);
  th->add_option("--alpha-fw", th_alpha_fw);
  th->add_option("--x", th_tau, "argument of normal-cdf");
  th->add_option("--p", th_p, "argument of normal-quantile");

  // report
  auto* rep = app.add_subcommand("report", "re-render CSV and charts from a manifest");
  std::string rep_manifest, rep_out;
  bool rep_svg = false;
  rep->add_option("--manifest", rep_manifest)->required()->check(CLI::ExistingFile);
  rep->add_option("--out", rep_out, "directory for charts (CSV goes to stdout)");
  rep->add_flag("--svg", rep_svg);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*keygen) {
      Rng rng(kg_seed);
      KeyFile kf;
      kf.keys = KeySet::generate(kg_r, rng);
      for (const auto& v : kg_variants) kf.schemes.push_back(SchemeConfig::make(parse_variant(v), kg_gamma, kg_delta));
      note("keygen", {{"r", kg_r}, {"seed", kg_seed}, {"schemes", kg_variants}, {"gamma", kg_gamma}, {"delta", kg_delta}});
      write_or_print(kg_out, key_file_to_json(kf).dump(2) + "\n", kg_force);
    } else if (*gen) {
      const LmSpec spec = gen_lm.resolve();
      std::optional<Ensemble> ens;
      if (!gen_keys.empty()) ens = read_key_file(gen_keys).ensemble();
      note("generate", {{"lm", lm_to_json(spec)}, {"n", gen_n}, {"length", gen_length},
                        {"prompt_len", gen_prompt}, {"seed", gen_seed}, {"temperature", gen_temp},
                        {"watermarked", ens.has_value()}});
      std::vector<TokenSequence> texts;
      std::ostringstream labels;
      for (std::size_t i = 0; i < gen_n; ++i) {
        Rng rng = Rng::derive(gen_seed, i);
        const auto prompt = random_prompt(spec.vocab, gen_prompt, rng);
        if (ens) {
          auto g = mk_generate(spec, *ens, prompt, gen_length, rng, gen_temp);
          const auto& s = ens->members[g.member].scheme;
          labels << Json{{"key_index", g.member}, {"scheme", std::string(to_string(s.variant))},
                         {"gamma", s.gamma}, {"delta", s.delta}}.dump()
                 << '\n';
          texts.push_back(std::move(g.text));
        } else {
          texts.push_back(generate(spec, prompt, gen_length, rng, gen_temp));
        }
      }
      std::ostringstream body;
      write_corpus(body, texts);
      write_or_print(gen_out, body.str(), gen_force);
      if (!gen_labels.empty()) {
        if (!ens) throw CLI::ValidationError("--labels", "needs --keys");
        write_or_print(gen_labels, labels.str(), gen_force);
      }
    } else if (*det) {
      KeyFile kf = read_key_file(det_keys);
      if (!det_scheme.empty()) {
        for (auto& s : kf.schemes) {
          const bool dedup = s.ignore_repeated;
          s = SchemeConfig::make(parse_variant(det_scheme), s.gamma, s.delta);
          s.ignore_repeated = dedup;
        }
      }
      const Ensemble ens = kf.ensemble();
      Calibration calib = calibrate_analytic(det_alpha, ens.size());
      if (det_tau) calib.tau = *det_tau;
      note("detect", {{"r", ens.size()}, {"alpha_fw", det_alpha}, {"tau", calib.tau},
                      {"input", det_input}, {"prompt_len", det_prompt}});
      const auto texts = read_input(det_input, det_prompt);
      const Vocabulary vocab(det_vocab);
      for (std::size_t i = 0; i < texts.size(); ++i) {
        try {
          validate(texts[i], vocab);
        } catch (const InputError& e) {
          throw InputError("text " + std::to_string(i + 1) + ": " + e.what());
        }
        std::cout << report_to_json(mk_detect(ens, calib, texts[i])).dump() << '\n';
      }
    } else if (*cal) {
      Calibration c;
      if (cal_method == "analytic") {
        std::size_t r = cal_r;
        if (!cal_keys.empty()) r = read_key_file(cal_keys).keys.r();
        if (r == 0) throw CLI::ValidationError("--r", "analytic calibration needs --r or --keys");
        c = calibrate_analytic(cal_alpha, r);
      } else {
        if (cal_keys.empty()) throw CLI::ValidationError("--keys", "empirical calibration needs --keys");
        const LmSpec spec = cal_lm.resolve();
        const Ensemble ens = read_key_file(cal_keys).ensemble();
        Rng rng(cal_seed);
        c = calibrate_empirical(ens, spec, cal_alpha, cal_null, rng,
                                NullSampling{cal_prompt, cal_length, 1.0});
      }
      note("calibrate", {{"method", cal_method}, {"alpha_fw", cal_alpha}, {"seed", cal_seed},
                         {"n_null", cal_null}});
      Json out{{"alpha_fw", c.alpha_fw}, {"r", c.r}, {"alpha", c.alpha}, {"tau", c.tau},
               {"source", c.source == CalibrationSource::Analytic ? "analytic" : "empirical"}};
      std::cout << out.dump() << '\n';
    } else if (*steal_cmd) {
      const LmSpec base = st_lm.resolve();
      const auto texts = read_input(st_input, st_prompt);
      StealOptions opts;
      opts.order = st_order;
      opts.pseudo_count = st_pc;
      note("attack steal", {{"lm", lm_to_json(base)}, {"samples", texts.size()},
                            {"context_order", st_order}, {"pseudo_count", st_pc}});
      const auto signal = steal(texts, base, opts);
      if (fs::exists(st_out) && !st_force) {
        throw CLI::ValidationError("--out", "'" + st_out + "' exists; pass --force to overwrite");
      }
      std::ofstream f(st_out, std::ios::binary);
      if (!f) throw InputError("cannot write '" + st_out + "'");
      write_signal(f, signal);
    } else if (*forge_cmd) {
      const LmSpec base = fg_lm.resolve();
      std::ifstream f(fg_signal, std::ios::binary);
      const auto signal = read_signal(f);
      note("attack forge", {{"lm", lm_to_json(base)}, {"n", fg_n}, {"length", fg_length},
                            {"strength", fg_strength}, {"seed", fg_seed}});
      std::vector<TokenSequence> texts;
      for (std::size_t i = 0; i < fg_n; ++i) {
        Rng rng = Rng::derive(fg_seed, i);
        const auto prompt = random_prompt(base.vocab, fg_prompt, rng);
        texts.push_back(forge(signal, base, prompt, fg_length, fg_strength, rng, fg_temp));
      }
      write_corpus(std::cout, texts);
    } else if (*cluster_cmd) {
      const auto texts = read_input(cl_input, cl_prompt);
      std::optional<std::vector<std::size_t>> truth;
      if (!cl_labels.empty()) {
        std::ifstream in(cl_labels);
        truth.emplace();
        std::string line;
        std::size_t lineno = 0;
        while (std::getline(in, line)) {
          ++lineno;
          if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
          try {
            truth->push_back(Json::parse(line).at("key_index").get<std::size_t>());
          } catch (const Json::exception&) {
            throw InputError(cl_labels + ": line " + std::to_string(lineno) + ": malformed label");
          }
        }
        if (truth->size() != texts.size()) throw InputError("label count does not match text count");
      }
      ClusterOptions opts;
      opts.features = cl_features == "token-frequency" ? ClusterFeatures::TokenFrequency
                                                       : ClusterFeatures::TransitionSignature;
      opts.iters = cl_iters;
      opts.top_k_dims = cl_topk;
      Rng rng(cl_seed);
      note("attack cluster", {{"samples", texts.size()}, {"r_hat", cl_rhat}, {"features", cl_features},
                              {"seed", cl_seed}});
      std::optional<std::span<const std::size_t>> oracle;
      if (truth) oracle = std::span<const std::size_t>(*truth);
      const auto a = cluster_by_key(texts, cl_vocab, cl_rhat, opts, rng, oracle);
      Json out{{"r_hat", a.r_hat}, {"labels", a.labels}, {"sizes", a.cluster_sizes()}};
      if (a.accuracy) out["accuracy"] = *a.accuracy;
      std::cout << out.dump() << '\n';
    } else if (*sim) {
      ExperimentConfig cfg = load_experiment_config(sim_config);
      if (sim_threads > 0) cfg.threads = sim_threads;
      if (sim_svg && sim_out.empty()) throw CLI::ValidationError("--svg", "needs --out");
      std::cerr << "mkwm simulate: config_hash=" << hex64(config_hash(cfg)) << " "
                << experiment_to_json(cfg).dump() << '\n';
      const std::string started = utc_timestamp();
      const auto t0 = std::chrono::steady_clock::now();
      const auto results = run_game(cfg);
      const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      write_results_csv(std::cout, results);
      if (!sim_out.empty()) {
        for (const auto& p : write_report(sim_out, cfg, results, started, secs, sim_svg)) {
          std::cerr << "wrote " << p.string() << '\n';
        }
      }
      std::cerr << "mkwm simulate: " << results.size() << " cells in " << std::fixed
                << std::setprecision(1) << secs << " s\n";
    } else if (*th) {
      const auto need = [&](const char* opt) {
        if (th->count(opt) == 0) {
          throw CLI::ValidationError(opt, "required by --fn " + th_fn);
        }
      };
      if (th_fn == "blind-bound" || th_fn == "sidak" || th_fn == "tau") need("--r");
      if (th_fn == "blind-success" || th_fn == "family-fpr") {
        need("--r");
        need("--alpha");
      }
      if (th_fn == "fnr-bound") {
        need("--r");
        need("--tau");
      }
      if (th_fn == "normal-cdf" && th->count("--x") == 0) need("--tau");
      if (th_fn == "normal-quantile") need("--p");
      double v = 0.0;
      if (th_fn == "blind-bound") {
        v = blind_bound(th_r);
      } else if (th_fn == "blind-success") {
        v = blind_success(th_r, th_alpha);
      } else if (th_fn == "fnr-bound") {
        v = fnr_bound(th_tau, th_r);
      } else if (th_fn == "sidak") {
        v = sidak_alpha(th_alpha_fw, th_r);
      } else if (th_fn == "tau") {
        v = calibrate_analytic(th_alpha_fw, th_r).tau;
      } else if (th_fn == "family-fpr") {
        Calibration c;
        c.r = th_r;
        v = family_fpr(c, th_alpha);
      } else if (th_fn == "normal-cdf") {
        v = normal_cdf(th_tau);
      } else {
        v = normal_quantile(th_p);
      }
      std::cout << std::setprecision(10) << v << '\n';
    } else if (*rep) {
      const Json m = load_config_file(rep_manifest);
      const auto results = results_from_manifest(m);
      write_results_csv(std::cout, results);
      if (!rep_out.empty()) {
        fs::create_directories(rep_out);
        if (rep_svg) {
          std::ofstream(fs::path(rep_out) / "success_vs_r.svg") << svg_success_vs_r(results);
          std::ofstream(fs::path(rep_out) / "success_vs_n.svg") << svg_success_vs_n(results);
        }
      }
    }
  } catch (const CLI::ValidationError& e) {
    std::cerr << "mkwm: " << e.what() << '\n';
    return 2;
  } catch (const InputError& e) {
    std::cerr << "mkwm: " << e.what() << '\n';
    return 1;
  } catch (const Json::exception& e) {
    std::cerr << "mkwm: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "mkwm: internal error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
