#include "mkwm/io.hpp"

#include <charconv>
#include <fstream>
#include <set>
#include <sstream>

#include "toml.hpp"

namespace mkwm {

namespace {

Json toml_to_json(const toml::node& node) {
  if (const auto* t = node.as_table()) {
    Json out = Json::object();
    for (const auto& [k, v] : *t) out[std::string(k.str())] = toml_to_json(v);
    return out;
  }
  if (const auto* a = node.as_array()) {
    Json out = Json::array();
    for (const auto& v : *a) out.push_back(toml_to_json(v));
    return out;
  }
  if (const auto* v = node.as_string()) return v->get();
  if (const auto* v = node.as_integer()) return v->get();
  if (const auto* v = node.as_floating_point()) return v->get();
  if (const auto* v = node.as_boolean()) return v->get();
  std::ostringstream s;
  s << node.source();
  throw InputError("unsupported TOML value (dates and times are not accepted) at " + s.str());
}

std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open '" + path.string() + "'");
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

// Field access that rejects anything the reader did not consume.
class Fields {
 public:
  Fields(const Json& j, std::string where) : j_(j), where_(std::move(where)) {
    if (!j.is_object()) throw InputError(where_ + ": expected a table/object");
  }

  const Json* get(const std::string& key) {
    seen_.insert(key);
    const auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  std::string name(const std::string& key) const { return where_.empty() ? key : where_ + "." + key; }

  void finish() const {
    for (const auto& [k, v] : j_.items()) {
      if (!seen_.count(k)) throw InputError("unknown field '" + name(k) + "'");
    }
  }

  double real(const std::string& key, double fallback) {
    const Json* v = get(key);
    if (!v) return fallback;
    if (!v->is_number()) throw InputError("field '" + name(key) + "' must be a number");
    return v->get<double>();
  }

  std::size_t count(const std::string& key, std::size_t fallback) {
    const Json* v = get(key);
    if (!v) return fallback;
    return as_count(*v, name(key));
  }

  bool flag(const std::string& key, bool fallback) {
    const Json* v = get(key);
    if (!v) return fallback;
    if (!v->is_boolean()) throw InputError("field '" + name(key) + "' must be a boolean");
    return v->get<bool>();
  }

  std::string text(const std::string& key, const std::string& fallback) {
    const Json* v = get(key);
    if (!v) return fallback;
    if (!v->is_string()) throw InputError("field '" + name(key) + "' must be a string");
    return v->get<std::string>();
  }

  static std::size_t as_count(const Json& v, const std::string& field) {
    if (v.is_number_unsigned()) return v.get<std::size_t>();
    if (v.is_number_integer()) {
      const auto x = v.get<std::int64_t>();
      if (x < 0) throw InputError("field '" + field + "' must be non-negative");
      return static_cast<std::size_t>(x);
    }
    throw InputError("field '" + field + "' must be an integer");
  }

 private:
  const Json& j_;
  std::string where_;
  std::set<std::string> seen_;
};

template <typename T, typename F>
std::vector<T> list_of(const Json& v, const std::string& field, F&& convert) {
  std::vector<T> out;
  if (!v.is_array()) {
    out.push_back(convert(v, field));
    return out;
  }
  for (std::size_t i = 0; i < v.size(); ++i) {
    out.push_back(convert(v[i], field + "[" + std::to_string(i) + "]"));
  }
  return out;
}

std::string_view features_name(ClusterFeatures f) {
  return f == ClusterFeatures::TokenFrequency ? "token-frequency" : "transition-signature";
}

}  // namespace

std::uint64_t u64_from_json(const Json& j, const std::string& field) {
  if (j.is_number_unsigned()) return j.get<std::uint64_t>();
  if (j.is_number_integer()) {
    const auto x = j.get<std::int64_t>();
    if (x < 0) throw InputError("field '" + field + "' must be non-negative");
    return static_cast<std::uint64_t>(x);
  }
  if (j.is_string()) {
    const auto s = j.get<std::string>();
    std::string_view digits = s;
    int base = 10;
    if (digits.starts_with("0x") || digits.starts_with("0X")) {
      digits.remove_prefix(2);
      base = 16;
    }
    std::uint64_t v = 0;
    const auto [ptr, ec] = std::from_chars(digits.data(), digits.data() + digits.size(), v, base);
    if (digits.empty() || ec != std::errc() || ptr != digits.data() + digits.size()) {
      throw InputError("field '" + field + "' is not an unsigned 64-bit integer");
    }
    return v;
  }
  throw InputError("field '" + field + "' must be an unsigned 64-bit integer");
}

Json parse_config_text(const std::string& text, const std::string& origin) {
  const auto first = text.find_first_not_of(" \t\r\n");
  if (first != std::string::npos && text[first] == '{') {
    try {
      return Json::parse(text);
    } catch (const Json::parse_error& e) {
      throw InputError(origin + ": " + e.what());
    }
  }
  try {
    const toml::table t = toml::parse(text, origin);
    return toml_to_json(t);
  } catch (const toml::parse_error& e) {
    std::ostringstream s;
    s << origin << ":" << e.source().begin.line << ": " << e.description();
    throw InputError(s.str());
  }
}

Json load_config_file(const std::filesystem::path& path) {
  return parse_config_text(read_text(path), path.string());
}

LmSpec lm_from_json(const Json& j, const std::filesystem::path& base_dir) {
  Fields f(j, "lm");
  LmSpec spec;
  const std::string kind = f.text("kind", "hash-synthetic");
  spec.vocab = Vocabulary(f.count("vocab", spec.vocab.size()));
  spec.order = f.count("order", spec.order);
  if (const Json* s = f.get("lm_seed")) spec.lm_seed = u64_from_json(*s, "lm.lm_seed");
  spec.entropy_scale = f.real("entropy_scale", spec.entropy_scale);
  spec.smoothing = f.real("smoothing", spec.smoothing);
  const Json* src = f.get("counts_source");
  f.finish();
  if (kind == "hash-synthetic") {
    if (src) throw InputError("lm.counts_source applies to ngram-counts models only");
    spec.kind = LmKind::HashSynthetic;
  } else if (kind == "ngram-counts") {
    if (!src || !src->is_string()) throw InputError("lm.counts_source is required for ngram-counts");
    std::filesystem::path p = src->get<std::string>();
    if (p.is_relative() && !base_dir.empty()) p = base_dir / p;
    const auto corpus = read_corpus_file(p.string());
    spec = train_ngram(corpus, spec.order, spec.smoothing, spec.vocab);
    spec.counts_source = src->get<std::string>();
  } else {
    throw InputError("lm.kind must be 'hash-synthetic' or 'ngram-counts'");
  }
  spec.validate();
  return spec;
}

Json lm_to_json(const LmSpec& spec) {
  Json j;
  j["kind"] = spec.kind == LmKind::HashSynthetic ? "hash-synthetic" : "ngram-counts";
  j["vocab"] = spec.vocab.size();
  j["order"] = spec.order;
  j["lm_seed"] = spec.lm_seed;
  if (spec.kind == LmKind::HashSynthetic) {
    j["entropy_scale"] = spec.entropy_scale;
  } else {
    j["smoothing"] = spec.smoothing;
    if (spec.counts_source) j["counts_source"] = *spec.counts_source;
  }
  return j;
}

ExperimentConfig experiment_from_json(const Json& j, const std::filesystem::path& base_dir) {
  Fields f(j, "");
  ExperimentConfig cfg;
  if (const Json* v = f.get("seeds")) {
    cfg.seeds = list_of<std::uint64_t>(*v, "seeds", u64_from_json);
  }
  if (const Json* v = f.get("lm")) cfg.lm = lm_from_json(*v, base_dir);
  if (const Json* v = f.get("surrogate_lm")) cfg.surrogate_lm = lm_from_json(*v, base_dir);
  if (const Json* v = f.get("variants")) {
    cfg.variants = list_of<Variant>(*v, "variants", [](const Json& x, const std::string& field) {
      if (!x.is_string()) throw InputError("field '" + field + "' must be a string");
      return parse_variant(x.get<std::string>());
    });
  }
  cfg.mixed = f.flag("mixed", cfg.mixed);
  cfg.single_variant_cells = f.flag("single_variant_cells", cfg.single_variant_cells);
  if (const Json* v = f.get("r")) cfg.r = list_of<std::size_t>(*v, "r", Fields::as_count);
  cfg.gamma = f.real("gamma", cfg.gamma);
  cfg.delta = f.real("delta", cfg.delta);
  cfg.ignore_repeated = f.flag("ignore_repeated", cfg.ignore_repeated);
  cfg.alpha_fw = f.real("alpha_fw", cfg.alpha_fw);
  {
    const std::string mode = f.text("calibration", "analytic");
    if (mode == "analytic") {
      cfg.calibration = CalibrationMode::Analytic;
    } else if (mode == "empirical") {
      cfg.calibration = CalibrationMode::Empirical;
    } else {
      throw InputError("calibration must be 'analytic' or 'empirical'");
    }
  }
  cfg.n_null = f.count("n_null", cfg.n_null);
  if (const Json* v = f.get("N_grid")) cfg.N_grid = list_of<std::size_t>(*v, "N_grid", Fields::as_count);
  cfg.n_forgeries = f.count("n_forgeries", cfg.n_forgeries);
  cfg.length = f.count("length", cfg.length);
  cfg.prompt_len = f.count("prompt_len", cfg.prompt_len);
  cfg.temperature = f.real("temperature", cfg.temperature);
  cfg.attacker = parse_attacker(f.text("attacker", std::string(to_string(cfg.attacker))));
  if (const Json* v = f.get("strength_grid")) {
    cfg.strength_grid = list_of<double>(*v, "strength_grid", [](const Json& x, const std::string& field) {
      if (!x.is_number()) throw InputError("field '" + field + "' must be a number");
      return x.get<double>();
    });
  }
  cfg.tuning_prompts = f.count("tuning_prompts", cfg.tuning_prompts);
  if (const Json* v = f.get("steal_order")) {
    if (!(v->is_string() && v->get<std::string>() == "auto")) {
      cfg.steal_order = Fields::as_count(*v, "steal_order");
    }
  }
  cfg.pseudo_count = f.real("pseudo_count", cfg.pseudo_count);
  cfg.min_bucket_count = f.real("min_bucket_count", cfg.min_bucket_count);
  cfg.forge_temperature = f.real("forge_temperature", cfg.forge_temperature);
  cfg.oracle_clusters = f.flag("oracle_clusters", cfg.oracle_clusters);
  {
    const std::string feat = f.text("cluster_features", "token-frequency");
    if (feat == "token-frequency") {
      cfg.cluster_features = ClusterFeatures::TokenFrequency;
    } else if (feat == "transition-signature") {
      cfg.cluster_features = ClusterFeatures::TransitionSignature;
    } else {
      throw InputError("cluster_features must be 'token-frequency' or 'transition-signature'");
    }
  }
  cfg.cluster_iters = f.count("cluster_iters", cfg.cluster_iters);
  cfg.top_k_dims = f.count("top_k_dims", cfg.top_k_dims);
  if (const Json* v = f.get("r_hat")) cfg.r_hat = Fields::as_count(*v, "r_hat");
  if (const Json* v = f.get("model_alpha")) {
    if (!v->is_number()) throw InputError("field 'model_alpha' must be a number");
    cfg.model_alpha = v->get<double>();
  }
  cfg.model_beta = f.real("model_beta", cfg.model_beta);
  cfg.n_fnr = f.count("n_fnr", cfg.n_fnr);
  cfg.n_null_texts = f.count("n_null_texts", cfg.n_null_texts);
  {
    const std::string ci = f.text("ci", "normal");
    if (ci == "normal") {
      cfg.ci = CiMethod::Normal;
    } else if (ci == "wilson") {
      cfg.ci = CiMethod::Wilson;
    } else {
      throw InputError("ci must be 'normal' or 'wilson'");
    }
  }
  cfg.threads = f.count("threads", cfg.threads);
  f.finish();
  cfg.validate();
  return cfg;
}

ExperimentConfig load_experiment_config(const std::filesystem::path& path) {
  return experiment_from_json(load_config_file(path), path.parent_path());
}

Json experiment_to_json(const ExperimentConfig& cfg) {
  Json j;
  j["seeds"] = cfg.seeds;
  j["lm"] = lm_to_json(cfg.lm);
  if (cfg.surrogate_lm) j["surrogate_lm"] = lm_to_json(*cfg.surrogate_lm);
  Json variants = Json::array();
  for (auto v : cfg.variants) variants.push_back(std::string(to_string(v)));
  j["variants"] = variants;
  j["mixed"] = cfg.mixed;
  j["single_variant_cells"] = cfg.single_variant_cells;
  j["r"] = cfg.r;
  j["gamma"] = cfg.gamma;
  j["delta"] = cfg.delta;
  j["ignore_repeated"] = cfg.ignore_repeated;
  j["alpha_fw"] = cfg.alpha_fw;
  j["calibration"] = cfg.calibration == CalibrationMode::Analytic ? "analytic" : "empirical";
  j["n_null"] = cfg.n_null;
  j["N_grid"] = cfg.N_grid;
  j["n_forgeries"] = cfg.n_forgeries;
  j["length"] = cfg.length;
  j["prompt_len"] = cfg.prompt_len;
  j["temperature"] = cfg.temperature;
  j["attacker"] = std::string(to_string(cfg.attacker));
  j["strength_grid"] = cfg.strength_grid;
  j["tuning_prompts"] = cfg.tuning_prompts;
  j["steal_order"] = cfg.steal_order ? Json(*cfg.steal_order) : Json("auto");
  j["pseudo_count"] = cfg.pseudo_count;
  j["min_bucket_count"] = cfg.min_bucket_count;
  j["forge_temperature"] = cfg.forge_temperature;
  j["oracle_clusters"] = cfg.oracle_clusters;
  j["cluster_features"] = std::string(features_name(cfg.cluster_features));
  j["cluster_iters"] = cfg.cluster_iters;
  j["top_k_dims"] = cfg.top_k_dims;
  if (cfg.r_hat) j["r_hat"] = *cfg.r_hat;
  if (cfg.model_alpha) j["model_alpha"] = *cfg.model_alpha;
  j["model_beta"] = cfg.model_beta;
  j["n_fnr"] = cfg.n_fnr;
  j["n_null_texts"] = cfg.n_null_texts;
  j["ci"] = cfg.ci == CiMethod::Normal ? "normal" : "wilson";
  return j;
}

std::uint64_t config_hash(const ExperimentConfig& cfg) {
  // threads is a scheduling knob and never changes results, so it is left out.
  const std::string canon = experiment_to_json(cfg).dump();
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : canon) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

Json scheme_to_json(const SchemeConfig& s) {
  Json j;
  j["variant"] = std::string(to_string(s.variant));
  j["gamma"] = s.gamma;
  j["delta"] = s.delta;
  j["ignore_repeated"] = s.ignore_repeated;
  return j;
}

SchemeConfig scheme_from_json(const Json& j) {
  Fields f(j, "scheme");
  const std::string variant = f.text("variant", "");
  if (variant.empty()) throw InputError("field 'scheme.variant' is required");
  SchemeConfig base;
  const double gamma = f.real("gamma", base.gamma);
  const double delta = f.real("delta", base.delta);
  const bool dedup = f.flag("ignore_repeated", base.ignore_repeated);
  f.get("h");
  f.get("self_seeding");
  f.finish();
  auto s = SchemeConfig::make(parse_variant(variant), gamma, delta);
  s.ignore_repeated = dedup;
  if (const auto it = j.find("h"); it != j.end() && Fields::as_count(*it, "scheme.h") != s.h) {
    throw InputError("scheme.h does not match the variant");
  }
  if (const auto it = j.find("self_seeding"); it != j.end() && it->get<bool>() != s.self_seeding) {
    throw InputError("scheme.self_seeding does not match the variant");
  }
  return s;
}

Ensemble KeyFile::ensemble() const {
  if (schemes.size() == 1) return Ensemble::uniform(schemes.front(), keys);
  return Ensemble::mixed(schemes, keys);
}

Json key_file_to_json(const KeyFile& kf) {
  Json j;
  Json keys = Json::array();
  for (const auto& k : kf.keys.keys) keys.push_back(k.seed);
  j["keys"] = keys;
  if (kf.schemes.size() == 1) {
    j["scheme"] = scheme_to_json(kf.schemes.front());
  } else {
    Json arr = Json::array();
    for (const auto& s : kf.schemes) arr.push_back(scheme_to_json(s));
    j["schemes"] = arr;
  }
  return j;
}

KeyFile key_file_from_json(const Json& j) {
  Fields f(j, "");
  KeyFile kf;
  const Json* keys = f.get("keys");
  if (!keys || !keys->is_array()) throw InputError("key file needs a 'keys' array");
  for (std::size_t i = 0; i < keys->size(); ++i) {
    kf.keys.keys.push_back(WatermarkKey{u64_from_json((*keys)[i], "keys[" + std::to_string(i) + "]")});
  }
  kf.keys.validate();
  const Json* one = f.get("scheme");
  const Json* many = f.get("schemes");
  f.finish();
  if (one && many) throw InputError("key file has both 'scheme' and 'schemes'");
  if (one) {
    kf.schemes.push_back(scheme_from_json(*one));
  } else if (many && many->is_array() && !many->empty()) {
    for (const auto& s : *many) kf.schemes.push_back(scheme_from_json(s));
  } else {
    throw InputError("key file needs 'scheme' or a non-empty 'schemes' array");
  }
  return kf;
}

KeyFile read_key_file(const std::filesystem::path& path) {
  const std::string text = read_text(path);
  try {
    return key_file_from_json(Json::parse(text));
  } catch (const Json::exception& e) {
    throw InputError(path.string() + ": " + e.what());
  }
}

std::string_view to_string(DecisionKind k) {
  switch (k) {
    case DecisionKind::Unwatermarked: return "Unwatermarked";
    case DecisionKind::Genuine: return "Genuine";
    case DecisionKind::Forged: return "Forged";
  }
  return "unknown";
}

Json report_to_json(const DetectionReport& rep) {
  Json j;
  j["z"] = rep.z;
  Json ind = Json::array();
  for (bool b : rep.indicators) ind.push_back(b);
  j["indicators"] = ind;
  j["gap"] = rep.gap ? Json(*rep.gap) : Json(nullptr);
  j["decision"] = std::string(to_string(rep.decision.kind));
  if (rep.decision.kind == DecisionKind::Genuine) j["member"] = rep.decision.member;
  j["tau"] = rep.tau;
  return j;
}

}  // namespace mkwm
