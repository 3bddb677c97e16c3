#pragma once

// File formats: experiment configs (TOML or JSON), key files, detection
// reports and the labeled-corpus sidecar.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"
#include "mkwm/game.hpp"
#include "mkwm/multikey.hpp"

namespace mkwm {

using Json = nlohmann::json;

// Parses TOML or JSON text into a JSON tree. JSON is recognised by a leading
// '{'; anything else goes through the TOML parser.
Json parse_config_text(const std::string& text, const std::string& origin);
Json load_config_file(const std::filesystem::path& path);

// Strict: unknown keys and wrong types raise InputError naming the field.
// Relative counts_source paths resolve against `base_dir`.
LmSpec lm_from_json(const Json& j, const std::filesystem::path& base_dir = {});
Json lm_to_json(const LmSpec& spec);
ExperimentConfig experiment_from_json(const Json& j, const std::filesystem::path& base_dir = {});
ExperimentConfig load_experiment_config(const std::filesystem::path& path);

// Every field, with defaults filled in; object keys are sorted, so the dump is
// canonical.
Json experiment_to_json(const ExperimentConfig& cfg);
// FNV-1a 64 over the canonical dump.
std::uint64_t config_hash(const ExperimentConfig& cfg);
std::string hex64(std::uint64_t v);

Json scheme_to_json(const SchemeConfig& s);
SchemeConfig scheme_from_json(const Json& j);

// {"keys":[u64...], "scheme":{...}} or, for mixed ensembles,
// {"keys":[...], "schemes":[{...}, ...]} with member i using schemes[i % n].
struct KeyFile {
  KeySet keys;
  std::vector<SchemeConfig> schemes;

  Ensemble ensemble() const;
};

Json key_file_to_json(const KeyFile& kf);
KeyFile key_file_from_json(const Json& j);
KeyFile read_key_file(const std::filesystem::path& path);

Json report_to_json(const DetectionReport& rep);
std::string_view to_string(DecisionKind k);

// Unsigned 64-bit value from a JSON number or a decimal / 0x-hex string.
std::uint64_t u64_from_json(const Json& j, const std::string& field);

}  // namespace mkwm
