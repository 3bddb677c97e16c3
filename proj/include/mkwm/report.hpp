#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "mkwm/game.hpp"
#include "mkwm/io.hpp"

namespace mkwm {

inline constexpr const char* kResultsHeader =
    "variant,r,N,attacker,forgery_success,ci_lo,ci_hi,fnr,fpr_fw,seed_count";

// One row per cell, fixed six-decimal rates.
void write_results_csv(std::ostream& out, const std::vector<GameResult>& results);

// Config (canonical), its hash, per-cell and per-seed detail, and when the
// run happened. Key seeds never appear.
Json results_manifest(const ExperimentConfig& cfg, const std::vector<GameResult>& results,
                      const std::string& started_at, double elapsed_seconds);

// Forgery success against r, one line per variant at the largest N.
std::string svg_success_vs_r(const std::vector<GameResult>& results);
// Forgery success against N (log axis), one line per (variant, r).
std::string svg_success_vs_n(const std::vector<GameResult>& results);

// results.csv, manifest.json and, when `svg` is set, success_vs_r.svg and
// success_vs_n.svg under `dir`. Returns the written paths.
std::vector<std::filesystem::path> write_report(const std::filesystem::path& dir,
                                                const ExperimentConfig& cfg,
                                                const std::vector<GameResult>& results,
                                                const std::string& started_at,
                                                double elapsed_seconds, bool svg);

std::string utc_timestamp();

}  // namespace mkwm
