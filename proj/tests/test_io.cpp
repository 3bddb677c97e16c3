#include <gtest/gtest.h>

#include <filesystem>
#include <functional>
#include <fstream>
#include <sstream>

#include "mkwm/io.hpp"
#include "mkwm/report.hpp"

using namespace mkwm;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("mkwm_test_io_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string expect_input_error(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const InputError& e) {
    return e.what();
  }
  ADD_FAILURE() << "expected InputError";
  return {};
}

GameResult sample_result(const std::string& variant, std::size_t r, std::size_t n, double success) {
  GameResult g;
  g.cell = {variant, r, n};
  g.attacker = "blind-avg";
  g.trials = 100;
  g.genuine = static_cast<std::uint64_t>(success * 100);
  g.forged = 100 - g.genuine;
  g.forgery_success = success;
  g.ci = {success / 2, (1 + success) / 2};
  g.fnr = 0.01;
  g.fpr_fw = 0.005;
  g.per_seed = {SeedOutcome{.seed = 1}, SeedOutcome{.seed = 2}};
  return g;
}

}  // namespace

TEST(Config, TomlAndJsonAgree) {
  const std::string toml = R"(
seeds = [3, 4]
variants = ["soft", "unigram"]
r = [1, 4]
N_grid = [100]
n_forgeries = 7
attacker = "adaptive-cluster"
steal_order = 2
ci = "wilson"

[lm]
vocab = 512
order = 1
lm_seed = "0x10"
)";
  const std::string json = R"({"seeds":[3,4],"variants":["soft","unigram"],"r":[1,4],"N_grid":[100],
    "n_forgeries":7,"attacker":"adaptive-cluster","steal_order":2,"ci":"wilson",
    "lm":{"vocab":512,"order":1,"lm_seed":16}})";
  const auto a = experiment_from_json(parse_config_text(toml, "a.toml"));
  const auto b = experiment_from_json(parse_config_text(json, "b.json"));
  EXPECT_EQ(experiment_to_json(a), experiment_to_json(b));
  EXPECT_EQ(config_hash(a), config_hash(b));
  EXPECT_EQ(a.seeds, (std::vector<std::uint64_t>{3, 4}));
  EXPECT_EQ(a.lm.vocab.size(), 512u);
  EXPECT_EQ(a.lm.lm_seed, 16u);
  EXPECT_EQ(a.attacker, AttackerKind::AdaptiveCluster);
  EXPECT_EQ(a.steal_order, std::optional<std::size_t>(2));
  EXPECT_EQ(a.ci, CiMethod::Wilson);
}

TEST(Config, RoundTripThroughCanonicalJson) {
  ExperimentConfig cfg;
  cfg.mixed = true;
  cfg.r_hat = 3;
  cfg.model_alpha = 0.2;
  cfg.calibration = CalibrationMode::Empirical;
  const auto back = experiment_from_json(experiment_to_json(cfg));
  EXPECT_EQ(experiment_to_json(back), experiment_to_json(cfg));
  EXPECT_EQ(config_hash(back), config_hash(cfg));
}

TEST(Config, HashIgnoresThreadsButNotContent) {
  ExperimentConfig a, b;
  b.threads = 7;
  EXPECT_EQ(config_hash(a), config_hash(b));
  b.gamma = 0.5;
  EXPECT_NE(config_hash(a), config_hash(b));
}

TEST(Config, Hex64) {
  EXPECT_EQ(hex64(0), "0000000000000000");
  EXPECT_EQ(hex64(0xdeadbeefULL), "00000000deadbeef");
}

TEST(Config, StrictFields) {
  auto msg = expect_input_error([] { experiment_from_json(parse_config_text("sedes = [1]", "x.toml")); });
  EXPECT_NE(msg.find("sedes"), std::string::npos) << msg;
  msg = expect_input_error([] { experiment_from_json(parse_config_text(R"({"lm":{"vocab":8,"colour":1}})", "x")); });
  EXPECT_NE(msg.find("colour"), std::string::npos) << msg;
  msg = expect_input_error([] { experiment_from_json(parse_config_text(R"({"r":"four"})", "x")); });
  EXPECT_NE(msg.find("r"), std::string::npos) << msg;
  expect_input_error([] { experiment_from_json(parse_config_text(R"({"attacker":"oracle"})", "x")); });
  expect_input_error([] { experiment_from_json(parse_config_text(R"({"ci":"exact"})", "x")); });
  expect_input_error([] { experiment_from_json(parse_config_text(R"({"variants":["purple"]})", "x")); });
  expect_input_error([] { experiment_from_json(parse_config_text(R"({"r":[-1]})", "x")); });
}

TEST(Config, ParseErrorsAreInputErrors) {
  expect_input_error([] { parse_config_text("{\"seeds\": [1,", "broken.json"); });
  const auto msg = expect_input_error([] { parse_config_text("seeds = [1,", "broken.toml"); });
  EXPECT_NE(msg.find("broken.toml"), std::string::npos) << msg;
  expect_input_error([] { load_config_file("/nonexistent/mkwm.toml"); });
}

TEST(Config, CountsSourceResolvesAgainstConfigDir) {
  const auto dir = temp_dir("counts");
  {
    std::ofstream corpus(dir / "corpus.txt");
    corpus << "1 2 3 1 2\n2 3 1\n";
  }
  {
    std::ofstream cfg(dir / "exp.toml");
    cfg << "[lm]\nkind = \"ngram-counts\"\ncounts_source = \"corpus.txt\"\norder = 1\nvocab = 4\n";
  }
  const auto cfg = load_experiment_config(dir / "exp.toml");
  EXPECT_EQ(cfg.lm.kind, LmKind::NgramCounts);
  EXPECT_EQ(cfg.lm.vocab.size(), 4u);
  ASSERT_TRUE(cfg.lm.counts);
  const TokenId ctx[] = {1};
  const auto l = logits(cfg.lm, ctx);
  EXPECT_GT(l[2], l[3]);
  fs::remove_all(dir);
}

TEST(Config, ShippedConfigsLoad) {
  for (const auto& entry : fs::directory_iterator(MKWM_CONFIG_DIR)) {
    SCOPED_TRACE(entry.path().string());
    ExperimentConfig cfg;
    ASSERT_NO_THROW(cfg = load_experiment_config(entry.path()));
    EXPECT_NO_THROW(cfg.validate());
  }
}

TEST(U64, Forms) {
  EXPECT_EQ(u64_from_json(Json(42), "f"), 42u);
  EXPECT_EQ(u64_from_json(Json("18446744073709551615"), "f"), 18446744073709551615ULL);
  EXPECT_EQ(u64_from_json(Json("0xff"), "f"), 255u);
  expect_input_error([] { u64_from_json(Json(-1), "f"); });
  expect_input_error([] { u64_from_json(Json("12abc"), "f"); });
  expect_input_error([] { u64_from_json(Json(1.5), "f"); });
}

TEST(Scheme, RoundTrip) {
  for (auto v : {Variant::Soft, Variant::Hard, Variant::SelfHash, Variant::Unigram}) {
    auto s = SchemeConfig::make(v, 0.5, 2.0);
    s.ignore_repeated = false;
    EXPECT_EQ(scheme_from_json(scheme_to_json(s)), s);
  }
  expect_input_error([] { scheme_from_json(Json{{"variant", "soft"}, {"h", 3}}); });
  expect_input_error([] { scheme_from_json(Json{{"variant", "soft"}, {"gamma", 1.5}}); });
}

TEST(KeyFileFormat, RoundTripSingleAndMixed) {
  KeyFile kf;
  kf.keys.keys = {WatermarkKey{1}, WatermarkKey{0xffffffffffffffffULL}, WatermarkKey{3}};
  kf.schemes = {SchemeConfig::make(Variant::SelfHash)};
  auto back = key_file_from_json(key_file_to_json(kf));
  EXPECT_EQ(back.keys.keys, kf.keys.keys);
  EXPECT_EQ(back.schemes, kf.schemes);
  EXPECT_EQ(back.ensemble().size(), 3u);

  kf.schemes = {SchemeConfig::make(Variant::Soft), SchemeConfig::make(Variant::Unigram)};
  back = key_file_from_json(key_file_to_json(kf));
  EXPECT_EQ(back.schemes, kf.schemes);
  const auto ens = back.ensemble();
  EXPECT_EQ(ens.members[2].scheme.variant, Variant::Soft);
  EXPECT_EQ(ens.members[1].scheme.variant, Variant::Unigram);
}

TEST(KeyFileFormat, Rejects) {
  expect_input_error([] { key_file_from_json(Json{{"scheme", {{"variant", "soft"}}}}); });
  expect_input_error([] {
    key_file_from_json(Json{{"keys", {1, 1}}, {"scheme", {{"variant", "soft"}}}});
  });
  expect_input_error([] { key_file_from_json(Json{{"keys", {1}}}); });
  expect_input_error([] { read_key_file("/nonexistent/keys.json"); });
}

TEST(ReportJson, Fields) {
  const auto rep = classify({7.97, 0.89}, 2.326);
  auto j = report_to_json(rep);
  EXPECT_EQ(j["decision"], "Genuine");
  EXPECT_EQ(j["member"], 0);
  EXPECT_NEAR(j["gap"].get<double>(), 7.08, 1e-12);
  EXPECT_EQ(j["indicators"], Json({true, false}));
  j = report_to_json(classify({0.5}, 2.326));
  EXPECT_TRUE(j["gap"].is_null());
  EXPECT_EQ(j["decision"], "Unwatermarked");
  EXPECT_FALSE(j.contains("member"));
  EXPECT_EQ(to_string(DecisionKind::Forged), "Forged");
}

TEST(ResultsCsv, HeaderAndRows) {
  std::ostringstream out;
  write_results_csv(out, {sample_result("soft", 2, 1000, 0.25)});
  EXPECT_EQ(out.str(),
            "variant,r,N,attacker,forgery_success,ci_lo,ci_hi,fnr,fpr_fw,seed_count\n"
            "soft,2,1000,blind-avg,0.250000,0.125000,0.625000,0.010000,0.005000,2\n");
}

TEST(Manifest, Contents) {
  ExperimentConfig cfg;
  const auto m = results_manifest(cfg, {sample_result("hard", 1, 10, 0.5)}, "2026-01-01T00:00:00Z", 1.5);
  EXPECT_EQ(m["config_hash"], hex64(config_hash(cfg)));
  EXPECT_EQ(m["config"], experiment_to_json(cfg));
  EXPECT_EQ(m["started_at"], "2026-01-01T00:00:00Z");
  ASSERT_EQ(m["cells"].size(), 1u);
  EXPECT_EQ(m["cells"][0]["variant"], "hard");
  EXPECT_EQ(m["cells"][0]["per_seed"].size(), 2u);
  EXPECT_EQ(m.dump().find("\"keys\""), std::string::npos);
}

TEST(Svg, WellFormed) {
  std::vector<GameResult> rs;
  for (std::size_t r = 1; r <= 4; ++r) {
    rs.push_back(sample_result("soft", r, 100, 1.0 / static_cast<double>(r)));
    rs.push_back(sample_result("soft", r, 1000, 0.5 / static_cast<double>(r)));
  }
  for (const auto& svg : {svg_success_vs_r(rs), svg_success_vs_n(rs)}) {
    EXPECT_EQ(svg.rfind("<svg", 0), 0u);
    EXPECT_NE(svg.find("</svg>"), std::string::npos);
    EXPECT_NE(svg.find("<polyline"), std::string::npos);
    EXPECT_EQ(svg.find("nan"), std::string::npos);
  }
}

TEST(WriteReport, Files) {
  const auto dir = temp_dir("report");
  const auto paths = write_report(dir / "nested", ExperimentConfig{}, {sample_result("soft", 1, 10, 1.0)},
                                  utc_timestamp(), 0.1, true);
  EXPECT_EQ(paths.size(), 4u);
  for (const auto& p : paths) EXPECT_TRUE(fs::exists(p)) << p;
  std::ifstream csv(dir / "nested" / "results.csv");
  std::string header;
  std::getline(csv, header);
  EXPECT_EQ(header, kResultsHeader);
  fs::remove_all(dir);
}

TEST(Timestamp, Iso8601) {
  const auto ts = utc_timestamp();
  ASSERT_EQ(ts.size(), 20u);
  EXPECT_EQ(ts[4], '-');
  EXPECT_EQ(ts[10], 'T');
  EXPECT_EQ(ts.back(), 'Z');
}
