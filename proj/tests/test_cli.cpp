#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "json.hpp"

namespace fs = std::filesystem;

namespace {

struct RunResult {
  int code = -1;
  std::string out;
};

// Runs the CLI with stderr discarded; stdout is captured.
RunResult run(const std::string& args, const std::string& env = "") {
  const std::string cmd = env + " " + std::string(MKWM_CLI_PATH) + " " + args + " 2>/dev/null";
  RunResult r;
  FILE* pipe = ::popen(cmd.c_str(), "r");
  if (!pipe) return r;
  char buf[4096];
  std::size_t n;
  while ((n = std::fread(buf, 1, sizeof(buf), pipe)) > 0) r.out.append(buf, n);
  const int status = ::pclose(pipe);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

std::string stderr_of(const std::string& args) {
  const std::string cmd = std::string(MKWM_CLI_PATH) + " " + args + " 2>&1 >/dev/null";
  std::string out;
  FILE* pipe = ::popen(cmd.c_str(), "r");
  char buf[4096];
  std::size_t n;
  while ((n = std::fread(buf, 1, sizeof(buf), pipe)) > 0) out.append(buf, n);
  ::pclose(pipe);
  return out;
}

std::vector<std::string> lines(const std::string& s) {
  std::vector<std::string> out;
  std::istringstream in(s);
  for (std::string l; std::getline(in, l);) out.push_back(l);
  return out;
}

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           ("mkwm_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }
  std::string path(const std::string& name) const { return (dir_ / name).string(); }
  fs::path dir_;
};

std::string config(const std::string& name) { return (fs::path(MKWM_CONFIG_DIR) / name).string(); }

}  // namespace

TEST_F(Cli, HelpAndUsageErrors) {
  EXPECT_EQ(run("--help").code, 0);
  EXPECT_EQ(run("").code, 2);
  EXPECT_EQ(run("frobnicate").code, 2);
  EXPECT_EQ(run("keygen --out x.json").code, 2);
  EXPECT_EQ(run("keygen --r 0 --out -").code, 2);
  EXPECT_EQ(run("theory --fn nope").code, 2);
  EXPECT_EQ(run("simulate --config /nonexistent/config.toml").code, 2);
}

TEST_F(Cli, KeygenDeterministic) {
  const auto a = run("keygen --r 4 --seed 9 --out -");
  const auto b = run("keygen --r 4 --seed 9 --out -");
  ASSERT_EQ(a.code, 0);
  EXPECT_EQ(a.out, b.out);
  const auto j = nlohmann::json::parse(a.out);
  EXPECT_EQ(j["keys"].size(), 4u);
  EXPECT_EQ(j["scheme"]["variant"], "soft");
  EXPECT_NE(run("keygen --r 4 --seed 10 --out -").out, a.out);

  ASSERT_EQ(run("keygen --r 2 --out " + path("k.json")).code, 0);
  EXPECT_EQ(run("keygen --r 2 --out " + path("k.json")).code, 2);
  EXPECT_EQ(run("keygen --r 2 --force --out " + path("k.json")).code, 0);
}

TEST_F(Cli, KeygenMixed) {
  const auto r = run("keygen --r 3 --scheme soft --scheme unigram --out -");
  ASSERT_EQ(r.code, 0);
  const auto j = nlohmann::json::parse(r.out);
  EXPECT_EQ(j["schemes"].size(), 2u);
  EXPECT_EQ(run("keygen --r 3 --scheme purple --out -").code, 1);
}

TEST_F(Cli, TheoryValues) {
  auto r = run("theory --fn blind-bound --r 4");
  ASSERT_EQ(r.code, 0);
  EXPECT_NEAR(std::stod(r.out), 0.421875, 1e-9);
  r = run("theory --fn sidak --alpha-fw 0.01 --r 4");
  EXPECT_NEAR(std::stod(r.out), 0.0025094, 1e-6);
  r = run("theory --fn tau --alpha-fw 0.01 --r 1");
  EXPECT_NEAR(std::stod(r.out), 2.3263, 1e-3);
  r = run("theory --fn blind-success --r 4 --alpha 0.25");
  EXPECT_NEAR(std::stod(r.out), 0.421875, 1e-9);
  r = run("theory --fn normal-cdf --x 0");
  EXPECT_NEAR(std::stod(r.out), 0.5, 1e-12);
  EXPECT_EQ(run("theory --fn blind-success --r 4").code, 2);
  EXPECT_EQ(run("theory --fn fnr-bound --r 4").code, 2);
  EXPECT_EQ(run("theory --fn normal-quantile --p 1.5").code, 1);
}

TEST_F(Cli, GenerateDetectRoundTrip) {
  ASSERT_EQ(run("keygen --r 4 --seed 3 --scheme unigram --out " + path("keys.json")).code, 0);
  ASSERT_EQ(run("generate --keys " + path("keys.json") + " --n 6 --length 200 --seed 5 --out " +
                path("wm.txt") + " --labels " + path("labels.jsonl"))
                .code,
            0);
  const auto labels = lines(std::ifstream(path("labels.jsonl")) ? [&] {
    std::ifstream in(path("labels.jsonl"));
    return std::string(std::istreambuf_iterator<char>(in), {});
  }() : std::string());
  ASSERT_EQ(labels.size(), 6u);

  const auto det = run("detect --keys " + path("keys.json") + " --input " + path("wm.txt"));
  ASSERT_EQ(det.code, 0);
  const auto reports = lines(det.out);
  ASSERT_EQ(reports.size(), 6u);
  for (std::size_t i = 0; i < 6; ++i) {
    const auto rep = nlohmann::json::parse(reports[i]);
    const auto lab = nlohmann::json::parse(labels[i]);
    EXPECT_EQ(rep["decision"], "Genuine") << reports[i];
    EXPECT_EQ(rep["member"], lab["key_index"]);
    EXPECT_EQ(rep["z"].size(), 4u);
  }

  ASSERT_EQ(run("generate --n 4 --length 200 --seed 6 --out " + path("plain.txt")).code, 0);
  const auto null = run("detect --keys " + path("keys.json") + " --input " + path("plain.txt"));
  ASSERT_EQ(null.code, 0);
  for (const auto& l : lines(null.out)) {
    EXPECT_EQ(nlohmann::json::parse(l)["decision"], "Unwatermarked") << l;
  }
}

TEST_F(Cli, DetectRejectsBadInput) {
  ASSERT_EQ(run("keygen --r 2 --out " + path("keys.json")).code, 0);
  {
    std::ofstream bad(path("bad.txt"));
    bad << "1 2 3 4 5 6 7 8 9 10\n1 2 3 4 5 6 7 8 9 99999\n";
  }
  EXPECT_EQ(run("detect --keys " + path("keys.json") + " --input " + path("bad.txt")).code, 1);
  EXPECT_NE(stderr_of("detect --keys " + path("keys.json") + " --input " + path("bad.txt")).find("text 2"),
            std::string::npos);
  {
    std::ofstream keys(path("broken.json"));
    keys << "{\"keys\": [1,";
  }
  EXPECT_EQ(run("detect --keys " + path("broken.json") + " --input " + path("bad.txt")).code, 1);
}

TEST_F(Cli, CalibrateAnalytic) {
  const auto r = run("calibrate --r 4 --alpha-fw 0.01");
  ASSERT_EQ(r.code, 0);
  const auto j = nlohmann::json::parse(r.out);
  EXPECT_NEAR(j["alpha"].get<double>(), 0.0025094, 1e-6);
  EXPECT_NEAR(j["tau"].get<double>(), 2.8058207606684467, 1e-6);
}

TEST_F(Cli, StealForgeCluster) {
  ASSERT_EQ(run("keygen --r 2 --seed 1 --scheme unigram --out " + path("keys.json")).code, 0);
  ASSERT_EQ(run("generate --keys " + path("keys.json") + " --n 40 --length 128 --seed 2 --out " +
                path("wm.txt") + " --labels " + path("labels.jsonl"))
                .code,
            0);
  ASSERT_EQ(run("attack steal --input " + path("wm.txt") + " --out " + path("sig.bin")).code, 0);
  EXPECT_TRUE(fs::exists(path("sig.bin")));
  const auto forged = run("attack forge --signal " + path("sig.bin") + " --n 3 --length 50 --seed 4");
  ASSERT_EQ(forged.code, 0);
  EXPECT_EQ(lines(forged.out).size(), 3u);
  const auto cl = run("attack cluster --input " + path("wm.txt") + " --r-hat 2 --oracle-labels " +
                      path("labels.jsonl"));
  ASSERT_EQ(cl.code, 0);
  EXPECT_FALSE(cl.out.empty());
  EXPECT_EQ(run("attack forge --signal " + path("wm.txt")).code, 1);
}

TEST_F(Cli, SimulateWritesCsvAndManifest) {
  {
    std::ofstream cfg(path("tiny.toml"));
    cfg << "seeds = [1]\nr = [1, 2]\nN_grid = [20]\nn_forgeries = 4\nlength = 32\n"
           "strength_grid = [4.0]\nn_fnr = 4\nn_null_texts = 4\n";
  }
  const auto r = run("simulate --config " + path("tiny.toml") + " --out " + path("out") + " --svg",
                     "MKWM_THREADS=1");
  ASSERT_EQ(r.code, 0);
  const auto rows = lines(r.out);
  ASSERT_EQ(rows.size(), 9u);
  EXPECT_EQ(rows[0], "variant,r,N,attacker,forgery_success,ci_lo,ci_hi,fnr,fpr_fw,seed_count");
  EXPECT_EQ(rows[1].rfind("soft,1,20,blind-avg,", 0), 0u) << rows[1];
  EXPECT_EQ(rows[8].rfind("unigram,2,20,", 0), 0u) << rows[8];
  EXPECT_TRUE(fs::exists(path("out/results.csv")));
  EXPECT_TRUE(fs::exists(path("out/success_vs_r.svg")));
  std::ifstream mf(path("out/manifest.json"));
  const auto manifest = nlohmann::json::parse(mf);
  EXPECT_EQ(manifest["config_hash"].get<std::string>().size(), 16u);
  EXPECT_EQ(manifest["cells"].size(), 8u);

  const auto again = run("report --manifest " + path("out/manifest.json"));
  ASSERT_EQ(again.code, 0);
  EXPECT_EQ(again.out, r.out);
}

TEST_F(Cli, SimulateDataErrors) {
  {
    std::ofstream cfg(path("bad.toml"));
    cfg << "seeds = [1]\nunknown_knob = 3\n";
  }
  EXPECT_EQ(run("simulate --config " + path("bad.toml")).code, 1);
  {
    std::ofstream cfg(path("ok.toml"));
    cfg << "seeds = [1]\nr = [1]\nvariants = [\"soft\"]\nN_grid = [5]\nn_forgeries = 1\nlength = 8\n";
  }
  EXPECT_EQ(run("simulate --config " + path("ok.toml"), "MKWM_THREADS=zero").code, 1);
}

TEST_F(Cli, SimulateShippedBernoulliConfig) {
  const auto r = run("simulate --config " + config("theorem1.toml"));
  ASSERT_EQ(r.code, 0);
  const auto rows = lines(r.out);
  ASSERT_EQ(rows.size(), 2u);
  EXPECT_NE(rows[1].find("bernoulli-abstract"), std::string::npos);
}
