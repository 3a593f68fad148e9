// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>
#include <sys/wait.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "test_util.hpp"

namespace fs = std::filesystem;

namespace {

struct Result {
  int code = -1;
  std::string output;
};

std::string quote(const std::string& s) { return "'" + s + "'"; }

Result run(const std::string& args) {
  const std::string cmd = std::string(MGRU_CLI_PATH) + " " + args + " 2>&1";
  Result r;
  FILE* pipe = popen(cmd.c_str(), "r");
  if (!pipe) return r;
  char buf[4096];
  while (std::size_t n = fread(buf, 1, sizeof buf, pipe)) r.output.append(buf, n);
  const int status = pclose(pipe);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::path(::testing::TempDir()) / ("mgru_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  fs::path write_config(const std::string& name, const std::string& extra_train = "", const std::string& gate = "itoh",
                        const std::string& epochs = "2") {
    const fs::path p = dir_ / name;
    std::ofstream(p) << "output_dir: run_" << p.stem().string() << "\n"
                     << "model:\n  cell: mgruip-ctx\n  layers: 2\n  cells: 8\n  projection: 4\n"
                     << "  bn: {gate: " << gate << ", cell: both}\n  context: \"{1x2; 1x1}\"\n"
                     << "task: {kind: lookahead-classify, frames: 12, dim: 4, classes: 3, lookahead: 1, sequences: 40, seed: 3}\n"
                     << "train: {batch_size: 8, epochs: " << epochs << ", seed: 4" << extra_train << "}\n";
    return p;
  }

  fs::path dir_;
};

}  // namespace

TEST_F(CliTest, LatencyOfReferencePlans) {
  std::string args = "latency --base 70 --frame 10";
  for (const auto& plan : mgru::testing::reference_plans()) args += " " + quote(plan.text);
  const Result r = run(args);
  ASSERT_EQ(r.code, 0) << r.output;
  std::vector<std::string> latencies;
  std::istringstream is(r.output);
  for (std::string line; std::getline(is, line);) {
    const auto pos = line.find("latency: ");
    if (pos != std::string::npos) latencies.push_back(line.substr(pos + 9));
  }
  EXPECT_EQ(latencies, (std::vector<std::string>{"170 ms", "200 ms", "200 ms", "290 ms"}));
}

TEST_F(CliTest, LatencyOfEmptyPlanIsBase) {
  Result r = run("latency");
  EXPECT_NE(r.output.find("latency: 70 ms"), std::string::npos) << r.output;
  r = run("latency ''");
  EXPECT_NE(r.output.find("latency: 70 ms"), std::string::npos) << r.output;
}

TEST_F(CliTest, LatencyGrammarErrorNamesToken) {
  const Result r = run("latency '{0;1x1} {0;1q3}'");
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.output.find("'q'"), std::string::npos) << r.output;
}

TEST_F(CliTest, TrainWritesArtifactsAndIsDeterministic) {
  const fs::path cfg = write_config("a.yaml");
  const Result first = run("train " + quote(cfg.string()));
  ASSERT_EQ(first.code, 0) << first.output;
  const fs::path out = dir_ / "run_a";
  for (const char* f : {"model.ckpt", "metrics.jsonl", "manifest.json"}) EXPECT_TRUE(fs::exists(out / f)) << f;
  const std::string metrics = slurp(out / "metrics.jsonl");
  const std::string ckpt = slurp(out / "model.ckpt");
  const std::string manifest = slurp(out / "manifest.json");
  EXPECT_NE(metrics.find("{\"epoch\":1,\"split\":\"train\",\"loss\":"), std::string::npos) << metrics;
  EXPECT_NE(manifest.find("\"config_sha256\""), std::string::npos);
  EXPECT_NE(manifest.find("\"data_seed\": 3"), std::string::npos) << manifest;
  EXPECT_NE(manifest.find("\"init_seed\": 4"), std::string::npos) << manifest;

  const Result second = run("train " + quote(cfg.string()));
  ASSERT_EQ(second.code, 0);
  EXPECT_EQ(slurp(out / "metrics.jsonl"), metrics);
  EXPECT_EQ(slurp(out / "model.ckpt"), ckpt);
  EXPECT_EQ(slurp(out / "manifest.json"), manifest);

  const Result eval = run("eval --checkpoint " + quote((out / "model.ckpt").string()) + " --config " + quote(cfg.string()));
  ASSERT_EQ(eval.code, 0) << eval.output;
  EXPECT_NE(eval.output.find("\"split\":\"eval\""), std::string::npos) << eval.output;
}

TEST_F(CliTest, InvalidConfigFailsBeforeWritingAnything) {
  const fs::path cfg = dir_ / "bad.yaml";
  {
    std::string text = slurp(write_config("bad.yaml"));
    text.replace(text.find("batch_size: 8"), 13, "batch_size: 1");
    std::ofstream(cfg) << text;
  }
  const Result r = run("train " + quote(cfg.string()));
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.output.find("bad.yaml:10:"), std::string::npos) << r.output;
  EXPECT_NE(r.output.find("batch normalization"), std::string::npos) << r.output;
  EXPECT_FALSE(fs::exists(dir_ / "run_bad"));
}

TEST_F(CliTest, TraceGateWritesOneRowPerFrame) {
  const fs::path cfg = write_config("t.yaml");
  ASSERT_EQ(run("train " + quote(cfg.string())).code, 0);
  const fs::path ckpt = dir_ / "run_t" / "model.ckpt";
  const fs::path csv = dir_ / "trace.csv";
  const Result r = run("trace-gate --checkpoint " + quote(ckpt.string()) + " --config " + quote(cfg.string()) +
                       " --layer 2 --output " + quote(csv.string()));
  ASSERT_EQ(r.code, 0) << r.output;
  std::istringstream is(slurp(csv));
  std::string line;
  std::getline(is, line);
  EXPECT_EQ(line, "t,layer,mean_gate");
  int rows = 0;
  while (std::getline(is, line)) ++rows;
  EXPECT_EQ(rows, 12);

  const Result bad = run("trace-gate --checkpoint " + quote(ckpt.string()) + " --config " + quote(cfg.string()) +
                         " --layer 0");
  EXPECT_EQ(bad.code, 1);
  EXPECT_NE(bad.output.find("outside 1..2"), std::string::npos) << bad.output;
}

TEST_F(CliTest, FreshNormalizedGateTraceStaysNearHalf) {
  const fs::path cfg = write_config("f.yaml", "", "both", "0");
  ASSERT_EQ(run("train " + quote(cfg.string())).code, 0);
  const Result r = run("trace-gate --checkpoint " + quote((dir_ / "run_f" / "model.ckpt").string()) + " --config " +
                       quote(cfg.string()) + " --layer 2");
  ASSERT_EQ(r.code, 0) << r.output;
  std::istringstream is(r.output);
  std::string line;
  std::getline(is, line);
  int rows = 0;
  while (std::getline(is, line)) {
    const double mean = std::stod(line.substr(line.rfind(',') + 1));
    EXPECT_GE(mean, 0.4);
    EXPECT_LE(mean, 0.6);
    ++rows;
  }
  EXPECT_EQ(rows, 12);
}

TEST_F(CliTest, TraceGateRejectsMismatchedTask) {
  const fs::path cfg = write_config("m.yaml");
  ASSERT_EQ(run("train " + quote(cfg.string())).code, 0);
  std::string text = slurp(cfg);
  text.replace(text.find("dim: 4"), 6, "dim: 5");
  std::ofstream(dir_ / "other.yaml") << text;
  const Result r = run("trace-gate --checkpoint " + quote((dir_ / "run_m" / "model.ckpt").string()) + " --config " +
                       quote((dir_ / "other.yaml").string()) + " --layer 1");
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.output.find("input_dim 4"), std::string::npos) << r.output;
}

TEST_F(CliTest, GradcheckSelectedCombination) {
  const Result r = run("gradcheck --cell mgru --bn-gate both --bn-cell itoh");
  EXPECT_EQ(r.code, 0) << r.output;
  EXPECT_NE(r.output.find("ok   mgru gate=both cell=itoh"), std::string::npos) << r.output;
  EXPECT_NE(r.output.find("worst:"), std::string::npos);
}

TEST_F(CliTest, GradcheckFullSweep) {
  const Result r = run("gradcheck --full-model");
  EXPECT_EQ(r.code, 0) << r.output;
  std::istringstream is(r.output);
  int ok = 0;
  for (std::string line; std::getline(is, line);) ok += line.rfind("ok ", 0) == 0;
  EXPECT_EQ(ok, 36);
}

TEST_F(CliTest, GradcheckCorruptedGradientFails) {
  const Result r = run("gradcheck --cell mgruip --bn-gate none --bn-cell both --corrupt-gradient");
  EXPECT_EQ(r.code, 2) << r.output;
  EXPECT_NE(r.output.find("FAIL"), std::string::npos);
}

TEST_F(CliTest, UsageErrors) {
  EXPECT_EQ(run("").code, 1);
  EXPECT_EQ(run("frobnicate").code, 1);
  EXPECT_EQ(run("gradcheck --cell lstm").code, 1);
  EXPECT_EQ(run("train " + quote((dir_ / "missing.yaml").string())).code, 1);
  EXPECT_EQ(run("--help").code, 0);
}
