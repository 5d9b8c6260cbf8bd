// Copyright 2026 The loraroute Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>
#include <sys/wait.h>

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "json.hpp"
#include "loraroute/adapters.hpp"
#include "loraroute/harness/synthetic.hpp"

namespace fs = std::filesystem;

namespace {

struct CliRun {
  int exit_code = -1;
  std::string out;
  std::string err;
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

const fs::path& work_dir() {
  static const fs::path dir = fs::path(LORAROUTE_TEST_WORKDIR) / "cli";
  return dir;
}

CliRun run(const std::string& args) {
  const fs::path out = work_dir() / "stdout.txt";
  const fs::path err = work_dir() / "stderr.txt";
  const std::string cmd = std::string("\"") + LORAROUTE_CLI_PATH + "\" " + args + " >\"" +
                          out.string() + "\" 2>\"" + err.string() + "\"";
  const int status = std::system(cmd.c_str());
  CliRun r;
  r.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.out = slurp(out);
  r.err = slurp(err);
  return r;
}

std::string q(const fs::path& p) { return "\"" + p.string() + "\""; }

// Model and 4-task pool shared by the tests. Rebuilt when the CLI binary is
// newer than the cached artifacts.
class CliTest : public ::testing::Test {
 protected:
  static fs::path model() { return work_dir() / "model.lgbk"; }
  static fs::path pool_dir() { return work_dir() / "pool"; }
  static fs::path manifest() { return pool_dir() / "pool.manifest"; }
  static fs::path tasks() { return pool_dir() / "tasks.json"; }
  static std::string files() { return " --model " + q(model()) + " --pool " + q(manifest()); }

  static void SetUpTestSuite() {
    fs::create_directories(work_dir());
    const fs::path marker = work_dir() / "ready";
    if (fs::exists(marker) && fs::last_write_time(marker) > fs::last_write_time(LORAROUTE_CLI_PATH))
      return;
    ASSERT_EQ(run("init-model --seed 7 --out " + q(model())).exit_code, 0);
    const CliRun t = run("train-adapters --model " + q(model()) + " --tasks 4 --out-dir " + q(pool_dir()));
    ASSERT_EQ(t.exit_code, 0) << t.err;
    std::ofstream(marker) << "ok\n";
  }
};

TEST_F(CliTest, InitModelWritesMagicAndIsReproducible) {
  const fs::path again = work_dir() / "model_again.lgbk";
  ASSERT_EQ(run("init-model --seed 7 --out " + q(again)).exit_code, 0);
  const std::string bytes = slurp(model());
  EXPECT_EQ(bytes.substr(0, 4), "LGBK");
  EXPECT_EQ(bytes, slurp(again));
}

TEST_F(CliTest, InitModelErrors) {
  const CliRun unwritable = run("init-model --out /nonexistent/dir/model.lgbk");
  EXPECT_EQ(unwritable.exit_code, 2);
  EXPECT_EQ(unwritable.err.rfind("error code=io", 0), 0u) << unwritable.err;
  const fs::path cfg = work_dir() / "bad_config.json";
  std::ofstream(cfg) << R"({"d_model": 8, "n_heads": 3})";
  EXPECT_EQ(run("init-model --config " + q(cfg) + " --out " + q(work_dir() / "x.lgbk")).exit_code, 1);
  EXPECT_EQ(run("init-model").exit_code, 1);
}

TEST_F(CliTest, TrainAdaptersWritesFourFilesAndManifest) {
  std::size_t lgad = 0;
  for (const auto& entry : fs::directory_iterator(pool_dir())) {
    if (entry.path().extension() != ".lgad") continue;
    ++lgad;
    EXPECT_EQ(slurp(entry.path()).substr(0, 4), "LGAD");
  }
  EXPECT_EQ(lgad, 4u);
  std::ifstream in(manifest());
  std::size_t lines = 0;
  for (std::string line; std::getline(in, line);) lines += line.empty() ? 0 : 1;
  EXPECT_EQ(lines, 4u);
  EXPECT_EQ(loraroute::read_manifest(manifest()).size(), 4u);
}

TEST_F(CliTest, TrainAdaptersSameSeedSameSet) {
  const fs::path other = work_dir() / "pool_again";
  const CliRun t = run("train-adapters --model " + q(model()) + " --tasks 4 --out-dir " + q(other));
  ASSERT_EQ(t.exit_code, 0) << t.err;
  for (const auto& entry : fs::directory_iterator(pool_dir()))
    EXPECT_EQ(slurp(entry.path()), slurp(other / entry.path().filename())) << entry.path();
}

TEST_F(CliTest, TrainAdaptersUsageErrors) {
  const CliRun big_rank = run("train-adapters --model " + q(model()) + " --rank 65 --out-dir " +
                           q(work_dir() / "never"));
  EXPECT_EQ(big_rank.exit_code, 1);
  EXPECT_EQ(big_rank.err.rfind("error code=usage", 0), 0u) << big_rank.err;
  EXPECT_EQ(run("train-adapters --model " + q(model()) + " --steps 0 --out-dir " +
                q(work_dir() / "never")).exit_code,
            1);
  EXPECT_EQ(run("train-adapters --model " + q(work_dir() / "missing.lgbk") + " --out-dir " +
                q(work_dir() / "never")).exit_code,
            2);
}

TEST_F(CliTest, RouteTopOnePicksGroundTruthAdapter) {
  const auto suite = loraroute::harness::load_suite(tasks());
  std::size_t hits = 0, total = 0;
  for (const auto& task : suite.tasks) {
    for (const auto& s : loraroute::harness::sample_task_set(task, 5, 8, 31)) {
      std::string input;
      for (auto t : s.tokens) input += std::to_string(t) + " ";
      const CliRun r = run("route" + files() + " --k 1 --json --input \"" + input + "\"");
      ASSERT_EQ(r.exit_code, 0) << r.err;
      const auto j = nlohmann::json::parse(r.out);
      ASSERT_EQ(j.at("entries").size(), 1u);
      hits += j.at("entries")[0].at("id") == task.id ? 1 : 0;
      ++total;
    }
  }
  EXPECT_EQ(hits, total);
}

TEST_F(CliTest, RouteScoringSchemaIdentical) {
  const std::string input = " --input \"1 0 1 1 0\" --json --explain --k 3";
  const CliRun norm = run("route" + files() + " --scoring norm" + input);
  const CliRun ent = run("route" + files() + " --scoring entropy" + input);
  ASSERT_EQ(norm.exit_code, 0) << norm.err;
  ASSERT_EQ(ent.exit_code, 0) << ent.err;
  auto a = nlohmann::json::parse(norm.out);
  auto b = nlohmann::json::parse(ent.out);
  EXPECT_EQ(a.at("all_scores").size(), 4u);
  // Blank out score values and scoring name; what remains is the schema.
  const auto strip = [](nlohmann::json& j) {
    j["scoring"] = "";
    for (auto& e : j["entries"]) e["score"] = e["weight"] = e["id"] = 0;
    for (auto& e : j["all_scores"]) e["score"] = 0;
  };
  strip(a);
  strip(b);
  EXPECT_EQ(a, b);
}

TEST_F(CliTest, RouteTextAndFileInput) {
  const fs::path input = work_dir() / "tokens.txt";
  std::ofstream(input) << "2 3 2\n3\n";
  const CliRun r = run("route" + files() + " --k 2 --explain --input @" + input.string());
  ASSERT_EQ(r.exit_code, 0) << r.err;
  EXPECT_EQ(r.out.rfind("1 ", 0), 0u) << r.out;
  EXPECT_NE(r.out.find("signal-report v1"), std::string::npos);
}

TEST_F(CliTest, RouteErrors) {
  EXPECT_EQ(run("route" + files() + " --input \"1 x 2\"").exit_code, 1);
  EXPECT_EQ(run("route" + files() + " --input \"\"").exit_code, 1);
  const fs::path empty = work_dir() / "empty.manifest";
  std::ofstream(empty) << "# nothing here\n";
  const CliRun r = run("route --model " + q(model()) + " --pool " + q(empty) + " --input \"1 2\"");
  EXPECT_EQ(r.exit_code, 2);
  EXPECT_EQ(r.err.rfind("error code=empty_pool", 0), 0u) << r.err;
  EXPECT_EQ(std::count(r.err.begin(), r.err.end(), '\n'), 1);
}

TEST_F(CliTest, GenerateMixtureEqualsFusion) {
  for (const char* prompt : {"0 1 0", "5 4 5 4 4", "2 3"}) {
    const std::string base = "generate" + files() + " --k 3 --max-new 12 --input \"" + prompt + "\"";
    const CliRun mix = run(base + " --merge mixture");
    const CliRun fus = run(base + " --merge fusion");
    ASSERT_EQ(mix.exit_code, 0) << mix.err;
    ASSERT_EQ(fus.exit_code, 0) << fus.err;
    EXPECT_EQ(mix.out, fus.out);
  }
}

TEST_F(CliTest, GenerateEdgeCases) {
  const CliRun none = run("generate" + files() + " --max-new 0 --input \"1 2\"");
  EXPECT_EQ(none.exit_code, 0);
  EXPECT_EQ(none.out, "\n");
  const CliRun wide = run("generate" + files() + " --k 50 --max-new 3 --timings --input \"1 2\"");
  ASSERT_EQ(wide.exit_code, 0) << wide.err;
  const auto record = nlohmann::json::parse(wide.out.substr(wide.out.find('\n') + 1));
  EXPECT_EQ(record.at("entries").size(), 4u);
  EXPECT_EQ(record.at("forward_pass_count"), 4);
  EXPECT_EQ(record.at("timings").at("per_token_ms").size(), 3u);
  const CliRun overflow = run("generate" + files() + " --max-new 256 --input \"1 2\"");
  EXPECT_EQ(overflow.exit_code, 2);
  EXPECT_EQ(overflow.err.rfind("error code=context_overflow", 0), 0u) << overflow.err;
  EXPECT_EQ(run("generate" + files() + " --merge blend --input \"1\"").exit_code, 1);
}

TEST_F(CliTest, ExperimentHeatmapColumnsSpanUnitInterval) {
  const fs::path out = work_dir() / "heatmap.csv";
  const CliRun r = run("experiment --kind heatmap" + files() + " --tasks " + q(tasks()) +
                    " --samples 10 --out " + q(out));
  ASSERT_EQ(r.exit_code, 0) << r.err;
  std::ifstream in(out);
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line.rfind("task,", 0), 0u) << line;
  std::vector<double> lo(4, 1e9), hi(4, -1e9);
  std::size_t rows = 0;
  while (std::getline(in, line)) {
    std::stringstream ss(line);
    std::string cell;
    std::getline(ss, cell, ',');
    for (std::size_t c = 0; c < 4 && std::getline(ss, cell, ','); ++c) {
      lo[c] = std::min(lo[c], std::stod(cell));
      hi[c] = std::max(hi[c], std::stod(cell));
    }
    ++rows;
  }
  EXPECT_EQ(rows, 4u);
  for (std::size_t c = 0; c < 4; ++c) {
    EXPECT_EQ(lo[c], 0.0);
    EXPECT_EQ(hi[c], 1.0);
  }
}

TEST_F(CliTest, ExperimentAblateKThreeRows) {
  const fs::path out = work_dir() / "ablate.csv";
  const CliRun r = run("experiment --kind ablate --axis k --values 1,3,5" + files() + " --tasks " +
                    q(tasks()) + " --samples 5 --out " + q(out));
  ASSERT_EQ(r.exit_code, 0) << r.err;
  std::ifstream in(out);
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, "k,accuracy_pct");
  std::size_t rows = 0;
  while (std::getline(in, line)) ++rows;
  EXPECT_EQ(rows, 3u);
}

TEST_F(CliTest, ExperimentOtherKindsAndReproducibility) {
  const std::string common = files() + " --tasks " + q(tasks()) + " --samples 5";
  const fs::path counts = work_dir() / "counts.csv";
  ASSERT_EQ(run("experiment --kind counts --k 2" + common + " --out " + q(counts)).exit_code, 0);
  const std::string first = slurp(counts);
  ASSERT_EQ(run("experiment --kind counts --k 2" + common + " --out " + q(counts)).exit_code, 0);
  EXPECT_EQ(first, slurp(counts));
  const fs::path align = work_dir() / "align.json";
  ASSERT_EQ(run("experiment --kind alignment --k 3" + common + " --out " + q(align)).exit_code, 0);
  const auto aj = nlohmann::json::parse(slurp(align));
  EXPECT_EQ(aj.at("kind"), "alignment");
  const fs::path timing = work_dir() / "timing.json";
  const CliRun t = run("experiment --kind timing --lengths 1,4 --repeats 1" + common + " --out " + q(timing));
  ASSERT_EQ(t.exit_code, 0) << t.err;
  EXPECT_TRUE(nlohmann::json::parse(slurp(timing)).at("metadata").contains("amortized"));
}

TEST_F(CliTest, ExperimentUsageErrors) {
  const std::string common = files() + " --tasks " + q(tasks()) + " --out " + q(work_dir() / "x.csv");
  EXPECT_EQ(run("experiment --kind histogram" + common).exit_code, 1);
  EXPECT_EQ(run("experiment --kind ablate --axis depth --values 1" + common).exit_code, 1);
  EXPECT_EQ(run("experiment --kind timing --lengths 1,500" + common).exit_code, 2);
}

TEST(CliHelp, EverySubcommandDocumentsItsFlags) {
  fs::create_directories(work_dir());
  const std::vector<std::pair<std::string, std::vector<std::string>>> expected = {
      {"init-model", {"--config", "--seed", "--out"}},
      {"train-adapters", {"--model", "--tasks", "--rank", "--steps", "--seed", "--out-dir"}},
      {"route", {"--model", "--pool", "--input", "--scoring", "--k", "--json", "--explain"}},
      {"generate", {"--model", "--pool", "--input", "--k", "--max-new", "--merge", "--timings"}},
      {"experiment", {"--kind", "--axis", "--values", "--out"}},
  };
  for (const auto& [sub, flags] : expected) {
    const CliRun r = run(sub + " --help");
    EXPECT_EQ(r.exit_code, 0) << sub;
    for (const auto& f : flags) EXPECT_NE(r.out.find(f), std::string::npos) << sub << " " << f;
  }
  EXPECT_EQ(run("--help").exit_code, 0);
  EXPECT_EQ(run("no-such-command").exit_code, 1);
}

}  // namespace
