// Copyright 2026 The loraroute Authors
// SPDX-License-Identifier: Apache-2.0

// loraroute: build backbones, train adapter pools, route, generate and run
// the desk-scale experiments.

#include <charconv>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "loraroute/adapters.hpp"
#include "loraroute/backbone.hpp"
#include "loraroute/engine.hpp"
#include "loraroute/error.hpp"
#include "loraroute/harness/experiments.hpp"
#include "loraroute/harness/synthetic.hpp"
#include "loraroute/harness/trainer.hpp"

namespace fs = std::filesystem;
using namespace loraroute;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitRuntime = 2;

// Problems with the invocation itself, reported with exit code 1.
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::string escape(std::string_view s) {
  std::string out;
  for (char c : s) {
    if (c == '"' || c == '\\') out.push_back('\\');
    out.push_back(c == '\n' ? ' ' : c);
  }
  return out;
}

void diagnose(std::string_view code, std::string_view message) {
  std::cerr << "error code=" << code << " message=\"" << escape(message) << "\"\n";
}

std::vector<Token> parse_tokens(const std::string& arg) {
  std::string text = arg;
  if (!arg.empty() && arg.front() == '@') {
    std::ifstream in(arg.substr(1));
    if (!in) throw Error(ErrorCode::kIo, "cannot open token file " + arg.substr(1));
    std::ostringstream buf;
    buf << in.rdbuf();
    text = buf.str();
  }
  std::vector<Token> tokens;
  std::istringstream words(text);
  std::string w;
  while (words >> w) {
    Token t = 0;
    const auto res = std::from_chars(w.data(), w.data() + w.size(), t);
    if (res.ec != std::errc() || res.ptr != w.data() + w.size()) {
      throw UsageError("malformed token '" + w + "' (expected non-negative integers)");
    }
    tokens.push_back(t);
  }
  if (tokens.empty()) throw UsageError("token input is empty");
  return tokens;
}

template <typename T>
std::vector<T> parse_list(const std::string& csv, const char* what) {
  std::vector<T> out;
  std::istringstream in(csv);
  std::string item;
  while (std::getline(in, item, ',')) {
    T v{};
    const auto res = std::from_chars(item.data(), item.data() + item.size(), v);
    if (item.empty() || res.ec != std::errc() || res.ptr != item.data() + item.size()) {
      throw UsageError(std::string("malformed ") + what + " list entry '" + item + "'");
    }
    out.push_back(v);
  }
  if (out.empty()) throw UsageError(std::string("empty ") + what + " list");
  return out;
}

std::vector<std::string> split_csv(const std::string& csv) {
  std::vector<std::string> out;
  std::istringstream in(csv);
  std::string item;
  while (std::getline(in, item, ',')) out.push_back(item);
  if (out.empty()) throw UsageError("empty value list");
  return out;
}

ModelConfig model_config_from_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kIo, "cannot open model config " + path.string());
  ModelConfig c;
  try {
    const auto j = nlohmann::json::parse(in);
    c.d_model = j.value("d_model", c.d_model);
    c.n_blocks = j.value("n_blocks", c.n_blocks);
    c.n_heads = j.value("n_heads", c.n_heads);
    c.d_ff = j.value("d_ff", c.d_ff);
    c.vocab_size = j.value("vocab_size", c.vocab_size);
    c.max_seq_len = j.value("max_seq_len", c.max_seq_len);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kMalformed, "model config " + path.string() + ": " + e.what());
  }
  return c;
}

struct SignalFlags {
  std::string scoring = "norm";
  std::string token_policy = "last";
  long target_block = -1;

  void attach(CLI::App* cmd) {
    cmd->add_option("--scoring", scoring, "Signal score: norm | entropy")
        ->check(CLI::IsMember({"norm", "l2", "entropy", "inverse_entropy"}));
    cmd->add_option("--token-policy", token_policy, "Scored position: first | last | mean")
        ->check(CLI::IsMember({"first", "last", "mean"}));
    cmd->add_option("--target-block", target_block, "Block whose Q input is probed (default: last)");
  }

  SignalConfig resolve() const {
    SignalConfig c;
    c.scoring = parse_scoring(scoring);
    c.token_policy = parse_token_policy(token_policy);
    if (target_block >= 0) c.target_block = static_cast<std::size_t>(target_block);
    return c;
  }
};

struct PoolFiles {
  std::string model;
  std::string pool;

  void attach(CLI::App* cmd) {
    cmd->add_option("--model", model, "Backbone file")->required();
    cmd->add_option("--pool", pool, "Pool manifest")->required();
  }
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Per-input LoRA selection and merging on a desk-scale decoder"};
  app.require_subcommand(1);

  // init-model
  auto* init = app.add_subcommand("init-model", "Create a seeded backbone file");
  std::string init_config;
  std::uint64_t init_seed = 7;
  std::string init_out;
  init->add_option("--config", init_config, "JSON model config (missing fields use defaults)");
  init->add_option("--seed", init_seed, "Weight seed");
  init->add_option("--out", init_out, "Output backbone file")->required();

  // train-adapters
  auto* train = app.add_subcommand("train-adapters", "Train one adapter per synthetic task");
  std::string train_model;
  std::size_t train_tasks = 8;
  harness::ReferenceSetup ref;
  std::uint64_t train_seed = ref.suite_seed;
  std::uint64_t train_init_seed = ref.training.seed;
  std::string train_out;
  train->add_option("--model", train_model, "Backbone file")->required();
  train->add_option("--tasks", train_tasks, "Number of synthetic tasks N")->check(CLI::PositiveNumber);
  train->add_option("--rank", ref.training.rank, "Adapter rank");
  train->add_option("--steps", ref.training.steps, "Optimizer steps per adapter");
  train->add_option("--lr", ref.training.learning_rate, "Learning rate");
  train->add_option("--band-size", ref.band_size, "Tokens per task band");
  train->add_option("--noise", ref.noise, "Filler probability at non-final positions");
  train->add_option("--seed", train_seed, "Task suite seed");
  train->add_option("--train-seed", train_init_seed, "Base seed for adapter initialization and batches");
  train->add_option("--out-dir", train_out, "Directory for adapters, pool.manifest and tasks.json")
      ->required();

  // route
  auto* route = app.add_subcommand("route", "Probe once and print the routing decision");
  PoolFiles route_files;
  SignalFlags route_signal;
  std::string route_input;
  std::size_t route_k = kDefaultTopK;
  bool route_json = false;
  bool route_explain = false;
  route_files.attach(route);
  route->add_option("--input", route_input, "Token ids, whitespace separated, or @file")->required();
  route_signal.attach(route);
  route->add_option("--k", route_k, "Adapters to select")->check(CLI::PositiveNumber);
  route->add_flag("--json", route_json, "Print the decision as JSON");
  route->add_flag("--explain", route_explain, "Also print every adapter's raw score");

  // generate
  auto* gen = app.add_subcommand("generate", "Route, merge and greedily decode");
  PoolFiles gen_files;
  SignalFlags gen_signal;
  std::string gen_input;
  std::size_t gen_k = kDefaultTopK;
  std::size_t gen_max_new = 16;
  std::string gen_merge = "mixture";
  bool gen_timings = false;
  gen_files.attach(gen);
  gen->add_option("--input", gen_input, "Token ids, whitespace separated, or @file")->required();
  gen_signal.attach(gen);
  gen->add_option("--k", gen_k, "Adapters to merge")->check(CLI::PositiveNumber);
  gen->add_option("--max-new", gen_max_new, "Tokens to generate");
  gen->add_option("--merge", gen_merge, "Merge mode: mixture | fusion")
      ->check(CLI::IsMember({"mixture", "fusion"}));
  gen->add_flag("--timings", gen_timings, "Print the route result record with timings");

  // experiment
  auto* exp = app.add_subcommand("experiment", "Run a harness analysis and write its report");
  PoolFiles exp_files;
  SignalFlags exp_signal;
  std::string exp_kind;
  std::string exp_tasks;
  std::string exp_out;
  std::string exp_axis = "token_policy";
  std::string exp_values = "first,last,mean";
  std::string exp_task;
  std::string exp_lengths = "1,10,50,100,200";
  std::size_t exp_k = kDefaultTopK;
  std::string exp_merge = "mixture";
  harness::SampleSpec exp_samples;
  harness::TimingOptions exp_timing;
  exp->add_option("--kind", exp_kind, "heatmap | counts | alignment | ablate | timing")
      ->required()
      ->check(CLI::IsMember({"heatmap", "counts", "alignment", "ablate", "timing"}));
  exp_files.attach(exp);
  exp->add_option("--tasks", exp_tasks, "tasks.json written by train-adapters")->required();
  exp->add_option("--out", exp_out, "Report file (CSV for grids, JSON for alignment/timing)")
      ->required();
  exp_signal.attach(exp);
  exp->add_option("--k", exp_k, "Adapters to select")->check(CLI::PositiveNumber);
  exp->add_option("--merge", exp_merge, "Merge mode: mixture | fusion")
      ->check(CLI::IsMember({"mixture", "fusion"}));
  exp->add_option("--axis", exp_axis, "Ablation axis: token_policy | k | target_block")
      ->check(CLI::IsMember({"token_policy", "k", "target_block"}));
  exp->add_option("--values", exp_values, "Comma-separated ablation values");
  exp->add_option("--task", exp_task, "Task id for counts and timing (default: first task)");
  exp->add_option("--samples", exp_samples.count, "Samples per task")->check(CLI::PositiveNumber);
  exp->add_option("--sample-length", exp_samples.length, "Tokens per sample")
      ->check(CLI::PositiveNumber);
  exp->add_option("--sample-seed", exp_samples.seed, "Sample seed");
  exp->add_option("--lengths", exp_lengths, "Ascending generation lengths for timing");
  exp->add_option("--prompt-length", exp_timing.prompt_length, "Prompt tokens for timing")
      ->check(CLI::PositiveNumber);
  exp->add_option("--repeats", exp_timing.repeats, "Timing repeats (median)")
      ->check(CLI::PositiveNumber);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    diagnose("usage", e.what());
    return kExitUsage;
  }

  try {
    if (*init) {
      const ModelConfig config =
          init_config.empty() ? ModelConfig{} : model_config_from_json(init_config);
      try {
        config.validate();
      } catch (const Error& e) {
        throw UsageError(e.what());
      }
      Backbone::initialize(config, init_seed).save(init_out);
      std::cout << init_out << '\n';
    } else if (*train) {
      const Backbone backbone = Backbone::load(train_model);
      const ModelConfig& mc = backbone.config();
      if (ref.training.rank == 0 || ref.training.rank > mc.d_model) {
        throw UsageError("--rank must be in [1, d_model=" + std::to_string(mc.d_model) + "]");
      }
      if (ref.training.steps == 0) throw UsageError("--steps must be >= 1");
      if (train_tasks * ref.band_size > mc.vocab_size) {
        throw UsageError("--tasks x --band-size exceeds the vocabulary");
      }
      const harness::TaskSuite suite = harness::make_task_suite(
          train_tasks, ref.band_size, mc.vocab_size, ref.noise, train_seed);
      fs::create_directories(train_out);
      ref.training.seed = train_init_seed;
      AdapterPool pool(mc);
      harness::train_suite_into(pool, backbone, suite, ref.training);
      std::vector<fs::path> files;
      for (const auto& adapter : pool.snapshot().adapters) {
        const fs::path file = adapter->id() + ".lgad";
        adapter->save(fs::path(train_out) / file);
        files.push_back(file);
      }
      write_manifest(fs::path(train_out) / "pool.manifest", files);
      harness::save_suite(suite, fs::path(train_out) / "tasks.json");
      std::cout << (fs::path(train_out) / "pool.manifest").string() << '\n';
    } else if (*route) {
      const std::vector<Token> tokens = parse_tokens(route_input);
      const Backbone backbone = Backbone::load(route_files.model);
      AdapterPool pool(backbone.config());
      load_manifest_into(pool, route_files.pool);
      const SignalConfig signal = route_signal.resolve();
      const SignalReport report = probe(backbone, pool, tokens, signal);
      const RoutingDecision decision = select_topk(report, route_k);
      if (route_json) {
        nlohmann::json record = decision_to_json(decision);
        if (route_explain) {
          nlohmann::json scores = nlohmann::json::array();
          for (const auto& e : report.entries) scores.push_back({{"id", e.id}, {"score", e.score}});
          record["all_scores"] = std::move(scores);
        }
        std::cout << record.dump() << '\n';
      } else {
        for (std::size_t i = 0; i < decision.selected.size(); ++i) {
          const auto& s = decision.selected[i];
          std::cout << i + 1 << ' ' << s.id << " score=" << s.score << " weight=" << s.weight
                    << '\n';
        }
        if (route_explain) std::cout << format_signal_report(report, false);
      }
    } else if (*gen) {
      const std::vector<Token> tokens = parse_tokens(gen_input);
      const Backbone backbone = Backbone::load(gen_files.model);
      AdapterPool pool(backbone.config());
      load_manifest_into(pool, gen_files.pool);
      EngineConfig config;
      config.signal = gen_signal.resolve();
      config.k = gen_k;
      config.merge_mode = parse_merge_mode(gen_merge);
      const RouteResult result = route_and_generate(backbone, pool, tokens, config, gen_max_new);
      for (std::size_t i = 0; i < result.output_tokens.size(); ++i) {
        std::cout << (i ? " " : "") << result.output_tokens[i];
      }
      std::cout << '\n';
      if (gen_timings) std::cout << route_result_to_json(result, true).dump() << '\n';
    } else if (*exp) {
      const Backbone backbone = Backbone::load(exp_files.model);
      AdapterPool pool(backbone.config());
      load_manifest_into(pool, exp_files.pool);
      const harness::TaskSuite suite = harness::load_suite(exp_tasks);
      if (suite.tasks.empty()) throw Error(ErrorCode::kEmptyInput, "task file lists no tasks");
      const harness::SyntheticTask& task = exp_task.empty() ? suite.tasks.front() : suite.find(exp_task);
      EngineConfig config;
      config.signal = exp_signal.resolve();
      config.k = exp_k;
      config.merge_mode = parse_merge_mode(exp_merge);
      harness::ExperimentReport report;
      if (exp_kind == "heatmap") {
        report = harness::signal_heatmap(backbone, pool, suite.tasks, config.signal, exp_samples);
        report.metadata["diagonal_max_fraction"] = harness::diagonal_max_fraction(report, pool);
      } else if (exp_kind == "counts") {
        report = harness::selection_counts(backbone, pool, task, config, exp_samples);
      } else if (exp_kind == "alignment") {
        report = harness::alignment_analysis(backbone, pool, suite, suite.tasks, config, exp_samples);
      } else if (exp_kind == "ablate") {
        const std::vector<std::string> values = split_csv(exp_values);
        harness::AblationAxis axis{};
        try {
          axis = harness::parse_ablation_axis(exp_axis);
          report = harness::ablate(backbone, pool, suite.tasks, config, axis, values, exp_samples);
        } catch (const Error& e) {
          if (e.code() == ErrorCode::kInvalidArgument) throw UsageError(e.what());
          throw;
        }
      } else {
        const std::vector<std::size_t> lengths = parse_list<std::size_t>(exp_lengths, "length");
        report = harness::timing_sweep(backbone, pool, task, lengths, config, exp_timing);
      }
      harness::write_report(report, exp_out);
      std::cout << exp_out << '\n';
    }
  } catch (const UsageError& e) {
    diagnose("usage", e.what());
    return kExitUsage;
  } catch (const Error& e) {
    diagnose(error_code_name(e.code()), e.what());
    return kExitRuntime;
  } catch (const std::exception& e) {
    diagnose("internal", e.what());
    return kExitRuntime;
  }
  return kExitOk;
}
