// Copyright 2026 The tomt Authors
// SPDX-License-Identifier: Apache-2.0
//
// tomt command-line driver. Exit codes: 0 success, 1 usage or config error,
// 2 runtime or property failure.

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <spdlog/sinks/stdout_sinks.h>
#include <spdlog/spdlog.h>

#include "tomt/checkpoint.hpp"
#include "tomt/error.hpp"
#include "tomt/evalsuite.hpp"
#include "tomt/run.hpp"
#include "tomt/selftest.hpp"

namespace {

using namespace tomt;
using json = nlohmann::json;

constexpr int kOk = 0;
constexpr int kUsage = 1;
constexpr int kFailure = 2;

void configure_logging() {
  auto logger = spdlog::stderr_logger_mt("tomt");
  logger->set_pattern("[%l] %v");
  spdlog::set_default_logger(logger);
  const char* env = std::getenv("TOMT_LOG_LEVEL");
  const std::string level = env ? env : "info";
  if (level == "error") {
    spdlog::set_level(spdlog::level::err);
  } else if (level == "info") {
    spdlog::set_level(spdlog::level::info);
  } else if (level == "debug") {
    spdlog::set_level(spdlog::level::debug);
  } else {
    throw ConfigError("TOMT_LOG_LEVEL must be one of error, info, debug (got '" + level + "')");
  }
}

RunConfig load_config(const std::string& path, const std::optional<std::uint64_t>& seed) {
  auto config = load_run_config(path);
  if (seed) {
    config.seed = *seed;
    config.model.seed = *seed;
  }
  return config;
}

std::vector<Conversation> read_corpus(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open corpus '" + path + "'");
  return read_jsonl(in);
}

std::ofstream open_output(const std::string& path, std::ios::openmode mode = std::ios::trunc) {
  std::ofstream out(path, std::ios::out | mode);
  if (!out) throw std::runtime_error("cannot write '" + path + "'");
  return out;
}

// --- gen-corpus -------------------------------------------------------------

struct GenCorpusArgs {
  std::string config, out;
  std::optional<std::uint64_t> seed;
};

int gen_corpus(const GenCorpusArgs& a) {
  const auto config = load_config(a.config, a.seed);
  const auto corpus = generate_corpus(config);
  std::ostringstream buffer;
  write_jsonl(buffer, corpus);
  write_file(a.out, buffer.str());
  spdlog::info("wrote {} conversations to {}", corpus.size(), a.out);
  std::cout << to_hex(sha256(buffer.str())) << "  " << a.out << '\n';
  return kOk;
}

// --- train ------------------------------------------------------------------

struct TrainArgs {
  std::string config, out, corpus, resume, log;
  std::optional<std::uint64_t> seed;
};

int train(const TrainArgs& a) {
  const auto config = load_config(a.config, a.seed);
  const auto corpus = a.corpus.empty() ? generate_corpus(config) : read_corpus(a.corpus);
  std::optional<LoadedCheckpoint> resume;
  if (!a.resume.empty()) {
    resume = load_checkpoint(a.resume);
    spdlog::info("resuming from {} at step {}", a.resume, resume->meta.step);
  }

  std::ofstream log_file;
  std::ostream* metrics = &std::cout;
  if (!a.log.empty()) {
    log_file = open_output(a.log, a.resume.empty() ? std::ios::trunc : std::ios::app);
    metrics = &log_file;
  }
  const CheckpointFn periodic = [&](const Model& model, const CheckpointMeta& meta) {
    const auto path = a.out + ".step" + std::to_string(meta.step);
    save_checkpoint(path, model, meta);
    spdlog::info("checkpoint {}", path);
  };
  spdlog::info("training {} steps over {} conversations", config.total_steps(), corpus.size());
  const auto result = run_schedule(config, corpus, std::move(resume), metrics, periodic);
  save_checkpoint(a.out, result.model, result.meta);
  std::cout.flush();
  spdlog::info("wrote {} (step {}, sha256 {})", a.out, result.meta.step, file_digest(a.out));
  return kOk;
}

// --- eval -------------------------------------------------------------------

const std::vector<std::string> kMetrics{"perplexity", "behavior_perplexity", "imitation_accuracy", "reward_gap",
                                        "kindness"};

struct EvalArgs {
  std::string ckpt, corpus, config, persona, self_reward, split = "all", out;
  std::vector<std::string> metrics{"perplexity"};
  std::optional<std::uint64_t> seed;
};

std::string known_metrics() {
  std::string s;
  for (const auto& m : kMetrics) s += (s.empty() ? "" : ", ") + m;
  return s;
}

int eval(const EvalArgs& a) {
  for (const auto& m : a.metrics) {
    if (std::find(kMetrics.begin(), kMetrics.end(), m) == kMetrics.end()) {
      throw ConfigError("unknown metric '" + m + "'; known metrics: " + known_metrics());
    }
  }
  std::optional<RunConfig> config;
  if (!a.config.empty()) config = load_config(a.config, a.seed);
  auto need_config = [&](const std::string& metric) -> const RunConfig& {
    if (!config) throw ConfigError(metric + " needs --config for reward models");
    return *config;
  };
  const auto loaded = load_checkpoint(a.ckpt);
  const auto digest = file_digest(a.ckpt);
  auto corpus = read_corpus(a.corpus);
  if (a.split == "heldout") {
    corpus = heldout_split(corpus);
  } else if (a.split == "train") {
    corpus = training_split(corpus);
  } else if (a.split != "all") {
    throw ConfigError("--split must be all, train or heldout");
  }

  std::ofstream file;
  std::ostream* out = &std::cout;
  if (!a.out.empty()) {
    file = open_output(a.out);
    out = &file;
  }
  const std::uint64_t seed = a.seed.value_or(config ? config->seed : 0);
  for (const auto& metric : a.metrics) {
    EvalReport r{metric, 0.0, corpus.size(), seed, digest};
    if (metric == "perplexity") {
      r.value = perplexity(loaded.model, corpus, Stream::Prediction);
    } else if (metric == "behavior_perplexity") {
      r.value = perplexity(loaded.model, corpus, Stream::Behavior);
    } else if (metric == "imitation_accuracy") {
      if (a.persona.empty()) throw ConfigError("imitation_accuracy needs --persona");
      r.value = imitation_accuracy(loaded.model, corpus, a.persona);
    } else if (metric == "reward_gap") {
      const auto& c = need_config(metric);
      if (a.self_reward.empty() || !c.rewards.count(a.self_reward)) {
        throw ConfigError("reward_gap needs --self-reward naming a reward model in the config");
      }
      r.value = reward_inference_gap(c.rewards, CommonalityEstimator(c.rewards.at(a.self_reward)), corpus);
    } else if (metric == "kindness") {
      const auto& c = need_config(metric);
      double total = 0.0;
      std::size_t n = 0;
      for (const auto& conv : corpus) {
        if (conv.messages.empty()) continue;
        total += kindness_objective(conv, c.rewards, c.kindness, 0);
        ++n;
      }
      if (n == 0) throw std::invalid_argument("kindness: corpus holds no messages");
      r.value = total / static_cast<double>(n);
      r.n = n;
    }
    *out << to_json_line(r).dump() << '\n';
  }
  return kOk;
}

// --- selftest ---------------------------------------------------------------

struct SelftestArgs {
  std::uint64_t seed = 0;
  bool quick = false;
  std::string fault;
};

int run_selftest(const SelftestArgs& a) {
  selftest::Options options;
  options.seed = a.seed;
  if (a.quick) {
    options.gradient_seeds = 10;
    options.audit_seeds = 2;
    options.property_cases = 100;
  }
  if (a.fault == "prediction-rl") {
    options.inject_prediction_rl = true;
  } else if (!a.fault.empty()) {
    throw ConfigError("unknown fault '" + a.fault + "'");
  }
  bool ok = true;
  for (const auto& o : selftest::run_all(options)) {
    std::cout << (o.pass ? "PASS " : "FAIL ") << o.name << ": " << o.detail << '\n';
    ok = ok && o.pass;
  }
  return ok ? kOk : kFailure;
}

// --- inspect-ckpt -----------------------------------------------------------

int inspect(const std::string& path) {
  const auto loaded = load_checkpoint(path);
  json params = json::array();
  std::size_t total = 0;
  for (const auto& p : loaded.model.parameters()) {
    params.push_back({{"name", p.name}, {"group", p.group}, {"tag", to_string(p.tag)}, {"shape", p.tensor.shape()}});
    total += p.tensor.numel();
  }
  const json report{{"file_sha256", file_digest(path)},
                    {"version", kCheckpointVersion},
                    {"config_digest", to_hex(loaded.meta.config_digest)},
                    {"step", loaded.meta.step},
                    {"baseline", loaded.meta.baseline},
                    {"model", loaded.model.config()},
                    {"parameter_count", total},
                    {"parameters", params}};
  std::cout << report.dump(2) << '\n';
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Three-module transformer with gradient-routed training"};
  app.require_subcommand(1);
  std::optional<std::uint64_t> seed;

  GenCorpusArgs gen;
  auto* gen_cmd = app.add_subcommand("gen-corpus", "Write a synthetic JSONL corpus and print its digest");
  gen_cmd->add_option("--config", gen.config, "Run config (JSON)")->required()->check(CLI::ExistingFile);
  gen_cmd->add_option("--out", gen.out, "Corpus path")->required();
  gen_cmd->add_option("--seed", seed, "Override the root seed");

  TrainArgs tr;
  auto* train_cmd = app.add_subcommand("train", "Run the configured schedule and write a checkpoint");
  train_cmd->add_option("--config", tr.config, "Run config (JSON)")->required()->check(CLI::ExistingFile);
  train_cmd->add_option("--out", tr.out, "Final checkpoint path")->required();
  train_cmd->add_option("--corpus", tr.corpus, "JSONL corpus; generated from the config when omitted");
  train_cmd->add_option("--resume", tr.resume, "Checkpoint to continue from");
  train_cmd->add_option("--log", tr.log, "Metrics JSONL path (default: stdout)");
  train_cmd->add_option("--seed", seed, "Override the root seed");

  EvalArgs ev;
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint; one JSON report per metric");
  eval_cmd->add_option("--ckpt", ev.ckpt, "Checkpoint")->required();
  eval_cmd->add_option("--corpus", ev.corpus, "JSONL corpus")->required();
  eval_cmd->add_option("--metrics", ev.metrics, "Comma-separated: " + known_metrics())->delimiter(',');
  eval_cmd->add_option("--config", ev.config, "Run config with reward models");
  eval_cmd->add_option("--persona", ev.persona, "Persona for imitation_accuracy");
  eval_cmd->add_option("--self-reward", ev.self_reward, "Reward model assumed shared, for reward_gap");
  eval_cmd->add_option("--split", ev.split, "all, train or heldout");
  eval_cmd->add_option("--out", ev.out, "Report path (default: stdout)");
  eval_cmd->add_option("--seed", seed, "Seed recorded in the report");

  SelftestArgs st;
  auto* selftest_cmd = app.add_subcommand("selftest", "Gradient checks, routing audits and perspective properties");
  selftest_cmd->add_option("--seed", st.seed, "Base seed");
  selftest_cmd->add_flag("--quick", st.quick, "Fewer seeds and cases");
  selftest_cmd->add_option("--inject-fault", st.fault)->group("");

  std::string inspect_path;
  auto* inspect_cmd = app.add_subcommand("inspect-ckpt", "Print a checkpoint's header and parameter manifest");
  inspect_cmd->add_option("--ckpt", inspect_path, "Checkpoint")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kOk : kUsage;
  }

  try {
    configure_logging();
    gen.seed = tr.seed = ev.seed = seed;
    if (*gen_cmd) return gen_corpus(gen);
    if (*train_cmd) return train(tr);
    if (*eval_cmd) return eval(ev);
    if (*selftest_cmd) return run_selftest(st);
    if (*inspect_cmd) return inspect(inspect_path);
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kFailure;
  }
  return kUsage;
}
