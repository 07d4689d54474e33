// Copyright 2026 The tomt Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "tomt/checkpoint.hpp"
#include "tomt/conversation.hpp"
#include "tomt/model.hpp"
#include "tomt/rewards.hpp"
#include "tomt/training.hpp"

namespace tomt {

struct PhaseSpec {
  Algorithm algo = Algorithm::Pretrain;
  int steps = 0;
  double eta = 0.01;
  /// Linear decay target reached on the phase's last step; defaults to eta.
  std::optional<double> eta_final;
  /// Reward model scoring observed messages (pretrain), the model's own
  /// actions (finetune) or serving as its own reward (kindness).
  std::string reward;
  /// Imitate: the participant to imitate. Kindness: the partner whose
  /// reward is inferred (optional filter on prompts).
  std::string target;
  /// Finetune / kindness: the participant the model speaks as. Defaults to
  /// the opener.
  std::string role;
  int batch = 1;  // imitate only

  double eta_at(int step_in_phase) const;
};

/// Everything a training run depends on. Parsed from JSON; unknown keys are
/// rejected so typos do not silently fall back to defaults.
struct RunConfig {
  std::uint64_t seed = 0;
  ModelConfig model;
  std::vector<PersonaSpec> personas;
  OpenerSpec opener;
  int conversations = 0;
  int turns = 0;
  std::map<std::string, RewardModel> rewards;
  KindnessParams kindness;
  TrainOptions training;
  std::vector<PhaseSpec> schedule;
  int checkpoint_every = 0;

  /// Structural checks that need no corpus. Throws ConfigError.
  void validate() const;
  std::uint64_t total_steps() const;
  Digest digest() const;
};

void to_json(nlohmann::json& j, const RunConfig& c);
RunConfig parse_run_config(const nlohmann::json& j);
RunConfig load_run_config(const std::filesystem::path& path);

std::vector<Conversation> generate_corpus(const RunConfig& config);

/// Conversations outside the held-out split.
std::vector<Conversation> training_split(std::span<const Conversation> corpus);
std::vector<Conversation> heldout_split(std::span<const Conversation> corpus);

/// States from `role`'s side right before each of `role`'s messages, in
/// conversations that also include `partner` when it is non-empty. States
/// that leave fewer than `room` free positions are dropped.
std::vector<StateView> speaking_prompts(std::span<const Conversation> corpus, const std::string& role,
                                        const std::string& partner, std::size_t max_seq_len, std::size_t room);

struct RunResult {
  Model model;
  CheckpointMeta meta;
};

using CheckpointFn = std::function<void(const Model&, const CheckpointMeta&)>;

/// Executes the schedule. With `resume`, the first resume->meta.step global
/// steps are skipped and state continues from the checkpoint. Each step's
/// metrics line goes to `metrics` when non-null. Corpus/schedule mismatches
/// throw ConfigError before the first step.
RunResult run_schedule(const RunConfig& config, std::span<const Conversation> corpus,
                       std::optional<LoadedCheckpoint> resume, std::ostream* metrics,
                       const CheckpointFn& on_checkpoint = {});

}  // namespace tomt
