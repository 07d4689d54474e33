// Copyright 2026 The tomt Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "tomt/conversation.hpp"
#include "tomt/model.hpp"
#include "tomt/rewards.hpp"

namespace tomt {

enum class Algorithm : std::uint8_t { Pretrain, Finetune, Imitate, Kindness };
inline constexpr std::array<Algorithm, 4> kAllAlgorithms{Algorithm::Pretrain, Algorithm::Finetune,
                                                         Algorithm::Imitate, Algorithm::Kindness};

std::string_view to_string(Algorithm a) noexcept;
Algorithm parse_algorithm(std::string_view text);

/// A learning-rate coefficient resolved per step: zero, the base rate, or
/// the reward-gated rate.
enum class Rate : std::uint8_t { Zero, Eta, GatedEta };

struct Coefficient {
  Rate rate = Rate::Zero;
  double sign = 1.0;  // -1 turns descent into ascent on that channel

  double resolve(double eta, double eta_r) const noexcept;
};

/// Per tag: parameter delta = -(nll.resolve * grad_nll + rl.resolve * grad_rl).
struct RoutingRule {
  std::array<Coefficient, kNumTags> nll{};
  std::array<Coefficient, kNumTags> rl{};
};

/// The canonical routing of each algorithm. `behavior_nll_ascent` selects
/// the ascent reading of the gated Behavior term in the kindness update.
RoutingRule routing_for(Algorithm algo, bool behavior_nll_ascent = false);

struct TrainOptions {
  GenerateOptions generation{16, 1.0};
  /// Moving-average baseline: b <- b + baseline_rate * (R - b). 0 disables it.
  double baseline_rate = 0.1;
  bool ppo = false;
  int ppo_epochs = 4;
  double ppo_clip = 0.2;
  bool behavior_nll_ascent = false;
};

void to_json(nlohmann::json& j, const TrainOptions& o);
void from_json(const nlohmann::json& j, TrainOptions& o);

/// Mutable state a run threads through its steps.
struct StepContext {
  std::uint64_t seed = 0;  // sampling for step n comes from Rng::stream(seed, "sampling", n)
  std::uint64_t step = 0;
  double baseline = 0.0;
  TrainOptions options;
  /// Replaces the canonical routing; used to exercise the audit.
  std::optional<RoutingRule> routing_override;
  /// Leave the gradient channels filled after the update.
  bool keep_channels = false;
};

struct TrainStepReport {
  Algorithm algo = Algorithm::Pretrain;
  std::uint64_t step = 0;
  double nll = 0.0;
  double rl_loss = 0.0;
  /// Reward driving the RL channel (finetune, kindness) or the gate (pretrain).
  double reward = 0.0;
  /// Reward fed to the gate (pretrain: the observed message; kindness: own
  /// reward of the predicted reply).
  double gating_reward = 0.0;
  double eta = 0.0;
  double eta_r = 0.0;
  std::array<double, kNumTags> coef_nll{};
  std::array<double, kNumTags> coef_rl{};
  std::array<double, kNumTags> delta_norm{};
  std::array<bool, kNumTags> received_nll{};
  std::array<bool, kNumTags> received_rl{};
  bool skipped = false;
  bool truncated = false;
  std::string event;
  std::vector<TokenId> action;     // acted or imitated tokens
  std::vector<TokenId> predicted;  // kindness: simulated partner reply
};

nlohmann::ordered_json metrics_line(const TrainStepReport& r);

/// An observed message together with its author's view of the history.
struct PretrainSample {
  StateView state;  // viewer == author
  std::vector<TokenId> action;  // ends with <eom>
};

/// The learner's view (viewer != target); the partner's message is the target.
struct ImitationSample {
  StateView state;
  std::string target;
  std::vector<TokenId> action;  // ends with <eom>
};

TrainStepReport pretrain_step(Model& model, const PretrainSample& sample, const RewardModel& reward, double eta,
                              StepContext& ctx);
TrainStepReport finetune_step(Model& model, const StateView& prompt, const RewardModel& reward, double eta,
                              StepContext& ctx);
TrainStepReport imitation_step(Model& model, const ImitationSample& sample, double eta, StepContext& ctx);
/// Mini-batch form: both losses averaged over the batch in order.
TrainStepReport imitation_step(Model& model, std::span<const ImitationSample> batch, double eta, StepContext& ctx);
/// `inferred` must be non-null.
TrainStepReport kindness_step(Model& model, const StateView& prompt, const RewardModel& self_reward,
                              const TargetRewardEstimator* inferred, double eta, StepContext& ctx);

/// Every message of the corpus as a pretraining sample (author's view).
std::vector<PretrainSample> pretrain_samples(std::span<const Conversation> corpus);
/// Every message of `target` as an imitation sample seen by their partner.
std::vector<ImitationSample> imitation_samples(std::span<const Conversation> corpus, const std::string& target);

/// Context for the model's next message: state tokens followed by <spk:SELF>.
std::vector<TokenId> prompt_tokens(const StateView& state);

/// Close an utterance into a message: append <eom> unless already present.
std::vector<TokenId> close_message(std::span<const TokenId> tokens);

}  // namespace tomt
