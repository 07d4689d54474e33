// Copyright 2026 The tomt Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "tomt/conversation.hpp"
#include "tomt/model.hpp"
#include "tomt/rewards.hpp"
#include "tomt/training.hpp"

namespace tomt {

/// exp(mean NLL) of every message token (bytes and <eom>) given its
/// author's view of the history, under one output stream.
/// Throws std::invalid_argument on an empty corpus.
double perplexity(const Model& model, std::span<const Conversation> corpus, Stream stream);

/// Fraction of `persona`'s messages the behavior stream reproduces exactly
/// (greedy, from the persona's own view).
double imitation_accuracy(const Model& model, std::span<const Conversation> corpus, const std::string& persona);

/// Mean |true - inferred| over every message whose author has a true
/// reward model. Throws when no such message exists.
double reward_inference_gap(const std::map<std::string, RewardModel>& true_rewards,
                            const TargetRewardEstimator& inferred, std::span<const Conversation> corpus);

/// The model speaks as `role` (behavior stream, sampled with `options`) and
/// the scripted `partner` answers, for up to `rounds` rounds or until the
/// context window is full. Special tokens inside an utterance are dropped.
Conversation self_play(const Model& model, const std::string& role, const PersonaSpec& partner, int rounds,
                       const GenerateOptions& options, Rng& rng);

/// Fraction of `speaker`'s messages that contain `marker`.
double marker_frequency(std::span<const Conversation> corpus, const std::string& speaker, std::string_view marker);

/// Least-squares slope of ys against 0, 1, 2, ...
double least_squares_slope(std::span<const double> ys);

struct TagAudit {
  bool received_nll = false;
  bool received_rl = false;
  double delta_norm = 0.0;
  /// Least-squares fit of the observed delta onto -grad_nll / -grad_rl.
  double fitted_nll = 0.0;
  double fitted_rl = 0.0;
};

struct AuditResult {
  Algorithm algo = Algorithm::Pretrain;
  std::array<TagAudit, kNumTags> tags{};
  std::vector<std::string> violations;
  TrainStepReport report;

  bool ok() const noexcept { return violations.empty(); }
};

using StepFn = std::function<TrainStepReport(Model&, StepContext&)>;

/// Runs one step with both gradient channels retained and checks the
/// parameter change of every tag against the algorithm's canonical routing.
/// Any deviation is a violation naming tag, channel and parameter group.
AuditResult routing_audit(Algorithm algo, const StepFn& step, Model& model, StepContext& ctx);

struct EvalReport {
  std::string metric;
  double value = 0.0;
  std::size_t n = 0;
  std::uint64_t seed = 0;
  std::string ckpt_digest;
};

nlohmann::ordered_json to_json_line(const EvalReport& r);

}  // namespace tomt
