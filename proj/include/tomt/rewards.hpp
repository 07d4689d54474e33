// Copyright 2026 The tomt Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "tomt/conversation.hpp"

namespace tomt {

struct RewardRule {
  std::string pattern;  // byte substring; "" matches every message
  double weight = 0.0;

  bool operator==(const RewardRule&) const = default;
};

/// Scripted reward: each rule whose pattern occurs in the message adds its
/// weight once, minus `length_penalty` per byte, clamped to [-1, 1].
struct RewardModel {
  std::vector<RewardRule> rules;
  double length_penalty = 0.0;

  double score(std::string_view text) const;
  /// `action` must end with <eom>; special tokens before it are ignored.
  double reward(const StateView& state, std::span<const TokenId> action) const;

  bool operator==(const RewardModel&) const = default;
};

void to_json(nlohmann::json& j, const RewardModel& r);
void from_json(const nlohmann::json& j, RewardModel& r);

/// max(0, reward) * eta. Throws std::invalid_argument unless eta > 0.
double gated_learning_rate(double reward, double eta);

/// Estimate of a partner's reward for one of their messages.
class TargetRewardEstimator {
 public:
  virtual ~TargetRewardEstimator() = default;
  virtual double estimate(const StateView& target_state, std::span<const TokenId> target_action) const = 0;
};

/// Assumes the partner values what we value: switch to our own viewpoint and
/// score with our own reward model.
class CommonalityEstimator final : public TargetRewardEstimator {
 public:
  explicit CommonalityEstimator(RewardModel self) : self_(std::move(self)) {}
  double estimate(const StateView& target_state, std::span<const TokenId> target_action) const override;

 private:
  RewardModel self_;
};

class ConstantEstimator final : public TargetRewardEstimator {
 public:
  explicit ConstantEstimator(double value) : value_(value) {}
  double estimate(const StateView&, std::span<const TokenId>) const override { return value_; }

 private:
  double value_;
};

struct KindnessParams {
  double gamma = 0.9;
  /// Empty: everyone who speaks in the log.
  std::set<std::string> known_individuals;
  /// Rounds [t, horizon) are scored. Unset: the log's round count.
  std::optional<int> horizon;

  void validate() const;
};

/// Sum over known individuals j and rounds k in [t, horizon) of
/// R_j(message of j in round k) * gamma^(k - t), on the realized log.
/// Accepts any number of speakers; `messages` carry their round in `index`.
double kindness_objective(std::span<const Message> messages, const std::map<std::string, RewardModel>& rewards,
                          const KindnessParams& params, int t);

double kindness_objective(const Conversation& conv, const std::map<std::string, RewardModel>& rewards,
                          const KindnessParams& params, int t);

}  // namespace tomt
