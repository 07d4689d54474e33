// Copyright 2026 The tomt Authors
// SPDX-License-Identifier: Apache-2.0

#include "tomt/rewards.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "tomt/error.hpp"

namespace tomt {

double RewardModel::score(std::string_view text) const {
  double total = 0.0;
  for (const auto& rule : rules) {
    if (text.find(rule.pattern) != std::string_view::npos) total += rule.weight;
  }
  total -= length_penalty * static_cast<double>(text.size());
  return std::clamp(total, -1.0, 1.0);
}

double RewardModel::reward(const StateView&, std::span<const TokenId> action) const {
  if (action.empty() || action.back() != tok::kEom) {
    throw std::invalid_argument("reward: action must be a complete message ending with <eom>");
  }
  std::string text;
  for (TokenId t : action) {
    if (tok::is_byte(t)) text.push_back(static_cast<char>(static_cast<unsigned char>(t)));
  }
  return score(text);
}

void to_json(nlohmann::json& j, const RewardModel& r) {
  j = nlohmann::json::object();
  auto rules = nlohmann::json::array();
  for (const auto& rule : r.rules) rules.push_back({{"pattern", rule.pattern}, {"weight", rule.weight}});
  j["rules"] = std::move(rules);
  j["length_penalty"] = r.length_penalty;
}

void from_json(const nlohmann::json& j, RewardModel& r) {
  r = {};
  for (const auto& rule : j.value("rules", nlohmann::json::array())) {
    r.rules.push_back({rule.at("pattern").get<std::string>(), rule.at("weight").get<double>()});
  }
  r.length_penalty = j.value("length_penalty", 0.0);
}

double gated_learning_rate(double reward, double eta) {
  if (!(eta > 0.0)) throw std::invalid_argument("gated_learning_rate: eta must be positive");
  return std::max(0.0, reward) * eta;
}

double CommonalityEstimator::estimate(const StateView& target_state, std::span<const TokenId> target_action) const {
  return self_.reward(perspective_switch(target_state), target_action);
}

void KindnessParams::validate() const {
  if (!(gamma > 0.0 && gamma < 1.0)) throw ConfigError("kindness: gamma must lie in (0, 1)");
  if (horizon && *horizon < 1) throw ConfigError("kindness: horizon must be >= 1");
}

double kindness_objective(std::span<const Message> messages, const std::map<std::string, RewardModel>& rewards,
                          const KindnessParams& params, int t) {
  params.validate();
  std::set<std::string> known = params.known_individuals;
  int rounds = 0;
  for (const auto& m : messages) {
    if (params.known_individuals.empty()) known.insert(m.speaker);
    rounds = std::max(rounds, m.index + 1);
  }
  const int horizon = params.horizon.value_or(rounds);
  if (t < 0 || t >= horizon) {
    throw std::invalid_argument("kindness_objective: t=" + std::to_string(t) + " must lie in [0, horizon=" +
                                std::to_string(horizon) + ")");
  }
  for (const auto& who : known) {
    if (!rewards.count(who)) throw std::invalid_argument("kindness_objective: no reward model for '" + who + "'");
  }
  double total = 0.0;
  for (const auto& m : messages) {
    if (m.index < t || m.index >= horizon || !known.count(m.speaker)) continue;
    total += rewards.at(m.speaker).score(m.text) * std::pow(params.gamma, m.index - t);
  }
  return total;
}

double kindness_objective(const Conversation& conv, const std::map<std::string, RewardModel>& rewards,
                          const KindnessParams& params, int t) {
  return kindness_objective(std::span<const Message>(conv.messages), rewards, params, t);
}

}  // namespace tomt
