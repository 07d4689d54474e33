// Copyright 2026 The tomt Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <cmath>

#include "tomt/error.hpp"
#include "tomt/rewards.hpp"

using namespace tomt;

namespace {

RewardModel thanks_model() {
  RewardModel r;
  r.rules = {{"thanks", 1.0}};
  return r;
}

}  // namespace

TEST_CASE("reward rules add once per match and clamp") {
  RewardModel r;
  r.rules = {{"", 0.1}, {"a", 0.5}, {"b", -0.3}};
  CHECK(r.score("") == doctest::Approx(0.1));
  CHECK(r.score("aaa") == doctest::Approx(0.6));
  CHECK(r.score("ab") == doctest::Approx(0.3));
  r.length_penalty = 0.05;
  CHECK(r.score("ab") == doctest::Approx(0.2));
  r.rules = {{"x", 5.0}};
  r.length_penalty = 0.0;
  CHECK(r.score("x") == 1.0);
  r.rules = {{"x", -5.0}};
  CHECK(r.score("x") == -1.0);
}

TEST_CASE("reward of an action ignores special tokens and needs <eom>") {
  const auto r = thanks_model();
  const StateView s{"a", "b", {tok::kBos}};
  auto action = message_tokens("thanks");
  CHECK(r.reward(s, action) == 1.0);
  action.insert(action.begin() + 2, tok::kSelf);
  CHECK(r.reward(s, action) == 1.0);
  const std::vector<TokenId> open{'t'};
  CHECK_THROWS_AS(r.reward(s, open), std::invalid_argument);
}

TEST_CASE("reward model JSON round trip") {
  RewardModel r;
  r.rules = {{"", 0.25}, {"ok", -0.5}};
  r.length_penalty = 0.02;
  const nlohmann::json j = r;
  CHECK(j.get<RewardModel>() == r);
}

TEST_CASE("gated learning rate is max(0, R) * eta") {
  CHECK(gated_learning_rate(0.5, 0.1) == doctest::Approx(0.05));
  CHECK(gated_learning_rate(-0.5, 0.1) == 0.0);
  CHECK(gated_learning_rate(0.0, 0.1) == 0.0);
  CHECK_THROWS_AS(gated_learning_rate(1.0, 0.0), std::invalid_argument);
}

TEST_CASE("commonality estimator scores with the learner's own model") {
  const CommonalityEstimator est(thanks_model());
  const StateView s{"partner", "me", {tok::kBos}};
  CHECK(est.estimate(s, message_tokens("thanks a lot")) == 1.0);
  CHECK(est.estimate(s, message_tokens("no")) == 0.0);
  CHECK(ConstantEstimator(0.3).estimate(s, message_tokens("no")) == 0.3);
}

TEST_CASE("kindness objective matches a brute-force discounted sum") {
  // Three speakers with distinct rewards; compared against a direct
  // enumeration over (individual, round).
  std::vector<Message> log{{"a", "xx", 0}, {"b", "y", 0}, {"c", "xy", 0}, {"a", "y", 1},
                           {"b", "xx", 1}, {"c", "", 1},  {"a", "x", 2},  {"b", "yy", 2}};
  std::map<std::string, RewardModel> rewards;
  rewards["a"].rules = {{"x", 0.5}};
  rewards["b"].rules = {{"y", 0.7}, {"", -0.1}};
  rewards["c"].rules = {{"x", 0.2}, {"y", 0.3}};
  rewards["c"].length_penalty = 0.01;

  auto brute = [&](const std::set<std::string>& who, double gamma, int t, int horizon) {
    double total = 0.0;
    for (int k = t; k < horizon; ++k) {
      for (const auto& j : who) {
        for (const auto& m : log) {
          if (m.speaker == j && m.index == k) total += rewards.at(j).score(m.text) * std::pow(gamma, k - t);
        }
      }
    }
    return total;
  };

  for (double gamma : {0.5, 0.9, 0.99}) {
    for (int t = 0; t < 3; ++t) {
      KindnessParams p;
      p.gamma = gamma;
      CHECK(kindness_objective(log, rewards, p, t) == doctest::Approx(brute({"a", "b", "c"}, gamma, t, 3)));
      p.known_individuals = {"b"};
      CHECK(kindness_objective(log, rewards, p, t) == doctest::Approx(brute({"b"}, gamma, t, 3)));
    }
  }
}

TEST_CASE("kindness horizon is exclusive") {
  std::vector<Message> log{{"a", "x", 0}, {"b", "x", 0}, {"a", "x", 1}, {"b", "x", 1}};
  std::map<std::string, RewardModel> rewards;
  rewards["a"].rules = {{"x", 1.0}};
  rewards["b"].rules = {{"x", 1.0}};
  KindnessParams p;
  p.gamma = 0.5;
  p.horizon = 1;
  CHECK(kindness_objective(log, rewards, p, 0) == doctest::Approx(2.0));
  p.horizon.reset();
  CHECK(kindness_objective(log, rewards, p, 0) == doctest::Approx(3.0));
  CHECK_THROWS_AS(kindness_objective(log, rewards, p, 2), std::invalid_argument);
}

TEST_CASE("kindness objective validates its inputs") {
  std::vector<Message> log{{"a", "x", 0}, {"b", "x", 0}};
  std::map<std::string, RewardModel> rewards{{"a", {}}};
  KindnessParams p;
  CHECK_THROWS_AS(kindness_objective(log, rewards, p, 0), std::invalid_argument);
  rewards["b"] = {};
  p.gamma = 1.0;
  CHECK_THROWS_AS(kindness_objective(log, rewards, p, 0), ConfigError);
  p.gamma = 0.9;
  p.horizon = 0;
  CHECK_THROWS_AS(kindness_objective(log, rewards, p, 0), ConfigError);
}
