// Copyright 2026 The tomt Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <cmath>
#include <vector>

#include "tomt/error.hpp"
#include "tomt/model.hpp"

using namespace tomt;

namespace {

ModelConfig small_config() {
  ModelConfig c;
  c.max_seq_len = 24;
  c.seed = 9;
  return c;
}

std::vector<TokenId> random_tokens(Rng& rng, std::size_t n) {
  std::vector<TokenId> out(n);
  for (auto& t : out) t = static_cast<TokenId>(rng.below(tok::kVocabSize));
  return out;
}

}  // namespace

TEST_CASE("module tags parse from names and letters") {
  CHECK(parse_module_tag("B") == ModuleTag::Behavior);
  CHECK(parse_module_tag("P") == ModuleTag::Prediction);
  CHECK(parse_module_tag("C") == ModuleTag::Perception);
  CHECK(parse_module_tag("Perception") == ModuleTag::Perception);
  CHECK_THROWS_AS(parse_module_tag("X"), ConfigError);
}

TEST_CASE("default head layout has one head per module at minimum") {
  const auto layout = default_head_layout(4);
  REQUIRE(layout.size() == 4);
  CHECK(std::count(layout.begin(), layout.end(), ModuleTag::Behavior) == 1);
  CHECK(std::count(layout.begin(), layout.end(), ModuleTag::Prediction) == 1);
  CHECK(std::count(layout.begin(), layout.end(), ModuleTag::Perception) == 2);
  CHECK_THROWS_AS(default_head_layout(2), ConfigError);
}

TEST_CASE("model config validation rejects inconsistent shapes") {
  auto c = small_config();
  CHECK_NOTHROW(c.validate());
  c.d_model = 30;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = small_config();
  c.head_tags = {{ModuleTag::Behavior, ModuleTag::Behavior, ModuleTag::Prediction, ModuleTag::Prediction}};
  CHECK_THROWS_AS(c.validate(), ConfigError);  // no Perception head
  c.head_tags = {{ModuleTag::Behavior, ModuleTag::Shared, ModuleTag::Prediction, ModuleTag::Perception}};
  CHECK_THROWS_AS(c.validate(), ConfigError);
}

TEST_CASE("model config JSON round trip keeps every head tag") {
  auto c = small_config();
  c.head_tags = {{ModuleTag::Perception, ModuleTag::Behavior, ModuleTag::Prediction, ModuleTag::Perception},
                 {ModuleTag::Prediction, ModuleTag::Perception, ModuleTag::Behavior, ModuleTag::Perception}};
  const nlohmann::json j = c;
  const auto back = j.get<ModelConfig>();
  CHECK(back.resolved_head_tags() == c.resolved_head_tags());
  CHECK(back.d_model == c.d_model);
  CHECK(back.max_seq_len == c.max_seq_len);
}

TEST_CASE("initialisation is a pure function of the seed") {
  const Model a(small_config());
  const Model b(small_config());
  auto other = small_config();
  other.seed = 10;
  const Model c(other);
  REQUIRE(a.parameters().size() == b.parameters().size());
  bool all_equal = true, any_differs = false;
  for (std::size_t i = 0; i < a.parameters().size(); ++i) {
    const auto x = a.parameters()[i].tensor.data();
    const auto y = b.parameters()[i].tensor.data();
    const auto z = c.parameters()[i].tensor.data();
    all_equal = all_equal && std::equal(x.begin(), x.end(), y.begin());
    any_differs = any_differs || !std::equal(x.begin(), x.end(), z.begin());
  }
  CHECK(all_equal);
  CHECK(any_differs);
}

TEST_CASE("every attention head parameter carries its head's tag") {
  const Model m(small_config());
  const auto tags = m.config().resolved_head_tags();
  std::size_t head_params = 0;
  for (const auto& p : m.parameters()) {
    if (p.tag == ModuleTag::Shared) continue;
    ++head_params;
  }
  CHECK(head_params == 4u * 4u * 2u + 2u);  // wq wk wv wo per head, two unembeddings
  for (auto tag : {ModuleTag::Behavior, ModuleTag::Prediction, ModuleTag::Perception}) {
    CHECK_FALSE(m.module_parameters(tag).empty());
  }
  CHECK(m.parameter("unembed.behavior").tag == ModuleTag::Behavior);
  CHECK(m.parameter("unembed.prediction").tag == ModuleTag::Prediction);
  CHECK(tags.size() == 2);
}

TEST_CASE("forward is causal: a later token never changes earlier logits") {
  const Model m(small_config());
  Rng rng(4);
  auto tokens = random_tokens(rng, 12);
  const auto before = m.forward(tokens);
  tokens[8] = (tokens[8] + 1) % tok::kVocabSize;
  const auto after = m.forward(tokens);
  const auto v = static_cast<std::size_t>(tok::kVocabSize);
  for (std::size_t pos = 0; pos < 8; ++pos) {
    for (std::size_t k = 0; k < v; ++k) {
      CHECK(before.behavior.data()[pos * v + k] == after.behavior.data()[pos * v + k]);
      CHECK(before.prediction.data()[pos * v + k] == after.prediction.data()[pos * v + k]);
    }
  }
  bool changed = false;
  for (std::size_t k = 0; k < v; ++k) changed = changed || before.behavior.data()[8 * v + k] != after.behavior.data()[8 * v + k];
  CHECK(changed);
}

TEST_CASE("forward rejects overlong input and unknown ids") {
  const Model m(small_config());
  std::vector<TokenId> too_long(25, 1);
  CHECK_THROWS_AS(m.forward(too_long), std::out_of_range);
  std::vector<TokenId> bad{tok::kBos, tok::kVocabSize};
  CHECK_THROWS_AS(m.forward(bad), std::out_of_range);
}

TEST_CASE("next-token log-probabilities normalise") {
  const Model m(small_config());
  const std::vector<TokenId> ctx{tok::kBos, tok::kSelf, 'h', 'i'};
  for (auto stream : {Stream::Behavior, Stream::Prediction}) {
    const auto lp = next_token_log_probs(m, ctx, stream);
    REQUIRE(lp.size() == tok::kVocabSize);
    double total = 0.0;
    for (double x : lp) total += std::exp(x);
    CHECK(total == doctest::Approx(1.0).epsilon(1e-9));
  }
}

TEST_CASE("generation stops at max_new or the end of the window") {
  const Model m(small_config());
  Rng rng(1);
  const std::vector<TokenId> ctx{tok::kBos, tok::kSelf};
  const auto u = generate(m, ctx, Stream::Behavior, {5, 1.0}, rng);
  CHECK(u.tokens.size() <= 5);
  CHECK(u.ended == (!u.tokens.empty() && u.tokens.back() == tok::kEom));
  CHECK(u.provenance == Provenance::Acted);
  const auto sim = generate(m, ctx, Stream::Prediction, {5, 1.0}, rng);
  CHECK(sim.provenance == Provenance::Simulated);

  std::vector<TokenId> nearly_full(22, 'a');
  const auto w = generate(m, nearly_full, Stream::Behavior, {16, 1.0}, rng);
  CHECK(w.tokens.size() <= 2);
  CHECK_THROWS_AS(generate(m, ctx, Stream::Behavior, {0, 1.0}, rng), std::invalid_argument);
}

TEST_CASE("greedy generation is deterministic and sampling follows the rng") {
  const Model m(small_config());
  const std::vector<TokenId> ctx{tok::kBos, tok::kSelf, 'x'};
  Rng r1(5), r2(99);
  CHECK(generate(m, ctx, Stream::Behavior, {6, 0.0}, r1).tokens ==
        generate(m, ctx, Stream::Behavior, {6, 0.0}, r2).tokens);
  Rng s1(7), s2(7);
  CHECK(generate(m, ctx, Stream::Behavior, {6, 1.0}, s1).tokens ==
        generate(m, ctx, Stream::Behavior, {6, 1.0}, s2).tokens);
}

TEST_CASE("copies are deep") {
  Model a(small_config());
  Model b = a;
  b.parameters()[0].tensor.leaf_values()[0] += 1.0f;
  CHECK(a.parameters()[0].tensor.data()[0] != b.parameters()[0].tensor.data()[0]);
}
