// Copyright 2026 The tomt Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <sstream>

#include "tomt/conversation.hpp"
#include "tomt/error.hpp"
#include "tomt/selftest.hpp"

using namespace tomt;

namespace {

Conversation two_rounds() {
  Conversation c;
  c.id = "c0";
  c.participants = {"user", "bot"};
  c.messages = {{"user", "hi", 0}, {"bot", "yo", 0}, {"user", "a", 1}, {"bot", "b", 1}};
  return c;
}

// Hand-assembled token stream for an oracle independent of build_state.
std::vector<TokenId> msg(TokenId speaker, std::string_view text) {
  std::vector<TokenId> out{speaker};
  for (unsigned char ch : text) out.push_back(ch);
  out.push_back(tok::kEom);
  return out;
}

std::vector<TokenId> concat(std::initializer_list<std::vector<TokenId>> parts) {
  std::vector<TokenId> out{tok::kBos};
  for (const auto& p : parts) out.insert(out.end(), p.begin(), p.end());
  return out;
}

}  // namespace

TEST_CASE("tokenizer round-trips bytes and rejects specials") {
  const std::string text("a\0\xff z", 5);
  CHECK(detokenize(tokenize(text)) == text);
  const std::vector<TokenId> with_eom{'a', tok::kEom};
  CHECK_THROWS_AS(detokenize(with_eom), std::invalid_argument);
  CHECK(render_tokens(std::vector<TokenId>{tok::kBos, 'o', tok::kSelf}) == "<bos>o<spk:SELF>");
  CHECK(message_tokens("ab") == std::vector<TokenId>{'a', 'b', tok::kEom});
}

TEST_CASE("state tokens mark the viewer's own messages") {
  const auto c = two_rounds();
  const auto user = build_state(c, "user", 1);
  CHECK(user.viewer == "user");
  CHECK(user.other == "bot");
  CHECK(user.tokens == concat({msg(tok::kSelf, "hi"), msg(tok::kOther, "yo")}));
  const auto bot = build_state(c, "bot", 2);
  CHECK(bot.tokens == concat({msg(tok::kOther, "hi"), msg(tok::kSelf, "yo"), msg(tok::kOther, "a"),
                              msg(tok::kSelf, "b")}));
  CHECK(build_state(c, "bot", 0).tokens == std::vector<TokenId>{tok::kBos});
  CHECK_NOTHROW(check_well_formed(bot));
  CHECK_THROWS_AS(build_state(c, "bot", 3), std::out_of_range);
  CHECK_THROWS_AS(build_state(c, "eve", 1), std::invalid_argument);
}

TEST_CASE("perspective switch swaps speaker tokens and roles") {
  const auto c = two_rounds();
  const auto user = build_state(c, "user", 2);
  const auto switched = perspective_switch(user);
  CHECK(switched == build_state(c, "bot", 2));
  CHECK(perspective_switch(switched) == user);
}

TEST_CASE("append_action hands the state to the responder") {
  const auto c = two_rounds();
  const auto user = build_state_at(c, "user", 0);
  const auto next = append_action(user, message_tokens("hi"));
  CHECK(next == build_state_at(c, "bot", 1));
  const std::vector<TokenId> open{'x'};
  CHECK_THROWS_AS(append_action(user, open), std::invalid_argument);
}

TEST_CASE("well-formedness check catches broken streams") {
  StateView s{"a", "b", {tok::kBos, 'x', tok::kEom}};
  CHECK_THROWS_AS(check_well_formed(s), std::invalid_argument);
  s.tokens = {tok::kBos, tok::kSelf, 'x'};
  CHECK_THROWS_AS(check_well_formed(s), std::invalid_argument);
  s.tokens = {'x'};
  CHECK_THROWS_AS(check_well_formed(s), std::invalid_argument);
}

TEST_CASE("conversation validation enforces alternation and rounds") {
  auto c = two_rounds();
  CHECK_NOTHROW(c.validate());
  c.messages[1].speaker = "user";
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  c = two_rounds();
  c.messages[2].index = 0;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  CHECK(two_rounds().rounds() == 2);
}

TEST_CASE("scripted personas reply deterministically") {
  const PersonaSpec echo{"e", PersonaKind::Echo};
  const PersonaSpec polite{"p", PersonaKind::Polite};
  const PersonaSpec grateful{"g", PersonaKind::Grateful};
  const PersonaSpec reverse{"r", PersonaKind::Reverse};
  CHECK(persona_reply(echo, "cat") == "cat");
  CHECK(persona_reply(polite, "cat") == "cat please");
  CHECK(persona_reply(grateful, "cat please") == "thanks");
  CHECK(persona_reply(grateful, "cat") == "ok");
  CHECK(persona_reply(reverse, "cat") == "tac");
  CHECK(parse_persona_kind("grateful") == PersonaKind::Grateful);
  CHECK_THROWS_AS(parse_persona_kind("rude"), ConfigError);
}

TEST_CASE("corpus generation is seeded and alternates") {
  const std::vector<PersonaSpec> personas{{"echo", PersonaKind::Echo}, {"rev", PersonaKind::Reverse}};
  const auto a = generate_corpus(personas, OpenerSpec{}, 20, 3, 17);
  const auto b = generate_corpus(personas, OpenerSpec{}, 20, 3, 17);
  const auto other = generate_corpus(personas, OpenerSpec{}, 20, 3, 18);
  CHECK(a == b);
  CHECK(a != other);
  REQUIRE(a.size() == 20);
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK_NOTHROW(a[i].validate());
    CHECK(a[i].messages.size() == 6);
    CHECK(a[i].participants[1] == personas[i % 2].name);
    for (std::size_t n = 1; n < a[i].messages.size(); n += 2) {
      CHECK(a[i].messages[n].text == persona_reply(personas[i % 2], a[i].messages[n - 1].text));
    }
  }
  CHECK(generate_corpus(personas, OpenerSpec{}, 0, 3, 1).empty());
  const std::vector<PersonaSpec> clash{{"user", PersonaKind::Echo}};
  CHECK_THROWS_AS(generate_corpus(clash, OpenerSpec{}, 1, 1, 1), ConfigError);
}

TEST_CASE("opener suffix appears at roughly the configured rate") {
  OpenerSpec opener;
  opener.suffix_probability = 0.3;
  Rng rng(2);
  int hits = 0;
  const int n = 4000;
  for (int i = 0; i < n; ++i) hits += opener_message(opener, rng).ends_with(" please") ? 1 : 0;
  // Binomial(4000, 0.3): sd ~ 29.
  CHECK(std::abs(hits - 1200) < 150);
}

TEST_CASE("held-out membership is a stable function of the id") {
  int held = 0;
  for (int i = 0; i < 2000; ++i) {
    const auto id = "c" + std::to_string(i);
    CHECK(is_heldout(id) == is_heldout(id));
    held += is_heldout(id) ? 1 : 0;
  }
  CHECK(held > 120);
  CHECK(held < 290);
}

TEST_CASE("JSONL round trip preserves the corpus bytewise") {
  Rng rng(11);
  std::vector<Conversation> corpus;
  for (int i = 0; i < 30; ++i) {
    auto c = selftest::random_conversation(rng);
    c.id = "k" + std::to_string(i);
    if (c.messages.size() >= 2) corpus.push_back(std::move(c));
  }
  // Random text may hold invalid UTF-8; keep the printable ones for JSON.
  for (auto& c : corpus) {
    for (auto& m : c.messages) {
      for (auto& ch : m.text) ch = static_cast<char>('a' + static_cast<unsigned char>(ch) % 26);
    }
  }
  std::stringstream ss;
  write_jsonl(ss, corpus);
  const auto text = ss.str();
  std::istringstream in(text);
  const auto back = read_jsonl(in);
  CHECK(back == corpus);
  std::stringstream again;
  write_jsonl(again, back);
  CHECK(again.str() == text);
}

TEST_CASE("JSONL reader names the offending line") {
  auto parse = [](const std::string& text) {
    std::istringstream in(text);
    return read_jsonl(in);
  };
  const std::string good =
      R"({"cid":"a","turn":0,"speaker":"u","text":"hi"})" "\n" R"({"cid":"a","turn":1,"speaker":"b","text":"hi"})" "\n";
  CHECK(parse(good).size() == 1);
  CHECK(parse("\n   \n").empty());
  CHECK_THROWS_WITH_AS(parse(good + "{not json\n"), doctest::Contains("line 3"), FormatError);
  CHECK_THROWS_WITH_AS(parse(good + R"({"cid":"a","turn":2,"speaker":"u"})" "\n"), doctest::Contains("line 3"),
                       FormatError);
  CHECK_THROWS_AS(parse(good + R"({"cid":"a","turn":1,"speaker":"u","text":"x"})" "\n"), FormatError);
  CHECK_THROWS_AS(parse(good + R"({"cid":"a","turn":2,"speaker":"b","text":"x"})" "\n"), FormatError);
  CHECK_THROWS_AS(parse(R"({"cid":"z","turn":0,"speaker":"u","text":"x"})" "\n"), FormatError);
}
