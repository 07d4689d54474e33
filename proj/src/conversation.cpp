// Copyright 2026 The tomt Authors
// SPDX-License-Identifier: Apache-2.0

#include "tomt/conversation.hpp"

#include <algorithm>
#include <istream>
#include <map>
#include <ostream>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "tomt/digest.hpp"
#include "tomt/error.hpp"

namespace tomt {

void Conversation::validate() const {
  if (participants[0].empty() || participants[1].empty() || participants[0] == participants[1]) {
    throw std::invalid_argument("conversation " + id + ": needs two distinct participant ids");
  }
  for (std::size_t n = 0; n < messages.size(); ++n) {
    const auto& m = messages[n];
    if (m.speaker != participants[n % 2]) {
      throw std::invalid_argument("conversation " + id + ": message " + std::to_string(n) + " is from '" +
                                  m.speaker + "', expected '" + participants[n % 2] + "'");
    }
    if (m.index != static_cast<int>(n / 2)) {
      throw std::invalid_argument("conversation " + id + ": message " + std::to_string(n) + " has index " +
                                  std::to_string(m.index) + ", expected " + std::to_string(n / 2));
    }
  }
}

const std::string& Conversation::partner_of(const std::string& who) const {
  if (who == participants[0]) return participants[1];
  if (who == participants[1]) return participants[0];
  throw std::invalid_argument("conversation " + id + ": '" + who + "' is not a participant");
}

StateView build_state_at(const Conversation& conv, const std::string& viewer, std::size_t n_messages) {
  if (n_messages > conv.messages.size()) {
    throw std::out_of_range("build_state_at: " + std::to_string(n_messages) + " messages requested, conversation has " +
                            std::to_string(conv.messages.size()));
  }
  StateView view{viewer, conv.partner_of(viewer), {tok::kBos}};
  for (std::size_t n = 0; n < n_messages; ++n) {
    const auto& m = conv.messages[n];
    view.tokens.push_back(m.speaker == viewer ? tok::kSelf : tok::kOther);
    const auto body = message_tokens(m.text);
    view.tokens.insert(view.tokens.end(), body.begin(), body.end());
  }
  return view;
}

StateView build_state(const Conversation& conv, const std::string& viewer, int t) {
  if (t < 0 || t > conv.rounds()) {
    throw std::out_of_range("build_state: t=" + std::to_string(t) + " outside [0, " + std::to_string(conv.rounds()) +
                            "]");
  }
  const auto n = std::min(conv.messages.size(), static_cast<std::size_t>(2 * t));
  return build_state_at(conv, viewer, n);
}

namespace {

TokenId flip(TokenId t) noexcept {
  if (t == tok::kSelf) return tok::kOther;
  if (t == tok::kOther) return tok::kSelf;
  return t;
}

}  // namespace

StateView perspective_switch(const StateView& state) {
  StateView out{state.other, state.viewer, state.tokens};
  std::transform(out.tokens.begin(), out.tokens.end(), out.tokens.begin(), flip);
  return out;
}

StateView append_action(const StateView& state, std::span<const TokenId> action) {
  if (action.empty() || action.back() != tok::kEom) {
    throw std::invalid_argument("append_action: action must end with <eom>");
  }
  auto out = perspective_switch(state);
  out.tokens.reserve(out.tokens.size() + action.size() + 1);
  out.tokens.push_back(tok::kOther);
  out.tokens.insert(out.tokens.end(), action.begin(), action.end());
  return out;
}

void check_well_formed(const StateView& state) {
  const auto& t = state.tokens;
  if (t.empty() || t[0] != tok::kBos) throw std::invalid_argument("state: missing leading <bos>");
  std::size_t i = 1;
  while (i < t.size()) {
    if (!tok::is_speaker(t[i])) {
      throw std::invalid_argument("state: token " + std::to_string(i) + " should be a speaker token");
    }
    ++i;
    while (i < t.size() && tok::is_byte(t[i])) ++i;
    if (i >= t.size() || t[i] != tok::kEom) {
      throw std::invalid_argument("state: message ending before token " + std::to_string(i) + " lacks <eom>");
    }
    ++i;
  }
}

PersonaKind parse_persona_kind(std::string_view text) {
  if (text == "echo") return PersonaKind::Echo;
  if (text == "polite") return PersonaKind::Polite;
  if (text == "grateful") return PersonaKind::Grateful;
  if (text == "reverse") return PersonaKind::Reverse;
  throw ConfigError("unknown persona kind '" + std::string(text) + "' (known: echo, polite, grateful, reverse)");
}

std::string_view to_string(PersonaKind kind) noexcept {
  switch (kind) {
    case PersonaKind::Echo: return "echo";
    case PersonaKind::Polite: return "polite";
    case PersonaKind::Grateful: return "grateful";
    case PersonaKind::Reverse: return "reverse";
  }
  return "?";
}

std::string persona_reply(const PersonaSpec& persona, std::string_view previous) {
  switch (persona.kind) {
    case PersonaKind::Echo: return std::string(previous);
    case PersonaKind::Polite: return std::string(previous) + persona.courtesy;
    case PersonaKind::Grateful:
      return previous.find(persona.courtesy) != std::string_view::npos ? persona.thanks : persona.neutral;
    case PersonaKind::Reverse: return std::string(previous.rbegin(), previous.rend());
  }
  return {};
}

std::string opener_message(const OpenerSpec& opener, Rng& rng) {
  if (opener.words.empty() || opener.min_words < 1 || opener.max_words < opener.min_words) {
    throw ConfigError("opener: needs a word list and 1 <= min_words <= max_words");
  }
  const auto span = static_cast<std::uint64_t>(opener.max_words - opener.min_words + 1);
  const auto n = opener.min_words + static_cast<int>(rng.below(span));
  std::string text;
  for (int w = 0; w < n; ++w) {
    if (w > 0) text.push_back(' ');
    text += opener.words[rng.below(opener.words.size())];
  }
  if (opener.suffix_probability > 0.0 && rng.uniform() < opener.suffix_probability) text += opener.suffix;
  return text;
}

std::vector<Conversation> generate_corpus(std::span<const PersonaSpec> personas, const OpenerSpec& opener,
                                          int n_conversations, int turns, std::uint64_t seed) {
  if (personas.empty()) throw ConfigError("generate_corpus: at least one persona is required");
  if (n_conversations < 0 || turns < 0) throw ConfigError("generate_corpus: counts must be non-negative");
  for (const auto& p : personas) {
    if (p.name == opener.name) throw ConfigError("persona '" + p.name + "' shares the opener's name");
  }
  std::vector<Conversation> corpus;
  corpus.reserve(static_cast<std::size_t>(n_conversations));
  for (int c = 0; c < n_conversations; ++c) {
    const auto& persona = personas[static_cast<std::size_t>(c) % personas.size()];
    Rng rng = Rng::stream(seed, "corpus", static_cast<std::uint64_t>(c));
    Conversation conv;
    conv.id = "c" + std::to_string(c);
    conv.participants = {opener.name, persona.name};
    for (int t = 0; t < turns; ++t) {
      auto opening = opener_message(opener, rng);
      auto reply = persona_reply(persona, opening);
      conv.messages.push_back({opener.name, std::move(opening), t});
      conv.messages.push_back({persona.name, std::move(reply), t});
    }
    corpus.push_back(std::move(conv));
  }
  return corpus;
}

bool is_heldout(std::string_view cid) { return sha256(cid).back() % 10 == 0; }

void write_jsonl(std::ostream& out, std::span<const Conversation> corpus) {
  for (const auto& conv : corpus) {
    for (std::size_t n = 0; n < conv.messages.size(); ++n) {
      const auto& m = conv.messages[n];
      const nlohmann::ordered_json line{{"cid", conv.id}, {"turn", n}, {"speaker", m.speaker}, {"text", m.text}};
      out << line.dump() << '\n';
    }
  }
}

std::vector<Conversation> read_jsonl(std::istream& in) {
  std::vector<Conversation> corpus;
  std::map<std::string, std::size_t> position;
  std::map<std::string, long long> last_turn;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const auto where = "corpus line " + std::to_string(lineno) + ": ";
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw FormatError(where + e.what());
    }
    std::string cid, speaker, text;
    long long turn = 0;
    try {
      cid = j.at("cid").get<std::string>();
      turn = j.at("turn").get<long long>();
      speaker = j.at("speaker").get<std::string>();
      text = j.at("text").get<std::string>();
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(where + "expected {\"cid\",\"turn\",\"speaker\",\"text\"}: " + e.what());
    }
    auto it = position.find(cid);
    if (it == position.end()) {
      it = position.emplace(cid, corpus.size()).first;
      corpus.push_back({cid, {speaker, ""}, {}});
    } else if (turn <= last_turn[cid]) {
      throw FormatError(where + "turn " + std::to_string(turn) + " of '" + cid + "' does not increase");
    }
    last_turn[cid] = turn;
    auto& conv = corpus[it->second];
    const std::size_t n = conv.messages.size();
    if (n == 1 && conv.participants[1].empty() && speaker != conv.participants[0]) {
      conv.participants[1] = speaker;
    }
    if (speaker != conv.participants[n % 2]) {
      throw FormatError(where + "speaker '" + speaker + "' breaks the alternation of '" + cid + "'");
    }
    conv.messages.push_back({speaker, text, static_cast<int>(n / 2)});
  }
  for (auto& conv : corpus) {
    if (conv.participants[1].empty()) throw FormatError("conversation '" + conv.id + "' has a single participant");
  }
  return corpus;
}

}  // namespace tomt
