// Copyright 2026 The tomt Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "tomt/rng.hpp"
#include "tomt/tokenizer.hpp"

namespace tomt {

/// One utterance. `index` is the exchange round: the opener's and the
/// responder's messages of the same round share it.
struct Message {
  std::string speaker;
  std::string text;
  int index = 0;

  bool operator==(const Message&) const = default;
};

/// Two-party dialogue with strictly alternating speakers; participants[0]
/// opens every round.
struct Conversation {
  std::string id;
  std::array<std::string, 2> participants;
  std::vector<Message> messages;

  /// Throws std::invalid_argument on a broken alternation or index.
  void validate() const;
  /// Rounds in which at least one message was sent.
  int rounds() const noexcept { return static_cast<int>((messages.size() + 1) / 2); }
  const std::string& partner_of(const std::string& who) const;

  bool operator==(const Conversation&) const = default;
};

/// A conversation history rendered for one participant: their own messages
/// carry <spk:SELF>, the partner's carry <spk:OTHER>.
struct StateView {
  std::string viewer;
  std::string other;
  std::vector<TokenId> tokens;

  bool operator==(const StateView&) const = default;
};

/// <bos> followed by every message with index < t, as seen by `viewer`.
/// Requires 0 <= t <= rounds().
StateView build_state(const Conversation& conv, const std::string& viewer, int t);

/// <bos> followed by the first `n_messages` messages, as seen by `viewer`.
StateView build_state_at(const Conversation& conv, const std::string& viewer, std::size_t n_messages);

/// Hand the state to the responder: speaker roles flip and `action` (which
/// must end in <eom>) is appended as the viewer-now-partner's message.
StateView append_action(const StateView& state, std::span<const TokenId> action);

/// Swap <spk:SELF> and <spk:OTHER> everywhere and exchange viewer/other.
StateView perspective_switch(const StateView& state);

/// Throws std::invalid_argument unless every message is one speaker token,
/// then byte tokens, then <eom>, after a leading <bos>.
void check_well_formed(const StateView& state);

// ---------------------------------------------------------------------------
// Scripted personas and synthetic corpora

enum class PersonaKind { Echo, Polite, Grateful, Reverse };

struct PersonaSpec {
  std::string name;
  PersonaKind kind = PersonaKind::Echo;
  /// Polite: appended to every reply. Grateful: the marker it reacts to.
  std::string courtesy = " please";
  std::string thanks = "thanks";
  std::string neutral = "ok";
};

PersonaKind parse_persona_kind(std::string_view text);
std::string_view to_string(PersonaKind kind) noexcept;

/// The persona's deterministic reply to `previous`.
std::string persona_reply(const PersonaSpec& persona, std::string_view previous);

struct OpenerSpec {
  std::string name = "user";
  std::vector<std::string> words{"hi", "yo", "cat", "dog", "sun", "red", "map", "box", "cup", "tea", "sky", "owl"};
  int min_words = 1;
  int max_words = 2;
  /// Probability that an opener message ends with this suffix.
  std::string suffix = " please";
  double suffix_probability = 0.0;
};

/// Conversation c pairs the opener with persona c mod |personas|; `turns`
/// rounds each. Same arguments give a bytewise identical corpus.
std::vector<Conversation> generate_corpus(std::span<const PersonaSpec> personas, const OpenerSpec& opener,
                                          int n_conversations, int turns, std::uint64_t seed);

/// Random opener line drawn from the opener's word list.
std::string opener_message(const OpenerSpec& opener, Rng& rng);

/// Deterministic held-out membership keyed on the conversation id.
bool is_heldout(std::string_view cid);

/// JSONL, one message per line: {"cid","turn","speaker","text"}, where turn
/// is the message's position within its conversation.
void write_jsonl(std::ostream& out, std::span<const Conversation> corpus);
/// Throws FormatError naming the offending line.
std::vector<Conversation> read_jsonl(std::istream& in);

}  // namespace tomt
