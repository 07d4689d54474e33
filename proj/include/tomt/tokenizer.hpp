// Copyright 2026 The tomt Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace tomt {

using TokenId = std::uint32_t;

/// Byte-level vocabulary: ids 0..255 are raw bytes, followed by four
/// special tokens. Speaker identity lives only in the two speaker tokens.
namespace tok {
inline constexpr TokenId kBos = 256;
inline constexpr TokenId kEom = 257;
inline constexpr TokenId kSelf = 258;
inline constexpr TokenId kOther = 259;
inline constexpr std::uint32_t kVocabSize = 260;

constexpr bool is_byte(TokenId t) noexcept { return t < 256; }
constexpr bool is_speaker(TokenId t) noexcept { return t == kSelf || t == kOther; }
}  // namespace tok

std::vector<TokenId> tokenize(std::string_view text);

/// Inverse of tokenize(). Throws std::invalid_argument on special tokens.
std::string detokenize(std::span<const TokenId> tokens);

/// Human-readable rendering; specials print as <bos>, <eom>, <spk:SELF>, <spk:OTHER>.
std::string render_tokens(std::span<const TokenId> tokens);

/// Message bytes followed by <eom>.
std::vector<TokenId> message_tokens(std::string_view text);

}  // namespace tomt
