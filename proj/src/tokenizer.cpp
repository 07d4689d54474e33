// Copyright 2026 The tomt Authors
// SPDX-License-Identifier: Apache-2.0

#include "tomt/tokenizer.hpp"

#include <stdexcept>

namespace tomt {

std::vector<TokenId> tokenize(std::string_view text) {
  std::vector<TokenId> out;
  out.reserve(text.size());
  for (char c : text) out.push_back(static_cast<unsigned char>(c));
  return out;
}

std::string detokenize(std::span<const TokenId> tokens) {
  std::string out;
  out.reserve(tokens.size());
  for (TokenId t : tokens) {
    if (!tok::is_byte(t)) {
      throw std::invalid_argument("detokenize: special token " + std::to_string(t) + " has no byte value");
    }
    out.push_back(static_cast<char>(static_cast<unsigned char>(t)));
  }
  return out;
}

std::string render_tokens(std::span<const TokenId> tokens) {
  std::string out;
  for (TokenId t : tokens) {
    switch (t) {
      case tok::kBos: out += "<bos>"; break;
      case tok::kEom: out += "<eom>"; break;
      case tok::kSelf: out += "<spk:SELF>"; break;
      case tok::kOther: out += "<spk:OTHER>"; break;
      default:
        if (tok::is_byte(t)) {
          out.push_back(static_cast<char>(static_cast<unsigned char>(t)));
        } else {
          out += "<" + std::to_string(t) + ">";
        }
    }
  }
  return out;
}

std::vector<TokenId> message_tokens(std::string_view text) {
  auto out = tokenize(text);
  out.push_back(tok::kEom);
  return out;
}

}  // namespace tomt
