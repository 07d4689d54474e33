// Copyright 2026 The tomt Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "tomt/rng.hpp"
#include "tomt/tensor.hpp"
#include "tomt/tokenizer.hpp"

namespace tomt {

/// Which training signal a parameter answers to. Attention heads carry one of
/// the first three; embeddings, norms, feed-forward blocks are Shared.
enum class ModuleTag : std::uint8_t { Behavior = 0, Prediction = 1, Perception = 2, Shared = 3 };
inline constexpr std::size_t kNumTags = 4;
inline constexpr std::array<ModuleTag, kNumTags> kAllTags{ModuleTag::Behavior, ModuleTag::Prediction,
                                                          ModuleTag::Perception, ModuleTag::Shared};

std::string_view to_string(ModuleTag tag) noexcept;
/// Accepts full names ("Behavior") and the short letters B / P / C / S.
ModuleTag parse_module_tag(std::string_view text);

struct ModelConfig {
  int n_layers = 2;
  int n_heads = 4;
  int d_model = 32;
  int d_head = 8;
  int d_ff = 64;
  int vocab_size = static_cast<int>(tok::kVocabSize);
  int max_seq_len = 96;
  /// One row per layer. Left empty, every layer gets default_head_layout().
  std::vector<std::vector<ModuleTag>> head_tags;
  std::uint64_t seed = 0;

  /// Throws ConfigError describing the first violated constraint.
  void validate() const;
  /// head_tags with the default layout filled in.
  std::vector<std::vector<ModuleTag>> resolved_head_tags() const;
};

/// 25% Behavior, 25% Prediction, rest Perception (rounded, at least one each).
std::vector<ModuleTag> default_head_layout(int n_heads);

void to_json(nlohmann::json& j, const ModelConfig& c);
void from_json(const nlohmann::json& j, ModelConfig& c);

template <typename T>
struct BasicParameter {
  std::string name;
  std::string group;
  ModuleTag tag = ModuleTag::Shared;
  BasicTensor<T> tensor;
};

template <typename T>
struct BasicDualLogits {
  BasicTensor<T> behavior;    // [seq, vocab]
  BasicTensor<T> prediction;  // [seq, vocab]
};

/// Decoder-only transformer with tagged heads and two unembeddings over one
/// shared residual stream. Head tags only steer gradient routing; the
/// forward pass is a standard pre-norm transformer.
template <typename T>
class BasicModel {
 public:
  explicit BasicModel(ModelConfig config);
  /// Copies are deep: the copy owns fresh parameter storage.
  BasicModel(const BasicModel& other);
  BasicModel& operator=(const BasicModel& other);
  BasicModel(BasicModel&&) noexcept = default;
  BasicModel& operator=(BasicModel&&) noexcept = default;

  const ModelConfig& config() const noexcept { return config_; }

  /// Throws std::out_of_range on overlong input or unknown token ids.
  BasicDualLogits<T> forward(std::span<const TokenId> tokens) const;

  std::vector<BasicParameter<T>>& parameters() noexcept { return params_; }
  const std::vector<BasicParameter<T>>& parameters() const noexcept { return params_; }
  BasicParameter<T>& parameter(std::string_view name);
  const BasicParameter<T>& parameter(std::string_view name) const;

  /// Parameters carrying `tag`, in registration order.
  std::vector<const BasicParameter<T>*> module_parameters(ModuleTag tag) const;

  void zero_grad();

  /// Same architecture and values at another precision.
  template <typename U>
  BasicModel<U> cast() const {
    BasicModel<U> out(config_);
    for (std::size_t i = 0; i < params_.size(); ++i) {
      auto src = params_[i].tensor.data();
      auto dst = out.parameters()[i].tensor.leaf_values();
      for (std::size_t k = 0; k < src.size(); ++k) dst[k] = static_cast<U>(src[k]);
    }
    return out;
  }

 private:
  struct HeadSlots {
    std::size_t wq, wk, wv, wo;
  };
  struct LayerSlots {
    std::size_t ln1_gain, ln1_bias;
    std::vector<HeadSlots> heads;
    std::size_t ln2_gain, ln2_bias;
    std::size_t ff_w1, ff_b1, ff_w2, ff_b2;
  };

  std::size_t add_parameter(std::string name, std::string group, ModuleTag tag, Shape shape);
  const BasicTensor<T>& at(std::size_t slot) const { return params_[slot].tensor; }

  ModelConfig config_;
  std::vector<BasicParameter<T>> params_;
  std::size_t tok_emb_ = 0, pos_emb_ = 0, lnf_gain_ = 0, lnf_bias_ = 0;
  std::size_t unembed_behavior_ = 0, unembed_prediction_ = 0;
  std::vector<LayerSlots> layers_;
};

using Parameter = BasicParameter<float>;
using DualLogits = BasicDualLogits<float>;
using Model = BasicModel<float>;
using Model64 = BasicModel<double>;

enum class Stream : std::uint8_t { Behavior, Prediction };
/// Acted tokens are the model's output; simulated tokens may only be fed back as input.
enum class Provenance : std::uint8_t { Acted, Simulated };

std::string_view to_string(Stream s) noexcept;

struct GenerateOptions {
  int max_new = 32;
  /// 0 selects greedy argmax.
  double temperature = 1.0;
};

struct Utterance {
  std::vector<TokenId> tokens;
  Provenance provenance = Provenance::Acted;
  bool ended = false;  // last token is <eom>
};

/// Autoregressive sampling from one output stream. Stops after <eom>, after
/// max_new tokens, or when the context window is full.
Utterance generate(const Model& model, std::span<const TokenId> context, Stream stream,
                   const GenerateOptions& options, Rng& rng);

/// Log-probabilities of the token following `context` under one stream
/// (temperature 1), evaluated without recording a graph.
std::vector<double> next_token_log_probs(const Model& model, std::span<const TokenId> context, Stream stream);

}  // namespace tomt
