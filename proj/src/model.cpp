// Copyright 2026 The tomt Authors
// SPDX-License-Identifier: Apache-2.0

#include "tomt/model.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "tomt/error.hpp"

namespace tomt {

std::string_view to_string(ModuleTag tag) noexcept {
  switch (tag) {
    case ModuleTag::Behavior: return "Behavior";
    case ModuleTag::Prediction: return "Prediction";
    case ModuleTag::Perception: return "Perception";
    case ModuleTag::Shared: return "Shared";
  }
  return "?";
}

ModuleTag parse_module_tag(std::string_view text) {
  if (text == "B" || text == "Behavior" || text == "behavior") return ModuleTag::Behavior;
  if (text == "P" || text == "Prediction" || text == "prediction") return ModuleTag::Prediction;
  if (text == "C" || text == "Perception" || text == "perception") return ModuleTag::Perception;
  if (text == "S" || text == "Shared" || text == "shared") return ModuleTag::Shared;
  throw ConfigError("unknown module tag '" + std::string(text) + "' (expected B, P, C or S)");
}

std::string_view to_string(Stream s) noexcept {
  return s == Stream::Behavior ? "behavior" : "prediction";
}

std::vector<ModuleTag> default_head_layout(int n_heads) {
  if (n_heads < 3) {
    throw ConfigError("a layer needs at least 3 heads (one per module), got " + std::to_string(n_heads));
  }
  const int quarter = std::max(1, static_cast<int>(std::lround(n_heads * 0.25)));
  std::vector<ModuleTag> layout;
  layout.insert(layout.end(), static_cast<std::size_t>(quarter), ModuleTag::Behavior);
  layout.insert(layout.end(), static_cast<std::size_t>(quarter), ModuleTag::Prediction);
  layout.insert(layout.end(), static_cast<std::size_t>(n_heads - 2 * quarter), ModuleTag::Perception);
  return layout;
}

std::vector<std::vector<ModuleTag>> ModelConfig::resolved_head_tags() const {
  if (!head_tags.empty()) return head_tags;
  return std::vector<std::vector<ModuleTag>>(static_cast<std::size_t>(std::max(n_layers, 0)),
                                             default_head_layout(n_heads));
}

void ModelConfig::validate() const {
  auto need = [](bool ok, const std::string& what) {
    if (!ok) throw ConfigError("model config: " + what);
  };
  need(n_layers >= 1, "n_layers must be >= 1");
  need(n_heads >= 3, "n_heads must be >= 3 (one head per module)");
  need(d_head >= 1 && d_ff >= 1, "d_head and d_ff must be positive");
  need(d_model == n_heads * d_head, "d_model (" + std::to_string(d_model) + ") must equal n_heads x d_head (" +
                                        std::to_string(n_heads) + " x " + std::to_string(d_head) + ")");
  need(vocab_size >= 2, "vocab_size must be >= 2");
  need(max_seq_len >= 2, "max_seq_len must be >= 2");
  const auto tags = resolved_head_tags();
  need(tags.size() == static_cast<std::size_t>(n_layers),
       "head_tags has " + std::to_string(tags.size()) + " rows for " + std::to_string(n_layers) + " layers");
  for (std::size_t l = 0; l < tags.size(); ++l) {
    const auto& row = tags[l];
    need(row.size() == static_cast<std::size_t>(n_heads),
         "layer " + std::to_string(l) + " tags " + std::to_string(row.size()) + " heads, expected " +
             std::to_string(n_heads));
    for (ModuleTag t : {ModuleTag::Behavior, ModuleTag::Prediction, ModuleTag::Perception}) {
      need(std::find(row.begin(), row.end(), t) != row.end(),
           "layer " + std::to_string(l) + " has no " + std::string(to_string(t)) + " head");
    }
    need(std::find(row.begin(), row.end(), ModuleTag::Shared) == row.end(),
         "layer " + std::to_string(l) + ": heads cannot be tagged Shared");
  }
}

void to_json(nlohmann::json& j, const ModelConfig& c) {
  nlohmann::json tags = nlohmann::json::array();
  for (const auto& row : c.resolved_head_tags()) {
    nlohmann::json r = nlohmann::json::array();
    for (ModuleTag t : row) r.push_back(std::string(1, "BPCS"[static_cast<std::size_t>(t)]));
    tags.push_back(r);
  }
  j = nlohmann::json{{"n_layers", c.n_layers},       {"n_heads", c.n_heads},
                     {"d_model", c.d_model},         {"d_head", c.d_head},
                     {"d_ff", c.d_ff},               {"vocab_size", c.vocab_size},
                     {"max_seq_len", c.max_seq_len}, {"head_tags", tags},
                     {"seed", c.seed}};
}

void from_json(const nlohmann::json& j, ModelConfig& c) {
  ModelConfig d;
  c.n_layers = j.value("n_layers", d.n_layers);
  c.n_heads = j.value("n_heads", d.n_heads);
  c.d_head = j.value("d_head", d.d_head);
  c.d_model = j.value("d_model", c.n_heads * c.d_head);
  c.d_ff = j.value("d_ff", 2 * c.d_model);
  c.vocab_size = j.value("vocab_size", d.vocab_size);
  c.max_seq_len = j.value("max_seq_len", d.max_seq_len);
  c.seed = j.value("seed", d.seed);
  c.head_tags.clear();
  if (j.contains("head_tags")) {
    const auto& tags = j.at("head_tags");
    // A flat list is one layout applied to every layer.
    const bool flat = !tags.empty() && tags.front().is_string();
    auto parse_row = [](const nlohmann::json& row) {
      std::vector<ModuleTag> out;
      for (const auto& t : row) out.push_back(parse_module_tag(t.get<std::string>()));
      return out;
    };
    if (flat) {
      c.head_tags.assign(static_cast<std::size_t>(c.n_layers), parse_row(tags));
    } else {
      for (const auto& row : tags) c.head_tags.push_back(parse_row(row));
    }
  }
}

// ---------------------------------------------------------------------------

template <typename T>
BasicModel<T>::BasicModel(ModelConfig config) : config_(std::move(config)) {
  config_.validate();
  config_.head_tags = config_.resolved_head_tags();
  const auto d = static_cast<std::size_t>(config_.d_model);
  const auto dh = static_cast<std::size_t>(config_.d_head);
  const auto dff = static_cast<std::size_t>(config_.d_ff);
  const auto vocab = static_cast<std::size_t>(config_.vocab_size);

  tok_emb_ = add_parameter("embed.tok", "embed.tok", ModuleTag::Shared, {vocab, d});
  pos_emb_ = add_parameter("embed.pos", "embed.pos", ModuleTag::Shared,
                           {static_cast<std::size_t>(config_.max_seq_len), d});
  for (int l = 0; l < config_.n_layers; ++l) {
    const std::string prefix = "layer" + std::to_string(l);
    LayerSlots layer;
    layer.ln1_gain = add_parameter(prefix + ".ln1.gain", prefix + ".ln1", ModuleTag::Shared, {d});
    layer.ln1_bias = add_parameter(prefix + ".ln1.bias", prefix + ".ln1", ModuleTag::Shared, {d});
    for (int h = 0; h < config_.n_heads; ++h) {
      const std::string group = prefix + ".head" + std::to_string(h);
      const ModuleTag tag = config_.head_tags[static_cast<std::size_t>(l)][static_cast<std::size_t>(h)];
      HeadSlots head;
      head.wq = add_parameter(group + ".wq", group, tag, {d, dh});
      head.wk = add_parameter(group + ".wk", group, tag, {d, dh});
      head.wv = add_parameter(group + ".wv", group, tag, {d, dh});
      head.wo = add_parameter(group + ".wo", group, tag, {dh, d});
      layer.heads.push_back(head);
    }
    layer.ln2_gain = add_parameter(prefix + ".ln2.gain", prefix + ".ln2", ModuleTag::Shared, {d});
    layer.ln2_bias = add_parameter(prefix + ".ln2.bias", prefix + ".ln2", ModuleTag::Shared, {d});
    layer.ff_w1 = add_parameter(prefix + ".ffn.w1", prefix + ".ffn", ModuleTag::Shared, {d, dff});
    layer.ff_b1 = add_parameter(prefix + ".ffn.b1", prefix + ".ffn", ModuleTag::Shared, {dff});
    layer.ff_w2 = add_parameter(prefix + ".ffn.w2", prefix + ".ffn", ModuleTag::Shared, {dff, d});
    layer.ff_b2 = add_parameter(prefix + ".ffn.b2", prefix + ".ffn", ModuleTag::Shared, {d});
    layers_.push_back(std::move(layer));
  }
  lnf_gain_ = add_parameter("final.ln.gain", "final.ln", ModuleTag::Shared, {d});
  lnf_bias_ = add_parameter("final.ln.bias", "final.ln", ModuleTag::Shared, {d});
  unembed_behavior_ = add_parameter("unembed.behavior", "unembed.behavior", ModuleTag::Behavior, {d, vocab});
  unembed_prediction_ =
      add_parameter("unembed.prediction", "unembed.prediction", ModuleTag::Prediction, {d, vocab});

  // Initialisation, in registration order from the "init" stream.
  Rng rng = Rng::stream(config_.seed, "init");
  const double residual_scale = 1.0 / std::sqrt(2.0 * config_.n_layers);
  for (auto& p : params_) {
    auto values = p.tensor.leaf_values();
    const auto& shape = p.tensor.shape();
    const std::string& name = p.name;
    auto ends_with = [&](std::string_view suffix) {
      return name.size() >= suffix.size() && name.compare(name.size() - suffix.size(), suffix.size(), suffix) == 0;
    };
    double stddev = 0.0;
    double constant = 0.0;
    if (ends_with(".gain")) {
      constant = 1.0;
    } else if (ends_with(".bias") || ends_with(".b1") || ends_with(".b2")) {
      constant = 0.0;
    } else if (name.rfind("embed.", 0) == 0) {
      stddev = 0.1;
    } else if (name.rfind("unembed.", 0) == 0) {
      stddev = 0.02;
    } else {
      stddev = 1.0 / std::sqrt(static_cast<double>(shape[0]));
      if (ends_with(".wo") || ends_with(".w2")) stddev *= residual_scale;
    }
    for (auto& v : values) v = static_cast<T>(stddev > 0.0 ? stddev * rng.normal() : constant);
  }
}

template <typename T>
BasicModel<T>::BasicModel(const BasicModel& other)
    : config_(other.config_),
      tok_emb_(other.tok_emb_),
      pos_emb_(other.pos_emb_),
      lnf_gain_(other.lnf_gain_),
      lnf_bias_(other.lnf_bias_),
      unembed_behavior_(other.unembed_behavior_),
      unembed_prediction_(other.unembed_prediction_),
      layers_(other.layers_) {
  params_.reserve(other.params_.size());
  for (const auto& p : other.params_) {
    const auto src = p.tensor.data();
    params_.push_back({p.name, p.group, p.tag,
                       BasicTensor<T>::leaf(p.tensor.shape(), std::vector<T>(src.begin(), src.end()), true)});
  }
}

template <typename T>
BasicModel<T>& BasicModel<T>::operator=(const BasicModel& other) {
  if (this != &other) *this = BasicModel(other);
  return *this;
}

template <typename T>
std::size_t BasicModel<T>::add_parameter(std::string name, std::string group, ModuleTag tag, Shape shape) {
  params_.push_back({std::move(name), std::move(group), tag, BasicTensor<T>::zeros(std::move(shape), true)});
  return params_.size() - 1;
}

template <typename T>
BasicParameter<T>& BasicModel<T>::parameter(std::string_view name) {
  for (auto& p : params_)
    if (p.name == name) return p;
  throw std::out_of_range("no parameter named '" + std::string(name) + "'");
}

template <typename T>
const BasicParameter<T>& BasicModel<T>::parameter(std::string_view name) const {
  return const_cast<BasicModel*>(this)->parameter(name);
}

template <typename T>
std::vector<const BasicParameter<T>*> BasicModel<T>::module_parameters(ModuleTag tag) const {
  std::vector<const BasicParameter<T>*> out;
  for (const auto& p : params_)
    if (p.tag == tag) out.push_back(&p);
  return out;
}

template <typename T>
void BasicModel<T>::zero_grad() {
  for (auto& p : params_) p.tensor.zero_grad();
}

template <typename T>
BasicDualLogits<T> BasicModel<T>::forward(std::span<const TokenId> tokens) const {
  if (tokens.empty()) throw std::out_of_range("forward: empty token sequence");
  if (tokens.size() > static_cast<std::size_t>(config_.max_seq_len)) {
    throw std::out_of_range("forward: sequence of " + std::to_string(tokens.size()) +
                            " tokens exceeds max_seq_len " + std::to_string(config_.max_seq_len));
  }
  for (TokenId t : tokens) {
    if (t >= static_cast<TokenId>(config_.vocab_size)) {
      throw std::out_of_range("forward: unknown token id " + std::to_string(t) + " (vocab_size " +
                              std::to_string(config_.vocab_size) + ")");
    }
  }
  const double attn_scale = 1.0 / std::sqrt(static_cast<double>(config_.d_head));
  BasicTensor<T> x = add(embedding(at(tok_emb_), tokens), slice_rows(at(pos_emb_), 0, tokens.size()));
  for (const auto& layer : layers_) {
    const auto h = layernorm(x, at(layer.ln1_gain), at(layer.ln1_bias));
    BasicTensor<T> attn;
    for (const auto& head : layer.heads) {
      const auto q = matmul(h, at(head.wq));
      const auto k = matmul(h, at(head.wk));
      const auto v = matmul(h, at(head.wv));
      const auto weights = causal_softmax(scale(matmul(q, transpose(k)), attn_scale));
      const auto out = matmul(matmul(weights, v), at(head.wo));
      attn = attn.defined() ? add(attn, out) : out;
    }
    x = add(x, attn);
    const auto h2 = layernorm(x, at(layer.ln2_gain), at(layer.ln2_bias));
    const auto ff = add(matmul(gelu(add(matmul(h2, at(layer.ff_w1)), at(layer.ff_b1))), at(layer.ff_w2)),
                        at(layer.ff_b2));
    x = add(x, ff);
  }
  const auto hf = layernorm(x, at(lnf_gain_), at(lnf_bias_));
  return {matmul(hf, at(unembed_behavior_)), matmul(hf, at(unembed_prediction_))};
}

template class BasicModel<float>;
template class BasicModel<double>;

// ---------------------------------------------------------------------------

namespace {

std::vector<double> last_row(const Tensor& logits) {
  const std::size_t cols = logits.cols();
  const auto data = logits.data();
  return std::vector<double>(data.end() - static_cast<std::ptrdiff_t>(cols), data.end());
}

}  // namespace

std::vector<double> next_token_log_probs(const Model& model, std::span<const TokenId> context, Stream stream) {
  NoGradGuard guard;
  const auto logits = model.forward(context);
  auto row = last_row(stream == Stream::Behavior ? logits.behavior : logits.prediction);
  const double mx = *std::max_element(row.begin(), row.end());
  double z = 0.0;
  for (double v : row) z += std::exp(v - mx);
  const double lse = mx + std::log(z);
  for (double& v : row) v -= lse;
  return row;
}

Utterance generate(const Model& model, std::span<const TokenId> context, Stream stream,
                   const GenerateOptions& options, Rng& rng) {
  if (options.max_new <= 0) {
    throw std::invalid_argument("generate: max_new must be positive, got " + std::to_string(options.max_new));
  }
  if (!(options.temperature >= 0.0)) throw std::invalid_argument("generate: temperature must be >= 0");
  const auto limit = static_cast<std::size_t>(model.config().max_seq_len);
  if (context.empty() || context.size() >= limit) {
    throw std::out_of_range("generate: context of " + std::to_string(context.size()) +
                            " tokens leaves no room below max_seq_len " + std::to_string(limit));
  }
  NoGradGuard guard;
  Utterance out;
  out.provenance = stream == Stream::Behavior ? Provenance::Acted : Provenance::Simulated;
  std::vector<TokenId> seq(context.begin(), context.end());
  for (int n = 0; n < options.max_new && seq.size() < limit; ++n) {
    const auto logits = model.forward(seq);
    const auto row = last_row(stream == Stream::Behavior ? logits.behavior : logits.prediction);
    TokenId next = 0;
    if (options.temperature == 0.0) {
      next = static_cast<TokenId>(std::max_element(row.begin(), row.end()) - row.begin());
    } else {
      const double mx = *std::max_element(row.begin(), row.end());
      std::vector<double> w(row.size());
      for (std::size_t j = 0; j < row.size(); ++j) w[j] = std::exp((row[j] - mx) / options.temperature);
      next = static_cast<TokenId>(rng.categorical(w));
    }
    out.tokens.push_back(next);
    seq.push_back(next);
    if (next == tok::kEom) {
      out.ended = true;
      break;
    }
  }
  return out;
}

}  // namespace tomt
