// Copyright 2026 The tomt Authors
// SPDX-License-Identifier: Apache-2.0

#include "tomt/training.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "tomt/error.hpp"

namespace tomt {

std::string_view to_string(Algorithm a) noexcept {
  switch (a) {
    case Algorithm::Pretrain: return "pretrain";
    case Algorithm::Finetune: return "finetune";
    case Algorithm::Imitate: return "imitate";
    case Algorithm::Kindness: return "kindness";
  }
  return "?";
}

Algorithm parse_algorithm(std::string_view text) {
  for (auto a : kAllAlgorithms) {
    if (to_string(a) == text) return a;
  }
  throw ConfigError("unknown algorithm '" + std::string(text) +
                    "' (known: pretrain, finetune, imitate, kindness)");
}

double Coefficient::resolve(double eta, double eta_r) const noexcept {
  switch (rate) {
    case Rate::Zero: return 0.0;
    case Rate::Eta: return sign * eta;
    case Rate::GatedEta: return sign * eta_r;
  }
  return 0.0;
}

RoutingRule routing_for(Algorithm algo, bool behavior_nll_ascent) {
  constexpr auto B = static_cast<std::size_t>(ModuleTag::Behavior);
  constexpr auto P = static_cast<std::size_t>(ModuleTag::Prediction);
  constexpr auto C = static_cast<std::size_t>(ModuleTag::Perception);
  constexpr auto S = static_cast<std::size_t>(ModuleTag::Shared);
  const Coefficient eta{Rate::Eta};
  RoutingRule r;
  switch (algo) {
    case Algorithm::Pretrain:
      r.nll[B] = {Rate::GatedEta};
      r.nll[P] = r.nll[C] = r.nll[S] = eta;
      break;
    case Algorithm::Finetune:
    case Algorithm::Imitate:
      r.rl[B] = eta;
      r.nll[P] = eta;
      r.nll[C] = r.rl[C] = r.nll[S] = r.rl[S] = eta;
      break;
    case Algorithm::Kindness:
      r.rl[B] = eta;
      r.nll[B] = {Rate::GatedEta, behavior_nll_ascent ? -1.0 : 1.0};
      r.nll[P] = eta;
      r.nll[C] = r.rl[C] = r.nll[S] = r.rl[S] = eta;
      break;
  }
  return r;
}

void to_json(nlohmann::json& j, const TrainOptions& o) {
  j = {{"max_new", o.generation.max_new},
       {"temperature", o.generation.temperature},
       {"baseline_rate", o.baseline_rate},
       {"ppo", o.ppo},
       {"ppo_epochs", o.ppo_epochs},
       {"ppo_clip", o.ppo_clip},
       {"behavior_nll_ascent", o.behavior_nll_ascent}};
}

void from_json(const nlohmann::json& j, TrainOptions& o) {
  const TrainOptions d;
  o.generation.max_new = j.value("max_new", d.generation.max_new);
  o.generation.temperature = j.value("temperature", d.generation.temperature);
  o.baseline_rate = j.value("baseline_rate", d.baseline_rate);
  o.ppo = j.value("ppo", d.ppo);
  o.ppo_epochs = j.value("ppo_epochs", d.ppo_epochs);
  o.ppo_clip = j.value("ppo_clip", d.ppo_clip);
  o.behavior_nll_ascent = j.value("behavior_nll_ascent", d.behavior_nll_ascent);
  if (o.generation.max_new <= 0) throw ConfigError("training: max_new must be positive");
  if (!(o.generation.temperature >= 0.0)) throw ConfigError("training: temperature must be >= 0");
  if (!(o.baseline_rate >= 0.0 && o.baseline_rate <= 1.0)) throw ConfigError("training: baseline_rate must lie in [0, 1]");
  if (o.ppo && (o.ppo_epochs < 1 || !(o.ppo_clip > 0.0))) throw ConfigError("training: ppo needs epochs >= 1, clip > 0");
}

nlohmann::ordered_json metrics_line(const TrainStepReport& r) {
  nlohmann::ordered_json norms = nlohmann::ordered_json::object();
  for (auto tag : kAllTags) norms[std::string(to_string(tag))] = r.delta_norm[static_cast<std::size_t>(tag)];
  nlohmann::ordered_json line{{"step", r.step},       {"algo", to_string(r.algo)}, {"nll", r.nll},
                              {"rl_loss", r.rl_loss}, {"reward", r.reward},        {"eta_r", r.eta_r},
                              {"delta_norms", norms}};
  if (!r.event.empty()) line["event"] = r.event;
  return line;
}

std::vector<TokenId> prompt_tokens(const StateView& state) {
  auto out = state.tokens;
  out.push_back(tok::kSelf);
  return out;
}

std::vector<TokenId> close_message(std::span<const TokenId> tokens) {
  std::vector<TokenId> out(tokens.begin(), tokens.end());
  if (out.empty() || out.back() != tok::kEom) out.push_back(tok::kEom);
  return out;
}

std::vector<PretrainSample> pretrain_samples(std::span<const Conversation> corpus) {
  std::vector<PretrainSample> out;
  for (const auto& conv : corpus) {
    for (std::size_t n = 0; n < conv.messages.size(); ++n) {
      const auto& m = conv.messages[n];
      out.push_back({build_state_at(conv, m.speaker, n), message_tokens(m.text)});
    }
  }
  return out;
}

std::vector<ImitationSample> imitation_samples(std::span<const Conversation> corpus, const std::string& target) {
  std::vector<ImitationSample> out;
  for (const auto& conv : corpus) {
    if (conv.participants[0] != target && conv.participants[1] != target) continue;
    const auto& learner = conv.partner_of(target);
    for (std::size_t n = 0; n < conv.messages.size(); ++n) {
      const auto& m = conv.messages[n];
      if (m.speaker != target) continue;
      out.push_back({build_state_at(conv, learner, n), target, message_tokens(m.text)});
    }
  }
  return out;
}

namespace {

struct ScoredAction {
  Tensor behavior_rows;    // [n, vocab] logits predicting each action token
  Tensor prediction_rows;  // [n, vocab]
};

// One teacher-forced pass: logits at the positions that predict `action`
// given `context`.
ScoredAction score_action(const Model& model, std::span<const TokenId> context, std::span<const TokenId> action) {
  std::vector<TokenId> seq(context.begin(), context.end());
  seq.insert(seq.end(), action.begin(), action.end() - 1);
  const auto logits = model.forward(seq);
  const std::size_t begin = context.size() - 1;
  const std::size_t end = begin + action.size();
  return {slice_rows(logits.behavior, begin, end), slice_rows(logits.prediction, begin, end)};
}

// Keep the action within the context window; returns true when cut.
bool fit_action(std::size_t context_len, std::vector<TokenId>& action, std::size_t max_seq_len,
                std::size_t max_tokens) {
  const std::size_t room = max_seq_len + 1 - std::min(max_seq_len + 1, context_len);
  const std::size_t limit = std::min(room, max_tokens);
  if (action.size() <= limit) return false;
  action.resize(limit);
  return true;
}

bool any_nonzero(std::span<const float> g) {
  return std::any_of(g.begin(), g.end(), [](float v) { return v != 0.0f; });
}

void apply_update(Model& model, const RoutingRule& rule, double eta, double eta_r, bool keep_channels,
                  TrainStepReport& report) {
  std::array<double, kNumTags> squares{};
  for (std::size_t t = 0; t < kNumTags; ++t) {
    report.coef_nll[t] = rule.nll[t].resolve(eta, eta_r);
    report.coef_rl[t] = rule.rl[t].resolve(eta, eta_r);
  }
  for (auto& p : model.parameters()) {
    const auto t = static_cast<std::size_t>(p.tag);
    const double cn = report.coef_nll[t];
    const double cr = report.coef_rl[t];
    const auto gn = p.tensor.grad(Channel::Nll);
    const auto gr = p.tensor.grad(Channel::Rl);
    if (cn != 0.0 && any_nonzero(gn)) report.received_nll[t] = true;
    if (cr != 0.0 && any_nonzero(gr)) report.received_rl[t] = true;
    if (cn != 0.0 || cr != 0.0) {
      auto values = p.tensor.leaf_values();
      for (std::size_t i = 0; i < values.size(); ++i) {
        const float before = values[i];
        values[i] = static_cast<float>(before - (cn * gn[i] + cr * gr[i]));
        const double diff = static_cast<double>(values[i]) - before;
        squares[t] += diff * diff;
      }
    }
    if (!keep_channels) {
      p.tensor.zero_grad(Channel::Nll);
      p.tensor.zero_grad(Channel::Rl);
    }
  }
  for (std::size_t t = 0; t < kNumTags; ++t) report.delta_norm[t] = std::sqrt(squares[t]);
}

RoutingRule active_rule(Algorithm algo, const StepContext& ctx) {
  return ctx.routing_override ? *ctx.routing_override : routing_for(algo, ctx.options.behavior_nll_ascent);
}

void require_message(std::span<const TokenId> action, const char* who) {
  if (action.empty()) throw std::invalid_argument(std::string(who) + ": empty sample");
  if (action.back() != tok::kEom) throw std::invalid_argument(std::string(who) + ": action must end with <eom>");
}

TrainStepReport begin(Algorithm algo, double eta, StepContext& ctx, Model& model) {
  if (!(eta > 0.0)) throw std::invalid_argument(std::string(to_string(algo)) + ": learning rate must be positive");
  model.zero_grad();
  TrainStepReport r;
  r.algo = algo;
  r.step = ctx.step;
  r.eta = eta;
  return r;
}

void update_baseline(StepContext& ctx, double reward) {
  ctx.baseline += ctx.options.baseline_rate * (reward - ctx.baseline);
}

// Policy-gradient surrogate on the behavior stream. With `old_logp` empty it
// is plain REINFORCE, -advantage * sum log pi; otherwise the clipped
// importance-weighted form, whose gradient per token is
// -advantage * ratio * grad log pi while unclipped and 0 once clipped.
Tensor policy_loss(const Tensor& behavior_rows, std::span<const TokenId> action, double advantage,
                   std::span<const double> old_logp, double clip, std::vector<double>* logp_out) {
  const auto logp = pick(log_softmax(behavior_rows), action);
  if (logp_out) logp_out->assign(logp.data().begin(), logp.data().end());
  std::vector<float> weights(action.size(), static_cast<float>(-advantage));
  for (std::size_t k = 0; k < old_logp.size(); ++k) {
    const double ratio = std::exp(static_cast<double>(logp.data()[k]) - old_logp[k]);
    const double clipped = std::clamp(ratio, 1.0 - clip, 1.0 + clip);
    weights[k] = ratio * advantage <= clipped * advantage ? static_cast<float>(-advantage * ratio) : 0.0f;
  }
  return sum(mul(logp, Tensor::leaf({action.size()}, std::move(weights))));
}

}  // namespace

TrainStepReport pretrain_step(Model& model, const PretrainSample& sample, const RewardModel& reward, double eta,
                              StepContext& ctx) {
  require_message(sample.action, "pretrain_step");
  auto r = begin(Algorithm::Pretrain, eta, ctx, model);
  const auto context = prompt_tokens(sample.state);
  auto action = sample.action;
  r.truncated = fit_action(context.size(), action, static_cast<std::size_t>(model.config().max_seq_len),
                           action.size());
  if (action.empty()) throw std::invalid_argument("pretrain_step: state leaves no room for the action");
  if (r.truncated) r.event = "truncated";

  const auto scored = score_action(model, context, action);
  const auto nll = cross_entropy(scored.prediction_rows, action);
  backward(nll, Channel::Nll);
  r.nll = nll.item();
  r.reward = r.gating_reward = reward.reward(sample.state, sample.action);
  r.eta_r = gated_learning_rate(r.gating_reward, eta);
  r.action = std::move(action);
  apply_update(model, active_rule(Algorithm::Pretrain, ctx), eta, r.eta_r, ctx.keep_channels, r);
  ++ctx.step;
  return r;
}

TrainStepReport finetune_step(Model& model, const StateView& prompt, const RewardModel& reward, double eta,
                              StepContext& ctx) {
  auto r = begin(Algorithm::Finetune, eta, ctx, model);
  const auto& opts = ctx.options;
  const auto context = prompt_tokens(prompt);
  if (context.size() + static_cast<std::size_t>(opts.generation.max_new) > static_cast<std::size_t>(model.config().max_seq_len)) {
    throw std::invalid_argument("finetune_step: prompt of " + std::to_string(context.size()) +
                                " tokens plus max_new exceeds max_seq_len");
  }
  Rng rng = Rng::stream(ctx.seed, "sampling", ctx.step);
  auto utterance = generate(model, context, Stream::Behavior, opts.generation, rng);
  r.action = utterance.tokens;
  if (r.action.empty() || r.action.front() == tok::kEom) {
    r.skipped = true;
    r.event = "empty_generation";
    ++ctx.step;
    return r;
  }
  r.truncated = !utterance.ended;
  const auto message = close_message(r.action);
  r.reward = reward.reward(prompt, message);
  const double advantage = r.reward - ctx.baseline;

  std::vector<double> old_logp;
  const int epochs = opts.ppo ? opts.ppo_epochs : 1;
  const auto rule = active_rule(Algorithm::Finetune, ctx);
  for (int e = 0; e < epochs; ++e) {
    if (e > 0) model.zero_grad();
    const auto scored = score_action(model, context, r.action);
    const auto nll = cross_entropy(scored.prediction_rows, r.action);
    std::vector<double> logp;
    const auto rl = policy_loss(scored.behavior_rows, r.action, advantage, old_logp, opts.ppo_clip, &logp);
    backward(nll, Channel::Nll);
    backward(rl, Channel::Rl);
    if (e == 0) {
      r.nll = nll.item();
      r.rl_loss = rl.item();
      if (opts.ppo) old_logp = logp;
    }
    TrainStepReport epoch_report = r;
    apply_update(model, rule, eta, 0.0, ctx.keep_channels && e + 1 == epochs, epoch_report);
    if (e == 0) {
      r.coef_nll = epoch_report.coef_nll;
      r.coef_rl = epoch_report.coef_rl;
    }
    for (std::size_t t = 0; t < kNumTags; ++t) {
      r.received_nll[t] = r.received_nll[t] || epoch_report.received_nll[t];
      r.received_rl[t] = r.received_rl[t] || epoch_report.received_rl[t];
      r.delta_norm[t] = std::hypot(r.delta_norm[t], epoch_report.delta_norm[t]);
    }
  }
  update_baseline(ctx, r.reward);
  if (r.truncated) r.event = "truncated";
  ++ctx.step;
  return r;
}

TrainStepReport imitation_step(Model& model, std::span<const ImitationSample> batch, double eta, StepContext& ctx) {
  if (batch.empty()) throw std::invalid_argument("imitation_step: empty batch");
  auto r = begin(Algorithm::Imitate, eta, ctx, model);
  const double weight = 1.0 / static_cast<double>(batch.size());
  for (const auto& sample : batch) {
    require_message(sample.action, "imitation_step");
    if (sample.state.viewer == sample.target) {
      throw std::logic_error("imitation_step: sample state is already the target's view");
    }
    const auto switched = perspective_switch(sample.state);
    if (switched.viewer != sample.target) {
      throw std::logic_error("imitation_step: switched state is viewed by '" + switched.viewer +
                             "', not the target '" + sample.target + "'");
    }
    const auto context = prompt_tokens(switched);
    auto action = sample.action;
    if (fit_action(context.size(), action, static_cast<std::size_t>(model.config().max_seq_len),
                   static_cast<std::size_t>(ctx.options.generation.max_new))) {
      r.truncated = true;
      r.event = "truncated";
    }
    if (action.empty()) throw std::invalid_argument("imitation_step: state leaves no room for the action");

    const auto scored = score_action(model, context, action);
    const auto imitation = cross_entropy(scored.behavior_rows, action);
    const auto simulation = cross_entropy(scored.prediction_rows, action);
    backward(scale(simulation, weight), Channel::Nll);
    backward(scale(imitation, weight), Channel::Rl);
    r.nll += weight * simulation.item();
    r.rl_loss += weight * imitation.item();
    if (batch.size() == 1) r.action = std::move(action);
  }
  apply_update(model, active_rule(Algorithm::Imitate, ctx), eta, 0.0, ctx.keep_channels, r);
  ++ctx.step;
  return r;
}

TrainStepReport imitation_step(Model& model, const ImitationSample& sample, double eta, StepContext& ctx) {
  return imitation_step(model, std::span<const ImitationSample>(&sample, 1), eta, ctx);
}

TrainStepReport kindness_step(Model& model, const StateView& prompt, const RewardModel& self_reward,
                              const TargetRewardEstimator* inferred, double eta, StepContext& ctx) {
  if (inferred == nullptr) throw std::invalid_argument("kindness_step: no inferred-reward estimator configured");
  auto r = begin(Algorithm::Kindness, eta, ctx, model);
  const auto& opts = ctx.options;
  const auto limit = static_cast<std::size_t>(model.config().max_seq_len);
  const auto context = prompt_tokens(prompt);
  if (context.size() + static_cast<std::size_t>(opts.generation.max_new) > limit) {
    throw std::invalid_argument("kindness_step: prompt of " + std::to_string(context.size()) +
                                " tokens plus max_new exceeds max_seq_len");
  }
  Rng rng = Rng::stream(ctx.seed, "sampling", ctx.step);
  auto utterance = generate(model, context, Stream::Behavior, opts.generation, rng);
  r.action = utterance.tokens;
  if (r.action.empty() || r.action.front() == tok::kEom) {
    r.skipped = true;
    r.event = "empty_generation";
    ++ctx.step;
    return r;
  }
  r.truncated = !utterance.ended;
  const auto message = close_message(r.action);

  // The partner's state after our message, and their simulated reply.
  const auto target_state = append_action(prompt, message);
  const auto target_context = prompt_tokens(target_state);
  if (target_context.size() < limit) {
    GenerateOptions greedy{opts.generation.max_new, 0.0};
    r.predicted = generate(model, target_context, Stream::Prediction, greedy, rng).tokens;
  }
  const auto reply = close_message(r.predicted);
  r.reward = inferred->estimate(target_state, reply);
  r.gating_reward = self_reward.reward(target_state, reply);
  r.eta_r = gated_learning_rate(r.gating_reward, eta);

  const auto scored = score_action(model, context, r.action);
  const auto nll = cross_entropy(scored.prediction_rows, r.action);
  const auto rl = policy_loss(scored.behavior_rows, r.action, r.reward - ctx.baseline, {}, 0.0, nullptr);
  backward(nll, Channel::Nll);
  backward(rl, Channel::Rl);
  r.nll = nll.item();
  r.rl_loss = rl.item();
  apply_update(model, active_rule(Algorithm::Kindness, ctx), eta, r.eta_r, ctx.keep_channels, r);
  update_baseline(ctx, r.reward);
  if (r.truncated) r.event = "truncated";
  ++ctx.step;
  return r;
}

}  // namespace tomt
