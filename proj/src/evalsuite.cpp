// Copyright 2026 The tomt Authors
// SPDX-License-Identifier: Apache-2.0

#include "tomt/evalsuite.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <sstream>
#include <stdexcept>

namespace tomt {

namespace {

// Sum of -log p(token) for every token the author of a message emits, read
// off one forward pass over the full conversation from `viewer`'s side.
void accumulate_nll(const Model& model, const Conversation& conv, const std::string& viewer, Stream stream,
                    double& total, std::size_t& count) {
  const auto view = build_state_at(conv, viewer, conv.messages.size());
  const auto& tokens = view.tokens;
  const auto logits = model.forward(tokens);
  const auto& table = stream == Stream::Behavior ? logits.behavior : logits.prediction;
  const std::size_t vocab = table.cols();
  bool authored = false;
  for (std::size_t pos = 1; pos < tokens.size(); ++pos) {
    const TokenId prev = tokens[pos - 1];
    if (prev == tok::kSelf) authored = true;
    if (prev == tok::kOther) authored = false;
    if (tok::is_speaker(tokens[pos]) || !authored) continue;
    const float* row = table.data().data() + (pos - 1) * vocab;
    double mx = row[0];
    for (std::size_t j = 1; j < vocab; ++j) mx = std::max(mx, static_cast<double>(row[j]));
    double z = 0.0;
    for (std::size_t j = 0; j < vocab; ++j) z += std::exp(static_cast<double>(row[j]) - mx);
    total += mx + std::log(z) - static_cast<double>(row[tokens[pos]]);
    ++count;
  }
}

}  // namespace

double perplexity(const Model& model, std::span<const Conversation> corpus, Stream stream) {
  NoGradGuard guard;
  double total = 0.0;
  std::size_t count = 0;
  for (const auto& conv : corpus) {
    if (conv.messages.empty()) continue;
    for (const auto& who : conv.participants) accumulate_nll(model, conv, who, stream, total, count);
  }
  if (count == 0) throw std::invalid_argument("perplexity: corpus holds no message tokens");
  return std::exp(total / static_cast<double>(count));
}

double imitation_accuracy(const Model& model, std::span<const Conversation> corpus, const std::string& persona) {
  std::size_t hits = 0, total = 0;
  Rng unused(0);
  for (const auto& conv : corpus) {
    for (std::size_t n = 0; n < conv.messages.size(); ++n) {
      const auto& m = conv.messages[n];
      if (m.speaker != persona) continue;
      const auto expected = message_tokens(m.text);
      const auto context = prompt_tokens(build_state_at(conv, persona, n));
      ++total;
      if (context.size() >= static_cast<std::size_t>(model.config().max_seq_len)) continue;
      const GenerateOptions greedy{static_cast<int>(expected.size()), 0.0};
      if (generate(model, context, Stream::Behavior, greedy, unused).tokens == expected) ++hits;
    }
  }
  return total == 0 ? 0.0 : static_cast<double>(hits) / static_cast<double>(total);
}

double reward_inference_gap(const std::map<std::string, RewardModel>& true_rewards,
                            const TargetRewardEstimator& inferred, std::span<const Conversation> corpus) {
  double total = 0.0;
  std::size_t count = 0;
  for (const auto& conv : corpus) {
    for (std::size_t n = 0; n < conv.messages.size(); ++n) {
      const auto& m = conv.messages[n];
      const auto it = true_rewards.find(m.speaker);
      if (it == true_rewards.end()) continue;
      const auto state = build_state_at(conv, m.speaker, n);
      const auto action = message_tokens(m.text);
      total += std::abs(it->second.reward(state, action) - inferred.estimate(state, action));
      ++count;
    }
  }
  if (count == 0) throw std::invalid_argument("reward_inference_gap: no message has a true reward model");
  return total / static_cast<double>(count);
}

Conversation self_play(const Model& model, const std::string& role, const PersonaSpec& partner, int rounds,
                       const GenerateOptions& options, Rng& rng) {
  Conversation conv{"self-play", {role, partner.name}, {}};
  const auto limit = static_cast<std::size_t>(model.config().max_seq_len);
  for (int t = 0; t < rounds; ++t) {
    const auto context = prompt_tokens(build_state_at(conv, role, conv.messages.size()));
    if (context.size() + static_cast<std::size_t>(options.max_new) > limit) break;
    const auto utterance = generate(model, context, Stream::Behavior, options, rng);
    std::string text;
    for (const TokenId id : utterance.tokens) {
      if (tok::is_byte(id)) text.push_back(static_cast<char>(id));
    }
    auto reply = persona_reply(partner, text);
    conv.messages.push_back({role, std::move(text), t});
    conv.messages.push_back({partner.name, std::move(reply), t});
  }
  return conv;
}

double marker_frequency(std::span<const Conversation> corpus, const std::string& speaker, std::string_view marker) {
  std::size_t hits = 0, total = 0;
  for (const auto& conv : corpus) {
    for (const auto& m : conv.messages) {
      if (m.speaker != speaker) continue;
      ++total;
      hits += m.text.find(marker) != std::string::npos ? 1 : 0;
    }
  }
  return total == 0 ? 0.0 : static_cast<double>(hits) / static_cast<double>(total);
}

double least_squares_slope(std::span<const double> ys) {
  const std::size_t n = ys.size();
  if (n < 2) throw std::invalid_argument("least_squares_slope: need at least two points");
  const double x_mean = static_cast<double>(n - 1) / 2.0;
  double y_mean = 0.0;
  for (double y : ys) y_mean += y;
  y_mean /= static_cast<double>(n);
  double sxy = 0.0, sxx = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double dx = static_cast<double>(i) - x_mean;
    sxy += dx * (ys[i] - y_mean);
    sxx += dx * dx;
  }
  return sxy / sxx;
}

AuditResult routing_audit(Algorithm algo, const StepFn& step, Model& model, StepContext& ctx) {
  if (ctx.options.ppo) throw std::invalid_argument("routing_audit: PPO applies several updates per step; disable it");
  std::vector<std::vector<float>> before;
  before.reserve(model.parameters().size());
  for (const auto& p : model.parameters()) before.emplace_back(p.tensor.data().begin(), p.tensor.data().end());

  const bool keep = ctx.keep_channels;
  ctx.keep_channels = true;
  AuditResult audit;
  audit.algo = algo;
  try {
    audit.report = step(model, ctx);
  } catch (...) {
    ctx.keep_channels = keep;
    throw;
  }
  ctx.keep_channels = keep;
  const auto& report = audit.report;

  const auto canonical = routing_for(algo, ctx.options.behavior_nll_ascent);
  const bool gated = algo == Algorithm::Pretrain || algo == Algorithm::Kindness;
  const double eta = report.eta;
  const double eta_r = gated && eta > 0.0 ? gated_learning_rate(report.gating_reward, eta) : 0.0;

  // Per tag normal equations for delta ~ -(a * grad_nll + b * grad_rl).
  struct Moments {
    double nn = 0, rr = 0, nr = 0, dn = 0, dr = 0, dd = 0;
  };
  std::array<Moments, kNumTags> mom{};
  std::array<std::vector<std::string>, kNumTags> deviating;
  std::array<std::string, kNumTags> first_group;
  auto fail = [&](ModuleTag tag, std::string_view channel, const std::string& group, const std::string& what) {
    std::ostringstream os;
    os << to_string(algo) << ": tag " << to_string(tag) << " channel " << channel << " group " << group << ": "
       << what;
    audit.violations.push_back(os.str());
  };

  for (std::size_t k = 0; k < model.parameters().size(); ++k) {
    auto& p = model.parameters()[k];
    const auto t = static_cast<std::size_t>(p.tag);
    if (first_group[t].empty()) first_group[t] = p.group;
    const double cn = canonical.nll[t].resolve(eta, eta_r);
    const double cr = canonical.rl[t].resolve(eta, eta_r);
    const auto now = p.tensor.data();
    const auto gn = p.tensor.grad(Channel::Nll);
    const auto gr = p.tensor.grad(Channel::Rl);
    bool mismatch = false;
    for (std::size_t i = 0; i < now.size(); ++i) {
      const double delta = static_cast<double>(now[i]) - before[k][i];
      mom[t].nn += static_cast<double>(gn[i]) * gn[i];
      mom[t].rr += static_cast<double>(gr[i]) * gr[i];
      mom[t].nr += static_cast<double>(gn[i]) * gr[i];
      mom[t].dn += -delta * gn[i];
      mom[t].dr += -delta * gr[i];
      mom[t].dd += delta * delta;
      const auto expected = static_cast<float>(before[k][i] - (cn * gn[i] + cr * gr[i]));
      mismatch = mismatch || std::memcmp(&expected, &now[i], sizeof(float)) != 0;
    }
    if (mismatch) deviating[t].push_back(p.group);
  }

  for (std::size_t t = 0; t < kNumTags; ++t) {
    const auto& m = mom[t];
    auto& out = audit.tags[t];
    out.delta_norm = std::sqrt(m.dd);
    const double det = m.nn * m.rr - m.nr * m.nr;
    if (m.rr == 0.0 && m.nn > 0.0) {
      out.fitted_nll = m.dn / m.nn;
    } else if (m.nn == 0.0 && m.rr > 0.0) {
      out.fitted_rl = m.dr / m.rr;
    } else if (m.nn > 0.0 && m.rr > 0.0 && det > 1e-12 * m.nn * m.rr) {
      out.fitted_nll = (m.dn * m.rr - m.dr * m.nr) / det;
      out.fitted_rl = (m.dr * m.nn - m.dn * m.nr) / det;
    }
    const double scale = std::max(eta, 1e-12);
    out.received_nll = std::abs(out.fitted_nll) > 1e-3 * scale;
    out.received_rl = std::abs(out.fitted_rl) > 1e-3 * scale;

    const auto tag = static_cast<ModuleTag>(t);
    const double want_nll = canonical.nll[t].resolve(eta, eta_r);
    const double want_rl = canonical.rl[t].resolve(eta, eta_r);
    if (deviating[t].empty()) {
      if (report.skipped) continue;
      // Coefficients below the receipt threshold count as not routed.
      if (out.received_nll != (std::abs(want_nll) > 1e-3 * scale)) {
        fail(tag, "nll", first_group[t], out.received_nll ? "unexpected update" : "expected update not received");
      }
      if (out.received_rl != (std::abs(want_rl) > 1e-3 * scale)) {
        fail(tag, "rl", first_group[t], out.received_rl ? "unexpected update" : "expected update not received");
      }
      continue;
    }
    const bool off_nll = std::abs(out.fitted_nll - want_nll) > 1e-3 * scale;
    const bool off_rl = std::abs(out.fitted_rl - want_rl) > 1e-3 * scale;
    std::ostringstream what;
    what << "update deviates from routing (fitted nll=" << out.fitted_nll << " want " << want_nll
         << ", fitted rl=" << out.fitted_rl << " want " << want_rl << ")";
    const auto& group = deviating[t].front();
    if (off_rl) fail(tag, "rl", group, what.str());
    if (off_nll || !off_rl) fail(tag, "nll", group, what.str());
  }
  for (auto& p : model.parameters()) {
    p.tensor.zero_grad(Channel::Nll);
    p.tensor.zero_grad(Channel::Rl);
  }
  return audit;
}

nlohmann::ordered_json to_json_line(const EvalReport& r) {
  return {{"metric", r.metric}, {"value", r.value}, {"n", r.n}, {"seed", r.seed}, {"ckpt_digest", r.ckpt_digest}};
}

}  // namespace tomt
