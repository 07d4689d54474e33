// Copyright 2026 The tomt Authors
// SPDX-License-Identifier: Apache-2.0

#include "tomt/selftest.hpp"

#include <sstream>

#include "tomt/evalsuite.hpp"
#include "tomt/training.hpp"

namespace tomt::selftest {

namespace {

constexpr double kMixedTolerance = 1e-2;
constexpr double kFloat64Tolerance = 1e-5;

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(3);
  os << v;
  return os.str();
}

struct Worst {
  double error = 0.0;
  std::string where;

  void update(const GradCheckResult& r, std::uint64_t seed) {
    if (r.max_relative_error >= error) {
      error = r.max_relative_error;
      where = "seed " + std::to_string(seed) + " " + r.worst;
    }
  }
};

Outcome gradient_outcome(const std::string& name, const Worst& mixed, const Worst& f64) {
  Outcome o{name, mixed.error < kMixedTolerance && f64.error < kFloat64Tolerance, {}};
  o.detail = "32-bit " + fmt(mixed.error) + " (< " + fmt(kMixedTolerance) + "), 64-bit " + fmt(f64.error) + " (< " +
             fmt(kFloat64Tolerance) + ")";
  if (!o.pass) o.detail += "; worst: " + (mixed.error >= kMixedTolerance ? mixed.where : f64.where);
  return o;
}

ModelConfig with_layout(std::vector<std::vector<ModuleTag>> tags, int n_heads, int d_head) {
  ModelConfig c;
  c.n_heads = n_heads;
  c.d_head = d_head;
  c.d_model = n_heads * d_head;
  c.d_ff = 2 * c.d_model;
  c.max_seq_len = 64;
  c.head_tags = std::move(tags);
  return c;
}

struct Probe {
  Model model;
  std::vector<Conversation> corpus;
  RewardModel reward;
  StepContext ctx;
};

Probe make_probe(const ModelConfig& layout, std::uint64_t seed, std::size_t layout_index) {
  ModelConfig cfg = layout;
  cfg.seed = seed * 31 + layout_index;
  Rng rng = Rng::stream(cfg.seed, "probe");
  const std::vector<PersonaSpec> personas{{"bot", PersonaKind::Echo}, {"kind", PersonaKind::Polite}};
  Probe p{Model(cfg), generate_corpus(personas, OpenerSpec{}, 4, 2, cfg.seed), {}, {}};
  p.reward.rules = {{"", 0.4}, {"o", -0.6}, {"a", 0.3}};
  p.reward.length_penalty = 0.01;
  p.ctx.seed = cfg.seed;
  p.ctx.step = rng.below(1000);
  // A nonzero baseline keeps the advantage away from zero so the RL
  // channel always carries signal.
  p.ctx.baseline = 0.25 + 0.5 * rng.uniform();
  p.ctx.options.generation = {8, 1.0};
  return p;
}

StepFn step_for(Algorithm algo, Probe& probe, Rng& rng) {
  switch (algo) {
    case Algorithm::Pretrain: {
      auto samples = pretrain_samples(probe.corpus);
      auto sample = samples[rng.below(samples.size())];
      return [sample, &probe](Model& m, StepContext& ctx) { return pretrain_step(m, sample, probe.reward, 0.05, ctx); };
    }
    case Algorithm::Imitate: {
      auto samples = imitation_samples(probe.corpus, "bot");
      auto sample = samples[rng.below(samples.size())];
      return [sample](Model& m, StepContext& ctx) { return imitation_step(m, sample, 0.05, ctx); };
    }
    case Algorithm::Finetune:
    case Algorithm::Kindness: {
      const auto& conv = probe.corpus[rng.below(probe.corpus.size())];
      auto prompt = build_state_at(conv, conv.participants[0], 2 * rng.below((conv.messages.size() + 1) / 2));
      if (algo == Algorithm::Finetune) {
        return [prompt, &probe](Model& m, StepContext& ctx) {
          return finetune_step(m, prompt, probe.reward, 0.05, ctx);
        };
      }
      return [prompt, &probe](Model& m, StepContext& ctx) {
        const CommonalityEstimator estimator(probe.reward);
        return kindness_step(m, prompt, probe.reward, &estimator, 0.05, ctx);
      };
    }
  }
  return {};
}

}  // namespace

std::vector<ModelConfig> audit_layouts() {
  using enum ModuleTag;
  return {
      with_layout({}, 4, 8),
      with_layout({{Perception, Behavior, Prediction, Perception}, {Prediction, Perception, Perception, Behavior}}, 4,
                  8),
      with_layout({{Behavior, Behavior, Prediction, Prediction, Perception, Perception, Perception, Perception},
                   {Behavior, Prediction, Perception, Perception, Perception, Perception, Perception, Perception}},
                  8, 4),
  };
}

std::vector<Outcome> gradient_suite(const Options& options) {
  std::vector<Outcome> out;
  for (const auto& op : op_cases()) {
    Worst mixed, f64;
    for (std::size_t s = 0; s < options.gradient_seeds; ++s) {
      const std::uint64_t seed = options.seed + s;
      mixed.update(op.run(seed, CheckPrecision::Mixed), seed);
      f64.update(op.run(seed, CheckPrecision::Float64), seed);
    }
    out.push_back(gradient_outcome("gradcheck/" + op.name, mixed, f64));
  }
  Worst mixed, f64;
  for (std::uint64_t s = 0; s < 3; ++s) {
    const std::uint64_t seed = options.seed + s;
    mixed.update(model_check(ModelConfig{}, seed, CheckPrecision::Mixed, 6), seed);
    f64.update(model_check(ModelConfig{}, seed, CheckPrecision::Float64, 6), seed);
  }
  out.push_back(gradient_outcome("gradcheck/model", mixed, f64));
  return out;
}

std::vector<Outcome> routing_suite(const Options& options) {
  std::vector<Outcome> out;
  const auto layouts = audit_layouts();
  for (const auto algo : kAllAlgorithms) {
    Outcome o{"routing/" + std::string(to_string(algo)), true, {}};
    std::size_t audits = 0, skipped = 0;
    for (std::size_t l = 0; l < layouts.size(); ++l) {
      for (std::size_t s = 0; s < options.audit_seeds; ++s) {
        auto probe = make_probe(layouts[l], options.seed + s, l);
        if (options.inject_prediction_rl) {
          auto rule = routing_for(algo, probe.ctx.options.behavior_nll_ascent);
          rule.rl[static_cast<std::size_t>(ModuleTag::Prediction)] = {Rate::Eta, 1.0};
          probe.ctx.routing_override = rule;
        }
        Rng rng = Rng::stream(probe.ctx.seed, "probe-step");
        const auto audit = routing_audit(algo, step_for(algo, probe, rng), probe.model, probe.ctx);
        ++audits;
        skipped += audit.report.skipped ? 1 : 0;
        if (!audit.ok() && o.pass) {
          o.pass = false;
          o.detail = "layout " + std::to_string(l) + " seed " + std::to_string(options.seed + s) + ": " +
                     audit.violations.front();
        }
      }
    }
    if (o.pass) {
      o.detail = std::to_string(audits) + " audits, 0 violations";
      if (skipped) o.detail += " (" + std::to_string(skipped) + " skipped steps)";
    }
    out.push_back(std::move(o));
  }
  return out;
}

Conversation random_conversation(Rng& rng, std::size_t max_messages) {
  static const std::vector<std::string> names{"ann", "bo", "cy", "dee", "eli"};
  Conversation conv;
  conv.id = "r" + std::to_string(rng.next_u64() % 100000);
  const auto a = rng.below(names.size());
  const auto b = (a + 1 + rng.below(names.size() - 1)) % names.size();
  conv.participants = {names[a], names[b]};
  const std::size_t m = rng.below(max_messages + 1);
  for (std::size_t n = 0; n < m; ++n) {
    std::string text(rng.below(7), '\0');
    for (auto& c : text) c = static_cast<char>(rng.below(256));
    conv.messages.push_back({conv.participants[n % 2], std::move(text), static_cast<int>(n / 2)});
  }
  return conv;
}

std::vector<Outcome> perspective_suite(const Options& options) {
  Rng rng = Rng::stream(options.seed, "perspective");
  Outcome involution{"perspective/involution", true, {}};
  for (std::size_t i = 0; i < options.property_cases && involution.pass; ++i) {
    const auto conv = random_conversation(rng);
    const auto& viewer = conv.participants[rng.below(2)];
    const auto state = build_state_at(conv, viewer, rng.below(conv.messages.size() + 1));
    const auto once = perspective_switch(state);
    if (perspective_switch(once) != state) {
      involution = {involution.name, false, "case " + std::to_string(i) + ": S(S(s)) != s"};
    } else if (once.viewer != state.other || once.tokens.size() != state.tokens.size()) {
      involution = {involution.name, false, "case " + std::to_string(i) + ": S did not swap roles"};
    }
  }
  if (involution.pass) involution.detail = std::to_string(options.property_cases) + " random states";

  Outcome coherence{"perspective/append-coherence", true, {}};
  for (std::size_t i = 0; i < options.property_cases && coherence.pass; ++i) {
    const auto conv = random_conversation(rng);
    auto state = build_state(conv, conv.participants[0], 0);
    for (std::size_t n = 0; n < conv.messages.size(); ++n) {
      const auto& author = conv.messages[n].speaker;
      state = append_action(state, message_tokens(conv.messages[n].text));
      const auto& next = conv.partner_of(author);
      std::string what;
      if (state != build_state_at(conv, next, n + 1)) {
        what = "append_action after message " + std::to_string(n) + " differs from the rebuilt state";
      } else if ((n + 1) % 2 == 0 && state != build_state(conv, next, static_cast<int>((n + 1) / 2))) {
        what = "round " + std::to_string((n + 1) / 2) + " state differs from build_state";
      }
      if (!what.empty()) {
        coherence = {coherence.name, false, "case " + std::to_string(i) + ": " + what};
        break;
      }
    }
  }
  if (coherence.pass) coherence.detail = std::to_string(options.property_cases) + " random conversations";
  return {involution, coherence};
}

std::vector<Outcome> run_all(const Options& options) {
  auto out = gradient_suite(options);
  for (auto& o : routing_suite(options)) out.push_back(std::move(o));
  for (auto& o : perspective_suite(options)) out.push_back(std::move(o));
  return out;
}

}  // namespace tomt::selftest
