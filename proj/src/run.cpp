// Copyright 2026 The tomt Authors
// SPDX-License-Identifier: Apache-2.0

#include "tomt/run.hpp"

#include <algorithm>
#include <fstream>
#include <ostream>
#include <set>

#include "tomt/error.hpp"

namespace tomt {

double PhaseSpec::eta_at(int step_in_phase) const {
  if (!eta_final || steps <= 1) return eta;
  const double frac = static_cast<double>(step_in_phase) / static_cast<double>(steps - 1);
  return eta + (*eta_final - eta) * frac;
}

namespace {

using json = nlohmann::json;

void reject_unknown(const json& j, std::initializer_list<std::string_view> known, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + ": expected an object");
  for (const auto& [key, _] : j.items()) {
    if (std::find(known.begin(), known.end(), key) == known.end()) {
      throw ConfigError(where + ": unknown key '" + key + "'");
    }
  }
}

json phase_json(const PhaseSpec& p) {
  json j{{"algo", to_string(p.algo)}, {"steps", p.steps}, {"eta", p.eta}};
  if (p.eta_final) j["eta_final"] = *p.eta_final;
  if (!p.reward.empty()) j["reward"] = p.reward;
  if (!p.target.empty()) j["target"] = p.target;
  if (!p.role.empty()) j["role"] = p.role;
  if (p.batch != 1) j["batch"] = p.batch;
  return j;
}

PhaseSpec parse_phase(const json& j, std::size_t index) {
  const auto where = "schedule[" + std::to_string(index) + "]";
  reject_unknown(j, {"algo", "steps", "eta", "eta_final", "reward", "target", "role", "batch"}, where);
  PhaseSpec p;
  p.algo = parse_algorithm(j.at("algo").get<std::string>());
  p.steps = j.at("steps").get<int>();
  p.eta = j.at("eta").get<double>();
  if (j.contains("eta_final")) p.eta_final = j.at("eta_final").get<double>();
  p.reward = j.value("reward", "");
  p.target = j.value("target", "");
  p.role = j.value("role", "");
  p.batch = j.value("batch", 1);
  return p;
}

json persona_json(const PersonaSpec& p) {
  return {{"name", p.name},
          {"kind", to_string(p.kind)},
          {"courtesy", p.courtesy},
          {"thanks", p.thanks},
          {"neutral", p.neutral}};
}

PersonaSpec parse_persona(const json& j, std::size_t index) {
  reject_unknown(j, {"name", "kind", "courtesy", "thanks", "neutral"}, "personas[" + std::to_string(index) + "]");
  PersonaSpec p;
  p.name = j.at("name").get<std::string>();
  p.kind = parse_persona_kind(j.at("kind").get<std::string>());
  p.courtesy = j.value("courtesy", p.courtesy);
  p.thanks = j.value("thanks", p.thanks);
  p.neutral = j.value("neutral", p.neutral);
  return p;
}

}  // namespace

void to_json(json& j, const RunConfig& c) {
  json personas = json::array();
  for (const auto& p : c.personas) personas.push_back(persona_json(p));
  json schedule = json::array();
  for (const auto& p : c.schedule) schedule.push_back(phase_json(p));
  json kindness{{"gamma", c.kindness.gamma},
                {"known_individuals", c.kindness.known_individuals}};
  if (c.kindness.horizon) kindness["horizon"] = *c.kindness.horizon;
  // The model is seeded from the root seed.
  json model = c.model;
  model.erase("seed");
  j = json{{"seed", c.seed},
           {"model", model},
           {"personas", personas},
           {"opener",
            {{"name", c.opener.name},
             {"words", c.opener.words},
             {"min_words", c.opener.min_words},
             {"max_words", c.opener.max_words},
             {"suffix", c.opener.suffix},
             {"suffix_probability", c.opener.suffix_probability}}},
           {"corpus", {{"conversations", c.conversations}, {"turns", c.turns}}},
           {"rewards", c.rewards},
           {"kindness", kindness},
           {"training", c.training},
           {"schedule", schedule},
           {"checkpoint_every", c.checkpoint_every}};
}

RunConfig parse_run_config(const json& j) {
  try {
    reject_unknown(j, {"seed", "model", "personas", "opener", "corpus", "rewards", "kindness", "training", "schedule",
                       "checkpoint_every"},
                   "config");
    RunConfig c;
    c.seed = j.value("seed", std::uint64_t{0});
    if (j.contains("model")) {
      reject_unknown(j.at("model"),
                     {"n_layers", "n_heads", "d_model", "d_head", "d_ff", "vocab_size", "max_seq_len", "head_tags"},
                     "model");
      c.model = j.at("model").get<ModelConfig>();
    }
    c.model.seed = c.seed;
    const json personas = j.value("personas", json::array());
    for (std::size_t i = 0; i < personas.size(); ++i) c.personas.push_back(parse_persona(personas.at(i), i));
    if (j.contains("opener")) {
      const auto& o = j.at("opener");
      reject_unknown(o, {"name", "words", "min_words", "max_words", "suffix", "suffix_probability"}, "opener");
      c.opener.name = o.value("name", c.opener.name);
      c.opener.words = o.value("words", c.opener.words);
      c.opener.min_words = o.value("min_words", c.opener.min_words);
      c.opener.max_words = o.value("max_words", c.opener.max_words);
      c.opener.suffix = o.value("suffix", c.opener.suffix);
      c.opener.suffix_probability = o.value("suffix_probability", c.opener.suffix_probability);
    }
    if (j.contains("corpus")) {
      reject_unknown(j.at("corpus"), {"conversations", "turns"}, "corpus");
      c.conversations = j.at("corpus").value("conversations", 0);
      c.turns = j.at("corpus").value("turns", 0);
    }
    const json rewards = j.value("rewards", json::object());
    for (const auto& [name, r] : rewards.items()) {
      reject_unknown(r, {"rules", "length_penalty"}, "rewards." + name);
      c.rewards[name] = r.get<RewardModel>();
    }
    if (j.contains("kindness")) {
      const auto& k = j.at("kindness");
      reject_unknown(k, {"gamma", "known_individuals", "horizon"}, "kindness");
      c.kindness.gamma = k.value("gamma", c.kindness.gamma);
      c.kindness.known_individuals = k.value("known_individuals", std::set<std::string>{});
      if (k.contains("horizon") && !k.at("horizon").is_null()) c.kindness.horizon = k.at("horizon").get<int>();
    }
    if (j.contains("training")) {
      reject_unknown(j.at("training"),
                     {"max_new", "temperature", "baseline_rate", "ppo", "ppo_epochs", "ppo_clip", "behavior_nll_ascent"},
                     "training");
      c.training = j.at("training").get<TrainOptions>();
    }
    const json schedule = j.value("schedule", json::array());
    for (std::size_t i = 0; i < schedule.size(); ++i) c.schedule.push_back(parse_phase(schedule.at(i), i));
    c.checkpoint_every = j.value("checkpoint_every", 0);
    c.validate();
    return c;
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config '" + path.string() + "'");
  json j;
  try {
    j = json::parse(in, nullptr, true, /*ignore_comments=*/true);
  } catch (const json::parse_error& e) {
    throw ConfigError("config '" + path.string() + "': " + e.what());
  }
  return parse_run_config(j);
}

void RunConfig::validate() const {
  model.validate();
  kindness.validate();
  if (conversations < 0 || turns < 0) throw ConfigError("corpus: counts must be non-negative");
  if (checkpoint_every < 0) throw ConfigError("checkpoint_every must be >= 0");
  std::set<std::string> names{opener.name};
  for (const auto& p : personas) {
    if (!names.insert(p.name).second) throw ConfigError("persona name '" + p.name + "' is used twice");
  }
  for (std::size_t i = 0; i < schedule.size(); ++i) {
    const auto& p = schedule[i];
    const auto where = "schedule[" + std::to_string(i) + "] (" + std::string(to_string(p.algo)) + ")";
    if (p.steps < 0) throw ConfigError(where + ": steps must be >= 0");
    if (!(p.eta > 0.0) || (p.eta_final && !(*p.eta_final > 0.0))) {
      throw ConfigError(where + ": learning rates must be positive");
    }
    if (p.batch < 1) throw ConfigError(where + ": batch must be >= 1");
    const bool needs_reward = p.algo != Algorithm::Imitate;
    if (needs_reward && p.reward.empty()) throw ConfigError(where + ": names no reward model");
    if (!p.reward.empty() && !rewards.count(p.reward)) {
      throw ConfigError(where + ": reward model '" + p.reward + "' is not defined");
    }
    if (p.algo == Algorithm::Imitate && p.target.empty()) throw ConfigError(where + ": imitate needs a target");
    for (const auto* who : {&p.target, &p.role}) {
      if (!who->empty() && !names.count(*who)) throw ConfigError(where + ": unknown persona '" + *who + "'");
    }
  }
  for (const auto& who : kindness.known_individuals) {
    if (!names.count(who)) throw ConfigError("kindness.known_individuals: unknown persona '" + who + "'");
  }
}

std::uint64_t RunConfig::total_steps() const {
  std::uint64_t total = 0;
  for (const auto& p : schedule) total += static_cast<std::uint64_t>(p.steps);
  return total;
}

Digest RunConfig::digest() const { return sha256(json(*this).dump()); }

std::vector<Conversation> generate_corpus(const RunConfig& config) {
  if (config.personas.empty()) throw ConfigError("config defines no personas");
  return generate_corpus(config.personas, config.opener, config.conversations, config.turns, config.seed);
}

std::vector<Conversation> training_split(std::span<const Conversation> corpus) {
  std::vector<Conversation> out;
  for (const auto& c : corpus) {
    if (!is_heldout(c.id)) out.push_back(c);
  }
  return out;
}

std::vector<Conversation> heldout_split(std::span<const Conversation> corpus) {
  std::vector<Conversation> out;
  for (const auto& c : corpus) {
    if (is_heldout(c.id)) out.push_back(c);
  }
  return out;
}

std::vector<StateView> speaking_prompts(std::span<const Conversation> corpus, const std::string& role,
                                        const std::string& partner, std::size_t max_seq_len, std::size_t room) {
  std::vector<StateView> out;
  for (const auto& conv : corpus) {
    const bool has_role = conv.participants[0] == role || conv.participants[1] == role;
    if (!has_role || (!partner.empty() && conv.partner_of(role) != partner)) continue;
    for (std::size_t n = 0; n < conv.messages.size(); ++n) {
      if (conv.messages[n].speaker != role) continue;
      auto state = build_state_at(conv, role, n);
      if (state.tokens.size() + 1 + room <= max_seq_len) out.push_back(std::move(state));
    }
  }
  return out;
}

namespace {

// Per-phase data drawn from the training split, prepared before any step.
struct PhaseData {
  std::vector<PretrainSample> pretrain;
  std::vector<ImitationSample> imitation;
  std::vector<StateView> prompts;
  std::optional<CommonalityEstimator> estimator;
};

PhaseData prepare_phase(const RunConfig& config, const PhaseSpec& phase, std::span<const Conversation> train,
                        std::size_t index) {
  const auto where = "schedule[" + std::to_string(index) + "] (" + std::string(to_string(phase.algo)) + ")";
  PhaseData data;
  const auto limit = static_cast<std::size_t>(config.model.max_seq_len);
  const auto room = static_cast<std::size_t>(config.training.generation.max_new);
  const std::string role = phase.role.empty() ? config.opener.name : phase.role;
  switch (phase.algo) {
    case Algorithm::Pretrain:
      for (auto& s : pretrain_samples(train)) {
        if (s.state.tokens.size() + 1 + s.action.size() <= limit + 1) data.pretrain.push_back(std::move(s));
      }
      if (data.pretrain.empty()) throw ConfigError(where + ": the training corpus holds no usable messages");
      break;
    case Algorithm::Imitate:
      data.imitation = imitation_samples(train, phase.target);
      if (data.imitation.empty()) {
        throw ConfigError(where + ": target '" + phase.target + "' has no messages in the training corpus");
      }
      break;
    case Algorithm::Finetune:
    case Algorithm::Kindness:
      data.prompts = speaking_prompts(train, role, phase.target, limit, room);
      if (data.prompts.empty()) {
        throw ConfigError(where + ": no prompt in the training corpus lets '" + role + "' speak" +
                          (phase.target.empty() ? std::string() : " to '" + phase.target + "'") +
                          " within max_seq_len");
      }
      if (phase.algo == Algorithm::Kindness) data.estimator.emplace(config.rewards.at(phase.reward));
      break;
  }
  return data;
}

}  // namespace

RunResult run_schedule(const RunConfig& config, std::span<const Conversation> corpus,
                       std::optional<LoadedCheckpoint> resume, std::ostream* metrics,
                       const CheckpointFn& on_checkpoint) {
  config.validate();
  const auto train = training_split(corpus);
  std::vector<PhaseData> phases;
  phases.reserve(config.schedule.size());
  for (std::size_t i = 0; i < config.schedule.size(); ++i) {
    if (config.schedule[i].steps > 0) {
      phases.push_back(prepare_phase(config, config.schedule[i], train, i));
    } else {
      phases.emplace_back();
    }
  }

  RunResult state{resume ? std::move(resume->model) : Model(config.model), {}};
  state.meta.config_digest = config.digest();
  StepContext ctx;
  ctx.seed = config.seed;
  ctx.options = config.training;
  if (resume) {
    if (resume->meta.config_digest != state.meta.config_digest) {
      throw ConfigError("resume: checkpoint was written under a different config (digest " +
                        to_hex(resume->meta.config_digest) + ")");
    }
    if (nlohmann::json(state.model.config()) != nlohmann::json(config.model)) {
      throw ConfigError("resume: checkpoint model config differs from the run config");
    }
    ctx.step = resume->meta.step;
    ctx.baseline = resume->meta.baseline;
    if (ctx.step > config.total_steps()) {
      throw ConfigError("resume: checkpoint is at step " + std::to_string(ctx.step) + ", schedule has only " +
                        std::to_string(config.total_steps()));
    }
  }

  std::uint64_t phase_start = 0;
  for (std::size_t i = 0; i < config.schedule.size(); ++i) {
    const auto& phase = config.schedule[i];
    auto& data = phases[i];
    const std::uint64_t phase_end = phase_start + static_cast<std::uint64_t>(phase.steps);
    while (ctx.step < phase_end) {
      const int local = static_cast<int>(ctx.step - phase_start);
      const double eta = phase.eta_at(local);
      Rng pick = Rng::stream(config.seed, "data", ctx.step);
      TrainStepReport report;
      switch (phase.algo) {
        case Algorithm::Pretrain:
          report = pretrain_step(state.model, data.pretrain[pick.below(data.pretrain.size())],
                                 config.rewards.at(phase.reward), eta, ctx);
          break;
        case Algorithm::Imitate: {
          std::vector<ImitationSample> batch;
          for (int b = 0; b < phase.batch; ++b) batch.push_back(data.imitation[pick.below(data.imitation.size())]);
          report = imitation_step(state.model, std::span<const ImitationSample>(batch), eta, ctx);
          break;
        }
        case Algorithm::Finetune:
          report = finetune_step(state.model, data.prompts[pick.below(data.prompts.size())],
                                 config.rewards.at(phase.reward), eta, ctx);
          break;
        case Algorithm::Kindness:
          report = kindness_step(state.model, data.prompts[pick.below(data.prompts.size())],
                                 config.rewards.at(phase.reward), &*data.estimator, eta, ctx);
          break;
      }
      if (metrics) *metrics << metrics_line(report).dump() << '\n';
      if (on_checkpoint && config.checkpoint_every > 0 && ctx.step % static_cast<std::uint64_t>(config.checkpoint_every) == 0) {
        state.meta.step = ctx.step;
        state.meta.baseline = ctx.baseline;
        on_checkpoint(state.model, state.meta);
      }
    }
    phase_start = phase_end;
  }
  state.meta.step = ctx.step;
  state.meta.baseline = ctx.baseline;
  return state;
}

}  // namespace tomt
