// Copyright 2026 The tomt Authors
// SPDX-License-Identifier: Apache-2.0
//
// Regenerate with:
//   tomt train --config configs/demo.json --out demo.ckpt --log tests/golden/demo_metrics.jsonl
//   tomt gen-corpus --config configs/demo.json --out demo.jsonl
//   tomt eval --ckpt demo.ckpt --corpus demo.jsonl --config configs/demo.json --persona user
//     --self-reward user --split heldout --seed 0 --out tests/golden/demo_eval.jsonl
//     --metrics perplexity,behavior_perplexity,imitation_accuracy,reward_gap,kindness

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <sstream>
#include <vector>

#include <nlohmann/json.hpp>

#include "../cli/run_cli.hpp"

using json = nlohmann::json;

namespace {

constexpr double kTolerance = 1e-6;
const std::string kSource = TOMT_SOURCE_DIR;

std::vector<json> parse_lines(const std::string& text) {
  std::vector<json> out;
  std::istringstream in(text);
  for (std::string line; std::getline(in, line);) {
    if (!line.empty()) out.push_back(json::parse(line));
  }
  return out;
}

// Numbers match within kTolerance (absolute, or relative for large values);
// everything else matches exactly. `ignored` keys are skipped.
void compare(const json& want, const json& got, const std::string& where, const std::vector<std::string>& ignored) {
  if (want.is_number() && got.is_number()) {
    const double a = want.get<double>(), b = got.get<double>();
    INFO(where << ": golden " << a << ", got " << b);
    CHECK(std::abs(a - b) <= kTolerance * std::max(1.0, std::abs(a)));
    return;
  }
  if (want.is_object() && got.is_object()) {
    INFO(where << ": key sets differ");
    CHECK(want.size() == got.size());
    for (const auto& [key, value] : want.items()) {
      if (std::find(ignored.begin(), ignored.end(), key) != ignored.end()) continue;
      REQUIRE_MESSAGE(got.contains(key), where << ": missing key " << key);
      compare(value, got[key], where + "." + key, ignored);
    }
    return;
  }
  INFO(where);
  CHECK(want == got);
}

}  // namespace

TEST_CASE("demo run reproduces the golden metrics log and eval report") {
  Workdir w;
  const auto config = kSource + "/configs/demo.json";
  const auto train = run("train --config " + config + " --out " + w.file("demo.ckpt") + " --log " + w.file("log.jsonl"));
  REQUIRE_MESSAGE(train.code == 0, train.output);

  const auto want_log = parse_lines(slurp(kSource + "/tests/golden/demo_metrics.jsonl"));
  const auto got_log = parse_lines(slurp(w.file("log.jsonl")));
  REQUIRE(want_log.size() == 220);
  REQUIRE(got_log.size() == want_log.size());
  for (std::size_t i = 0; i < want_log.size(); ++i) compare(want_log[i], got_log[i], "step " + std::to_string(i), {});

  REQUIRE(run("gen-corpus --config " + config + " --out " + w.file("demo.jsonl")).code == 0);
  const auto eval = run("eval --ckpt " + w.file("demo.ckpt") + " --corpus " + w.file("demo.jsonl") + " --config " +
                        config +
                        " --persona user --self-reward user --split heldout --seed 0 --out " + w.file("eval.jsonl") +
                        " --metrics perplexity,behavior_perplexity,imitation_accuracy,reward_gap,kindness");
  REQUIRE_MESSAGE(eval.code == 0, eval.output);
  const auto want_eval = parse_lines(slurp(kSource + "/tests/golden/demo_eval.jsonl"));
  const auto got_eval = parse_lines(slurp(w.file("eval.jsonl")));
  REQUIRE(got_eval.size() == want_eval.size());
  // The checkpoint digest is bytewise and would change with any last-bit
  // difference in the float payload.
  for (std::size_t i = 0; i < want_eval.size(); ++i) {
    compare(want_eval[i], got_eval[i], want_eval[i]["metric"].get<std::string>(), {"ckpt_digest"});
  }
}
