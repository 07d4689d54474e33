// Copyright 2026 The tomt Authors
// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <cmath>
#include <vector>

#include "tomt/rng.hpp"
#include "tomt/selftest.hpp"

namespace tomt::selftest {

std::string_view to_string(CheckPrecision p) noexcept {
  switch (p) {
    case CheckPrecision::Float32: return "float32";
    case CheckPrecision::Mixed: return "float32/float64-oracle";
    case CheckPrecision::Float64: return "float64";
  }
  return "?";
}

namespace {

struct Input {
  Shape shape;
  std::vector<double> values;
};

Input random_input(Shape shape, Rng& rng, double scale = 1.0) {
  Input in{std::move(shape), {}};
  in.values.resize(shape_numel(in.shape));
  for (auto& v : in.values) v = scale * rng.normal();
  return in;
}

std::size_t dim(Rng& rng, std::size_t lo = 1, std::size_t hi = 4) { return lo + rng.below(hi - lo + 1); }

template <typename T>
std::vector<BasicTensor<T>> materialise(const std::vector<Input>& inputs) {
  std::vector<BasicTensor<T>> out;
  for (const auto& in : inputs) out.push_back(BasicTensor<T>::leaf(in.shape, std::vector<T>(in.values.begin(), in.values.end()), true));
  return out;
}

// Contract a tensor with fixed pseudo-random weights so every output
// coordinate contributes to the scalar loss with a distinct coefficient.
template <typename T>
BasicTensor<T> project(const BasicTensor<T>& out, std::uint64_t seed) {
  if (out.numel() == 1 && out.rank() == 0) return out;
  Rng rng(seed ^ 0xA5A5A5A5ull);
  std::vector<T> w(out.numel());
  for (auto& v : w) v = static_cast<T>(rng.normal());
  return sum(mul(out, BasicTensor<T>::leaf(out.shape(), std::move(w))));
}

template <typename Builder>
GradCheckResult check(const std::vector<Input>& inputs, std::uint64_t seed, CheckPrecision precision,
                      Builder build, double eps32 = 1e-3) {
  GradCheckOptions opts;
  opts.seed = seed;
  auto params32 = materialise<float>(inputs);
  auto params64 = materialise<double>(inputs);
  std::function<Tensor()> loss32 = [&] { return project(build(params32), seed); };
  std::function<Tensor64()> loss64 = [&] { return project(build(params64), seed); };
  switch (precision) {
    case CheckPrecision::Float32:
      opts.epsilon = eps32;
      return finite_difference_check<float>(loss32, params32, opts);
    case CheckPrecision::Mixed:
      opts.epsilon = 1e-5;
      return finite_difference_check(loss32, params32, loss64, params64, opts);
    case CheckPrecision::Float64:
      opts.epsilon = 1e-5;
      return finite_difference_check<double>(loss64, params64, opts);
  }
  return {};
}

std::vector<std::uint32_t> random_ids(std::size_t n, std::size_t bound, Rng& rng) {
  std::vector<std::uint32_t> ids(n);
  for (auto& id : ids) id = static_cast<std::uint32_t>(rng.below(bound));
  return ids;
}

}  // namespace

std::vector<OpCase> op_cases() {
  std::vector<OpCase> cases;
  auto add_case = [&](std::string name, auto fn) { cases.push_back({std::move(name), fn}); };

  add_case("matmul", [](std::uint64_t seed, CheckPrecision p) {
    Rng rng(seed);
    const auto m = dim(rng), k = dim(rng), n = dim(rng);
    return check({random_input({m, k}, rng), random_input({k, n}, rng)}, seed, p,
                 [](const auto& in) { return matmul(in[0], in[1]); });
  });
  add_case("transpose", [](std::uint64_t seed, CheckPrecision p) {
    Rng rng(seed);
    return check({random_input({dim(rng), dim(rng)}, rng)}, seed, p,
                 [](const auto& in) { return transpose(in[0]); });
  });
  add_case("add", [](std::uint64_t seed, CheckPrecision p) {
    Rng rng(seed);
    const auto r = dim(rng), c = dim(rng);
    return check({random_input({r, c}, rng), random_input({r, c}, rng), random_input({c}, rng)}, seed, p,
                 [](const auto& in) { return add(add(in[0], in[1]), in[2]); });
  });
  add_case("sub", [](std::uint64_t seed, CheckPrecision p) {
    Rng rng(seed);
    const auto r = dim(rng), c = dim(rng);
    return check({random_input({r, c}, rng), random_input({r, c}, rng)}, seed, p,
                 [](const auto& in) { return sub(in[0], in[1]); });
  });
  add_case("mul", [](std::uint64_t seed, CheckPrecision p) {
    Rng rng(seed);
    const auto r = dim(rng, 2), c = dim(rng);
    return check({random_input({r, c}, rng), random_input({r, c}, rng), random_input({c}, rng)}, seed, p,
                 [](const auto& in) { return mul(mul(in[0], in[1]), in[2]); });
  });
  add_case("scale", [](std::uint64_t seed, CheckPrecision p) {
    Rng rng(seed);
    const double factor = rng.normal();
    return check({random_input({dim(rng), dim(rng)}, rng)}, seed, p,
                 [factor](const auto& in) { return scale(in[0], factor); });
  });
  add_case("gelu", [](std::uint64_t seed, CheckPrecision p) {
    Rng rng(seed);
    return check({random_input({dim(rng), dim(rng)}, rng, 2.0)}, seed, p,
                 [](const auto& in) { return gelu(in[0]); });
  });
  add_case("softmax", [](std::uint64_t seed, CheckPrecision p) {
    Rng rng(seed);
    return check({random_input({dim(rng), dim(rng, 2, 6)}, rng)}, seed, p,
                 [](const auto& in) { return softmax(in[0]); });
  });
  add_case("causal_softmax", [](std::uint64_t seed, CheckPrecision p) {
    Rng rng(seed);
    const auto n = dim(rng, 2, 5);
    return check({random_input({n, n}, rng)}, seed, p, [](const auto& in) { return causal_softmax(in[0]); });
  });
  add_case("log_softmax", [](std::uint64_t seed, CheckPrecision p) {
    Rng rng(seed);
    return check({random_input({dim(rng), dim(rng, 2, 6)}, rng)}, seed, p,
                 [](const auto& in) { return log_softmax(in[0]); });
  });
  add_case("layernorm", [](std::uint64_t seed, CheckPrecision p) {
    Rng rng(seed);
    const auto r = dim(rng), c = dim(rng, 2, 6);
    return check({random_input({r, c}, rng), random_input({c}, rng), random_input({c}, rng)}, seed, p,
                 [](const auto& in) { return layernorm(in[0], in[1], in[2]); });
  });
  add_case("embedding", [](std::uint64_t seed, CheckPrecision p) {
    Rng rng(seed);
    const auto v = dim(rng, 2, 6), d = dim(rng);
    const auto ids = random_ids(dim(rng, 1, 6), v, rng);
    return check({random_input({v, d}, rng)}, seed, p, [ids](const auto& in) { return embedding(in[0], ids); });
  });
  add_case("slice_rows", [](std::uint64_t seed, CheckPrecision p) {
    Rng rng(seed);
    const auto r = dim(rng, 2, 5);
    const std::size_t begin = rng.below(r);
    const std::size_t end = begin + 1 + rng.below(r - begin);
    return check({random_input({r, dim(rng)}, rng)}, seed, p,
                 [begin, end](const auto& in) { return slice_rows(in[0], begin, end); });
  });
  add_case("concat", [](std::uint64_t seed, CheckPrecision p) {
    Rng rng(seed);
    const auto r = dim(rng), c = dim(rng);
    return check({random_input({r, c}, rng), random_input({dim(rng), c}, rng), random_input({r, dim(rng)}, rng)},
                 seed, p, [](const auto& in) {
                   using T = std::decay_t<decltype(in[0])>;
                   const std::vector<T> rows{in[0], in[1]};
                   const std::vector<T> cols{in[0], in[2]};
                   return add(sum(concat_rows<typename T::value_type>(rows)),
                              scale(sum(mul(concat_cols<typename T::value_type>(cols),
                                            concat_cols<typename T::value_type>(cols))),
                                    0.5));
                 });
  });
  add_case("pick", [](std::uint64_t seed, CheckPrecision p) {
    Rng rng(seed);
    const auto r = dim(rng), c = dim(rng, 2, 6);
    const auto ids = random_ids(r, c, rng);
    return check({random_input({r, c}, rng)}, seed, p, [ids](const auto& in) { return pick(in[0], ids); });
  });
  add_case("sum_mean", [](std::uint64_t seed, CheckPrecision p) {
    Rng rng(seed);
    return check({random_input({dim(rng), dim(rng)}, rng)}, seed, p, [](const auto& in) {
      return add(sum(mul(in[0], in[0])), scale(mean(gelu(in[0])), 3.0));
    });
  });
  add_case("cross_entropy", [](std::uint64_t seed, CheckPrecision p) {
    Rng rng(seed);
    const auto r = dim(rng), c = dim(rng, 2, 8);
    const auto targets = random_ids(r, c, rng);
    return check({random_input({r, c}, rng, 2.0)}, seed, p,
                 [targets](const auto& in) { return cross_entropy(in[0], targets); });
  });
  return cases;
}

GradCheckResult model_check(const ModelConfig& config, std::uint64_t seed, CheckPrecision precision,
                            std::size_t coords_per_tensor) {
  ModelConfig cfg = config;
  cfg.seed = seed;
  Rng rng = Rng::stream(seed, "gradcheck");
  const std::size_t len = std::min<std::size_t>(12, static_cast<std::size_t>(cfg.max_seq_len));
  std::vector<TokenId> tokens(len);
  for (auto& t : tokens) t = static_cast<TokenId>(rng.below(static_cast<std::uint64_t>(cfg.vocab_size)));
  const auto next = random_ids(len, static_cast<std::size_t>(cfg.vocab_size), rng);
  const auto other = random_ids(len, static_cast<std::size_t>(cfg.vocab_size), rng);

  Model model32(cfg);
  Model64 model64 = model32.cast<double>();
  auto tensors = [](auto& model) {
    std::vector<std::decay_t<decltype(model.parameters()[0].tensor)>> out;
    for (auto& p : model.parameters()) out.push_back(p.tensor);
    return out;
  };
  auto params32 = tensors(model32);
  auto params64 = tensors(model64);
  auto loss = [&](const auto& model) {
    const auto logits = model.forward(tokens);
    return add(cross_entropy(logits.behavior, next), cross_entropy(logits.prediction, other));
  };
  std::function<Tensor()> loss32 = [&] { return loss(model32); };
  std::function<Tensor64()> loss64 = [&] { return loss(model64); };

  GradCheckOptions opts;
  opts.seed = seed;
  opts.max_coords_per_tensor = coords_per_tensor;
  switch (precision) {
    case CheckPrecision::Float32:
      return finite_difference_check<float>(loss32, params32, opts);
    case CheckPrecision::Mixed:
      opts.epsilon = 1e-5;
      return finite_difference_check(loss32, params32, loss64, params64, opts);
    case CheckPrecision::Float64:
      opts.epsilon = 1e-5;
      return finite_difference_check<double>(loss64, params64, opts);
  }
  return {};
}

}  // namespace tomt::selftest
