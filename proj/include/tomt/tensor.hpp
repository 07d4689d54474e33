// Copyright 2026 The tomt Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "tomt/error.hpp"

namespace tomt {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape) noexcept;
std::string shape_to_string(const Shape& shape);

/// Gradient accumulators. Every leaf that requires grad owns one accumulator
/// per channel; backward() writes into exactly one of them.
enum class Channel : std::uint8_t { Nll = 0, Rl = 1 };
inline constexpr std::size_t kNumChannels = 2;
inline constexpr std::array<Channel, kNumChannels> kChannels{Channel::Nll, Channel::Rl};
std::string_view to_string(Channel c) noexcept;

/// Graph recording switch (per thread). Forward ops run under a NoGradGuard
/// produce plain values with no backward closure.
bool grad_enabled() noexcept;

class NoGradGuard {
 public:
  NoGradGuard() noexcept;
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

namespace detail {

template <typename T>
struct Node {
  Shape shape;
  std::vector<T> value;
  bool requires_grad = false;
  std::string_view op = "leaf";
  std::vector<std::shared_ptr<Node>> inputs;
  // Reads this->grad and accumulates into inputs[i]->grad.
  std::function<void(Node&)> backward;
  std::vector<T> grad;
  std::array<std::vector<T>, kNumChannels> channels;
  bool backpropagated = false;

  bool is_leaf() const noexcept { return op == "leaf"; }
};

}  // namespace detail

/// Dense row-major tensor handle. Values produced by forward ops are
/// immutable; only leaves expose mutable storage (for the optimizer and
/// checkpoint loading).
template <typename T>
class BasicTensor {
 public:
  using value_type = T;
  using NodeType = detail::Node<T>;

  BasicTensor() = default;
  explicit BasicTensor(std::shared_ptr<NodeType> node) : node_(std::move(node)) {}

  static BasicTensor leaf(Shape shape, std::vector<T> values, bool requires_grad = false);
  static BasicTensor zeros(Shape shape, bool requires_grad = false);
  static BasicTensor scalar(T value, bool requires_grad = false);

  bool defined() const noexcept { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t numel() const { return node_->value.size(); }
  std::size_t rank() const { return node_->shape.size(); }
  /// Row count; a rank-1 tensor is a single row.
  std::size_t rows() const;
  std::size_t cols() const;
  std::span<const T> data() const { return node_->value; }
  T at(std::size_t r, std::size_t c) const { return node_->value[r * cols() + c]; }
  T item() const;
  bool requires_grad() const { return node_->requires_grad; }
  bool is_leaf() const { return node_->is_leaf(); }
  std::string_view op_name() const { return node_->op; }

  std::span<T> leaf_values();
  std::span<const T> grad(Channel c) const;
  std::span<T> mutable_grad(Channel c);
  void zero_grad(Channel c);
  void zero_grad();

  const void* identity() const noexcept { return node_.get(); }
  const std::shared_ptr<NodeType>& node() const noexcept { return node_; }

 private:
  std::shared_ptr<NodeType> node_;
};

using Tensor = BasicTensor<float>;
using Tensor64 = BasicTensor<double>;

// ---------------------------------------------------------------------------
// Forward ops. All ops check operand shapes (ShapeError naming the op and the
// shapes) and reject non-finite results (NumericError).

template <typename T> BasicTensor<T> matmul(const BasicTensor<T>& a, const BasicTensor<T>& b);
template <typename T> BasicTensor<T> transpose(const BasicTensor<T>& a);
/// Elementwise add; `b` may also be a row vector broadcast over rows of `a`.
template <typename T> BasicTensor<T> add(const BasicTensor<T>& a, const BasicTensor<T>& b);
template <typename T> BasicTensor<T> sub(const BasicTensor<T>& a, const BasicTensor<T>& b);
/// Elementwise product; `b` may also be a row vector broadcast over rows of `a`.
template <typename T> BasicTensor<T> mul(const BasicTensor<T>& a, const BasicTensor<T>& b);
template <typename T> BasicTensor<T> scale(const BasicTensor<T>& a, double factor);
/// tanh-approximated GELU.
template <typename T> BasicTensor<T> gelu(const BasicTensor<T>& a);
/// Row-wise softmax over the last axis.
template <typename T> BasicTensor<T> softmax(const BasicTensor<T>& a);
/// Row-wise softmax of a square score matrix restricted to columns <= row;
/// masked entries are exactly zero.
template <typename T> BasicTensor<T> causal_softmax(const BasicTensor<T>& a);
template <typename T> BasicTensor<T> log_softmax(const BasicTensor<T>& a);
template <typename T>
BasicTensor<T> layernorm(const BasicTensor<T>& x, const BasicTensor<T>& gain,
                         const BasicTensor<T>& bias, double eps = 1e-5);
/// Gathers rows of `table` ([vocab, dim]) -> [ids.size(), dim].
template <typename T>
BasicTensor<T> embedding(const BasicTensor<T>& table, std::span<const std::uint32_t> ids);
template <typename T>
BasicTensor<T> slice_rows(const BasicTensor<T>& a, std::size_t begin, std::size_t end);
template <typename T> BasicTensor<T> concat_rows(std::span<const BasicTensor<T>> parts);
template <typename T> BasicTensor<T> concat_cols(std::span<const BasicTensor<T>> parts);
/// out[r] = a[r, ids[r]]; shape [rows].
template <typename T>
BasicTensor<T> pick(const BasicTensor<T>& a, std::span<const std::uint32_t> ids);
template <typename T> BasicTensor<T> sum(const BasicTensor<T>& a);
template <typename T> BasicTensor<T> mean(const BasicTensor<T>& a);
/// Mean negative log-likelihood of `targets` under row-wise softmax(logits).
template <typename T>
BasicTensor<T> cross_entropy(const BasicTensor<T>& logits, std::span<const std::uint32_t> targets);

/// Reverse-mode sweep from a scalar `loss`. d(loss)/d(leaf) is ADDED into
/// the leaf's accumulator for `channel`; the other channel is untouched.
/// A given graph may be swept once; sweeping it again throws GraphError.
template <typename T> void backward(const BasicTensor<T>& loss, Channel channel);

}  // namespace tomt
