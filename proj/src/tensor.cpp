// Copyright 2026 The tomt Authors
// SPDX-License-Identifier: Apache-2.0

#include "tomt/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>
#include <unordered_set>
#include <utility>

namespace tomt {

std::size_t shape_numel(const Shape& shape) noexcept {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

std::string shape_to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

std::string_view to_string(Channel c) noexcept {
  return c == Channel::Nll ? "NLL" : "RL";
}

namespace {

thread_local bool g_grad_enabled = true;

template <typename T>
using NodePtr = std::shared_ptr<detail::Node<T>>;

struct Matrix {
  std::size_t rows;
  std::size_t cols;
};

[[noreturn]] void shape_fail(std::string_view op, const std::string& detail) {
  throw ShapeError(std::string(op) + ": " + detail);
}

Matrix as_matrix(const Shape& s, std::string_view op) {
  if (s.size() == 1) return {1, s[0]};
  if (s.size() == 2) return {s[0], s[1]};
  shape_fail(op, "expected a rank-1 or rank-2 operand, got " + shape_to_string(s));
}

Matrix as_rank2(const Shape& s, std::string_view op) {
  if (s.size() != 2) shape_fail(op, "expected a rank-2 operand, got " + shape_to_string(s));
  return {s[0], s[1]};
}

// True when `b` is a row vector that broadcasts over the rows of `a`.
bool is_row_broadcast(const Shape& a, const Shape& b) {
  if (a.size() != 2) return false;
  if (b.size() == 1) return b[0] == a[1];
  return b.size() == 2 && b[0] == 1 && b[1] == a[1] && a[0] != 1;
}

template <typename T>
BasicTensor<T> make_result(std::string_view op, Shape shape, std::vector<T> value,
                           std::vector<NodePtr<T>> inputs,
                           std::function<void(detail::Node<T>&)> bw) {
  for (const T v : value) {
    if (!std::isfinite(v)) {
      throw NumericError(std::string(op) + " produced a non-finite value (output shape " +
                         shape_to_string(shape) + ")");
    }
  }
  auto node = std::make_shared<detail::Node<T>>();
  node->shape = std::move(shape);
  node->value = std::move(value);
  node->op = op;
  bool needs = false;
  if (g_grad_enabled) {
    for (const auto& in : inputs) needs = needs || in->requires_grad;
  }
  node->requires_grad = needs;
  if (needs) {
    node->inputs = std::move(inputs);
    node->backward = std::move(bw);
  }
  return BasicTensor<T>(std::move(node));
}

template <typename T>
std::vector<T>* grad_of(const NodePtr<T>& n) {
  return n->requires_grad ? &n->grad : nullptr;
}

template <typename T>
std::vector<T> cast_out(const std::vector<double>& v) {
  return std::vector<T>(v.begin(), v.end());
}

}  // namespace

bool grad_enabled() noexcept { return g_grad_enabled; }

NoGradGuard::NoGradGuard() noexcept : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

// ---------------------------------------------------------------------------
// BasicTensor

template <typename T>
BasicTensor<T> BasicTensor<T>::leaf(Shape shape, std::vector<T> values, bool requires_grad) {
  if (shape_numel(shape) != values.size()) {
    throw ShapeError("leaf: shape " + shape_to_string(shape) + " holds " +
                     std::to_string(shape_numel(shape)) + " values, got " +
                     std::to_string(values.size()));
  }
  auto node = std::make_shared<detail::Node<T>>();
  node->shape = std::move(shape);
  node->value = std::move(values);
  node->requires_grad = requires_grad;
  if (requires_grad) {
    for (auto& ch : node->channels) ch.assign(node->value.size(), T{0});
  }
  return BasicTensor(std::move(node));
}

template <typename T>
BasicTensor<T> BasicTensor<T>::zeros(Shape shape, bool requires_grad) {
  const std::size_t n = shape_numel(shape);
  return leaf(std::move(shape), std::vector<T>(n, T{0}), requires_grad);
}

template <typename T>
BasicTensor<T> BasicTensor<T>::scalar(T value, bool requires_grad) {
  return leaf(Shape{}, std::vector<T>{value}, requires_grad);
}

template <typename T>
std::size_t BasicTensor<T>::rows() const {
  return as_matrix(shape(), "rows").rows;
}

template <typename T>
std::size_t BasicTensor<T>::cols() const {
  return as_matrix(shape(), "cols").cols;
}

template <typename T>
T BasicTensor<T>::item() const {
  if (numel() != 1) {
    throw ShapeError("item: expected a single-element tensor, got " + shape_to_string(shape()));
  }
  return node_->value[0];
}

template <typename T>
std::span<T> BasicTensor<T>::leaf_values() {
  if (!is_leaf()) throw GraphError("leaf_values: tensor produced by '" + std::string(op_name()) + "' is immutable");
  return node_->value;
}

template <typename T>
std::span<const T> BasicTensor<T>::grad(Channel c) const {
  if (!is_leaf() || !requires_grad()) throw GraphError("grad: only leaves that require grad own accumulators");
  return node_->channels[static_cast<std::size_t>(c)];
}

template <typename T>
std::span<T> BasicTensor<T>::mutable_grad(Channel c) {
  if (!is_leaf() || !requires_grad()) throw GraphError("grad: only leaves that require grad own accumulators");
  return node_->channels[static_cast<std::size_t>(c)];
}

template <typename T>
void BasicTensor<T>::zero_grad(Channel c) {
  if (!is_leaf() || !requires_grad()) return;
  auto& ch = node_->channels[static_cast<std::size_t>(c)];
  std::fill(ch.begin(), ch.end(), T{0});
}

template <typename T>
void BasicTensor<T>::zero_grad() {
  for (Channel c : kChannels) zero_grad(c);
}

// ---------------------------------------------------------------------------
// Ops

template <typename T>
BasicTensor<T> matmul(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  const Matrix ma = as_rank2(a.shape(), "matmul");
  const Matrix mb = as_rank2(b.shape(), "matmul");
  if (ma.cols != mb.rows) {
    shape_fail("matmul", "inner dimensions differ: " + shape_to_string(a.shape()) + " x " +
                             shape_to_string(b.shape()));
  }
  const std::size_t m = ma.rows, k = ma.cols, n = mb.cols;
  const auto A = a.data();
  const auto B = b.data();
  std::vector<T> out(m * n);
  std::vector<double> acc(n);
  for (std::size_t i = 0; i < m; ++i) {
    std::fill(acc.begin(), acc.end(), 0.0);
    for (std::size_t p = 0; p < k; ++p) {
      const double av = A[i * k + p];
      const T* brow = &B[p * n];
      for (std::size_t j = 0; j < n; ++j) acc[j] += av * static_cast<double>(brow[j]);
    }
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] = static_cast<T>(acc[j]);
  }
  return make_result<T>("matmul", {m, n}, std::move(out), {a.node(), b.node()},
                        [m, k, n](detail::Node<T>& self) {
                          const auto& A = self.inputs[0]->value;
                          const auto& B = self.inputs[1]->value;
                          const auto& G = self.grad;
                          if (auto* dA = grad_of(self.inputs[0])) {
                            for (std::size_t i = 0; i < m; ++i) {
                              for (std::size_t p = 0; p < k; ++p) {
                                double s = 0.0;
                                for (std::size_t j = 0; j < n; ++j)
                                  s += static_cast<double>(G[i * n + j]) * B[p * n + j];
                                (*dA)[i * k + p] += static_cast<T>(s);
                              }
                            }
                          }
                          if (auto* dB = grad_of(self.inputs[1])) {
                            std::vector<double> acc(n);
                            for (std::size_t p = 0; p < k; ++p) {
                              std::fill(acc.begin(), acc.end(), 0.0);
                              for (std::size_t i = 0; i < m; ++i) {
                                const double av = A[i * k + p];
                                for (std::size_t j = 0; j < n; ++j) acc[j] += av * G[i * n + j];
                              }
                              for (std::size_t j = 0; j < n; ++j) (*dB)[p * n + j] += static_cast<T>(acc[j]);
                            }
                          }
                        });
}

template <typename T>
BasicTensor<T> transpose(const BasicTensor<T>& a) {
  const Matrix ma = as_rank2(a.shape(), "transpose");
  const std::size_t r = ma.rows, c = ma.cols;
  const auto A = a.data();
  std::vector<T> out(r * c);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = A[i * c + j];
  return make_result<T>("transpose", {c, r}, std::move(out), {a.node()},
                        [r, c](detail::Node<T>& self) {
                          auto* dA = grad_of(self.inputs[0]);
                          for (std::size_t i = 0; i < r; ++i)
                            for (std::size_t j = 0; j < c; ++j) (*dA)[i * c + j] += self.grad[j * r + i];
                        });
}

namespace {

enum class Combine { Add, Sub, Mul };

template <typename T>
BasicTensor<T> elementwise(std::string_view op, const BasicTensor<T>& a, const BasicTensor<T>& b,
                           Combine kind, bool allow_broadcast) {
  const bool same = a.shape() == b.shape();
  const bool bcast = !same && allow_broadcast && is_row_broadcast(a.shape(), b.shape());
  if (!same && !bcast) {
    shape_fail(op, "shapes do not conform: " + shape_to_string(a.shape()) + " vs " +
                       shape_to_string(b.shape()));
  }
  const std::size_t n = a.numel();
  const std::size_t width = bcast ? b.numel() : n;
  const auto A = a.data();
  const auto B = b.data();
  std::vector<T> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    const T bv = B[bcast ? i % width : i];
    switch (kind) {
      case Combine::Add: out[i] = A[i] + bv; break;
      case Combine::Sub: out[i] = A[i] - bv; break;
      case Combine::Mul: out[i] = A[i] * bv; break;
    }
  }
  return make_result<T>(op, a.shape(), std::move(out), {a.node(), b.node()},
                        [n, width, bcast, kind](detail::Node<T>& self) {
                          const auto& A = self.inputs[0]->value;
                          const auto& B = self.inputs[1]->value;
                          const auto& G = self.grad;
                          if (auto* dA = grad_of(self.inputs[0])) {
                            for (std::size_t i = 0; i < n; ++i) {
                              const T gi = kind == Combine::Mul ? G[i] * B[bcast ? i % width : i] : G[i];
                              (*dA)[i] += gi;
                            }
                          }
                          if (auto* dB = grad_of(self.inputs[1])) {
                            if (bcast) {
                              std::vector<double> acc(width, 0.0);
                              for (std::size_t i = 0; i < n; ++i) {
                                double gi = G[i];
                                if (kind == Combine::Mul) gi *= A[i];
                                if (kind == Combine::Sub) gi = -gi;
                                acc[i % width] += gi;
                              }
                              for (std::size_t j = 0; j < width; ++j) (*dB)[j] += static_cast<T>(acc[j]);
                            } else {
                              for (std::size_t i = 0; i < n; ++i) {
                                T gi = G[i];
                                if (kind == Combine::Mul) gi *= A[i];
                                if (kind == Combine::Sub) gi = -gi;
                                (*dB)[i] += gi;
                              }
                            }
                          }
                        });
}

}  // namespace

template <typename T>
BasicTensor<T> add(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  return elementwise(std::string_view("add"), a, b, Combine::Add, true);
}

template <typename T>
BasicTensor<T> sub(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  return elementwise(std::string_view("sub"), a, b, Combine::Sub, false);
}

template <typename T>
BasicTensor<T> mul(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  return elementwise(std::string_view("mul"), a, b, Combine::Mul, true);
}

template <typename T>
BasicTensor<T> scale(const BasicTensor<T>& a, double factor) {
  const auto A = a.data();
  std::vector<T> out(A.size());
  for (std::size_t i = 0; i < A.size(); ++i) out[i] = static_cast<T>(A[i] * factor);
  return make_result<T>("scale", a.shape(), std::move(out), {a.node()},
                        [factor](detail::Node<T>& self) {
                          auto& dA = self.inputs[0]->grad;
                          for (std::size_t i = 0; i < dA.size(); ++i)
                            dA[i] += static_cast<T>(self.grad[i] * factor);
                        });
}

template <typename T>
BasicTensor<T> gelu(const BasicTensor<T>& a) {
  constexpr double kC = 0.7978845608028654;  // sqrt(2/pi)
  constexpr double kA = 0.044715;
  const auto A = a.data();
  std::vector<T> out(A.size());
  for (std::size_t i = 0; i < A.size(); ++i) {
    const double x = A[i];
    out[i] = static_cast<T>(0.5 * x * (1.0 + std::tanh(kC * (x + kA * x * x * x))));
  }
  return make_result<T>("gelu", a.shape(), std::move(out), {a.node()},
                        [](detail::Node<T>& self) {
                          const auto& X = self.inputs[0]->value;
                          auto& dA = self.inputs[0]->grad;
                          for (std::size_t i = 0; i < X.size(); ++i) {
                            const double x = X[i];
                            const double t = std::tanh(kC * (x + kA * x * x * x));
                            const double d = 0.5 * (1.0 + t) +
                                             0.5 * x * (1.0 - t * t) * kC * (1.0 + 3.0 * kA * x * x);
                            dA[i] += static_cast<T>(self.grad[i] * d);
                          }
                        });
}

namespace {

// Softmax over the first `width` entries of a row; the rest are zero.
template <typename T>
void softmax_row(const T* in, T* out, std::size_t width, std::size_t cols) {
  double mx = in[0];
  for (std::size_t j = 1; j < width; ++j) mx = std::max(mx, static_cast<double>(in[j]));
  double total = 0.0;
  std::vector<double> e(width);
  for (std::size_t j = 0; j < width; ++j) {
    e[j] = std::exp(static_cast<double>(in[j]) - mx);
    total += e[j];
  }
  for (std::size_t j = 0; j < width; ++j) out[j] = static_cast<T>(e[j] / total);
  for (std::size_t j = width; j < cols; ++j) out[j] = T{0};
}

template <typename T>
void softmax_backward_rows(detail::Node<T>& self, std::size_t rows, std::size_t cols, bool causal) {
  auto& dA = self.inputs[0]->grad;
  const auto& Y = self.value;
  const auto& G = self.grad;
  for (std::size_t r = 0; r < rows; ++r) {
    const std::size_t width = causal ? r + 1 : cols;
    double dot = 0.0;
    for (std::size_t j = 0; j < width; ++j) dot += static_cast<double>(G[r * cols + j]) * Y[r * cols + j];
    for (std::size_t j = 0; j < width; ++j) {
      const std::size_t i = r * cols + j;
      dA[i] += static_cast<T>(Y[i] * (G[i] - dot));
    }
  }
}

}  // namespace

template <typename T>
BasicTensor<T> softmax(const BasicTensor<T>& a) {
  const Matrix m = as_matrix(a.shape(), "softmax");
  if (m.cols == 0) shape_fail("softmax", "empty rows");
  std::vector<T> out(a.numel());
  const auto A = a.data();
  for (std::size_t r = 0; r < m.rows; ++r) softmax_row(&A[r * m.cols], &out[r * m.cols], m.cols, m.cols);
  return make_result<T>("softmax", a.shape(), std::move(out), {a.node()},
                        [m](detail::Node<T>& self) { softmax_backward_rows(self, m.rows, m.cols, false); });
}

template <typename T>
BasicTensor<T> causal_softmax(const BasicTensor<T>& a) {
  const Matrix m = as_rank2(a.shape(), "causal_softmax");
  if (m.rows != m.cols) {
    shape_fail("causal_softmax", "expected a square score matrix, got " + shape_to_string(a.shape()));
  }
  std::vector<T> out(a.numel());
  const auto A = a.data();
  for (std::size_t r = 0; r < m.rows; ++r) softmax_row(&A[r * m.cols], &out[r * m.cols], r + 1, m.cols);
  return make_result<T>("causal_softmax", a.shape(), std::move(out), {a.node()},
                        [m](detail::Node<T>& self) { softmax_backward_rows(self, m.rows, m.cols, true); });
}

template <typename T>
BasicTensor<T> log_softmax(const BasicTensor<T>& a) {
  const Matrix m = as_matrix(a.shape(), "log_softmax");
  if (m.cols == 0) shape_fail("log_softmax", "empty rows");
  const auto A = a.data();
  std::vector<T> out(a.numel());
  for (std::size_t r = 0; r < m.rows; ++r) {
    const T* row = &A[r * m.cols];
    double mx = row[0];
    for (std::size_t j = 1; j < m.cols; ++j) mx = std::max(mx, static_cast<double>(row[j]));
    double total = 0.0;
    for (std::size_t j = 0; j < m.cols; ++j) total += std::exp(row[j] - mx);
    const double lse = mx + std::log(total);
    for (std::size_t j = 0; j < m.cols; ++j) out[r * m.cols + j] = static_cast<T>(row[j] - lse);
  }
  return make_result<T>("log_softmax", a.shape(), std::move(out), {a.node()},
                        [m](detail::Node<T>& self) {
                          auto& dA = self.inputs[0]->grad;
                          const auto& Y = self.value;
                          const auto& G = self.grad;
                          for (std::size_t r = 0; r < m.rows; ++r) {
                            double gsum = 0.0;
                            for (std::size_t j = 0; j < m.cols; ++j) gsum += G[r * m.cols + j];
                            for (std::size_t j = 0; j < m.cols; ++j) {
                              const std::size_t i = r * m.cols + j;
                              dA[i] += static_cast<T>(G[i] - std::exp(static_cast<double>(Y[i])) * gsum);
                            }
                          }
                        });
}

template <typename T>
BasicTensor<T> layernorm(const BasicTensor<T>& x, const BasicTensor<T>& gain,
                         const BasicTensor<T>& bias, double eps) {
  const Matrix m = as_matrix(x.shape(), "layernorm");
  if (gain.numel() != m.cols || bias.numel() != m.cols || gain.rank() != 1 || bias.rank() != 1) {
    shape_fail("layernorm", "gain/bias must be rank-1 of width " + std::to_string(m.cols) + ", got " +
                                shape_to_string(gain.shape()) + " and " + shape_to_string(bias.shape()));
  }
  const auto X = x.data();
  const auto Gn = gain.data();
  const auto Bs = bias.data();
  std::vector<double> xhat(x.numel());
  std::vector<double> inv_std(m.rows);
  std::vector<T> out(x.numel());
  for (std::size_t r = 0; r < m.rows; ++r) {
    double mu = 0.0;
    for (std::size_t j = 0; j < m.cols; ++j) mu += X[r * m.cols + j];
    mu /= static_cast<double>(m.cols);
    double var = 0.0;
    for (std::size_t j = 0; j < m.cols; ++j) {
      const double d = X[r * m.cols + j] - mu;
      var += d * d;
    }
    var /= static_cast<double>(m.cols);
    inv_std[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < m.cols; ++j) {
      const std::size_t i = r * m.cols + j;
      xhat[i] = (X[i] - mu) * inv_std[r];
      out[i] = static_cast<T>(xhat[i] * Gn[j] + Bs[j]);
    }
  }
  return make_result<T>(
      "layernorm", x.shape(), std::move(out), {x.node(), gain.node(), bias.node()},
      [m, xhat = std::move(xhat), inv_std = std::move(inv_std)](detail::Node<T>& self) {
        const auto& Gn = self.inputs[1]->value;
        const auto& G = self.grad;
        if (auto* dX = grad_of(self.inputs[0])) {
          for (std::size_t r = 0; r < m.rows; ++r) {
            double mean_d = 0.0, mean_dx = 0.0;
            for (std::size_t j = 0; j < m.cols; ++j) {
              const std::size_t i = r * m.cols + j;
              const double d = static_cast<double>(G[i]) * Gn[j];
              mean_d += d;
              mean_dx += d * xhat[i];
            }
            mean_d /= static_cast<double>(m.cols);
            mean_dx /= static_cast<double>(m.cols);
            for (std::size_t j = 0; j < m.cols; ++j) {
              const std::size_t i = r * m.cols + j;
              const double d = static_cast<double>(G[i]) * Gn[j];
              (*dX)[i] += static_cast<T>(inv_std[r] * (d - mean_d - xhat[i] * mean_dx));
            }
          }
        }
        auto* dGain = grad_of(self.inputs[1]);
        auto* dBias = grad_of(self.inputs[2]);
        if (dGain || dBias) {
          std::vector<double> gacc(m.cols, 0.0), bacc(m.cols, 0.0);
          for (std::size_t r = 0; r < m.rows; ++r) {
            for (std::size_t j = 0; j < m.cols; ++j) {
              const std::size_t i = r * m.cols + j;
              gacc[j] += G[i] * xhat[i];
              bacc[j] += G[i];
            }
          }
          for (std::size_t j = 0; j < m.cols; ++j) {
            if (dGain) (*dGain)[j] += static_cast<T>(gacc[j]);
            if (dBias) (*dBias)[j] += static_cast<T>(bacc[j]);
          }
        }
      });
}

template <typename T>
BasicTensor<T> embedding(const BasicTensor<T>& table, std::span<const std::uint32_t> ids) {
  const Matrix m = as_rank2(table.shape(), "embedding");
  if (ids.empty()) shape_fail("embedding", "empty id list");
  const auto W = table.data();
  std::vector<T> out(ids.size() * m.cols);
  for (std::size_t r = 0; r < ids.size(); ++r) {
    if (ids[r] >= m.rows) {
      shape_fail("embedding", "id " + std::to_string(ids[r]) + " out of range for table " +
                                  shape_to_string(table.shape()));
    }
    std::copy_n(&W[ids[r] * m.cols], m.cols, &out[r * m.cols]);
  }
  std::vector<std::uint32_t> saved(ids.begin(), ids.end());
  return make_result<T>("embedding", {ids.size(), m.cols}, std::move(out), {table.node()},
                        [m, saved = std::move(saved)](detail::Node<T>& self) {
                          auto& dW = self.inputs[0]->grad;
                          for (std::size_t r = 0; r < saved.size(); ++r)
                            for (std::size_t j = 0; j < m.cols; ++j)
                              dW[saved[r] * m.cols + j] += self.grad[r * m.cols + j];
                        });
}

template <typename T>
BasicTensor<T> slice_rows(const BasicTensor<T>& a, std::size_t begin, std::size_t end) {
  const Matrix m = as_rank2(a.shape(), "slice_rows");
  if (begin >= end || end > m.rows) {
    shape_fail("slice_rows", "range [" + std::to_string(begin) + "," + std::to_string(end) +
                                 ") invalid for " + shape_to_string(a.shape()));
  }
  const auto A = a.data();
  std::vector<T> out(A.begin() + static_cast<std::ptrdiff_t>(begin * m.cols),
                     A.begin() + static_cast<std::ptrdiff_t>(end * m.cols));
  return make_result<T>("slice_rows", {end - begin, m.cols}, std::move(out), {a.node()},
                        [begin, m](detail::Node<T>& self) {
                          auto& dA = self.inputs[0]->grad;
                          for (std::size_t i = 0; i < self.grad.size(); ++i) dA[begin * m.cols + i] += self.grad[i];
                        });
}

template <typename T>
BasicTensor<T> concat_rows(std::span<const BasicTensor<T>> parts) {
  if (parts.empty()) shape_fail("concat_rows", "no operands");
  const std::size_t cols = as_rank2(parts[0].shape(), "concat_rows").cols;
  std::vector<NodePtr<T>> inputs;
  std::vector<T> out;
  std::size_t rows = 0;
  for (const auto& p : parts) {
    const Matrix m = as_rank2(p.shape(), "concat_rows");
    if (m.cols != cols) {
      shape_fail("concat_rows", "column counts differ: " + shape_to_string(parts[0].shape()) + " vs " +
                                    shape_to_string(p.shape()));
    }
    rows += m.rows;
    out.insert(out.end(), p.data().begin(), p.data().end());
    inputs.push_back(p.node());
  }
  return make_result<T>("concat_rows", {rows, cols}, std::move(out), std::move(inputs),
                        [](detail::Node<T>& self) {
                          std::size_t offset = 0;
                          for (auto& in : self.inputs) {
                            const std::size_t n = in->value.size();
                            if (in->requires_grad)
                              for (std::size_t i = 0; i < n; ++i) in->grad[i] += self.grad[offset + i];
                            offset += n;
                          }
                        });
}

template <typename T>
BasicTensor<T> concat_cols(std::span<const BasicTensor<T>> parts) {
  if (parts.empty()) shape_fail("concat_cols", "no operands");
  const std::size_t rows = as_rank2(parts[0].shape(), "concat_cols").rows;
  std::vector<NodePtr<T>> inputs;
  std::vector<std::size_t> widths;
  std::size_t cols = 0;
  for (const auto& p : parts) {
    const Matrix m = as_rank2(p.shape(), "concat_cols");
    if (m.rows != rows) {
      shape_fail("concat_cols", "row counts differ: " + shape_to_string(parts[0].shape()) + " vs " +
                                    shape_to_string(p.shape()));
    }
    widths.push_back(m.cols);
    cols += m.cols;
    inputs.push_back(p.node());
  }
  std::vector<T> out(rows * cols);
  std::size_t offset = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const auto P = parts[k].data();
    for (std::size_t r = 0; r < rows; ++r)
      std::copy_n(&P[r * widths[k]], widths[k], &out[r * cols + offset]);
    offset += widths[k];
  }
  return make_result<T>("concat_cols", {rows, cols}, std::move(out), std::move(inputs),
                        [rows, cols, widths = std::move(widths)](detail::Node<T>& self) {
                          std::size_t offset = 0;
                          for (std::size_t k = 0; k < self.inputs.size(); ++k) {
                            auto& in = self.inputs[k];
                            if (in->requires_grad) {
                              for (std::size_t r = 0; r < rows; ++r)
                                for (std::size_t j = 0; j < widths[k]; ++j)
                                  in->grad[r * widths[k] + j] += self.grad[r * cols + offset + j];
                            }
                            offset += widths[k];
                          }
                        });
}

template <typename T>
BasicTensor<T> pick(const BasicTensor<T>& a, std::span<const std::uint32_t> ids) {
  const Matrix m = as_matrix(a.shape(), "pick");
  if (ids.size() != m.rows) {
    shape_fail("pick", std::to_string(ids.size()) + " ids for " + shape_to_string(a.shape()));
  }
  const auto A = a.data();
  std::vector<T> out(m.rows);
  for (std::size_t r = 0; r < m.rows; ++r) {
    if (ids[r] >= m.cols) {
      shape_fail("pick", "id " + std::to_string(ids[r]) + " out of range for " + shape_to_string(a.shape()));
    }
    out[r] = A[r * m.cols + ids[r]];
  }
  std::vector<std::uint32_t> saved(ids.begin(), ids.end());
  return make_result<T>("pick", {m.rows}, std::move(out), {a.node()},
                        [m, saved = std::move(saved)](detail::Node<T>& self) {
                          auto& dA = self.inputs[0]->grad;
                          for (std::size_t r = 0; r < m.rows; ++r) dA[r * m.cols + saved[r]] += self.grad[r];
                        });
}

template <typename T>
BasicTensor<T> sum(const BasicTensor<T>& a) {
  double s = 0.0;
  for (const T v : a.data()) s += v;
  return make_result<T>("sum", {}, {static_cast<T>(s)}, {a.node()}, [](detail::Node<T>& self) {
    auto& dA = self.inputs[0]->grad;
    for (auto& d : dA) d += self.grad[0];
  });
}

template <typename T>
BasicTensor<T> mean(const BasicTensor<T>& a) {
  if (a.numel() == 0) shape_fail("mean", "empty operand");
  double s = 0.0;
  for (const T v : a.data()) s += v;
  const double n = static_cast<double>(a.numel());
  return make_result<T>("mean", {}, {static_cast<T>(s / n)}, {a.node()}, [n](detail::Node<T>& self) {
    auto& dA = self.inputs[0]->grad;
    const T g = static_cast<T>(self.grad[0] / n);
    for (auto& d : dA) d += g;
  });
}

template <typename T>
BasicTensor<T> cross_entropy(const BasicTensor<T>& logits, std::span<const std::uint32_t> targets) {
  const Matrix m = as_matrix(logits.shape(), "cross_entropy");
  if (targets.size() != m.rows || m.rows == 0) {
    shape_fail("cross_entropy", std::to_string(targets.size()) + " targets for logits " +
                                    shape_to_string(logits.shape()));
  }
  const auto X = logits.data();
  double total = 0.0;
  for (std::size_t r = 0; r < m.rows; ++r) {
    if (targets[r] >= m.cols) {
      shape_fail("cross_entropy", "target " + std::to_string(targets[r]) + " out of range for " +
                                      shape_to_string(logits.shape()));
    }
    const T* row = &X[r * m.cols];
    double mx = row[0];
    for (std::size_t j = 1; j < m.cols; ++j) mx = std::max(mx, static_cast<double>(row[j]));
    double z = 0.0;
    for (std::size_t j = 0; j < m.cols; ++j) z += std::exp(row[j] - mx);
    total += mx + std::log(z) - row[targets[r]];
  }
  std::vector<std::uint32_t> saved(targets.begin(), targets.end());
  return make_result<T>(
      "cross_entropy", {}, {static_cast<T>(total / static_cast<double>(m.rows))}, {logits.node()},
      [m, saved = std::move(saved)](detail::Node<T>& self) {
        const auto& X = self.inputs[0]->value;
        auto& dX = self.inputs[0]->grad;
        const double g = static_cast<double>(self.grad[0]) / static_cast<double>(m.rows);
        std::vector<T> p(m.cols);
        for (std::size_t r = 0; r < m.rows; ++r) {
          softmax_row(&X[r * m.cols], p.data(), m.cols, m.cols);
          for (std::size_t j = 0; j < m.cols; ++j) {
            const double target = j == saved[r] ? 1.0 : 0.0;
            dX[r * m.cols + j] += static_cast<T>(g * (static_cast<double>(p[j]) - target));
          }
        }
      });
}

template <typename T>
void backward(const BasicTensor<T>& loss, Channel channel) {
  if (!loss.defined()) throw GraphError("backward: undefined loss tensor");
  if (loss.numel() != 1) {
    throw GraphError("backward: loss must be a scalar, got shape " + shape_to_string(loss.shape()));
  }
  detail::Node<T>* root = loss.node().get();
  if (root->backpropagated) {
    throw GraphError("backward: graph already swept; re-run the forward pass before calling backward again");
  }
  root->backpropagated = true;
  if (!root->requires_grad) return;

  // Iterative post-order DFS over nodes that require grad.
  std::vector<detail::Node<T>*> order;
  std::unordered_set<detail::Node<T>*> visited;
  std::vector<std::pair<detail::Node<T>*, std::size_t>> stack;
  stack.emplace_back(root, 0);
  visited.insert(root);
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      detail::Node<T>* child = node->inputs[next++].get();
      if (child->requires_grad && visited.insert(child).second) stack.emplace_back(child, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  for (auto* n : order) n->grad.assign(n->value.size(), T{0});
  root->grad[0] = T{1};
  const auto c = static_cast<std::size_t>(channel);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::Node<T>* n = *it;
    if (n->backward) {
      n->backward(*n);
    } else if (n->is_leaf()) {
      auto& acc = n->channels[c];
      for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += n->grad[i];
    }
  }
  for (auto* n : order) {
    n->grad.clear();
    n->grad.shrink_to_fit();
  }
}

#define TOMT_INSTANTIATE_OPS(T)                                                                       \
  template class BasicTensor<T>;                                                                     \
  template BasicTensor<T> matmul(const BasicTensor<T>&, const BasicTensor<T>&);                      \
  template BasicTensor<T> transpose(const BasicTensor<T>&);                                          \
  template BasicTensor<T> add(const BasicTensor<T>&, const BasicTensor<T>&);                         \
  template BasicTensor<T> sub(const BasicTensor<T>&, const BasicTensor<T>&);                         \
  template BasicTensor<T> mul(const BasicTensor<T>&, const BasicTensor<T>&);                         \
  template BasicTensor<T> scale(const BasicTensor<T>&, double);                                      \
  template BasicTensor<T> gelu(const BasicTensor<T>&);                                               \
  template BasicTensor<T> softmax(const BasicTensor<T>&);                                            \
  template BasicTensor<T> causal_softmax(const BasicTensor<T>&);                                     \
  template BasicTensor<T> log_softmax(const BasicTensor<T>&);                                        \
  template BasicTensor<T> layernorm(const BasicTensor<T>&, const BasicTensor<T>&,                    \
                                    const BasicTensor<T>&, double);                                  \
  template BasicTensor<T> embedding(const BasicTensor<T>&, std::span<const std::uint32_t>);          \
  template BasicTensor<T> slice_rows(const BasicTensor<T>&, std::size_t, std::size_t);               \
  template BasicTensor<T> concat_rows(std::span<const BasicTensor<T>>);                              \
  template BasicTensor<T> concat_cols(std::span<const BasicTensor<T>>);                              \
  template BasicTensor<T> pick(const BasicTensor<T>&, std::span<const std::uint32_t>);               \
  template BasicTensor<T> sum(const BasicTensor<T>&);                                                \
  template BasicTensor<T> mean(const BasicTensor<T>&);                                               \
  template BasicTensor<T> cross_entropy(const BasicTensor<T>&, std::span<const std::uint32_t>);      \
  template void backward(const BasicTensor<T>&, Channel);

TOMT_INSTANTIATE_OPS(float)
TOMT_INSTANTIATE_OPS(double)

#undef TOMT_INSTANTIATE_OPS

}  // namespace tomt
