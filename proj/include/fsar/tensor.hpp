// Copyright 2026 The fsar Authors
// SPDX-License-Identifier: Apache-2.0

// Dense row-major float64 tensor with tape-free reverse-mode differentiation.
//
// A Tensor is a cheap handle to a graph node. Operations that receive at
// least one input with requires_grad() record their inputs and a gradient
// rule; backward() walks the recorded graph in reverse topological order and
// accumulates into every reachable node's grad buffer. Accumulation order is
// fixed by the graph structure, so repeated runs are bit-identical.

#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace fsar {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string to_string(const Shape& shape);

namespace detail {
struct Node;
}

class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const noexcept { return static_cast<bool>(node_); }

  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const;

  std::span<const double> data() const;
  /// Writable view for leaf updates (optimizer steps, test fixtures).
  std::span<double> mutable_data();
  double item() const;
  double at(std::size_t flat_index) const { return data()[flat_index]; }

  bool requires_grad() const;
  void set_requires_grad(bool flag);

  bool has_grad() const;
  /// Empty span when no gradient has been accumulated.
  std::span<const double> grad() const;
  /// Allocates a zero gradient buffer on first use.
  std::span<double> mutable_grad();
  void zero_grad();

  /// Stable identity of the underlying storage; used for weight-sharing checks.
  const void* id() const noexcept { return node_.get(); }

  /// Copy of the values with no graph history.
  Tensor detach() const;

  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
  const std::shared_ptr<detail::Node>& node() const noexcept { return node_; }

 private:
  std::shared_ptr<detail::Node> node_;
};

/// Gradient rule of a custom operation. `in_grads[i]` points at the gradient
/// buffer of input i (same extent as that input) or is null when input i does
/// not require a gradient. Rules must accumulate (+=), never assign.
using GradFn = std::function<void(std::span<const double> out_grad,
                                  std::span<double* const> in_grads)>;

/// Builds an operation result. The graph edge is recorded only when gradient
/// recording is enabled and some input requires a gradient.
Tensor make_result(Shape shape, std::vector<double> values, const std::vector<Tensor>& inputs,
                   GradFn grad_fn);

/// Disables graph recording on the current thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_enabled() noexcept;

/// Reverse pass from a scalar loss. Throws ContractError for non-scalar input.
void backward(const Tensor& loss);

// ---------------------------------------------------------------------------
// Operations. Unless stated otherwise, "rows" means all leading axes flattened
// and the last axis is the feature axis.

/// 2-D matrix product a[m,k] x b[k,n].
Tensor matmul(const Tensor& a, const Tensor& b);
/// x[..., in] * weight[in, out] + bias[out]; bias may be undefined.
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);
/// x[..., d] + b[d] broadcast over rows.
Tensor add_row(const Tensor& x, const Tensor& row);

Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
/// Mean over one axis; the axis is removed from the shape.
Tensor mean_axis(const Tensor& a, std::size_t axis);

/// tanh-approximated GELU.
Tensor gelu(const Tensor& x);
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-5);
Tensor softmax(const Tensor& x, std::size_t axis);
Tensor log_softmax(const Tensor& x, std::size_t axis);

Tensor reshape(const Tensor& x, Shape shape);
Tensor concat(const std::vector<Tensor>& parts, std::size_t axis);
/// Half-open range [begin, end) along one axis.
Tensor slice(const Tensor& x, std::size_t axis, std::size_t begin, std::size_t end);
/// Repeats an axis of extent 1 `count` times.
Tensor tile(const Tensor& x, std::size_t axis, std::size_t count);
/// Scalar element at a flat index.
Tensor pick(const Tensor& x, std::size_t flat_index);

/// Pairwise cosine similarity of rows: a[m,d], b[n,d] -> [m,n].
/// Throws ContractError on a zero row.
Tensor cosine_matrix(const Tensor& a, const Tensor& b);

/// Scaled dot-product attention core with `heads` heads (no projections).
/// q[B,Sq,D], k[B,Sk,D], v[B,Sk,D] -> [B,Sq,D]. `key_mask[j] == true` hides
/// key j from every query.
Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v, std::size_t heads,
                 const std::vector<bool>& key_mask = {});
/// Attention probabilities laid out [B, heads, Sq, Sk]; not differentiable.
std::vector<double> attention_probabilities(const Tensor& q, const Tensor& k, std::size_t heads,
                                            const std::vector<bool>& key_mask = {});

}  // namespace fsar
