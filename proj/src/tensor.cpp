// Copyright 2026 The fsar Authors
// SPDX-License-Identifier: Apache-2.0

#include "fsar/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>
#include <unordered_set>

#include "fsar/errors.hpp"

namespace fsar {

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  GradFn grad_fn;
};

}  // namespace detail

namespace {

thread_local bool g_grad_enabled = true;

std::shared_ptr<detail::Node> new_node(Shape shape, std::vector<double> values, bool rg) {
  if (values.size() != numel(shape)) {
    throw DimensionError("tensor data length " + std::to_string(values.size()) +
                         " does not match shape " + to_string(shape));
  }
  auto node = std::make_shared<detail::Node>();
  node->shape = std::move(shape);
  node->data = std::move(values);
  node->requires_grad = rg;
  return node;
}

void require_defined(const Tensor& t, const char* op) {
  if (!t.defined()) throw ContractError(std::string(op) + ": undefined tensor operand");
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + to_string(a.shape()) + " vs " +
                         to_string(b.shape()));
  }
}

void require_axis(const Tensor& x, std::size_t axis, const char* op) {
  if (axis >= x.rank()) {
    throw DimensionError(std::string(op) + ": axis " + std::to_string(axis) +
                         " out of range for shape " + to_string(x.shape()));
  }
}

// Splits a shape around `axis` into (outer, extent, inner) strides.
struct AxisView {
  std::size_t outer = 1;
  std::size_t extent = 1;
  std::size_t inner = 1;
};

AxisView axis_view(const Shape& shape, std::size_t axis) {
  AxisView v;
  for (std::size_t i = 0; i < axis; ++i) v.outer *= shape[i];
  v.extent = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) v.inner *= shape[i];
  return v;
}

}  // namespace

std::size_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

// ---------------------------------------------------------------------------
// Tensor

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  auto n = fsar::numel(shape);
  return Tensor(new_node(std::move(shape), std::vector<double>(n, 0.0), requires_grad));
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  auto n = fsar::numel(shape);
  return Tensor(new_node(std::move(shape), std::vector<double>(n, value), requires_grad));
}

Tensor Tensor::from(Shape shape, std::vector<double> values, bool requires_grad) {
  return Tensor(new_node(std::move(shape), std::move(values), requires_grad));
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return Tensor(new_node(Shape{}, std::vector<double>{value}, requires_grad));
}

const Shape& Tensor::shape() const {
  require_defined(*this, "shape");
  return node_->shape;
}

std::size_t Tensor::dim(std::size_t axis) const {
  require_axis(*this, axis, "dim");
  return node_->shape[axis];
}

std::size_t Tensor::numel() const {
  require_defined(*this, "numel");
  return node_->data.size();
}

std::span<const double> Tensor::data() const {
  require_defined(*this, "data");
  return node_->data;
}

std::span<double> Tensor::mutable_data() {
  require_defined(*this, "mutable_data");
  return node_->data;
}

double Tensor::item() const {
  if (numel() != 1) throw ContractError("item() on tensor of shape " + to_string(shape()));
  return node_->data[0];
}

bool Tensor::requires_grad() const {
  require_defined(*this, "requires_grad");
  return node_->requires_grad;
}

void Tensor::set_requires_grad(bool flag) {
  require_defined(*this, "set_requires_grad");
  node_->requires_grad = flag;
}

bool Tensor::has_grad() const { return defined() && !node_->grad.empty(); }

std::span<const double> Tensor::grad() const {
  require_defined(*this, "grad");
  return node_->grad;
}

std::span<double> Tensor::mutable_grad() {
  require_defined(*this, "mutable_grad");
  if (node_->grad.empty()) node_->grad.assign(node_->data.size(), 0.0);
  return node_->grad;
}

void Tensor::zero_grad() {
  if (defined()) node_->grad.clear();
}

Tensor Tensor::detach() const {
  require_defined(*this, "detach");
  return Tensor(new_node(node_->shape, node_->data, false));
}

// ---------------------------------------------------------------------------
// Graph

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }
bool grad_enabled() noexcept { return g_grad_enabled; }

Tensor make_result(Shape shape, std::vector<double> values, const std::vector<Tensor>& inputs,
                   GradFn grad_fn) {
  bool needs_grad = false;
  if (g_grad_enabled) {
    for (const auto& in : inputs) {
      if (in.defined() && in.requires_grad()) {
        needs_grad = true;
        break;
      }
    }
  }
  auto node = new_node(std::move(shape), std::move(values), needs_grad);
  if (needs_grad) {
    node->parents.reserve(inputs.size());
    for (const auto& in : inputs) node->parents.push_back(in.node());
    node->grad_fn = std::move(grad_fn);
  }
  return Tensor(std::move(node));
}

void backward(const Tensor& loss) {
  require_defined(loss, "backward");
  if (loss.numel() != 1) {
    throw ContractError("backward() requires a scalar loss, got shape " + to_string(loss.shape()));
  }
  if (!loss.requires_grad()) return;

  // Iterative post-order DFS gives a topological order (parents before children).
  std::vector<detail::Node*> order;
  std::unordered_set<detail::Node*> visited;
  std::vector<std::pair<detail::Node*, std::size_t>> stack;
  stack.emplace_back(loss.node().get(), 0);
  visited.insert(loss.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      detail::Node* parent = node->parents[next++].get();
      if (parent && parent->requires_grad && visited.insert(parent).second) {
        stack.emplace_back(parent, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  auto* root = loss.node().get();
  if (root->grad.empty()) root->grad.assign(1, 0.0);
  root->grad[0] += 1.0;

  std::vector<double*> in_grads;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::Node* node = *it;
    if (!node->grad_fn || node->grad.empty()) continue;
    in_grads.assign(node->parents.size(), nullptr);
    for (std::size_t i = 0; i < node->parents.size(); ++i) {
      detail::Node* p = node->parents[i].get();
      if (!p || !p->requires_grad) continue;
      if (p->grad.empty()) p->grad.assign(p->data.size(), 0.0);
      in_grads[i] = p->grad.data();
    }
    node->grad_fn(node->grad, in_grads);
  }
}

// ---------------------------------------------------------------------------
// Linear algebra

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_defined(a, "matmul");
  require_defined(b, "matmul");
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw DimensionError("matmul: incompatible shapes " + to_string(a.shape()) + " x " +
                         to_string(b.shape()));
  }
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<double> out(m * n, 0.0);
  auto A = a.data();
  auto B = b.data();
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      const double av = A[i * k + p];
      for (std::size_t j = 0; j < n; ++j) out[i * n + j] += av * B[p * n + j];
    }
  }
  return make_result({m, n}, std::move(out), {a, b},
                     [a, b, m, k, n](std::span<const double> g, std::span<double* const> in) {
                       auto A = a.data();
                       auto B = b.data();
                       if (in[0]) {
                         for (std::size_t i = 0; i < m; ++i)
                           for (std::size_t p = 0; p < k; ++p) {
                             double acc = 0.0;
                             for (std::size_t j = 0; j < n; ++j) acc += g[i * n + j] * B[p * n + j];
                             in[0][i * k + p] += acc;
                           }
                       }
                       if (in[1]) {
                         for (std::size_t i = 0; i < m; ++i)
                           for (std::size_t p = 0; p < k; ++p) {
                             const double av = A[i * k + p];
                             for (std::size_t j = 0; j < n; ++j) in[1][p * n + j] += av * g[i * n + j];
                           }
                       }
                     });
}

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  require_defined(x, "linear");
  require_defined(weight, "linear");
  if (weight.rank() != 2 || x.rank() == 0 || x.shape().back() != weight.dim(0)) {
    throw DimensionError("linear: input " + to_string(x.shape()) + " incompatible with weight " +
                         to_string(weight.shape()));
  }
  const std::size_t in_dim = weight.dim(0), out_dim = weight.dim(1);
  if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != out_dim)) {
    throw DimensionError("linear: bias " + to_string(bias.shape()) + " does not match weight " +
                         to_string(weight.shape()));
  }
  const std::size_t rows = x.numel() / in_dim;
  Shape out_shape = x.shape();
  out_shape.back() = out_dim;
  std::vector<double> out(rows * out_dim, 0.0);
  auto X = x.data();
  auto W = weight.data();
  for (std::size_t r = 0; r < rows; ++r) {
    double* o = out.data() + r * out_dim;
    if (bias.defined()) {
      auto Bv = bias.data();
      for (std::size_t j = 0; j < out_dim; ++j) o[j] = Bv[j];
    }
    for (std::size_t p = 0; p < in_dim; ++p) {
      const double xv = X[r * in_dim + p];
      const double* w = W.data() + p * out_dim;
      for (std::size_t j = 0; j < out_dim; ++j) o[j] += xv * w[j];
    }
  }
  return make_result(
      std::move(out_shape), std::move(out), {x, weight, bias},
      [x, weight, rows, in_dim, out_dim](std::span<const double> g, std::span<double* const> in) {
        auto X = x.data();
        auto W = weight.data();
        if (in[0]) {
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t p = 0; p < in_dim; ++p) {
              const double* w = W.data() + p * out_dim;
              const double* gr = g.data() + r * out_dim;
              double acc = 0.0;
              for (std::size_t j = 0; j < out_dim; ++j) acc += gr[j] * w[j];
              in[0][r * in_dim + p] += acc;
            }
        }
        if (in[1]) {
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t p = 0; p < in_dim; ++p) {
              const double xv = X[r * in_dim + p];
              const double* gr = g.data() + r * out_dim;
              double* gw = in[1] + p * out_dim;
              for (std::size_t j = 0; j < out_dim; ++j) gw[j] += xv * gr[j];
            }
        }
        if (in[2]) {
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t j = 0; j < out_dim; ++j) in[2][j] += g[r * out_dim + j];
        }
      });
}

// ---------------------------------------------------------------------------
// Element-wise

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  std::vector<double> out(a.numel());
  auto A = a.data();
  auto B = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = A[i] + B[i];
  return make_result(a.shape(), std::move(out), {a, b},
                     [](std::span<const double> g, std::span<double* const> in) {
                       for (int s = 0; s < 2; ++s)
                         if (in[s])
                           for (std::size_t i = 0; i < g.size(); ++i) in[s][i] += g[i];
                     });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  std::vector<double> out(a.numel());
  auto A = a.data();
  auto B = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = A[i] - B[i];
  return make_result(a.shape(), std::move(out), {a, b},
                     [](std::span<const double> g, std::span<double* const> in) {
                       if (in[0])
                         for (std::size_t i = 0; i < g.size(); ++i) in[0][i] += g[i];
                       if (in[1])
                         for (std::size_t i = 0; i < g.size(); ++i) in[1][i] -= g[i];
                     });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  std::vector<double> out(a.numel());
  auto A = a.data();
  auto B = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = A[i] * B[i];
  return make_result(a.shape(), std::move(out), {a, b},
                     [a, b](std::span<const double> g, std::span<double* const> in) {
                       auto A = a.data();
                       auto B = b.data();
                       if (in[0])
                         for (std::size_t i = 0; i < g.size(); ++i) in[0][i] += g[i] * B[i];
                       if (in[1])
                         for (std::size_t i = 0; i < g.size(); ++i) in[1][i] += g[i] * A[i];
                     });
}

Tensor scale(const Tensor& a, double factor) {
  require_defined(a, "scale");
  std::vector<double> out(a.numel());
  auto A = a.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = A[i] * factor;
  return make_result(a.shape(), std::move(out), {a},
                     [factor](std::span<const double> g, std::span<double* const> in) {
                       if (in[0])
                         for (std::size_t i = 0; i < g.size(); ++i) in[0][i] += g[i] * factor;
                     });
}

Tensor add_row(const Tensor& x, const Tensor& row) {
  require_defined(x, "add_row");
  require_defined(row, "add_row");
  if (row.rank() != 1 || x.rank() == 0 || x.shape().back() != row.dim(0)) {
    throw DimensionError("add_row: " + to_string(x.shape()) + " + " + to_string(row.shape()));
  }
  const std::size_t d = row.dim(0);
  std::vector<double> out(x.data().begin(), x.data().end());
  auto R = row.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += R[i % d];
  return make_result(x.shape(), std::move(out), {x, row},
                     [d](std::span<const double> g, std::span<double* const> in) {
                       if (in[0])
                         for (std::size_t i = 0; i < g.size(); ++i) in[0][i] += g[i];
                       if (in[1])
                         for (std::size_t i = 0; i < g.size(); ++i) in[1][i % d] += g[i];
                     });
}

// ---------------------------------------------------------------------------
// Reductions

Tensor sum(const Tensor& a) {
  require_defined(a, "sum");
  const std::size_t n = a.numel();
  double acc = 0.0;
  for (double v : a.data()) acc += v;
  return make_result({}, {acc}, {a}, [n](std::span<const double> g, std::span<double* const> in) {
    if (!in[0]) return;
    for (std::size_t i = 0; i < n; ++i) in[0][i] += g[0];
  });
}

Tensor mean(const Tensor& a) {
  require_defined(a, "mean");
  const std::size_t n = a.numel();
  double acc = 0.0;
  for (double v : a.data()) acc += v;
  return make_result({}, {acc / static_cast<double>(n)}, {a},
                     [n](std::span<const double> g, std::span<double* const> in) {
                       if (!in[0]) return;
                       const double gv = g[0] / static_cast<double>(n);
                       for (std::size_t i = 0; i < n; ++i) in[0][i] += gv;
                     });
}

Tensor mean_axis(const Tensor& a, std::size_t axis) {
  require_axis(a, axis, "mean_axis");
  const auto v = axis_view(a.shape(), axis);
  Shape out_shape = a.shape();
  out_shape.erase(out_shape.begin() + static_cast<std::ptrdiff_t>(axis));
  std::vector<double> out(v.outer * v.inner, 0.0);
  auto A = a.data();
  const double inv = 1.0 / static_cast<double>(v.extent);
  for (std::size_t o = 0; o < v.outer; ++o)
    for (std::size_t e = 0; e < v.extent; ++e)
      for (std::size_t i = 0; i < v.inner; ++i)
        out[o * v.inner + i] += A[(o * v.extent + e) * v.inner + i];
  for (double& x : out) x *= inv;
  return make_result(std::move(out_shape), std::move(out), {a},
                     [v, inv](std::span<const double> g, std::span<double* const> in) {
                       if (!in[0]) return;
                       for (std::size_t o = 0; o < v.outer; ++o)
                         for (std::size_t e = 0; e < v.extent; ++e)
                           for (std::size_t i = 0; i < v.inner; ++i)
                             in[0][(o * v.extent + e) * v.inner + i] += g[o * v.inner + i] * inv;
                     });
}

// ---------------------------------------------------------------------------
// Nonlinearities and normalization

namespace {
constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluA = 0.044715;
}  // namespace

Tensor gelu(const Tensor& x) {
  require_defined(x, "gelu");
  std::vector<double> out(x.numel());
  auto X = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double v = X[i];
    out[i] = 0.5 * v * (1.0 + std::tanh(kGeluC * (v + kGeluA * v * v * v)));
  }
  return make_result(x.shape(), std::move(out), {x},
                     [x](std::span<const double> g, std::span<double* const> in) {
                       if (!in[0]) return;
                       auto X = x.data();
                       for (std::size_t i = 0; i < g.size(); ++i) {
                         const double v = X[i];
                         const double t = std::tanh(kGeluC * (v + kGeluA * v * v * v));
                         const double dt = (1.0 - t * t) * kGeluC * (1.0 + 3.0 * kGeluA * v * v);
                         in[0][i] += g[i] * (0.5 * (1.0 + t) + 0.5 * v * dt);
                       }
                     });
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  require_defined(x, "layer_norm");
  if (x.rank() == 0 || x.shape().back() < 1) {
    throw DimensionError("layer_norm: last axis must be non-empty, got " + to_string(x.shape()));
  }
  const std::size_t d = x.shape().back();
  if (gamma.shape() != Shape{d} || beta.shape() != Shape{d}) {
    throw DimensionError("layer_norm: gamma/beta " + to_string(gamma.shape()) + "/" +
                         to_string(beta.shape()) + " do not match feature extent " +
                         std::to_string(d));
  }
  const std::size_t rows = x.numel() / d;
  std::vector<double> out(x.numel());
  std::vector<double> xhat(x.numel());
  std::vector<double> inv_std(rows);
  auto X = x.data();
  auto G = gamma.data();
  auto B = beta.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = X.data() + r * d;
    double mu = 0.0;
    for (std::size_t j = 0; j < d; ++j) mu += xr[j];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) var += (xr[j] - mu) * (xr[j] - mu);
    var /= static_cast<double>(d);
    const double is = 1.0 / std::sqrt(var + eps);
    inv_std[r] = is;
    for (std::size_t j = 0; j < d; ++j) {
      const double h = (xr[j] - mu) * is;
      xhat[r * d + j] = h;
      out[r * d + j] = h * G[j] + B[j];
    }
  }
  return make_result(
      x.shape(), std::move(out), {x, gamma, beta},
      [gamma, xhat = std::move(xhat), inv_std = std::move(inv_std), rows, d](
          std::span<const double> g, std::span<double* const> in) {
        auto G = gamma.data();
        std::vector<double> dxhat(d);
        for (std::size_t r = 0; r < rows; ++r) {
          const double* gr = g.data() + r * d;
          const double* hr = xhat.data() + r * d;
          if (in[1])
            for (std::size_t j = 0; j < d; ++j) in[1][j] += gr[j] * hr[j];
          if (in[2])
            for (std::size_t j = 0; j < d; ++j) in[2][j] += gr[j];
          if (in[0]) {
            double m1 = 0.0, m2 = 0.0;
            for (std::size_t j = 0; j < d; ++j) {
              dxhat[j] = gr[j] * G[j];
              m1 += dxhat[j];
              m2 += dxhat[j] * hr[j];
            }
            m1 /= static_cast<double>(d);
            m2 /= static_cast<double>(d);
            for (std::size_t j = 0; j < d; ++j)
              in[0][r * d + j] += inv_std[r] * (dxhat[j] - m1 - hr[j] * m2);
          }
        }
      });
}

Tensor softmax(const Tensor& x, std::size_t axis) {
  require_axis(x, axis, "softmax");
  const auto v = axis_view(x.shape(), axis);
  std::vector<double> out(x.numel());
  auto X = x.data();
  for (std::size_t o = 0; o < v.outer; ++o)
    for (std::size_t i = 0; i < v.inner; ++i) {
      auto idx = [&](std::size_t e) { return (o * v.extent + e) * v.inner + i; };
      double mx = X[idx(0)];
      for (std::size_t e = 1; e < v.extent; ++e) mx = std::max(mx, X[idx(e)]);
      double z = 0.0;
      for (std::size_t e = 0; e < v.extent; ++e) {
        out[idx(e)] = std::exp(X[idx(e)] - mx);
        z += out[idx(e)];
      }
      for (std::size_t e = 0; e < v.extent; ++e) out[idx(e)] /= z;
    }
  std::vector<double> saved = out;
  return make_result(x.shape(), std::move(out), {x},
                     [v, y = std::move(saved)](std::span<const double> g, std::span<double* const> in) {
                       if (!in[0]) return;
                       for (std::size_t o = 0; o < v.outer; ++o)
                         for (std::size_t i = 0; i < v.inner; ++i) {
                           auto idx = [&](std::size_t e) { return (o * v.extent + e) * v.inner + i; };
                           double dot = 0.0;
                           for (std::size_t e = 0; e < v.extent; ++e) dot += g[idx(e)] * y[idx(e)];
                           for (std::size_t e = 0; e < v.extent; ++e)
                             in[0][idx(e)] += y[idx(e)] * (g[idx(e)] - dot);
                         }
                     });
}

Tensor log_softmax(const Tensor& x, std::size_t axis) {
  require_axis(x, axis, "log_softmax");
  const auto v = axis_view(x.shape(), axis);
  std::vector<double> out(x.numel());
  auto X = x.data();
  for (std::size_t o = 0; o < v.outer; ++o)
    for (std::size_t i = 0; i < v.inner; ++i) {
      auto idx = [&](std::size_t e) { return (o * v.extent + e) * v.inner + i; };
      double mx = X[idx(0)];
      for (std::size_t e = 1; e < v.extent; ++e) mx = std::max(mx, X[idx(e)]);
      double z = 0.0;
      for (std::size_t e = 0; e < v.extent; ++e) z += std::exp(X[idx(e)] - mx);
      const double lse = mx + std::log(z);
      for (std::size_t e = 0; e < v.extent; ++e) out[idx(e)] = X[idx(e)] - lse;
    }
  std::vector<double> saved = out;
  return make_result(x.shape(), std::move(out), {x},
                     [v, y = std::move(saved)](std::span<const double> g, std::span<double* const> in) {
                       if (!in[0]) return;
                       for (std::size_t o = 0; o < v.outer; ++o)
                         for (std::size_t i = 0; i < v.inner; ++i) {
                           auto idx = [&](std::size_t e) { return (o * v.extent + e) * v.inner + i; };
                           double gs = 0.0;
                           for (std::size_t e = 0; e < v.extent; ++e) gs += g[idx(e)];
                           for (std::size_t e = 0; e < v.extent; ++e)
                             in[0][idx(e)] += g[idx(e)] - std::exp(y[idx(e)]) * gs;
                         }
                     });
}

// ---------------------------------------------------------------------------
// Shape manipulation

Tensor reshape(const Tensor& x, Shape shape) {
  require_defined(x, "reshape");
  if (fsar::numel(shape) != x.numel()) {
    throw DimensionError("reshape: cannot view " + to_string(x.shape()) + " as " + to_string(shape));
  }
  std::vector<double> out(x.data().begin(), x.data().end());
  return make_result(std::move(shape), std::move(out), {x},
                     [](std::span<const double> g, std::span<double* const> in) {
                       if (in[0])
                         for (std::size_t i = 0; i < g.size(); ++i) in[0][i] += g[i];
                     });
}

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
  if (parts.empty()) throw ContractError("concat: no operands");
  for (const auto& p : parts) require_axis(p, axis, "concat");
  const Shape& first = parts.front().shape();
  Shape out_shape = first;
  out_shape[axis] = 0;
  for (const auto& p : parts) {
    for (std::size_t i = 0; i < first.size(); ++i) {
      if (i != axis && (p.rank() != first.size() || p.shape()[i] != first[i])) {
        throw DimensionError("concat: shape " + to_string(p.shape()) + " incompatible with " +
                             to_string(first) + " along axis " + std::to_string(axis));
      }
    }
    out_shape[axis] += p.shape()[axis];
  }
  const auto v = axis_view(out_shape, axis);
  std::vector<double> out(fsar::numel(out_shape));
  std::vector<std::size_t> offsets;
  std::size_t off = 0;
  for (const auto& p : parts) {
    offsets.push_back(off);
    const std::size_t ext = p.shape()[axis];
    auto P = p.data();
    for (std::size_t o = 0; o < v.outer; ++o)
      std::copy_n(P.data() + o * ext * v.inner, ext * v.inner,
                  out.data() + (o * v.extent + off) * v.inner);
    off += ext;
  }
  std::vector<std::size_t> extents;
  for (const auto& p : parts) extents.push_back(p.shape()[axis]);
  return make_result(std::move(out_shape), std::move(out), parts,
                     [v, offsets, extents](std::span<const double> g, std::span<double* const> in) {
                       for (std::size_t k = 0; k < in.size(); ++k) {
                         if (!in[k]) continue;
                         const std::size_t ext = extents[k];
                         for (std::size_t o = 0; o < v.outer; ++o)
                           for (std::size_t e = 0; e < ext * v.inner; ++e)
                             in[k][o * ext * v.inner + e] +=
                                 g[(o * v.extent + offsets[k]) * v.inner + e];
                       }
                     });
}

Tensor slice(const Tensor& x, std::size_t axis, std::size_t begin, std::size_t end) {
  require_axis(x, axis, "slice");
  if (begin > end || end > x.dim(axis)) {
    throw DimensionError("slice: range [" + std::to_string(begin) + "," + std::to_string(end) +
                         ") out of bounds for shape " + to_string(x.shape()));
  }
  const auto v = axis_view(x.shape(), axis);
  Shape out_shape = x.shape();
  out_shape[axis] = end - begin;
  const std::size_t len = end - begin;
  std::vector<double> out(v.outer * len * v.inner);
  auto X = x.data();
  for (std::size_t o = 0; o < v.outer; ++o)
    std::copy_n(X.data() + (o * v.extent + begin) * v.inner, len * v.inner,
                out.data() + o * len * v.inner);
  return make_result(std::move(out_shape), std::move(out), {x},
                     [v, begin, len](std::span<const double> g, std::span<double* const> in) {
                       if (!in[0]) return;
                       for (std::size_t o = 0; o < v.outer; ++o)
                         for (std::size_t e = 0; e < len * v.inner; ++e)
                           in[0][(o * v.extent + begin) * v.inner + e] += g[o * len * v.inner + e];
                     });
}

Tensor tile(const Tensor& x, std::size_t axis, std::size_t count) {
  require_axis(x, axis, "tile");
  if (x.dim(axis) != 1) {
    throw DimensionError("tile: axis " + std::to_string(axis) + " of " + to_string(x.shape()) +
                         " must have extent 1");
  }
  const auto v = axis_view(x.shape(), axis);
  Shape out_shape = x.shape();
  out_shape[axis] = count;
  std::vector<double> out(v.outer * count * v.inner);
  auto X = x.data();
  for (std::size_t o = 0; o < v.outer; ++o)
    for (std::size_t c = 0; c < count; ++c)
      std::copy_n(X.data() + o * v.inner, v.inner, out.data() + (o * count + c) * v.inner);
  return make_result(std::move(out_shape), std::move(out), {x},
                     [v, count](std::span<const double> g, std::span<double* const> in) {
                       if (!in[0]) return;
                       for (std::size_t o = 0; o < v.outer; ++o)
                         for (std::size_t c = 0; c < count; ++c)
                           for (std::size_t i = 0; i < v.inner; ++i)
                             in[0][o * v.inner + i] += g[(o * count + c) * v.inner + i];
                     });
}

Tensor pick(const Tensor& x, std::size_t flat_index) {
  require_defined(x, "pick");
  if (flat_index >= x.numel()) {
    throw DimensionError("pick: index " + std::to_string(flat_index) + " out of range for shape " +
                         to_string(x.shape()));
  }
  return make_result({}, {x.data()[flat_index]}, {x},
                     [flat_index](std::span<const double> g, std::span<double* const> in) {
                       if (in[0]) in[0][flat_index] += g[0];
                     });
}

// ---------------------------------------------------------------------------
// Similarity and attention

Tensor cosine_matrix(const Tensor& a, const Tensor& b) {
  require_defined(a, "cosine_matrix");
  require_defined(b, "cosine_matrix");
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(1)) {
    throw DimensionError("cosine_matrix: incompatible shapes " + to_string(a.shape()) + " and " +
                         to_string(b.shape()));
  }
  const std::size_t m = a.dim(0), n = b.dim(0), d = a.dim(1);
  auto A = a.data();
  auto B = b.data();
  auto norms = [d](std::span<const double> M, std::size_t rows, const char* which) {
    std::vector<double> out(rows);
    for (std::size_t r = 0; r < rows; ++r) {
      double s = 0.0;
      for (std::size_t j = 0; j < d; ++j) s += M[r * d + j] * M[r * d + j];
      out[r] = std::sqrt(s);
      if (!(out[r] > 0.0)) {
        throw ContractError(std::string("cosine similarity of a zero vector (") + which + " row " +
                            std::to_string(r) + ")");
      }
    }
    return out;
  };
  auto na = norms(A, m, "left");
  auto nb = norms(B, n, "right");
  std::vector<double> out(m * n);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      double dot = 0.0;
      for (std::size_t p = 0; p < d; ++p) dot += A[i * d + p] * B[j * d + p];
      out[i * n + j] = dot / (na[i] * nb[j]);
    }
  std::vector<double> cos = out;
  return make_result(
      {m, n}, std::move(out), {a, b},
      [a, b, m, n, d, na = std::move(na), nb = std::move(nb), cos = std::move(cos)](
          std::span<const double> g, std::span<double* const> in) {
        auto A = a.data();
        auto B = b.data();
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < n; ++j) {
            const double gij = g[i * n + j];
            if (gij == 0.0) continue;
            const double c = cos[i * n + j];
            const double inv = 1.0 / (na[i] * nb[j]);
            if (in[0])
              for (std::size_t p = 0; p < d; ++p)
                in[0][i * d + p] += gij * (B[j * d + p] * inv - c * A[i * d + p] / (na[i] * na[i]));
            if (in[1])
              for (std::size_t p = 0; p < d; ++p)
                in[1][j * d + p] += gij * (A[i * d + p] * inv - c * B[j * d + p] / (nb[j] * nb[j]));
          }
      });
}

namespace {

struct AttentionDims {
  std::size_t batch, sq, sk, d, heads, dh;
};

AttentionDims check_attention(const Tensor& q, const Tensor& k, const Tensor* v, std::size_t heads,
                              const std::vector<bool>& key_mask) {
  require_defined(q, "attention");
  require_defined(k, "attention");
  if (q.rank() != 3 || k.rank() != 3 || q.dim(0) != k.dim(0) || q.dim(2) != k.dim(2)) {
    throw DimensionError("attention: query " + to_string(q.shape()) + " incompatible with key " +
                         to_string(k.shape()));
  }
  if (v && v->shape() != k.shape()) {
    throw DimensionError("attention: value " + to_string(v->shape()) + " must match key " +
                         to_string(k.shape()));
  }
  if (heads == 0 || q.dim(2) % heads != 0) {
    throw DimensionError("attention: feature extent " + std::to_string(q.dim(2)) +
                         " not divisible by " + std::to_string(heads) + " heads");
  }
  if (!key_mask.empty()) {
    if (key_mask.size() != k.dim(1)) {
      throw DimensionError("attention: key mask length " + std::to_string(key_mask.size()) +
                           " does not match key length " + std::to_string(k.dim(1)));
    }
    if (std::all_of(key_mask.begin(), key_mask.end(), [](bool b) { return b; })) {
      throw ContractError("attention: every key is masked");
    }
  }
  return {q.dim(0), q.dim(1), k.dim(1), q.dim(2), heads, q.dim(2) / heads};
}

// probs[b][h][i][j]
std::vector<double> attention_probs_impl(std::span<const double> Q, std::span<const double> K,
                                         const AttentionDims& s, const std::vector<bool>& mask) {
  std::vector<double> probs(s.batch * s.heads * s.sq * s.sk);
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(s.dh));
  std::vector<double> row(s.sk);
  for (std::size_t b = 0; b < s.batch; ++b)
    for (std::size_t h = 0; h < s.heads; ++h)
      for (std::size_t i = 0; i < s.sq; ++i) {
        const double* qi = Q.data() + (b * s.sq + i) * s.d + h * s.dh;
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < s.sk; ++j) {
          if (!mask.empty() && mask[j]) continue;
          const double* kj = K.data() + (b * s.sk + j) * s.d + h * s.dh;
          double dot = 0.0;
          for (std::size_t p = 0; p < s.dh; ++p) dot += qi[p] * kj[p];
          row[j] = dot * inv_sqrt;
          mx = std::max(mx, row[j]);
        }
        double z = 0.0;
        double* pr = probs.data() + ((b * s.heads + h) * s.sq + i) * s.sk;
        for (std::size_t j = 0; j < s.sk; ++j) {
          if (!mask.empty() && mask[j]) {
            pr[j] = 0.0;
            continue;
          }
          pr[j] = std::exp(row[j] - mx);
          z += pr[j];
        }
        for (std::size_t j = 0; j < s.sk; ++j) pr[j] /= z;
      }
  return probs;
}

}  // namespace

std::vector<double> attention_probabilities(const Tensor& q, const Tensor& k, std::size_t heads,
                                            const std::vector<bool>& key_mask) {
  const auto s = check_attention(q, k, nullptr, heads, key_mask);
  return attention_probs_impl(q.data(), k.data(), s, key_mask);
}

Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v, std::size_t heads,
                 const std::vector<bool>& key_mask) {
  require_defined(v, "attention");
  const auto s = check_attention(q, k, &v, heads, key_mask);
  auto probs = attention_probs_impl(q.data(), k.data(), s, key_mask);
  std::vector<double> out(s.batch * s.sq * s.d, 0.0);
  auto V = v.data();
  for (std::size_t b = 0; b < s.batch; ++b)
    for (std::size_t h = 0; h < s.heads; ++h)
      for (std::size_t i = 0; i < s.sq; ++i) {
        const double* pr = probs.data() + ((b * s.heads + h) * s.sq + i) * s.sk;
        double* oi = out.data() + (b * s.sq + i) * s.d + h * s.dh;
        for (std::size_t j = 0; j < s.sk; ++j) {
          if (pr[j] == 0.0) continue;
          const double* vj = V.data() + (b * s.sk + j) * s.d + h * s.dh;
          for (std::size_t p = 0; p < s.dh; ++p) oi[p] += pr[j] * vj[p];
        }
      }
  return make_result(
      {s.batch, s.sq, s.d}, std::move(out), {q, k, v},
      [q, k, v, s, probs = std::move(probs)](std::span<const double> g, std::span<double* const> in) {
        auto Q = q.data();
        auto K = k.data();
        auto V = v.data();
        const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(s.dh));
        std::vector<double> dp(s.sk);
        for (std::size_t b = 0; b < s.batch; ++b)
          for (std::size_t h = 0; h < s.heads; ++h)
            for (std::size_t i = 0; i < s.sq; ++i) {
              const double* pr = probs.data() + ((b * s.heads + h) * s.sq + i) * s.sk;
              const double* gi = g.data() + (b * s.sq + i) * s.d + h * s.dh;
              double dot = 0.0;
              for (std::size_t j = 0; j < s.sk; ++j) {
                const double* vj = V.data() + (b * s.sk + j) * s.d + h * s.dh;
                double acc = 0.0;
                for (std::size_t p = 0; p < s.dh; ++p) acc += gi[p] * vj[p];
                dp[j] = acc;
                dot += acc * pr[j];
                if (in[2] && pr[j] != 0.0) {
                  double* gv = in[2] + (b * s.sk + j) * s.d + h * s.dh;
                  for (std::size_t p = 0; p < s.dh; ++p) gv[p] += pr[j] * gi[p];
                }
              }
              const double* qi = Q.data() + (b * s.sq + i) * s.d + h * s.dh;
              for (std::size_t j = 0; j < s.sk; ++j) {
                const double ds = pr[j] * (dp[j] - dot) * inv_sqrt;
                if (ds == 0.0) continue;
                const double* kj = K.data() + (b * s.sk + j) * s.d + h * s.dh;
                if (in[0]) {
                  double* gq = in[0] + (b * s.sq + i) * s.d + h * s.dh;
                  for (std::size_t p = 0; p < s.dh; ++p) gq[p] += ds * kj[p];
                }
                if (in[1]) {
                  double* gk = in[1] + (b * s.sk + j) * s.d + h * s.dh;
                  for (std::size_t p = 0; p < s.dh; ++p) gk[p] += ds * qi[p];
                }
              }
            }
      });
}

}  // namespace fsar
