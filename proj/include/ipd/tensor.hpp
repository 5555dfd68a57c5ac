#pragma once

#include <cstddef>
#include <functional>
#include <string>
#include <vector>

#include "ipd/error.hpp"

namespace ipd {

/// Dense row-major 2D tensor of 64-bit reals with an optional gradient
/// buffer of the same shape.
struct Tensor {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;
  // The gradient is bookkeeping, not part of the logical value; backward()
  // may fill it on tensors reached through const references.
  mutable std::vector<double> grad;

  Tensor() = default;
  Tensor(std::size_t r, std::size_t c) : rows(r), cols(c), data(r * c, 0.0) {}

  std::size_t size() const { return rows * cols; }
  double& at(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  double at(std::size_t r, std::size_t c) const { return data[r * cols + c]; }

  void zero_grad() const { grad.assign(data.size(), 0.0); }
  void ensure_grad() const {
    if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
  }
};

/// Handle to a node inside a Graph.
struct Var {
  int idx = -1;
  bool valid() const { return idx >= 0; }
};

/// Reverse-mode tape. Values are computed eagerly; backward() walks the
/// tape in reverse creation order and accumulates exact gradients into
/// bound parameter tensors.
///
/// With grads disabled (inference) the same code path runs but records no
/// backward closures, so graph and inference outputs are bit-identical.
class Graph {
 public:
  struct Node {
    Tensor value;
    std::vector<double> grad;  // lazily allocated
    std::function<void()> backward;
    const Tensor* bound = nullptr;  // parameter leaf target
  };

  explicit Graph(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}

  bool grad_enabled() const { return grad_enabled_; }
  void set_check_numerics(bool on) { check_numerics_ = on; }

  /// Current stage label, included in numeric-error messages.
  void set_scope(std::string scope) { scope_ = std::move(scope); }
  const std::string& scope() const { return scope_; }

  Var constant(Tensor v);
  /// Leaf bound to an external tensor; backward() adds into p.grad. With
  /// grads disabled this degenerates to a constant.
  Var param(const Tensor& p);

  const Tensor& value(Var v) const { return node(v).value; }
  std::vector<double>& grad(Var v) { return node(v).grad; }

  /// Reverse pass from a scalar root. Throws ContractError when the graph
  /// is empty, the root is invalid, or the root is not 1x1.
  void backward(Var root);

  // --- internal plumbing used by the op free functions ---
  Var emplace(Tensor value, const char* op_name);
  void set_backward(Var v, std::function<void()> fn);
  Node& node(Var v);
  const Node& node(Var v) const;
  std::vector<double>& grad_buf(Var v);  // allocates zeros on first touch

 private:
  std::vector<Node> nodes_;
  std::string scope_;
  bool grad_enabled_ = true;
  bool check_numerics_ = true;
};

// Elementwise / broadcast ops.
Var add(Graph& g, Var a, Var b);
Var sub(Graph& g, Var a, Var b);
Var mul(Graph& g, Var a, Var b);
Var scale(Graph& g, Var a, double s);
Var add_rowvec(Graph& g, Var a, Var v);  // v is [1, cols]
Var mul_rowvec(Graph& g, Var a, Var v);

// Matrix products. matmul_nt computes scale * (a . b^T).
Var matmul(Graph& g, Var a, Var b);
Var matmul_nt(Graph& g, Var a, Var b, double scale = 1.0);

// Nonlinearities and normalizations.
Var gelu(Graph& g, Var a);
Var softplus(Graph& g, Var a);
Var softmax_rows(Graph& g, Var a);
Var layernorm_rows(Graph& g, Var a);

// Structure ops.
Var concat_cols(Graph& g, Var a, Var b);
Var slice_cols(Graph& g, Var a, std::size_t j0, std::size_t j1);
Var colwise_max(Graph& g, Var a);
Var detach(Graph& g, Var a);

// Scalar reductions ([1,1] outputs).
Var mean_abs(Graph& g, Var a);
Var mean_sq(Graph& g, Var a);
Var sqrt_scalar(Graph& g, Var a);

}  // namespace ipd
