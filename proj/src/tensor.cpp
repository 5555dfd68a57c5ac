#include "ipd/tensor.hpp"

#include <cmath>

namespace ipd {

namespace {

constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;

void check_finite(const Tensor& t, const char* op, const std::string& scope) {
  for (double v : t.data) {
    if (!std::isfinite(v)) {
      std::string where = scope.empty() ? std::string(op) : scope + "/" + op;
      throw NumericError("non-finite value produced by " + where);
    }
  }
}

void matmul_nn_acc(const double* a, const double* b, double* c, std::size_t n,
                   std::size_t k, std::size_t m) {
  for (std::size_t i = 0; i < n; ++i) {
    const double* arow = a + i * k;
    double* crow = c + i * m;
    for (std::size_t kk = 0; kk < k; ++kk) {
      const double av = arow[kk];
      const double* brow = b + kk * m;
      for (std::size_t j = 0; j < m; ++j) crow[j] += av * brow[j];
    }
  }
}

// c[k x m] += a^T . b with a[n x k], b[n x m]
void matmul_tn_acc(const double* a, const double* b, double* c, std::size_t n,
                   std::size_t k, std::size_t m) {
  for (std::size_t i = 0; i < n; ++i) {
    const double* arow = a + i * k;
    const double* brow = b + i * m;
    for (std::size_t kk = 0; kk < k; ++kk) {
      const double av = arow[kk];
      double* crow = c + kk * m;
      for (std::size_t j = 0; j < m; ++j) crow[j] += av * brow[j];
    }
  }
}

// c[n x m] += s * a . b^T with a[n x k], b[m x k]
void matmul_nt_acc(const double* a, const double* b, double* c, std::size_t n,
                   std::size_t k, std::size_t m, double s) {
  for (std::size_t i = 0; i < n; ++i) {
    const double* arow = a + i * k;
    double* crow = c + i * m;
    for (std::size_t j = 0; j < m; ++j) {
      const double* brow = b + j * k;
      double acc = 0.0;
      for (std::size_t kk = 0; kk < k; ++kk) acc += arow[kk] * brow[kk];
      crow[j] += s * acc;
    }
  }
}

}  // namespace

Var Graph::constant(Tensor v) { return emplace(std::move(v), "constant"); }

Var Graph::param(const Tensor& p) {
  Var v = emplace(p, "param");
  if (grad_enabled_) nodes_[v.idx].bound = &p;
  return v;
}

Var Graph::emplace(Tensor value, const char* op_name) {
  if (check_numerics_) check_finite(value, op_name, scope_);
  nodes_.push_back(Node{std::move(value), {}, nullptr, nullptr});
  return Var{static_cast<int>(nodes_.size()) - 1};
}

void Graph::set_backward(Var v, std::function<void()> fn) {
  if (grad_enabled_) nodes_[v.idx].backward = std::move(fn);
}

Graph::Node& Graph::node(Var v) {
  if (!v.valid() || v.idx >= static_cast<int>(nodes_.size()))
    throw ContractError("invalid graph node handle");
  return nodes_[v.idx];
}

const Graph::Node& Graph::node(Var v) const {
  if (!v.valid() || v.idx >= static_cast<int>(nodes_.size()))
    throw ContractError("invalid graph node handle");
  return nodes_[v.idx];
}

std::vector<double>& Graph::grad_buf(Var v) {
  Node& n = node(v);
  if (n.grad.size() != n.value.size()) n.grad.assign(n.value.size(), 0.0);
  return n.grad;
}

void Graph::backward(Var root) {
  if (nodes_.empty()) throw ContractError("backward called on an empty graph");
  if (!grad_enabled_)
    throw ContractError("backward called on a no-grad graph");
  Node& r = node(root);
  if (r.value.size() != 1)
    throw ContractError("backward root must be a scalar");
  grad_buf(root)[0] += 1.0;
  for (int i = root.idx; i >= 0; --i) {
    Node& n = nodes_[i];
    if (n.grad.empty()) continue;
    if (n.backward) n.backward();
    if (n.bound) {
      n.bound->ensure_grad();
      for (std::size_t j = 0; j < n.grad.size(); ++j)
        n.bound->grad[j] += n.grad[j];
    }
  }
}

// ---------------------------------------------------------------------------
// Ops
// ---------------------------------------------------------------------------

namespace {

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.rows != b.rows || a.cols != b.cols)
    throw ShapeError(std::string(op) + ": operand shapes differ");
}

}  // namespace

Var add(Graph& g, Var a, Var b) {
  const Tensor& ta = g.value(a);
  const Tensor& tb = g.value(b);
  require_same_shape(ta, tb, "add");
  Tensor out(ta.rows, ta.cols);
  for (std::size_t i = 0; i < out.size(); ++i)
    out.data[i] = ta.data[i] + tb.data[i];
  Var v = g.emplace(std::move(out), "add");
  g.set_backward(v, [&g, v, a, b] {
    const auto& go = g.grad(v);
    auto& ga = g.grad_buf(a);
    auto& gb = g.grad_buf(b);
    for (std::size_t i = 0; i < go.size(); ++i) {
      ga[i] += go[i];
      gb[i] += go[i];
    }
  });
  return v;
}

Var sub(Graph& g, Var a, Var b) {
  const Tensor& ta = g.value(a);
  const Tensor& tb = g.value(b);
  require_same_shape(ta, tb, "sub");
  Tensor out(ta.rows, ta.cols);
  for (std::size_t i = 0; i < out.size(); ++i)
    out.data[i] = ta.data[i] - tb.data[i];
  Var v = g.emplace(std::move(out), "sub");
  g.set_backward(v, [&g, v, a, b] {
    const auto& go = g.grad(v);
    auto& ga = g.grad_buf(a);
    auto& gb = g.grad_buf(b);
    for (std::size_t i = 0; i < go.size(); ++i) {
      ga[i] += go[i];
      gb[i] -= go[i];
    }
  });
  return v;
}

Var mul(Graph& g, Var a, Var b) {
  const Tensor& ta = g.value(a);
  const Tensor& tb = g.value(b);
  require_same_shape(ta, tb, "mul");
  Tensor out(ta.rows, ta.cols);
  for (std::size_t i = 0; i < out.size(); ++i)
    out.data[i] = ta.data[i] * tb.data[i];
  Var v = g.emplace(std::move(out), "mul");
  g.set_backward(v, [&g, v, a, b] {
    const auto& go = g.grad(v);
    const auto& da = g.value(a).data;
    const auto& db = g.value(b).data;
    auto& ga = g.grad_buf(a);
    auto& gb = g.grad_buf(b);
    for (std::size_t i = 0; i < go.size(); ++i) {
      ga[i] += go[i] * db[i];
      gb[i] += go[i] * da[i];
    }
  });
  return v;
}

Var scale(Graph& g, Var a, double s) {
  const Tensor& ta = g.value(a);
  Tensor out(ta.rows, ta.cols);
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] = ta.data[i] * s;
  Var v = g.emplace(std::move(out), "scale");
  g.set_backward(v, [&g, v, a, s] {
    const auto& go = g.grad(v);
    auto& ga = g.grad_buf(a);
    for (std::size_t i = 0; i < go.size(); ++i) ga[i] += go[i] * s;
  });
  return v;
}

Var add_rowvec(Graph& g, Var a, Var vrow) {
  const Tensor& ta = g.value(a);
  const Tensor& tv = g.value(vrow);
  if (tv.rows != 1 || tv.cols != ta.cols)
    throw ShapeError("add_rowvec: vector must be [1, cols]");
  Tensor out(ta.rows, ta.cols);
  for (std::size_t i = 0; i < ta.rows; ++i)
    for (std::size_t j = 0; j < ta.cols; ++j)
      out.at(i, j) = ta.at(i, j) + tv.data[j];
  Var v = g.emplace(std::move(out), "add_rowvec");
  g.set_backward(v, [&g, v, a, vrow] {
    const auto& go = g.grad(v);
    const Tensor& ta = g.value(a);
    auto& ga = g.grad_buf(a);
    auto& gv = g.grad_buf(vrow);
    for (std::size_t i = 0; i < ta.rows; ++i)
      for (std::size_t j = 0; j < ta.cols; ++j) {
        ga[i * ta.cols + j] += go[i * ta.cols + j];
        gv[j] += go[i * ta.cols + j];
      }
  });
  return v;
}

Var mul_rowvec(Graph& g, Var a, Var vrow) {
  const Tensor& ta = g.value(a);
  const Tensor& tv = g.value(vrow);
  if (tv.rows != 1 || tv.cols != ta.cols)
    throw ShapeError("mul_rowvec: vector must be [1, cols]");
  Tensor out(ta.rows, ta.cols);
  for (std::size_t i = 0; i < ta.rows; ++i)
    for (std::size_t j = 0; j < ta.cols; ++j)
      out.at(i, j) = ta.at(i, j) * tv.data[j];
  Var v = g.emplace(std::move(out), "mul_rowvec");
  g.set_backward(v, [&g, v, a, vrow] {
    const auto& go = g.grad(v);
    const Tensor& ta = g.value(a);
    const Tensor& tv = g.value(vrow);
    auto& ga = g.grad_buf(a);
    auto& gv = g.grad_buf(vrow);
    for (std::size_t i = 0; i < ta.rows; ++i)
      for (std::size_t j = 0; j < ta.cols; ++j) {
        const std::size_t ij = i * ta.cols + j;
        ga[ij] += go[ij] * tv.data[j];
        gv[j] += go[ij] * ta.data[ij];
      }
  });
  return v;
}

Var matmul(Graph& g, Var a, Var b) {
  const Tensor& ta = g.value(a);
  const Tensor& tb = g.value(b);
  if (ta.cols != tb.rows) throw ShapeError("matmul: inner dimensions differ");
  Tensor out(ta.rows, tb.cols);
  matmul_nn_acc(ta.data.data(), tb.data.data(), out.data.data(), ta.rows,
                ta.cols, tb.cols);
  Var v = g.emplace(std::move(out), "matmul");
  g.set_backward(v, [&g, v, a, b] {
    const auto& go = g.grad(v);
    const Tensor& ta = g.value(a);
    const Tensor& tb = g.value(b);
    // dA += dC . B^T ; dB += A^T . dC
    matmul_nt_acc(go.data(), tb.data.data(), g.grad_buf(a).data(), ta.rows,
                  tb.cols, tb.rows, 1.0);
    matmul_tn_acc(ta.data.data(), go.data(), g.grad_buf(b).data(), ta.rows,
                  ta.cols, tb.cols);
  });
  return v;
}

Var matmul_nt(Graph& g, Var a, Var b, double s) {
  const Tensor& ta = g.value(a);
  const Tensor& tb = g.value(b);
  if (ta.cols != tb.cols) throw ShapeError("matmul_nt: inner dimensions differ");
  Tensor out(ta.rows, tb.rows);
  matmul_nt_acc(ta.data.data(), tb.data.data(), out.data.data(), ta.rows,
                ta.cols, tb.rows, s);
  Var v = g.emplace(std::move(out), "matmul_nt");
  g.set_backward(v, [&g, v, a, b, s] {
    const Tensor& ta = g.value(a);
    const Tensor& tb = g.value(b);
    const auto& go = g.grad(v);  // [n x m], m = tb.rows
    // C = s A B^T: dA += s dC . B ; dB += s dC^T . A
    std::vector<double> scaled(go.size());
    for (std::size_t i = 0; i < go.size(); ++i) scaled[i] = s * go[i];
    matmul_nn_acc(scaled.data(), tb.data.data(), g.grad_buf(a).data(), ta.rows,
                  tb.rows, tb.cols);
    matmul_tn_acc(scaled.data(), ta.data.data(), g.grad_buf(b).data(), ta.rows,
                  tb.rows, ta.cols);
  });
  return v;
}

Var gelu(Graph& g, Var a) {
  const Tensor& ta = g.value(a);
  Tensor out(ta.rows, ta.cols);
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double x = ta.data[i];
    out.data[i] = 0.5 * x * (1.0 + std::erf(x * kInvSqrt2));
  }
  Var v = g.emplace(std::move(out), "gelu");
  g.set_backward(v, [&g, v, a] {
    const auto& go = g.grad(v);
    const auto& dx = g.value(a).data;
    auto& ga = g.grad_buf(a);
    for (std::size_t i = 0; i < go.size(); ++i) {
      const double x = dx[i];
      const double cdf = 0.5 * (1.0 + std::erf(x * kInvSqrt2));
      const double pdf = kInvSqrt2Pi * std::exp(-0.5 * x * x);
      ga[i] += go[i] * (cdf + x * pdf);
    }
  });
  return v;
}

Var softplus(Graph& g, Var a) {
  const Tensor& ta = g.value(a);
  Tensor out(ta.rows, ta.cols);
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double x = ta.data[i];
    out.data[i] = x > 30.0 ? x : std::log1p(std::exp(x));
  }
  Var v = g.emplace(std::move(out), "softplus");
  g.set_backward(v, [&g, v, a] {
    const auto& go = g.grad(v);
    const auto& dx = g.value(a).data;
    auto& ga = g.grad_buf(a);
    for (std::size_t i = 0; i < go.size(); ++i) {
      const double x = dx[i];
      const double sig = x >= 0.0 ? 1.0 / (1.0 + std::exp(-x))
                                  : std::exp(x) / (1.0 + std::exp(x));
      ga[i] += go[i] * sig;
    }
  });
  return v;
}

Var softmax_rows(Graph& g, Var a) {
  const Tensor& ta = g.value(a);
  Tensor out(ta.rows, ta.cols);
  for (std::size_t i = 0; i < ta.rows; ++i) {
    const double* row = ta.data.data() + i * ta.cols;
    double* orow = out.data.data() + i * ta.cols;
    double mx = row[0];
    for (std::size_t j = 1; j < ta.cols; ++j) mx = std::max(mx, row[j]);
    double sum = 0.0;
    for (std::size_t j = 0; j < ta.cols; ++j) {
      orow[j] = std::exp(row[j] - mx);
      sum += orow[j];
    }
    for (std::size_t j = 0; j < ta.cols; ++j) orow[j] /= sum;
  }
  Var v = g.emplace(std::move(out), "softmax_rows");
  g.set_backward(v, [&g, v, a] {
    const auto& go = g.grad(v);
    const Tensor& ty = g.value(v);
    auto& ga = g.grad_buf(a);
    for (std::size_t i = 0; i < ty.rows; ++i) {
      const double* y = ty.data.data() + i * ty.cols;
      const double* dy = go.data() + i * ty.cols;
      double dot = 0.0;
      for (std::size_t j = 0; j < ty.cols; ++j) dot += y[j] * dy[j];
      double* gx = ga.data() + i * ty.cols;
      for (std::size_t j = 0; j < ty.cols; ++j)
        gx[j] += y[j] * (dy[j] - dot);
    }
  });
  return v;
}

Var layernorm_rows(Graph& g, Var a) {
  constexpr double kEps = 1e-5;
  const Tensor& ta = g.value(a);
  Tensor out(ta.rows, ta.cols);
  std::vector<double> inv_std(ta.rows);
  for (std::size_t i = 0; i < ta.rows; ++i) {
    const double* row = ta.data.data() + i * ta.cols;
    double mean = 0.0;
    for (std::size_t j = 0; j < ta.cols; ++j) mean += row[j];
    mean /= static_cast<double>(ta.cols);
    double var = 0.0;
    for (std::size_t j = 0; j < ta.cols; ++j) var += (row[j] - mean) * (row[j] - mean);
    var /= static_cast<double>(ta.cols);
    inv_std[i] = 1.0 / std::sqrt(var + kEps);
    double* orow = out.data.data() + i * ta.cols;
    for (std::size_t j = 0; j < ta.cols; ++j)
      orow[j] = (row[j] - mean) * inv_std[i];
  }
  Var v = g.emplace(std::move(out), "layernorm_rows");
  g.set_backward(v, [&g, v, a, inv_std = std::move(inv_std)] {
    const auto& go = g.grad(v);
    const Tensor& ty = g.value(v);
    auto& ga = g.grad_buf(a);
    const double inv_n = 1.0 / static_cast<double>(ty.cols);
    for (std::size_t i = 0; i < ty.rows; ++i) {
      const double* y = ty.data.data() + i * ty.cols;
      const double* dy = go.data() + i * ty.cols;
      double mean_dy = 0.0, mean_dyy = 0.0;
      for (std::size_t j = 0; j < ty.cols; ++j) {
        mean_dy += dy[j];
        mean_dyy += dy[j] * y[j];
      }
      mean_dy *= inv_n;
      mean_dyy *= inv_n;
      double* gx = ga.data() + i * ty.cols;
      for (std::size_t j = 0; j < ty.cols; ++j)
        gx[j] += inv_std[i] * (dy[j] - mean_dy - y[j] * mean_dyy);
    }
  });
  return v;
}

Var concat_cols(Graph& g, Var a, Var b) {
  const Tensor& ta = g.value(a);
  const Tensor& tb = g.value(b);
  if (ta.rows != tb.rows) throw ShapeError("concat_cols: row counts differ");
  Tensor out(ta.rows, ta.cols + tb.cols);
  for (std::size_t i = 0; i < ta.rows; ++i) {
    for (std::size_t j = 0; j < ta.cols; ++j) out.at(i, j) = ta.at(i, j);
    for (std::size_t j = 0; j < tb.cols; ++j)
      out.at(i, ta.cols + j) = tb.at(i, j);
  }
  Var v = g.emplace(std::move(out), "concat_cols");
  g.set_backward(v, [&g, v, a, b] {
    const auto& go = g.grad(v);
    const Tensor& ta = g.value(a);
    const Tensor& tb = g.value(b);
    auto& ga = g.grad_buf(a);
    auto& gb = g.grad_buf(b);
    const std::size_t oc = ta.cols + tb.cols;
    for (std::size_t i = 0; i < ta.rows; ++i) {
      for (std::size_t j = 0; j < ta.cols; ++j)
        ga[i * ta.cols + j] += go[i * oc + j];
      for (std::size_t j = 0; j < tb.cols; ++j)
        gb[i * tb.cols + j] += go[i * oc + ta.cols + j];
    }
  });
  return v;
}

Var slice_cols(Graph& g, Var a, std::size_t j0, std::size_t j1) {
  const Tensor& ta = g.value(a);
  if (j0 >= j1 || j1 > ta.cols) throw ShapeError("slice_cols: bad column range");
  Tensor out(ta.rows, j1 - j0);
  for (std::size_t i = 0; i < ta.rows; ++i)
    for (std::size_t j = j0; j < j1; ++j) out.at(i, j - j0) = ta.at(i, j);
  Var v = g.emplace(std::move(out), "slice_cols");
  g.set_backward(v, [&g, v, a, j0, j1] {
    const auto& go = g.grad(v);
    const Tensor& ta = g.value(a);
    auto& ga = g.grad_buf(a);
    const std::size_t w = j1 - j0;
    for (std::size_t i = 0; i < ta.rows; ++i)
      for (std::size_t j = 0; j < w; ++j)
        ga[i * ta.cols + j0 + j] += go[i * w + j];
  });
  return v;
}

Var colwise_max(Graph& g, Var a) {
  const Tensor& ta = g.value(a);
  Tensor out(1, ta.cols);
  std::vector<std::size_t> argmax(ta.cols, 0);
  for (std::size_t j = 0; j < ta.cols; ++j) {
    double best = ta.at(0, j);
    for (std::size_t i = 1; i < ta.rows; ++i) {
      if (ta.at(i, j) > best) {
        best = ta.at(i, j);
        argmax[j] = i;
      }
    }
    out.data[j] = best;
  }
  Var v = g.emplace(std::move(out), "colwise_max");
  g.set_backward(v, [&g, v, a, argmax = std::move(argmax)] {
    const auto& go = g.grad(v);
    const Tensor& ta = g.value(a);
    auto& ga = g.grad_buf(a);
    for (std::size_t j = 0; j < ta.cols; ++j)
      ga[argmax[j] * ta.cols + j] += go[j];
  });
  return v;
}

Var detach(Graph& g, Var a) {
  Tensor out = g.value(a);
  return g.emplace(std::move(out), "detach");
}

Var mean_abs(Graph& g, Var a) {
  const Tensor& ta = g.value(a);
  Tensor out(1, 1);
  double acc = 0.0;
  for (double x : ta.data) acc += std::abs(x);
  out.data[0] = acc / static_cast<double>(ta.size());
  Var v = g.emplace(std::move(out), "mean_abs");
  g.set_backward(v, [&g, v, a] {
    const double go = g.grad(v)[0];
    const Tensor& ta = g.value(a);
    auto& ga = g.grad_buf(a);
    const double c = go / static_cast<double>(ta.size());
    for (std::size_t i = 0; i < ta.size(); ++i) {
      if (ta.data[i] > 0.0)
        ga[i] += c;
      else if (ta.data[i] < 0.0)
        ga[i] -= c;
    }
  });
  return v;
}

Var mean_sq(Graph& g, Var a) {
  const Tensor& ta = g.value(a);
  Tensor out(1, 1);
  double acc = 0.0;
  for (double x : ta.data) acc += x * x;
  out.data[0] = acc / static_cast<double>(ta.size());
  Var v = g.emplace(std::move(out), "mean_sq");
  g.set_backward(v, [&g, v, a] {
    const double go = g.grad(v)[0];
    const Tensor& ta = g.value(a);
    auto& ga = g.grad_buf(a);
    const double c = 2.0 * go / static_cast<double>(ta.size());
    for (std::size_t i = 0; i < ta.size(); ++i) ga[i] += c * ta.data[i];
  });
  return v;
}

Var sqrt_scalar(Graph& g, Var a) {
  const Tensor& ta = g.value(a);
  if (ta.size() != 1) throw ShapeError("sqrt_scalar expects a scalar");
  Tensor out(1, 1);
  out.data[0] = std::sqrt(ta.data[0]);
  Var v = g.emplace(std::move(out), "sqrt_scalar");
  g.set_backward(v, [&g, v, a] {
    const double y = g.value(v).data[0];
    if (y > 0.0) g.grad_buf(a)[0] += g.grad(v)[0] / (2.0 * y);
  });
  return v;
}

}  // namespace ipd
