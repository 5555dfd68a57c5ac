#include "ipd/net.hpp"

#include <algorithm>
#include <cmath>

namespace ipd {

namespace {

constexpr int kCoordFreqs = 4;  // raw xyz + sin/cos at 1,2,4,8
constexpr std::size_t kCoordDim = 3 + 3 * 2 * kCoordFreqs;

/// Point coordinates with multi-frequency sinusoidal features; sharp
/// spatial functions of position regress far better from these than from
/// the raw coordinates alone.
Tensor coord_features(const PointCloud& c) {
  Tensor t(c.size(), kCoordDim);
  for (std::size_t i = 0; i < c.size(); ++i) {
    const double xyz[3] = {c.points[i].x, c.points[i].y, c.points[i].z};
    double* row = t.data.data() + i * kCoordDim;
    for (int a = 0; a < 3; ++a) row[a] = xyz[a];
    std::size_t col = 3;
    for (int a = 0; a < 3; ++a) {
      double f = 1.0;
      for (int k = 0; k < kCoordFreqs; ++k) {
        row[col++] = std::sin(f * xyz[a]);
        row[col++] = std::cos(f * xyz[a]);
        f *= 2.0;
      }
    }
  }
  return t;
}

bool lex_less(const Vec3& a, const Vec3& b) {
  if (a.x != b.x) return a.x < b.x;
  if (a.y != b.y) return a.y < b.y;
  return a.z < b.z;
}

}  // namespace

void NetConfig::validate() const {
  if (d_model < 1 || n_heads < 1 || n_cond_tokens < 1 || time_embed_dim < 1 ||
      decoder_depth < 1)
    throw ParamError("net config fields must be positive");
  if (d_model % n_heads != 0)
    throw ParamError("d_model must be divisible by n_heads");
  if (time_embed_dim % 2 != 0)
    throw ParamError("time_embed_dim must be even");
}

Tensor& NetParams::at(const std::string& name) {
  auto it = tensors.find(name);
  if (it == tensors.end())
    throw ContractError("unknown parameter tensor: " + name);
  return it->second;
}

const Tensor& NetParams::at(const std::string& name) const {
  auto it = tensors.find(name);
  if (it == tensors.end())
    throw ContractError("unknown parameter tensor: " + name);
  return it->second;
}

std::size_t NetParams::parameter_count() const {
  std::size_t n = 0;
  for (const auto& [name, t] : tensors) n += t.size();
  return n;
}

void NetParams::zero_grads() const {
  for (const auto& [name, t] : tensors) t.zero_grad();
}

SelfCond SelfCond::from_prediction(const std::vector<double>& nu,
                                   double clamp) {
  SelfCond sc;
  sc.values.reserve(nu.size());
  for (double v : nu) sc.values.push_back(std::min(v, clamp));
  return sc;
}

NetParams init_params(const NetConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  const std::size_t d = static_cast<std::size_t>(cfg.d_model);
  const std::size_t e = static_cast<std::size_t>(cfg.time_embed_dim);

  NetParams p;
  p.cfg = cfg;
  auto linear = [&](const std::string& name, std::size_t in, std::size_t out) {
    p.tensors[name + ".w"] = Tensor(in, out);
    p.tensors[name + ".b"] = Tensor(1, out);
  };

  linear("cond.l1", kCoordDim, d);
  linear("cond.l2", d, d);
  linear("query.l1", kCoordDim, d);
  linear("query.l2", d, d);
  // Activation bypass: keeps a purely linear channel from the coordinates
  // through the time affine into the decoders, so near-linear maps (the
  // high-t noise regression) do not have to squeeze through the GELUs.
  p.tensors["query.lin.w"] = Tensor(kCoordDim, d);
  linear("query.selfcond", d + 1, d);
  linear("query.time", e, 2 * d);
  linear("query.out", d, d);
  for (const char* dec : {"udf", "noise"}) {
    const bool is_udf = std::string(dec) == "udf";
    const std::size_t din = is_udf ? d : d + 1;
    const std::size_t dout = is_udf ? 1 : 3;
    linear(std::string(dec) + ".in", din, d);
    for (int k = 0; k < cfg.decoder_depth; ++k) {
      const std::string blk = std::string(dec) + ".blk" + std::to_string(k);
      linear(blk + ".q", d, d);
      linear(blk + ".k", d, d);
      linear(blk + ".v", d, d);
      linear(blk + ".o", d, d);
    }
    linear(std::string(dec) + ".head.l1", d, d);
    linear(std::string(dec) + ".head.l2", d, dout);
    p.tensors[std::string(dec) + ".head.skip.w"] = Tensor(d, dout);
  }

  Rng rng(Rng::mix(seed, 0x9a27));
  for (auto& [name, t] : p.tensors) {
    if (name.size() >= 2 && name.compare(name.size() - 2, 2, ".w") == 0) {
      const double s = 1.0 / std::sqrt(static_cast<double>(t.rows));
      for (double& v : t.data) v = rng.normal() * s;
    }
    // biases stay zero
  }
  return p;
}

Tensor time_embedding(TimeStep t, int dim) {
  if (t.value < 1) throw ParamError("timestep must be >= 1");
  if (dim < 2 || dim % 2 != 0)
    throw ParamError("time embedding dimension must be even and >= 2");
  const int half = dim / 2;
  Tensor out(1, dim);
  for (int i = 0; i < half; ++i) {
    const double f =
        half == 1 ? 1.0
                  : std::exp(-std::log(10000.0) * static_cast<double>(i) /
                             static_cast<double>(half - 1));
    out.data[i] = std::sin(t.value * f);
    out.data[half + i] = std::cos(t.value * f);
  }
  return out;
}

std::vector<std::size_t> fps_select(const PointCloud& cloud, std::size_t m) {
  if (cloud.empty()) throw ContractError("fps_select requires a non-empty cloud");
  const std::size_t n = cloud.size();

  std::size_t start = 0;
  for (std::size_t i = 1; i < n; ++i)
    if (lex_less(cloud.points[i], cloud.points[start])) start = i;

  const std::size_t distinct = std::min(n, m);
  std::vector<std::size_t> order;
  order.reserve(distinct);
  std::vector<double> dist(n, std::numeric_limits<double>::max());
  std::size_t current = start;
  for (std::size_t k = 0; k < distinct; ++k) {
    order.push_back(current);
    const Vec3& c = cloud.points[current];
    std::size_t next = 0;
    double best = -1.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double d = (cloud.points[i] - c).squared_norm();
      if (d < dist[i]) dist[i] = d;
      if (dist[i] > best ||
          (dist[i] == best && lex_less(cloud.points[i], cloud.points[next]))) {
        best = dist[i];
        next = i;
      }
    }
    current = next;
  }
  if (m <= n) return order;
  std::vector<std::size_t> out;
  out.reserve(m);
  for (std::size_t i = 0; i < m; ++i) out.push_back(order[i % order.size()]);
  return out;
}

namespace {

Var linear(Graph& g, const NetParams& p, const std::string& name, Var x) {
  Var w = g.param(p.at(name + ".w"));
  Var b = g.param(p.at(name + ".b"));
  return add_rowvec(g, matmul(g, x, w), b);
}

/// One cross-attention decoder: input projection, depth x (pre-norm
/// multi-head cross-attention with residual), then a two-layer head.
Var decoder(Graph& g, const NetParams& p, const std::string& prefix, Var x,
            Var cond) {
  const NetConfig& cfg = p.cfg;
  const std::size_t d = static_cast<std::size_t>(cfg.d_model);
  const std::size_t dh = d / static_cast<std::size_t>(cfg.n_heads);
  const double att_scale = 1.0 / std::sqrt(static_cast<double>(dh));

  Var h = linear(g, p, prefix + ".in", x);
  Var c_ln = layernorm_rows(g, cond);
  for (int k = 0; k < cfg.decoder_depth; ++k) {
    const std::string blk = prefix + ".blk" + std::to_string(k);
    Var q = linear(g, p, blk + ".q", layernorm_rows(g, h));
    Var key = linear(g, p, blk + ".k", c_ln);
    Var val = linear(g, p, blk + ".v", c_ln);
    Var merged;
    for (int hd = 0; hd < cfg.n_heads; ++hd) {
      const std::size_t j0 = hd * dh, j1 = (hd + 1) * dh;
      Var att = softmax_rows(
          g, matmul_nt(g, slice_cols(g, q, j0, j1), slice_cols(g, key, j0, j1),
                       att_scale));
      Var head_out = matmul(g, att, slice_cols(g, val, j0, j1));
      merged = hd == 0 ? head_out : concat_cols(g, merged, head_out);
    }
    h = add(g, h, linear(g, p, blk + ".o", merged));
  }
  // The head sees the raw residual stream: a layernorm here would erase
  // per-point feature magnitude, which the noise head needs at high t.
  Var t1 = gelu(g, linear(g, p, prefix + ".head.l1", h));
  Var out = linear(g, p, prefix + ".head.l2", t1);
  return add(g, out, matmul(g, h, g.param(p.at(prefix + ".head.skip.w"))));
}

}  // namespace

Var encode_condition(Graph& g, const NetParams& params, const PointCloud& p) {
  if (p.empty())
    throw ContractError("encode_condition requires a non-empty cloud");
  g.set_scope("cond_encoder");
  const auto sel = fps_select(p, static_cast<std::size_t>(params.cfg.n_cond_tokens));
  PointCloud sub;
  sub.points.reserve(sel.size());
  for (std::size_t i : sel) sub.points.push_back(p.points[i]);
  Var x = g.constant(coord_features(sub));
  Var h = linear(g, params, "cond.l2", gelu(g, linear(g, params, "cond.l1", x)));
  Var pooled = colwise_max(g, h);
  Var tokens = add_rowvec(g, h, pooled);
  g.set_scope("");
  return tokens;
}

Var encode_queries(Graph& g, const NetParams& params, const PointCloud& xt,
                   TimeStep t, const SelfCond& sc, const ForwardOptions& opts) {
  if (sc.values.size() != xt.size())
    throw ShapeError("self-condition length must match query count");
  const std::size_t d = static_cast<std::size_t>(params.cfg.d_model);
  g.set_scope("query_embed");

  Var x = g.constant(coord_features(xt));
  Var e = add(g,
              linear(g, params, "query.l2",
                     gelu(g, linear(g, params, "query.l1", x))),
              matmul(g, x, g.param(params.at("query.lin.w"))));

  Tensor sct(xt.size(), 1);
  for (std::size_t i = 0; i < sc.values.size(); ++i) sct.data[i] = sc.values[i];
  Var proj = linear(g, params, "query.selfcond",
                    concat_cols(g, e, g.constant(std::move(sct))));

  Var sc_scale, sc_shift;
  if (opts.zero_time_affine) {
    sc_scale = g.constant(Tensor(1, d));
    sc_shift = g.constant(Tensor(1, d));
  } else {
    Var temb = g.constant(time_embedding(t, params.cfg.time_embed_dim));
    Var aff = linear(g, params, "query.time", temb);
    sc_scale = slice_cols(g, aff, 0, d);
    sc_shift = slice_cols(g, aff, d, 2 * d);
  }
  Var modulated =
      add_rowvec(g, mul_rowvec(g, proj, sc_scale), sc_shift);
  Var out = linear(g, params, "query.out", modulated);
  g.set_scope("");
  return out;
}

NetOutput forward_with_condition(Graph& g, const NetParams& params,
                                 const PointCloud& xt, TimeStep t,
                                 Var cond_tokens, const SelfCond& sc,
                                 const ForwardOptions& opts) {
  Var queries = encode_queries(g, params, xt, t, sc, opts);

  g.set_scope("udf_decoder");
  Var nu_hat = softplus(g, decoder(g, params, "udf", queries, cond_tokens));

  g.set_scope("noise_decoder");
  Var nu_edge = opts.detach_udf_edge ? detach(g, nu_hat) : nu_hat;
  Var eps_hat =
      decoder(g, params, "noise", concat_cols(g, queries, nu_edge), cond_tokens);
  g.set_scope("");
  return {eps_hat, nu_hat};
}

NetOutput forward(Graph& g, const NetParams& params, const PointCloud& xt,
                  TimeStep t, const PointCloud& p, const SelfCond& sc,
                  const ForwardOptions& opts) {
  Var cond = encode_condition(g, params, p);
  return forward_with_condition(g, params, xt, t, cond, sc, opts);
}

namespace {

EvalOutput read_output(const Graph& g, const NetOutput& out, std::size_t n) {
  const Tensor& te = g.value(out.eps_hat);
  const Tensor& tn = g.value(out.nu_hat);
  EvalOutput res;
  res.eps_hat.reserve(n);
  res.nu_hat.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    res.eps_hat.push_back({te.at(i, 0), te.at(i, 1), te.at(i, 2)});
    res.nu_hat.push_back(tn.data[i]);
  }
  return res;
}

}  // namespace

EvalOutput forward_eval(const NetParams& params, const PointCloud& xt,
                        TimeStep t, const PointCloud& p, const SelfCond& sc) {
  Graph g(false);
  NetOutput out = forward(g, params, xt, t, p, sc);
  return read_output(g, out, xt.size());
}

EvalOutput forward_eval_with_condition(const NetParams& params,
                                       const PointCloud& xt, TimeStep t,
                                       const Tensor& cond_tokens,
                                       const SelfCond& sc) {
  Graph g(false);
  Var cond = g.constant(cond_tokens);
  NetOutput out = forward_with_condition(g, params, xt, t, cond, sc);
  return read_output(g, out, xt.size());
}

Tensor condition_tokens(const NetParams& params, const PointCloud& p) {
  Graph g(false);
  Var cond = encode_condition(g, params, p);
  return g.value(cond);
}

}  // namespace ipd
