#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "ipd/net.hpp"
#include "ipd/train.hpp"

using namespace ipd;

namespace {

NetConfig tiny_config() {
  NetConfig cfg;
  cfg.d_model = 8;
  cfg.n_heads = 2;
  cfg.n_cond_tokens = 6;
  cfg.time_embed_dim = 8;
  cfg.decoder_depth = 1;
  return cfg;
}

PointCloud random_cloud(std::size_t n, Rng& rng) {
  PointCloud c;
  for (std::size_t i = 0; i < n; ++i)
    c.points.push_back({rng.normal(), rng.normal(), rng.normal()});
  return c;
}

SelfCond mixed_selfcond(std::size_t n, Rng& rng) {
  SelfCond sc = SelfCond::placeholder(n);
  for (std::size_t i = 0; i < n; i += 2) sc.values[i] = rng.uniform(0.0, 0.5);
  return sc;
}

}  // namespace

TEST_CASE("init_params is deterministic and validates the config") {
  const NetConfig cfg = tiny_config();
  const NetParams a = init_params(cfg, 7);
  const NetParams b = init_params(cfg, 7);
  REQUIRE(a.tensors.size() == b.tensors.size());
  for (const auto& [name, t] : a.tensors) {
    const Tensor& u = b.at(name);
    for (std::size_t i = 0; i < t.size(); ++i) CHECK(t.data[i] == u.data[i]);
  }
  const NetParams c = init_params(cfg, 8);
  CHECK(c.at("query.l1.w").data[0] != a.at("query.l1.w").data[0]);

  for (const auto& [name, t] : a.tensors) {
    if (name.ends_with(".b"))
      for (double v : t.data) CHECK(v == 0.0);
  }

  NetConfig bad = cfg;
  bad.d_model = 65;
  bad.n_heads = 4;
  CHECK_THROWS_AS(init_params(bad, 0), ParamError);
}

TEST_CASE("head dimension bookkeeping") {
  NetConfig cfg;
  cfg.d_model = 64;
  cfg.n_heads = 4;
  cfg.validate();
  CHECK(cfg.d_model / cfg.n_heads == 16);
}

TEST_CASE("fps selection is permutation invariant with a fixed start rule") {
  Rng rng(5);
  PointCloud p = random_cloud(40, rng);
  const auto sel = fps_select(p, 12);

  PointCloud shuffled = p;
  std::reverse(shuffled.points.begin(), shuffled.points.end());
  const auto sel2 = fps_select(shuffled, 12);

  REQUIRE(sel.size() == sel2.size());
  for (std::size_t k = 0; k < sel.size(); ++k) {
    const Vec3& a = p.points[sel[k]];
    const Vec3& b = shuffled.points[sel2[k]];
    CHECK(a.x == b.x);
    CHECK(a.y == b.y);
    CHECK(a.z == b.z);
  }
}

TEST_CASE("condition encoding handles small clouds by cycling") {
  const NetParams params = init_params(tiny_config(), 3);
  PointCloud one;
  one.points.push_back({0.3, -0.2, 0.9});
  Graph g(false);
  const Tensor tokens = g.value(encode_condition(g, params, one));
  REQUIRE(tokens.rows == 6);
  for (std::size_t i = 1; i < tokens.rows; ++i)
    for (std::size_t j = 0; j < tokens.cols; ++j)
      CHECK(tokens.at(i, j) == tokens.at(0, j));
}

TEST_CASE("query encoding responds to t and the self-condition") {
  const NetParams params = init_params(tiny_config(), 9);
  Rng rng(17);
  const PointCloud xt = random_cloud(5, rng);

  auto encode = [&](TimeStep t, const SelfCond& sc, ForwardOptions opts = {}) {
    Graph g(false);
    return g.value(encode_queries(g, params, xt, t, sc, opts));
  };

  const SelfCond ph = SelfCond::placeholder(xt.size());
  const Tensor e1 = encode(TimeStep{3}, ph);
  const Tensor e2 = encode(TimeStep{700}, ph);
  bool differs = false;
  for (std::size_t i = 0; i < e1.size(); ++i)
    if (e1.data[i] != e2.data[i]) differs = true;
  CHECK(differs);

  SelfCond pred = ph;
  pred.values.assign(xt.size(), 0.25);
  const Tensor e3 = encode(TimeStep{3}, pred);
  differs = false;
  for (std::size_t i = 0; i < e1.size(); ++i)
    if (e1.data[i] != e3.data[i]) differs = true;
  CHECK(differs);

  // Forcing zero affine factors removes the t dependence entirely.
  ForwardOptions opts;
  opts.zero_time_affine = true;
  const Tensor z1 = encode(TimeStep{3}, ph, opts);
  const Tensor z2 = encode(TimeStep{700}, ph, opts);
  for (std::size_t i = 0; i < z1.size(); ++i) CHECK(z1.data[i] == z2.data[i]);

  SelfCond bad = SelfCond::placeholder(xt.size() + 1);
  Graph g(false);
  CHECK_THROWS_AS(encode_queries(g, params, xt, TimeStep{3}, bad), ShapeError);
}

TEST_CASE("forward output ranges, determinism and eval-path parity") {
  const NetParams params = init_params(tiny_config(), 13);
  Rng rng(23);
  const PointCloud xt = random_cloud(9, rng);
  const PointCloud p = random_cloud(14, rng);
  const SelfCond sc = mixed_selfcond(xt.size(), rng);

  Graph g1;
  const NetOutput o1 = forward(g1, params, xt, TimeStep{42}, p, sc);
  Graph g2;
  const NetOutput o2 = forward(g2, params, xt, TimeStep{42}, p, sc);

  const Tensor& nu = g1.value(o1.nu_hat);
  REQUIRE(nu.rows == xt.size());
  for (double v : nu.data) CHECK(v >= 0.0);

  for (std::size_t i = 0; i < nu.size(); ++i)
    CHECK(nu.data[i] == g2.value(o2.nu_hat).data[i]);
  for (std::size_t i = 0; i < g1.value(o1.eps_hat).size(); ++i)
    CHECK(g1.value(o1.eps_hat).data[i] == g2.value(o2.eps_hat).data[i]);

  // The no-grad path must agree bitwise with the graph path.
  const EvalOutput ev = forward_eval(params, xt, TimeStep{42}, p, sc);
  for (std::size_t i = 0; i < xt.size(); ++i) {
    CHECK(ev.nu_hat[i] == nu.data[i]);
    CHECK(ev.eps_hat[i].x == g1.value(o1.eps_hat).at(i, 0));
    CHECK(ev.eps_hat[i].y == g1.value(o1.eps_hat).at(i, 1));
    CHECK(ev.eps_hat[i].z == g1.value(o1.eps_hat).at(i, 2));
  }

  const Tensor tokens = condition_tokens(params, p);
  const EvalOutput ev2 =
      forward_eval_with_condition(params, xt, TimeStep{42}, tokens, sc);
  for (std::size_t i = 0; i < xt.size(); ++i)
    CHECK(ev2.nu_hat[i] == ev.nu_hat[i]);
}

TEST_CASE("forward is per-point permutation equivariant") {
  const NetParams params = init_params(tiny_config(), 29);
  Rng rng(31);
  const PointCloud xt = random_cloud(7, rng);
  const PointCloud p = random_cloud(10, rng);
  const SelfCond sc = mixed_selfcond(xt.size(), rng);

  const EvalOutput base = forward_eval(params, xt, TimeStep{9}, p, sc);

  std::vector<std::size_t> perm(xt.size());
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  std::reverse(perm.begin(), perm.end());
  std::swap(perm[1], perm[4]);

  PointCloud xt_p;
  SelfCond sc_p;
  for (std::size_t i : perm) {
    xt_p.points.push_back(xt.points[i]);
    sc_p.values.push_back(sc.values[i]);
  }
  const EvalOutput permuted = forward_eval(params, xt_p, TimeStep{9}, p, sc_p);
  for (std::size_t k = 0; k < perm.size(); ++k) {
    CHECK(permuted.nu_hat[k] == base.nu_hat[perm[k]]);
    CHECK(permuted.eps_hat[k].x == base.eps_hat[perm[k]].x);
    CHECK(permuted.eps_hat[k].y == base.eps_hat[perm[k]].y);
    CHECK(permuted.eps_hat[k].z == base.eps_hat[perm[k]].z);
  }
}

TEST_CASE("analytic gradients match central finite differences") {
  const NetConfig cfg = tiny_config();
  const NetParams params = init_params(cfg, 37);
  Rng rng(41);
  const PointCloud xt = random_cloud(5, rng);
  const PointCloud p = random_cloud(8, rng);
  const SelfCond sc = mixed_selfcond(xt.size(), rng);
  std::vector<double> nu_target(xt.size());
  for (double& v : nu_target) v = rng.uniform(0.0, 0.5);
  std::vector<Vec3> eps_target;
  for (std::size_t i = 0; i < xt.size(); ++i)
    eps_target.push_back({rng.normal(), rng.normal(), rng.normal()});

  auto loss_value = [&]() {
    Graph g(false);
    const NetOutput out = forward(g, params, xt, TimeStep{11}, p, sc);
    return g.value(loss_uni_graph(g, out, nu_target, eps_target, 1.0).total)
        .data[0];
  };

  params.zero_grads();
  {
    Graph g;
    const NetOutput out = forward(g, params, xt, TimeStep{11}, p, sc);
    g.backward(loss_uni_graph(g, out, nu_target, eps_target, 1.0).total);
  }

  const double h = 1e-5;
  int checked = 0;
  double max_err = 0.0;
  for (auto& [name, t] : params.tensors) {
    // A spread of coordinates from every parameter tensor.
    const std::size_t stride = std::max<std::size_t>(1, t.size() / 6);
    for (std::size_t i = 0; i < t.size(); i += stride) {
      double& slot = const_cast<Tensor&>(t).data[i];
      const double keep = slot;
      slot = keep + h;
      const double fp = loss_value();
      slot = keep - h;
      const double fm = loss_value();
      slot = keep;
      const double fd = (fp - fm) / (2.0 * h);
      const double an = t.grad[i];
      const double err =
          std::abs(an - fd) / std::max({std::abs(an), std::abs(fd), 1e-6});
      max_err = std::max(max_err, err);
      ++checked;
    }
  }
  CHECK(checked >= 200);
  CHECK(max_err <= 1e-4);
}

TEST_CASE("detaching the UDF edge stops noise-loss gradients into the UDF head") {
  const NetParams params = init_params(tiny_config(), 53);
  Rng rng(59);
  const PointCloud xt = random_cloud(6, rng);
  const PointCloud p = random_cloud(9, rng);
  const SelfCond sc = SelfCond::placeholder(xt.size());
  std::vector<Vec3> eps_target;
  for (std::size_t i = 0; i < xt.size(); ++i)
    eps_target.push_back({rng.normal(), rng.normal(), rng.normal()});

  auto noise_grad_norm = [&](bool detach_edge) {
    params.zero_grads();
    Graph g;
    ForwardOptions opts;
    opts.detach_udf_edge = detach_edge;
    const NetOutput out = forward(g, params, xt, TimeStep{5}, p, sc, opts);
    Tensor eps_t(eps_target.size(), 3);
    for (std::size_t i = 0; i < eps_target.size(); ++i) {
      eps_t.at(i, 0) = eps_target[i].x;
      eps_t.at(i, 1) = eps_target[i].y;
      eps_t.at(i, 2) = eps_target[i].z;
    }
    // Noise term only: gradients reach the UDF head solely via the edge.
    Var noise = sqrt_scalar(
        g, mean_sq(g, sub(g, out.eps_hat, g.constant(std::move(eps_t)))));
    g.backward(noise);
    double norm = 0.0;
    for (double v : params.at("udf.head.l2.w").grad) norm += v * v;
    return std::sqrt(norm);
  };

  CHECK(noise_grad_norm(false) > 0.0);
  CHECK(noise_grad_norm(true) == 0.0);
}
