#include "ipd/train.hpp"

#include <chrono>
#include <cmath>

namespace ipd {

void TrainConfig::validate() const {
  if (!(lambda_weight >= 0.0))
    throw ConfigError("lambda_weight must be non-negative");
  if (!(lr > 0.0)) throw ConfigError("lr must be positive");
  if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0) ||
      !(adam_beta2 >= 0.0 && adam_beta2 < 1.0))
    throw ConfigError("adam betas must lie in [0, 1)");
  if (steps < 0) throw ConfigError("steps must be non-negative");
  if (batch < 1) throw ConfigError("batch must be at least 1");
  if (!(selfcond_prob >= 0.0 && selfcond_prob <= 1.0))
    throw ConfigError("selfcond_prob must be a probability");
  if (!(clamp > 0.0)) throw ConfigError("clamp must be positive");
}

Instance make_instance(std::string id, PointCloud gt_world,
                       PointCloud partial_world) {
  auto [partial_norm, tf] = normalize(partial_world);
  PointCloud gt_norm = tf.to_normalized(gt_world);
  NnIndex index(gt_norm);
  return Instance{std::move(id),          std::move(gt_world),
                  std::move(partial_world), std::move(gt_norm),
                  std::move(partial_norm), tf,
                  std::move(index)};
}

double loss_uni(const std::vector<double>& nu_hat,
                const std::vector<double>& nu,
                const std::vector<Vec3>& eps_hat, const std::vector<Vec3>& eps,
                double lambda_weight) {
  if (nu_hat.size() != nu.size() || eps_hat.size() != eps.size() ||
      nu_hat.empty())
    throw ShapeError("loss_uni: prediction/target shapes differ");
  double l1 = 0.0;
  for (std::size_t i = 0; i < nu.size(); ++i)
    l1 += std::abs(nu_hat[i] - nu[i]);
  l1 /= static_cast<double>(nu.size());
  double sq = 0.0;
  for (std::size_t i = 0; i < eps.size(); ++i)
    sq += (eps_hat[i] - eps[i]).squared_norm();
  const double rms = std::sqrt(sq / (3.0 * static_cast<double>(eps.size())));
  return l1 + lambda_weight * rms;
}

GraphLoss loss_uni_graph(Graph& g, const NetOutput& out,
                         const std::vector<double>& nu,
                         const std::vector<Vec3>& eps, double lambda_weight) {
  const Tensor& tn = g.value(out.nu_hat);
  const Tensor& te = g.value(out.eps_hat);
  if (tn.rows != nu.size() || te.rows != eps.size())
    throw ShapeError("loss_uni: prediction/target shapes differ");

  Tensor nu_t(nu.size(), 1);
  for (std::size_t i = 0; i < nu.size(); ++i) nu_t.data[i] = nu[i];
  Tensor eps_t(eps.size(), 3);
  for (std::size_t i = 0; i < eps.size(); ++i) {
    eps_t.at(i, 0) = eps[i].x;
    eps_t.at(i, 1) = eps[i].y;
    eps_t.at(i, 2) = eps[i].z;
  }
  g.set_scope("loss");
  Var udf = mean_abs(g, sub(g, out.nu_hat, g.constant(std::move(nu_t))));
  Var noise = sqrt_scalar(
      g, mean_sq(g, sub(g, out.eps_hat, g.constant(std::move(eps_t)))));
  Var total = add(g, udf, scale(g, noise, lambda_weight));
  g.set_scope("");
  return {total, udf, noise};
}

TrainBatch make_batch(const Dataset& data, const DiffusionSchedule& sched,
                      const TrainConfig& cfg, Rng& rng) {
  if (data.instances.empty())
    throw ContractError("make_batch requires a non-empty dataset");
  const Instance& inst =
      data.instances[rng.index(data.instances.size())];
  TrainBatch b;
  b.x0 = &inst.gt;
  b.p = &inst.partial;
  b.t = TimeStep{static_cast<int>(rng.index(sched.steps())) + 1};
  b.eps.reserve(inst.gt.size());
  for (std::size_t i = 0; i < inst.gt.size(); ++i)
    b.eps.push_back({rng.normal(), rng.normal(), rng.normal()});
  const PointCloud xt = q_sample(inst.gt, b.t, b.eps, sched);
  b.nu = udf_targets(xt, inst.index, cfg.clamp);
  return b;
}

void adam_update(std::map<std::string, Tensor>& tensors, AdamState& state,
                 double lr, double beta1, double beta2, double eps_stab) {
  ++state.step;
  const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(state.step));
  for (auto& [name, t] : tensors) {
    if (t.grad.empty()) continue;  // untouched tensors: zero gradient
    for (double gv : t.grad)
      if (!std::isfinite(gv))
        throw NumericError("non-finite gradient in " + name);
    auto& [m, v] = state.moments[name];
    if (m.size() != t.size()) {
      m.assign(t.size(), 0.0);
      v.assign(t.size(), 0.0);
    }
    for (std::size_t i = 0; i < t.size(); ++i) {
      const double gv = t.grad[i];
      m[i] = beta1 * m[i] + (1.0 - beta1) * gv;
      v[i] = beta2 * v[i] + (1.0 - beta2) * gv * gv;
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      t.data[i] -= lr * mhat / (std::sqrt(vhat) + eps_stab);
    }
  }
}

namespace {

void clip_gradients(NetParams& params, double max_norm) {
  if (max_norm <= 0.0) return;
  double sq = 0.0;
  for (auto& [name, t] : params.tensors)
    for (double gv : t.grad) sq += gv * gv;
  const double norm = std::sqrt(sq);
  if (norm <= max_norm || norm == 0.0) return;
  const double s = max_norm / norm;
  for (auto& [name, t] : params.tensors)
    for (double& gv : t.grad) gv *= s;
}

}  // namespace

LossTerms train_step(NetParams& params, const std::vector<TrainBatch>& batch,
                     const TrainConfig& cfg, const DiffusionSchedule& sched,
                     AdamState& opt, Rng& rng) {
  if (batch.empty()) throw ContractError("train_step requires a batch");
  // One protocol draw per step, consumed regardless of the probability so
  // that variants stay stream-aligned.
  const bool self_cond_pass = rng.uniform() < cfg.selfcond_prob;

  Graph g(true);
  Var total;
  LossTerms terms;
  for (std::size_t bi = 0; bi < batch.size(); ++bi) {
    const TrainBatch& b = batch[bi];
    const PointCloud xt = q_sample(*b.x0, b.t, b.eps, sched);
    SelfCond sc = SelfCond::placeholder(xt.size());
    ForwardOptions opts;
    if (self_cond_pass) {
      // First pass with the placeholder; its prediction is detached and
      // fed back, and only the second pass is optimized.
      const EvalOutput first = forward_eval(params, xt, b.t, *b.p, sc);
      sc = SelfCond::from_prediction(first.nu_hat, cfg.clamp);
      opts.detach_udf_edge = true;
    }
    NetOutput out = forward(g, params, xt, b.t, *b.p, sc, opts);
    GraphLoss l = loss_uni_graph(g, out, b.nu, b.eps, cfg.lambda_weight);
    terms.udf += g.value(l.udf).data[0];
    terms.noise += g.value(l.noise).data[0];
    total = bi == 0 ? l.total : add(g, total, l.total);
  }
  const double inv_b = 1.0 / static_cast<double>(batch.size());
  if (batch.size() > 1) total = scale(g, total, inv_b);
  terms.udf *= inv_b;
  terms.noise *= inv_b;
  terms.total = g.value(total).data[0];
  if (!std::isfinite(terms.total))
    throw NumericError("non-finite training loss");

  params.zero_grads();
  g.backward(total);
  clip_gradients(params, cfg.grad_clip);
  adam_update(params.tensors, opt, cfg.lr, cfg.adam_beta1, cfg.adam_beta2);
  return terms;
}

NetParams run_training(const Dataset& data, const NetConfig& net_cfg,
                       const TrainConfig& cfg, const DiffusionSchedule& sched,
                       const TrainLogFn& log, const SnapshotFn& snapshot) {
  cfg.validate();
  NetParams params = init_params(net_cfg, Rng::mix(cfg.seed, 0x111));
  AdamState opt;
  Rng rng(Rng::mix(cfg.seed, 0x222));
  using clock = std::chrono::steady_clock;
  const auto start = clock::now();
  for (int step = 1; step <= cfg.steps; ++step) {
    std::vector<TrainBatch> batch;
    batch.reserve(cfg.batch);
    for (int i = 0; i < cfg.batch; ++i)
      batch.push_back(make_batch(data, sched, cfg, rng));
    LossTerms terms;
    try {
      terms = train_step(params, batch, cfg, sched, opt, rng);
    } catch (const NumericError&) {
      // train_step leaves params untouched on failure; hand the last good
      // state to the snapshot sink before propagating.
      if (snapshot) snapshot(step - 1, params);
      throw;
    }
    if (log && (step % cfg.log_every == 0 || step == 1 || step == cfg.steps)) {
      const double ms = std::chrono::duration<double, std::milli>(
                            clock::now() - start)
                            .count();
      log(TrainLogRow{step, terms.total, terms.udf, terms.noise, ms});
    }
    if (snapshot && cfg.snapshot_every > 0 && step % cfg.snapshot_every == 0)
      snapshot(step, params);
  }
  return params;
}

}  // namespace ipd
