#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "ipd/diffusion.hpp"
#include "ipd/geometry.hpp"
#include "ipd/net.hpp"

namespace ipd {

struct TrainConfig {
  double lambda_weight = 1.0;
  double lr = 1e-4;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  int steps = 2000;
  int batch = 1;
  double selfcond_prob = 0.5;
  double clamp = 0.5;
  std::uint64_t seed = 0;
  double grad_clip = 10.0;  // global norm; <= 0 disables
  int snapshot_every = 500;
  int log_every = 10;

  void validate() const;
};

/// One training tuple: clean cloud, condition, timestep, injected noise,
/// UDF targets (all in the condition cloud's normalized frame).
struct TrainBatch {
  const PointCloud* x0 = nullptr;
  const PointCloud* p = nullptr;
  TimeStep t;
  std::vector<Vec3> eps;
  std::vector<double> nu;
};

/// A training/eval instance: ground truth and partial view normalized by
/// the partial view's statistics, plus the prebuilt ground-truth index.
struct Instance {
  std::string id;
  PointCloud gt_world;
  PointCloud partial_world;
  PointCloud gt;       // normalized
  PointCloud partial;  // normalized
  NormTransform tf;    // partial-view statistics
  NnIndex index;       // over normalized gt
};

Instance make_instance(std::string id, PointCloud gt_world,
                       PointCloud partial_world);

struct Dataset {
  std::vector<Instance> instances;
};

struct LossTerms {
  double total = 0.0;
  double udf = 0.0;
  double noise = 0.0;
};

/// Unified objective: mean |nu_hat - nu| + lambda * rms(eps_hat - eps).
double loss_uni(const std::vector<double>& nu_hat,
                const std::vector<double>& nu,
                const std::vector<Vec3>& eps_hat, const std::vector<Vec3>& eps,
                double lambda_weight);

/// Graph version used by the optimizer; also reports both terms.
struct GraphLoss {
  Var total, udf, noise;
};
GraphLoss loss_uni_graph(Graph& g, const NetOutput& out,
                         const std::vector<double>& nu,
                         const std::vector<Vec3>& eps, double lambda_weight);

/// Draws a random instance, t uniform in [1, T], standard-normal noise;
/// forms X_t by q_sample and the clamped UDF targets against the GT index.
TrainBatch make_batch(const Dataset& data, const DiffusionSchedule& sched,
                      const TrainConfig& cfg, Rng& rng);

struct AdamState {
  std::map<std::string, std::pair<std::vector<double>, std::vector<double>>> moments;
  long step = 0;
};

/// Standard bias-corrected Adam over the gradients currently stored in the
/// named tensors. eps_stab = 1e-8. Throws NumericError on non-finite grads.
void adam_update(std::map<std::string, Tensor>& tensors, AdamState& state,
                 double lr, double beta1, double beta2,
                 double eps_stab = 1e-8);

/// One optimization step over a minibatch, with the self-conditioning
/// two-pass protocol at probability cfg.selfcond_prob. On a non-finite
/// loss the parameters are left unchanged and NumericError is thrown.
LossTerms train_step(NetParams& params, const std::vector<TrainBatch>& batch,
                     const TrainConfig& cfg, const DiffusionSchedule& sched,
                     AdamState& opt, Rng& rng);

struct TrainLogRow {
  int step;
  double loss, udf_term, noise_term;
  double wall_ms;
};

using TrainLogFn = std::function<void(const TrainLogRow&)>;
using SnapshotFn = std::function<void(int step, const NetParams&)>;

/// Serial training loop; fully reproducible for a fixed cfg.seed.
NetParams run_training(const Dataset& data, const NetConfig& net_cfg,
                       const TrainConfig& cfg, const DiffusionSchedule& sched,
                       const TrainLogFn& log = nullptr,
                       const SnapshotFn& snapshot = nullptr);

}  // namespace ipd
