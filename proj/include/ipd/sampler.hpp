#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "ipd/diffusion.hpp"
#include "ipd/geometry.hpp"
#include "ipd/net.hpp"

namespace ipd {

struct SamplerConfig {
  std::size_t n_points = 2048;
  double extract_tau = 0.05;
  /// Closed step intervals [a, b] where the self-condition is forced back
  /// to the placeholder. Must be disjoint and inside [1, T].
  std::vector<std::pair<int, int>> selfcond_mask;
  std::uint64_t seed = 0;
  int capture_every = 0;  // 0 disables trajectory capture

  void validate(int total_steps, double clamp) const;
  bool masked(int t) const;
};

struct Trajectory {
  struct Snapshot {
    int t;
    PointCloud cloud;        // world frame, pre-step state
    std::vector<double> nu;  // the UDF prediction at that state
  };
  std::vector<Snapshot> snapshots;
};

struct SampleResult {
  PointCloud cloud;        // final denoised cloud, world frame
  std::vector<double> nu;  // final UDF prediction (normalized units)
  Trajectory trajectory;
  NormTransform tf;  // the condition cloud's normalization
};

/// Iterative denoising from X_T ~ N(0, I) conditioned on the partial view
/// (given in world coordinates). Each step feeds the previous UDF
/// prediction as the self-condition, except at t = T and inside masked
/// intervals where the -1 placeholder is used.
SampleResult sample(const NetParams& params, const PointCloud& partial_world,
                    const DiffusionSchedule& sched, const SamplerConfig& cfg,
                    double clamp);

/// Keeps the points whose predicted UDF is below tau. Throws
/// ContractError when nothing survives.
PointCloud extract_points(const PointCloud& x0, const std::vector<double>& nu,
                          double tau);

/// Writes one cloud file per snapshot plus a shading CSV
/// (t, point_index, nu_hat) into `dir`. Returns the written paths.
std::vector<std::string> export_trajectory(const Trajectory& traj,
                                           const std::string& dir);

}  // namespace ipd
