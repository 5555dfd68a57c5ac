#include "ipd/sampler.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>

#include "ipd/store.hpp"

namespace ipd {

void SamplerConfig::validate(int total_steps, double clamp) const {
  if (n_points < 1) throw ParamError("n_points must be at least 1");
  if (!(extract_tau > 0.0) || extract_tau > clamp)
    throw ParamError("extract_tau must lie in (0, clamp]");
  if (capture_every < 0) throw ParamError("capture_every must be >= 0");
  std::vector<std::pair<int, int>> sorted = selfcond_mask;
  std::sort(sorted.begin(), sorted.end());
  for (std::size_t i = 0; i < sorted.size(); ++i) {
    const auto [a, b] = sorted[i];
    if (a > b) throw ConfigError("mask interval has reversed bounds");
    if (a < 1 || b > total_steps)
      throw ConfigError("mask interval outside [1, T]");
    if (i > 0 && sorted[i - 1].second >= a)
      throw ConfigError("mask intervals must be disjoint");
  }
}

bool SamplerConfig::masked(int t) const {
  for (const auto& [a, b] : selfcond_mask)
    if (t >= a && t <= b) return true;
  return false;
}

SampleResult sample(const NetParams& params, const PointCloud& partial_world,
                    const DiffusionSchedule& sched, const SamplerConfig& cfg,
                    double clamp) {
  if (partial_world.empty())
    throw ContractError("sample requires a non-empty condition cloud");
  cfg.validate(sched.steps(), clamp);
  for (const auto& [name, t] : params.tensors)
    for (double v : t.data)
      if (!std::isfinite(v))
        throw NumericError("non-finite parameter tensor " + name);

  auto [partial, tf] = normalize(partial_world);
  const Tensor cond = condition_tokens(params, partial);

  Rng rng(Rng::mix(cfg.seed, 0x731));
  PointCloud x;
  x.points.reserve(cfg.n_points);
  for (std::size_t i = 0; i < cfg.n_points; ++i)
    x.points.push_back({rng.normal(), rng.normal(), rng.normal()});

  SampleResult res;
  res.tf = tf;
  std::vector<double> prev_nu;
  const int total = sched.steps();
  for (int t = total; t >= 1; --t) {
    SelfCond sc = (t == total || cfg.masked(t) || prev_nu.empty())
                      ? SelfCond::placeholder(x.size())
                      : SelfCond::from_prediction(prev_nu, clamp);
    EvalOutput out;
    try {
      out = forward_eval_with_condition(params, x, TimeStep{t}, cond, sc);
    } catch (const NumericError& e) {
      throw NumericError(std::string(e.what()) + " (at sampling step t=" +
                         std::to_string(t) + ")");
    }

    const bool stride_hit =
        cfg.capture_every > 0 && (total - t) % cfg.capture_every == 0;
    if ((stride_hit || t == 1) && cfg.capture_every > 0) {
      Trajectory::Snapshot snap;
      snap.t = t;
      snap.cloud = tf.to_world(x);
      snap.nu = out.nu_hat;
      if (res.trajectory.snapshots.empty() ||
          res.trajectory.snapshots.back().t != t)
        res.trajectory.snapshots.push_back(std::move(snap));
    }

    std::vector<Vec3> z(x.size(), Vec3{0, 0, 0});
    if (t > 1)
      for (Vec3& v : z) v = {rng.normal(), rng.normal(), rng.normal()};
    x = posterior_step(x, out.eps_hat, TimeStep{t}, sched, z);
    for (const Vec3& p : x.points)
      if (!std::isfinite(p.x) || !std::isfinite(p.y) || !std::isfinite(p.z))
        throw NumericError("non-finite sample state after step t=" +
                           std::to_string(t));
    prev_nu = std::move(out.nu_hat);
  }

  res.cloud = tf.to_world(x);
  res.nu = std::move(prev_nu);
  return res;
}

PointCloud extract_points(const PointCloud& x0, const std::vector<double>& nu,
                          double tau) {
  if (nu.size() != x0.size())
    throw ShapeError("extract_points: nu length must match cloud size");
  if (!(tau > 0.0)) throw ParamError("extract_points: tau must be positive");
  PointCloud out;
  for (std::size_t i = 0; i < x0.size(); ++i) {
    if (nu[i] < tau) {
      out.points.push_back(x0.points[i]);
      if (x0.has_normals()) out.normals.push_back(x0.normals[i]);
    }
  }
  if (out.empty())
    throw EmptyExtractionError("no point has predicted UDF below tau");
  return out;
}

std::vector<std::string> export_trajectory(const Trajectory& traj,
                                           const std::string& dir) {
  if (traj.snapshots.empty())
    throw ContractError("export_trajectory requires a non-empty trajectory");
  std::filesystem::create_directories(dir);
  std::vector<std::string> written;
  std::vector<std::vector<std::string>> shading;
  for (const auto& snap : traj.snapshots) {
    const std::string path =
        dir + "/traj_t" + std::to_string(snap.t) + ".ipc";
    write_cloud(path, snap.cloud);
    written.push_back(path);
    for (std::size_t i = 0; i < snap.nu.size(); ++i)
      shading.push_back({std::to_string(snap.t), std::to_string(i),
                         std::to_string(snap.nu[i])});
  }
  const std::string csv = dir + "/traj_nu.csv";
  write_csv(csv, {"t", "point_index", "nu_hat"}, shading);
  written.push_back(csv);
  return written;
}

}  // namespace ipd
