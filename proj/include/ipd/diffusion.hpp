#pragma once

#include <cstdint>
#include <vector>

#include "ipd/error.hpp"
#include "ipd/geometry.hpp"

namespace ipd {

/// Diffusion time index, 1-based: t in [1, T].
struct TimeStep {
  int value = 1;
};

enum class ScheduleKind { linear };

/// Precomputed variance schedule: beta_t, alpha_t = 1 - beta_t,
/// alpha_bar_t = prod_{s<=t} alpha_s, and the posterior variances
/// beta~_t = beta_t (1 - alpha_bar_{t-1}) / (1 - alpha_bar_t), with
/// alpha_bar_0 := 1.
class DiffusionSchedule {
 public:
  DiffusionSchedule(int steps, std::vector<double> beta);

  int steps() const { return steps_; }
  double beta(TimeStep t) const { return beta_[check(t)]; }
  double alpha(TimeStep t) const { return alpha_[check(t)]; }
  double alpha_bar(TimeStep t) const { return alpha_bar_[check(t)]; }
  double alpha_bar_prev(TimeStep t) const {
    const int i = check(t);
    return i == 0 ? 1.0 : alpha_bar_[i - 1];
  }
  double posterior_var(TimeStep t) const { return posterior_var_[check(t)]; }

 private:
  int check(TimeStep t) const {
    if (t.value < 1 || t.value > steps_)
      throw ParamError("timestep out of range [1, T]");
    return t.value - 1;
  }

  int steps_;
  std::vector<double> beta_, alpha_, alpha_bar_, posterior_var_;
};

/// Builds a schedule of `steps` betas interpolated linearly from
/// `beta_start` to `beta_end`. Requires 0 < beta_start <= beta_end < 1.
DiffusionSchedule make_schedule(int steps, double beta_start, double beta_end,
                                ScheduleKind kind = ScheduleKind::linear);

/// Forward noising: sqrt(alpha_bar_t) x0 + sqrt(1 - alpha_bar_t) eps.
PointCloud q_sample(const PointCloud& x0, TimeStep t,
                    const std::vector<Vec3>& eps,
                    const DiffusionSchedule& sched);

/// One ancestral reverse step:
///   mu = (x_t - beta_t / sqrt(1 - alpha_bar_t) * eps_hat) / sqrt(alpha_t)
///   x_{t-1} = mu + sqrt(beta~_t) z
/// z must be all zeros when t = 1.
PointCloud posterior_step(const PointCloud& xt, const std::vector<Vec3>& eps_hat,
                          TimeStep t, const DiffusionSchedule& sched,
                          const std::vector<Vec3>& z);

/// Signal-to-noise ratio alpha_bar_t / (1 - alpha_bar_t).
double snr(TimeStep t, const DiffusionSchedule& sched);

}  // namespace ipd
