#include "ipd/diffusion.hpp"

#include <cmath>

namespace ipd {

DiffusionSchedule::DiffusionSchedule(int steps, std::vector<double> beta)
    : steps_(steps), beta_(std::move(beta)) {
  alpha_.resize(steps_);
  alpha_bar_.resize(steps_);
  posterior_var_.resize(steps_);
  double prod = 1.0;
  double prev_bar = 1.0;  // alpha_bar_0
  for (int i = 0; i < steps_; ++i) {
    alpha_[i] = 1.0 - beta_[i];
    prod *= alpha_[i];
    alpha_bar_[i] = prod;
    posterior_var_[i] = beta_[i] * (1.0 - prev_bar) / (1.0 - alpha_bar_[i]);
    prev_bar = alpha_bar_[i];
  }
}

DiffusionSchedule make_schedule(int steps, double beta_start, double beta_end,
                                ScheduleKind kind) {
  if (kind != ScheduleKind::linear)
    throw ParamError("unsupported schedule kind");
  if (steps < 1) throw ParamError("schedule needs at least one step");
  if (!(beta_start > 0.0) || !(beta_start <= beta_end) || !(beta_end < 1.0))
    throw ParamError("schedule bounds must satisfy 0 < beta_start <= beta_end < 1");
  std::vector<double> beta(steps);
  for (int i = 0; i < steps; ++i) {
    const double f = steps == 1 ? 0.0 : static_cast<double>(i) / (steps - 1);
    beta[i] = beta_start + (beta_end - beta_start) * f;
  }
  return DiffusionSchedule(steps, std::move(beta));
}

PointCloud q_sample(const PointCloud& x0, TimeStep t,
                    const std::vector<Vec3>& eps,
                    const DiffusionSchedule& sched) {
  if (eps.size() != x0.size())
    throw ShapeError("q_sample: eps shape does not match x0");
  const double ab = sched.alpha_bar(t);
  const double cs = std::sqrt(ab);
  const double cn = std::sqrt(1.0 - ab);
  PointCloud out;
  out.points.reserve(x0.size());
  for (std::size_t i = 0; i < x0.size(); ++i)
    out.points.push_back(x0.points[i] * cs + eps[i] * cn);
  return out;
}

PointCloud posterior_step(const PointCloud& xt, const std::vector<Vec3>& eps_hat,
                          TimeStep t, const DiffusionSchedule& sched,
                          const std::vector<Vec3>& z) {
  if (eps_hat.size() != xt.size())
    throw ShapeError("posterior_step: eps_hat shape does not match x_t");
  if (z.size() != xt.size())
    throw ShapeError("posterior_step: z shape does not match x_t");
  if (t.value == 1) {
    for (const Vec3& v : z)
      if (v.x != 0.0 || v.y != 0.0 || v.z != 0.0)
        throw ContractError("posterior_step: z must be zero at t = 1");
  }
  const double beta = sched.beta(t);
  const double inv_sqrt_alpha = 1.0 / std::sqrt(sched.alpha(t));
  const double noise_coef = beta / std::sqrt(1.0 - sched.alpha_bar(t));
  const double sigma = std::sqrt(sched.posterior_var(t));
  PointCloud out;
  out.points.reserve(xt.size());
  for (std::size_t i = 0; i < xt.size(); ++i) {
    const Vec3 mu = (xt.points[i] - eps_hat[i] * noise_coef) * inv_sqrt_alpha;
    out.points.push_back(mu + z[i] * sigma);
  }
  return out;
}

double snr(TimeStep t, const DiffusionSchedule& sched) {
  const double ab = sched.alpha_bar(t);
  return ab / (1.0 - ab);
}

}  // namespace ipd
