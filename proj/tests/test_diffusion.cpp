#include <doctest.h>

#include <cmath>

#include "ipd/diffusion.hpp"
#include "ipd/geometry.hpp"
#include "ipd/metrics.hpp"
#include "ipd/rng.hpp"

using namespace ipd;

TEST_CASE("default schedule matches a direct product evaluation") {
  const DiffusionSchedule s = make_schedule(1000, 1e-4, 0.02);

  // Independent route: recompute alpha_bar by explicit multiplication.
  double prod = 1.0;
  for (int t = 1; t <= 1000; ++t) {
    const double f = static_cast<double>(t - 1) / 999.0;
    const double beta = 1e-4 + (0.02 - 1e-4) * f;
    prod *= 1.0 - beta;
    CHECK(s.beta(TimeStep{t}) == beta);
    CHECK(s.alpha_bar(TimeStep{t}) == prod);
  }
  CHECK(s.alpha_bar(TimeStep{1000}) == doctest::Approx(4.04e-5).epsilon(0.01));
  CHECK(s.alpha_bar(TimeStep{1000}) < 1e-3);

  // Monotonicity and posterior-variance invariants.
  for (int t = 2; t <= 1000; ++t) {
    CHECK(s.beta(TimeStep{t}) >= s.beta(TimeStep{t - 1}));
    CHECK(s.alpha_bar(TimeStep{t}) < s.alpha_bar(TimeStep{t - 1}));
    CHECK(s.posterior_var(TimeStep{t}) >= 0.0);
  }
  CHECK(s.posterior_var(TimeStep{1}) == 0.0);
}

TEST_CASE("single-step schedule") {
  const DiffusionSchedule s = make_schedule(1, 0.5, 0.5);
  CHECK(s.alpha_bar(TimeStep{1}) == doctest::Approx(0.5));
  CHECK(s.posterior_var(TimeStep{1}) == 0.0);
  CHECK(snr(TimeStep{1}, s) == doctest::Approx(1.0));
}

TEST_CASE("schedule parameter validation") {
  CHECK_THROWS_AS(make_schedule(1000, 0.02, 1e-4), ParamError);
  CHECK_THROWS_AS(make_schedule(0, 1e-4, 0.02), ParamError);
  CHECK_THROWS_AS(make_schedule(10, 0.0, 0.02), ParamError);
  CHECK_THROWS_AS(make_schedule(10, 0.5, 1.0), ParamError);
  const DiffusionSchedule s = make_schedule(10, 1e-4, 0.02);
  CHECK_THROWS_AS(s.beta(TimeStep{0}), ParamError);
  CHECK_THROWS_AS(s.beta(TimeStep{11}), ParamError);
}

TEST_CASE("q_sample arithmetic") {
  SUBCASE("zero noise scales by sqrt(alpha_bar)") {
    const DiffusionSchedule s = make_schedule(1, 0.75, 0.75);  // alpha_bar 0.25
    PointCloud x0;
    x0.points = {{2, -4, 6}};
    const PointCloud xt = q_sample(x0, TimeStep{1}, {{0, 0, 0}}, s);
    CHECK(xt.points[0].x == doctest::Approx(1.0));
    CHECK(xt.points[0].y == doctest::Approx(-2.0));
    CHECK(xt.points[0].z == doctest::Approx(3.0));
  }
  SUBCASE("unit example at alpha_bar 0.25") {
    const DiffusionSchedule s = make_schedule(1, 0.75, 0.75);
    PointCloud x0;
    x0.points = {{1, 0, 0}};
    const PointCloud xt = q_sample(x0, TimeStep{1}, {{1, 1, 1}}, s);
    const double root34 = std::sqrt(0.75);
    CHECK(xt.points[0].x == doctest::Approx(0.5 + root34));
    CHECK(xt.points[0].y == doctest::Approx(root34));
    CHECK(xt.points[0].z == doctest::Approx(root34));
  }
  SUBCASE("shape mismatch") {
    const DiffusionSchedule s = make_schedule(1, 0.5, 0.5);
    PointCloud x0;
    x0.points = {{1, 0, 0}};
    CHECK_THROWS_AS(q_sample(x0, TimeStep{1}, {{0, 0, 0}, {0, 0, 0}}, s),
                    ShapeError);
  }
}

TEST_CASE("q_sample at t = T is standard normal (statistical oracle)") {
  const DiffusionSchedule s = make_schedule(1000, 1e-4, 0.02);
  const std::size_t n = 100000;
  PointCloud x0;
  x0.points.assign(n, Vec3{0, 0, 0});
  Rng rng(404);
  std::vector<Vec3> eps;
  eps.reserve(n);
  for (std::size_t i = 0; i < n; ++i)
    eps.push_back({rng.normal(), rng.normal(), rng.normal()});
  const PointCloud xt = q_sample(x0, TimeStep{1000}, eps, s);
  for (int axis = 0; axis < 3; ++axis) {
    double mean = 0.0;
    for (const Vec3& p : xt.points) mean += p[axis];
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (const Vec3& p : xt.points) var += (p[axis] - mean) * (p[axis] - mean);
    var /= static_cast<double>(n - 1);
    CHECK(std::abs(mean) <= 0.05);
    CHECK(var >= 0.9);
    CHECK(var <= 1.1);
  }
}

TEST_CASE("posterior step inverts a single-step forward pass") {
  const DiffusionSchedule s = make_schedule(1, 0.3, 0.3);
  PointCloud x0;
  x0.points = {{0.3, -1.2, 0.8}, {2.0, 0.1, -0.4}};
  const std::vector<Vec3> eps = {{0.5, -0.25, 1.5}, {-1.0, 0.75, 0.2}};
  const PointCloud x1 = q_sample(x0, TimeStep{1}, eps, s);
  const std::vector<Vec3> zero(x0.size(), Vec3{0, 0, 0});
  const PointCloud back = posterior_step(x1, eps, TimeStep{1}, s, zero);
  for (std::size_t i = 0; i < x0.size(); ++i) {
    CHECK(std::abs(back.points[i].x - x0.points[i].x) < 1e-6);
    CHECK(std::abs(back.points[i].y - x0.points[i].y) < 1e-6);
    CHECK(std::abs(back.points[i].z - x0.points[i].z) < 1e-6);
  }
}

TEST_CASE("posterior step with vanishing beta is a no-op") {
  const DiffusionSchedule s = make_schedule(1, 1e-12, 1e-12);
  PointCloud xt;
  xt.points = {{1.0, 2.0, 3.0}};
  const PointCloud out =
      posterior_step(xt, {{0.4, -0.2, 0.9}}, TimeStep{1}, s, {{0, 0, 0}});
  CHECK(std::abs(out.points[0].x - 1.0) < 1e-6);
  CHECK(std::abs(out.points[0].y - 2.0) < 1e-6);
  CHECK(std::abs(out.points[0].z - 3.0) < 1e-6);
}

TEST_CASE("posterior step rejects nonzero z at t = 1") {
  const DiffusionSchedule s = make_schedule(1, 0.3, 0.3);
  PointCloud xt;
  xt.points = {{1, 1, 1}};
  CHECK_THROWS_AS(
      posterior_step(xt, {{0, 0, 0}}, TimeStep{1}, s, {{0.1, 0, 0}}),
      ContractError);
}

TEST_CASE("perfect-noise oracle denoises back to the shape") {
  const DiffusionSchedule s = make_schedule(1000, 1e-4, 0.02);
  const PointCloud shape = sample_shape(ShapeSpec::sphere(1.0), 512, 77);
  PointCloud x0;
  x0.points = shape.points;

  Rng rng(555);
  std::vector<Vec3> eps0;
  for (std::size_t i = 0; i < x0.size(); ++i)
    eps0.push_back({rng.normal(), rng.normal(), rng.normal()});
  PointCloud x = q_sample(x0, TimeStep{1000}, eps0, s);

  for (int t = 1000; t >= 1; --t) {
    // Oracle: the exact noise consistent with the current state.
    const double ab = s.alpha_bar(TimeStep{t});
    const double cs = std::sqrt(ab), cn = std::sqrt(1.0 - ab);
    std::vector<Vec3> eps_star(x.size());
    for (std::size_t i = 0; i < x.size(); ++i)
      eps_star[i] = (x.points[i] - x0.points[i] * cs) / cn;
    std::vector<Vec3> z(x.size(), Vec3{0, 0, 0});
    if (t > 1)
      for (Vec3& v : z) v = {rng.normal(), rng.normal(), rng.normal()};
    x = posterior_step(x, eps_star, TimeStep{t}, s, z);
  }
  const EvalReport r = evaluate_bruteforce(x, x0, 0.1);
  CHECK(r.cd <= 1e-2);
}

TEST_CASE("snr is monotone decreasing and tiny at t = T") {
  const DiffusionSchedule s = make_schedule(1000, 1e-4, 0.02);
  for (int t = 1; t < 1000; ++t)
    CHECK(snr(TimeStep{t}, s) > snr(TimeStep{t + 1}, s));
  CHECK(snr(TimeStep{1000}, s) < 1e-4);
}

TEST_CASE("one-shot q_sample matches the sequential kernel (MC moments)") {
  const int T = 20;
  const DiffusionSchedule s = make_schedule(T, 0.01, 0.2);
  const Vec3 x0{1.5, -0.7, 0.3};
  const std::size_t trials = 40000;
  Rng rng(909);

  double mean[3] = {0, 0, 0};
  double sq[3] = {0, 0, 0};
  for (std::size_t k = 0; k < trials; ++k) {
    Vec3 x = x0;
    for (int t = 1; t <= T; ++t) {
      const double beta = s.beta(TimeStep{t});
      const Vec3 z{rng.normal(), rng.normal(), rng.normal()};
      x = x * std::sqrt(1.0 - beta) + z * std::sqrt(beta);
    }
    for (int a = 0; a < 3; ++a) {
      mean[a] += x[a];
      sq[a] += x[a] * x[a];
    }
  }
  const double ab = s.alpha_bar(TimeStep{T});
  for (int a = 0; a < 3; ++a) {
    mean[a] /= static_cast<double>(trials);
    const double var = sq[a] / static_cast<double>(trials) - mean[a] * mean[a];
    const double expect_mean = std::sqrt(ab) * x0[a];
    const double expect_var = 1.0 - ab;
    const double sigma_mean = std::sqrt(expect_var / trials);
    const double sigma_var = expect_var * std::sqrt(2.0 / (trials - 1.0));
    CHECK(std::abs(mean[a] - expect_mean) <= 3.0 * sigma_mean);
    CHECK(std::abs(var - expect_var) <= 3.0 * sigma_var);
  }
}
