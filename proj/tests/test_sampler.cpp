#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "ipd/sampler.hpp"
#include "ipd/store.hpp"
#include "ipd/train.hpp"

using namespace ipd;

namespace {

NetConfig tiny_net() {
  NetConfig cfg;
  cfg.d_model = 8;
  cfg.n_heads = 2;
  cfg.n_cond_tokens = 6;
  cfg.time_embed_dim = 8;
  return cfg;
}

PointCloud tiny_partial() {
  const PointCloud gt = sample_shape(ShapeSpec::sphere(1.0), 128, 42);
  return partial_view(gt, {0, 0, -1});
}

bool clouds_equal(const PointCloud& a, const PointCloud& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i)
    if (a.points[i].x != b.points[i].x || a.points[i].y != b.points[i].y ||
        a.points[i].z != b.points[i].z)
      return false;
  return true;
}

}  // namespace

TEST_CASE("sampler config validation") {
  const int T = 1000;
  SamplerConfig cfg;
  CHECK_NOTHROW(cfg.validate(T, 0.5));

  SUBCASE("reversed bounds") {
    cfg.selfcond_mask = {{500, 250}};
    CHECK_THROWS_AS(cfg.validate(T, 0.5), ConfigError);
  }
  SUBCASE("out of range") {
    cfg.selfcond_mask = {{0, 10}};
    CHECK_THROWS_AS(cfg.validate(T, 0.5), ConfigError);
    cfg.selfcond_mask = {{900, 1001}};
    CHECK_THROWS_AS(cfg.validate(T, 0.5), ConfigError);
  }
  SUBCASE("overlap") {
    cfg.selfcond_mask = {{100, 300}, {250, 400}};
    CHECK_THROWS_AS(cfg.validate(T, 0.5), ConfigError);
  }
  SUBCASE("tau bounds") {
    cfg.extract_tau = 0.0;
    CHECK_THROWS_AS(cfg.validate(T, 0.5), ParamError);
    cfg.extract_tau = 0.6;
    CHECK_THROWS_AS(cfg.validate(T, 0.5), ParamError);
  }
  SUBCASE("masked lookup") {
    cfg.extract_tau = 0.05;
    cfg.selfcond_mask = {{100, 200}, {700, 900}};
    CHECK(cfg.masked(100));
    CHECK(cfg.masked(150));
    CHECK(cfg.masked(200));
    CHECK(!cfg.masked(99));
    CHECK(!cfg.masked(201));
    CHECK(cfg.masked(800));
  }
}

TEST_CASE("extraction filters by predicted UDF") {
  PointCloud c;
  for (int i = 0; i < 6; ++i)
    c.points.push_back({static_cast<double>(i), 0.0, 0.0});

  SUBCASE("all zeros keeps everything") {
    const std::vector<double> nu(6, 0.0);
    const PointCloud out = extract_points(c, nu, 0.05);
    CHECK(clouds_equal(out, c));
  }
  SUBCASE("all above tau is an error") {
    const std::vector<double> nu(6, 0.5);
    CHECK_THROWS_AS(extract_points(c, nu, 0.05), EmptyExtractionError);
  }
  SUBCASE("mixed values keep exactly the sub-threshold points in order") {
    const std::vector<double> nu = {0.01, 0.5, 0.02, 0.07, 0.04, 0.5};
    const PointCloud out = extract_points(c, nu, 0.05);
    REQUIRE(out.size() == 3);
    CHECK(out.points[0].x == 0.0);
    CHECK(out.points[1].x == 2.0);
    CHECK(out.points[2].x == 4.0);
  }
  SUBCASE("boundary is strict") {
    const std::vector<double> nu = {0.05, 0.049, 0.05, 0.05, 0.05, 0.05};
    const PointCloud out = extract_points(c, nu, 0.05);
    CHECK(out.size() == 1);
  }
  SUBCASE("length mismatch") {
    const std::vector<double> nu(5, 0.0);
    CHECK_THROWS_AS(extract_points(c, nu, 0.05), ShapeError);
  }
}

TEST_CASE("sampling is deterministic and mask-consistent") {
  const NetParams params = init_params(tiny_net(), 3);
  const DiffusionSchedule sched = make_schedule(20, 1e-3, 0.05);
  const PointCloud partial = tiny_partial();

  SamplerConfig cfg;
  cfg.n_points = 32;
  cfg.seed = 9;

  const SampleResult a = sample(params, partial, sched, cfg, 0.5);
  const SampleResult b = sample(params, partial, sched, cfg, 0.5);
  CHECK(clouds_equal(a.cloud, b.cloud));
  CHECK(a.nu == b.nu);

  // Feeding the self-condition does change the run.
  SamplerConfig masked = cfg;
  masked.selfcond_mask = {{1, 20}};
  const SampleResult c = sample(params, partial, sched, masked, 0.5);
  CHECK(!clouds_equal(a.cloud, c.cloud));
}

TEST_CASE("sample matches a hand-rolled reference loop (threading check)") {
  const NetParams params = init_params(tiny_net(), 3);
  const DiffusionSchedule sched = make_schedule(20, 1e-3, 0.05);
  const PointCloud partial = tiny_partial();
  const double clamp = 0.5;

  SamplerConfig cfg;
  cfg.n_points = 32;
  cfg.seed = 9;
  const SampleResult got = sample(params, partial, sched, cfg, clamp);

  // Reference: the documented protocol, written out explicitly. The
  // self-condition at step t < T is exactly the prediction from t + 1.
  auto [pn, tf] = normalize(partial);
  const Tensor tokens = condition_tokens(params, pn);
  Rng rng(Rng::mix(cfg.seed, 0x731));
  PointCloud x;
  for (std::size_t i = 0; i < cfg.n_points; ++i)
    x.points.push_back({rng.normal(), rng.normal(), rng.normal()});
  std::vector<double> prev;
  for (int t = 20; t >= 1; --t) {
    const SelfCond sc = t == 20 ? SelfCond::placeholder(x.size())
                                : SelfCond::from_prediction(prev, clamp);
    const EvalOutput out =
        forward_eval_with_condition(params, x, TimeStep{t}, tokens, sc);
    std::vector<Vec3> z(x.size(), Vec3{0, 0, 0});
    if (t > 1)
      for (Vec3& v : z) v = {rng.normal(), rng.normal(), rng.normal()};
    x = posterior_step(x, out.eps_hat, TimeStep{t}, sched, z);
    prev = out.nu_hat;
  }
  const PointCloud expect = tf.to_world(x);
  CHECK(clouds_equal(got.cloud, expect));
  CHECK(got.nu == prev);
}

TEST_CASE("full-range masking equals the placeholder-only reference") {
  const NetParams params = init_params(tiny_net(), 3);
  const DiffusionSchedule sched = make_schedule(20, 1e-3, 0.05);
  const PointCloud partial = tiny_partial();

  SamplerConfig cfg;
  cfg.n_points = 16;
  cfg.seed = 4;
  cfg.selfcond_mask = {{1, 20}};
  const SampleResult got = sample(params, partial, sched, cfg, 0.5);

  auto [pn, tf] = normalize(partial);
  const Tensor tokens = condition_tokens(params, pn);
  Rng rng(Rng::mix(cfg.seed, 0x731));
  PointCloud x;
  for (std::size_t i = 0; i < cfg.n_points; ++i)
    x.points.push_back({rng.normal(), rng.normal(), rng.normal()});
  for (int t = 20; t >= 1; --t) {
    const EvalOutput out = forward_eval_with_condition(
        params, x, TimeStep{t}, tokens, SelfCond::placeholder(x.size()));
    std::vector<Vec3> z(x.size(), Vec3{0, 0, 0});
    if (t > 1)
      for (Vec3& v : z) v = {rng.normal(), rng.normal(), rng.normal()};
    x = posterior_step(x, out.eps_hat, TimeStep{t}, sched, z);
  }
  CHECK(clouds_equal(got.cloud, tf.to_world(x)));
}

TEST_CASE("trajectory capture and export") {
  const NetParams params = init_params(tiny_net(), 3);
  const DiffusionSchedule sched = make_schedule(20, 1e-3, 0.05);
  const PointCloud partial = tiny_partial();

  SamplerConfig cfg;
  cfg.n_points = 16;
  cfg.seed = 4;
  cfg.capture_every = 5;
  const SampleResult res = sample(params, partial, sched, cfg, 0.5);

  // Stride hits t = 20, 15, 10, 5 plus the forced capture at t = 1.
  REQUIRE(res.trajectory.snapshots.size() == 5);
  const int expected_t[] = {20, 15, 10, 5, 1};
  for (std::size_t i = 0; i < 5; ++i)
    CHECK(res.trajectory.snapshots[i].t == expected_t[i]);
  for (std::size_t i = 1; i < 5; ++i)
    CHECK(res.trajectory.snapshots[i].t < res.trajectory.snapshots[i - 1].t);

  const std::string dir = "/tmp/ipd_test_traj";
  std::filesystem::remove_all(dir);
  const auto files = export_trajectory(res.trajectory, dir);
  CHECK(files.size() == 6);  // 5 clouds + the shading CSV
  const PointCloud back = read_cloud(dir + "/traj_t10.ipc");
  const PointCloud& orig = res.trajectory.snapshots[2].cloud;
  for (std::size_t i = 0; i < back.size(); ++i)
    CHECK(back.points[i].x ==
          static_cast<double>(static_cast<float>(orig.points[i].x)));
  const auto rows = read_csv(dir + "/traj_nu.csv");
  CHECK(rows.size() == 1 + 5 * 16);

  Trajectory empty;
  CHECK_THROWS_AS(export_trajectory(empty, dir), ContractError);
}

TEST_CASE("sampler rejects non-finite parameters") {
  NetParams params = init_params(tiny_net(), 3);
  params.at("query.l1.w").data[0] = std::numeric_limits<double>::quiet_NaN();
  const DiffusionSchedule sched = make_schedule(10, 1e-3, 0.05);
  SamplerConfig cfg;
  cfg.n_points = 8;
  CHECK_THROWS_AS(sample(params, tiny_partial(), sched, cfg, 0.5),
                  NumericError);
}
