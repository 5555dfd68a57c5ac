#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>

#include "ipd/cli.hpp"

using namespace ipd;
namespace fs = std::filesystem;

namespace {

const std::string kRoot = "/tmp/ipd_test_cli";

std::string fresh_dir(const std::string& name) {
  const std::string d = kRoot + "/" + name;
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

void write_tiny_config(const std::string& path, int steps) {
  std::ofstream f(path);
  f << "d_model = 8\nn_heads = 2\nn_cond_tokens = 6\ntime_embed_dim = 8\n"
    << "T = 10\nsteps = " << steps << "\nlr = 1e-3\nn_points = 24\n"
    << "snapshot_every = 2\nlog_every = 1\n";
}

bool same_bytes(const std::string& a, const std::string& b) {
  return read_file_bytes(a) == read_file_bytes(b);
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string(IPD_CLI_PATH) + " " + args +
                          " > /dev/null 2> /dev/null";
  const int status = std::system(cmd.c_str());
  return WEXITSTATUS(status);
}

}  // namespace

TEST_CASE("gen-data writes instances, manifest and provenance") {
  const std::string dir = fresh_dir("gen");
  GenDataOptions opt;
  opt.out_dir = dir;
  opt.n_shapes = 4;
  opt.points = 64;
  opt.seed = 7;
  cmd_gen_data(opt);

  const auto manifest = read_csv(dir + "/manifest.csv");
  REQUIRE(manifest.size() == 5);  // header + 4 rows
  for (int i = 0; i < 4; ++i) {
    CHECK(fs::exists(dir + "/" + manifest[i + 1][6]));
    CHECK(fs::exists(dir + "/" + manifest[i + 1][7]));
  }
  CHECK(fs::exists(dir + "/provenance.txt"));

  // Byte-identical regeneration under the same seed.
  const std::string dir2 = fresh_dir("gen2");
  GenDataOptions opt2 = opt;
  opt2.out_dir = dir2;
  cmd_gen_data(opt2);
  CHECK(same_bytes(dir + "/gt_0000.ipc", dir2 + "/gt_0000.ipc"));
  CHECK(same_bytes(dir + "/partial_0003.ipc", dir2 + "/partial_0003.ipc"));
  CHECK(same_bytes(dir + "/manifest.csv", dir2 + "/manifest.csv"));

  const Dataset data = load_dataset(dir);
  CHECK(data.instances.size() == 4);
  // Normalized partials are centered.
  for (const Instance& inst : data.instances) {
    Vec3 mean{0, 0, 0};
    for (const Vec3& p : inst.partial.points) mean += p;
    CHECK(mean.norm() / inst.partial.size() < 1e-9);
  }
}

TEST_CASE("train writes checkpoints and logs; sample and eval consume them") {
  const std::string data_dir = fresh_dir("pipe_data");
  GenDataOptions gen;
  gen.out_dir = data_dir;
  gen.n_shapes = 2;
  gen.points = 48;
  gen.seed = 3;
  gen.families = {ShapeFamily::sphere};
  cmd_gen_data(gen);

  const std::string cfg_path = kRoot + "/tiny.cfg";
  write_tiny_config(cfg_path, 4);

  const std::string run_dir = fresh_dir("pipe_run");
  TrainOptions topt;
  topt.data_dir = data_dir;
  topt.config_path = cfg_path;
  topt.out_dir = run_dir;
  cmd_train(topt);

  CHECK(fs::exists(run_dir + "/checkpoint.ipk"));
  CHECK(fs::exists(run_dir + "/checkpoint_step_2.ipk"));
  CHECK(fs::exists(run_dir + "/checkpoint_step_4.ipk"));
  const auto log = read_csv(run_dir + "/train_log.csv");
  CHECK(log.size() == 5);  // header + 4 steps at log_every 1
  CHECK(log[0][0] == "step");

  // --steps 0 writes only the initial checkpoint.
  const std::string run0 = fresh_dir("pipe_run0");
  TrainOptions t0 = topt;
  t0.out_dir = run0;
  t0.steps_override = 0;
  cmd_train(t0);
  CHECK(fs::exists(run0 + "/checkpoint.ipk"));
  CHECK(!fs::exists(run0 + "/checkpoint_step_2.ipk"));

  // Sampling from the trained checkpoint.
  const std::string sample_dir = fresh_dir("pipe_sample");
  SampleOptions sopt;
  sopt.ckpt_path = run_dir + "/checkpoint.ipk";
  sopt.input_path = data_dir + "/partial_0000.ipc";
  sopt.out_dir = sample_dir;
  sopt.n_points = 24;
  sopt.tau = 0.49;  // generous: the model is untrained
  sopt.seed = 1;
  sopt.capture_every = 4;
  const SampleSummary summary = cmd_sample(sopt);
  CHECK(fs::exists(sample_dir + "/raw.ipc"));
  CHECK(fs::exists(sample_dir + "/nu.csv"));
  CHECK(fs::exists(sample_dir + "/provenance.txt"));
  CHECK(fs::exists(sample_dir + "/traj/traj_t1.ipc"));
  if (!summary.extraction_empty) CHECK(fs::exists(sample_dir + "/extracted.ipc"));

  // Determinism: the same sample command reproduces raw.ipc bytes.
  const std::string sample_dir2 = fresh_dir("pipe_sample2");
  SampleOptions sopt2 = sopt;
  sopt2.out_dir = sample_dir2;
  cmd_sample(sopt2);
  CHECK(same_bytes(sample_dir + "/raw.ipc", sample_dir2 + "/raw.ipc"));

  // Single-pair eval of a cloud against itself is perfect.
  EvalOptions eopt;
  eopt.pred_path = data_dir + "/gt_0000.ipc";
  eopt.gt_path = data_dir + "/gt_0000.ipc";
  eopt.rho = 0.1;
  const auto reports = cmd_eval(eopt);
  REQUIRE(reports.size() == 1);
  CHECK(reports[0].f1 == 100.0);
  CHECK(reports[0].cd == 0.0);

  // Batch eval against the manifest with predictions named by instance.
  const std::string pred_dir = fresh_dir("pipe_preds");
  fs::copy_file(data_dir + "/gt_0000.ipc", pred_dir + "/0000.ipc");
  fs::copy_file(data_dir + "/gt_0001.ipc", pred_dir + "/0001.ipc");
  EvalOptions bopt;
  bopt.data_dir = data_dir;
  bopt.pred_dir = pred_dir;
  bopt.rho = 0.1;
  bopt.out_csv = kRoot + "/batch_eval.csv";
  const auto batch = cmd_eval(bopt);
  CHECK(batch.size() == 2);
  const auto rows = read_csv(bopt.out_csv);
  REQUIRE(rows.size() == 4);  // header + 2 + mean
  CHECK(std::stod(rows[3][6]) == doctest::Approx(100.0));
}

TEST_CASE("ablate emits the variant grid with paired seeds") {
  const std::string data_dir = fresh_dir("abl_data");
  GenDataOptions gen;
  gen.out_dir = data_dir;
  gen.n_shapes = 2;
  gen.points = 32;
  gen.seed = 5;
  cmd_gen_data(gen);

  const std::string cfg_path = kRoot + "/abl.cfg";
  write_tiny_config(cfg_path, 2);

  AblateOptions opt;
  opt.data_dir = data_dir;
  opt.config_path = cfg_path;
  opt.out_dir = fresh_dir("abl_out");
  opt.variants = {"on", "off"};
  opt.n_seeds = 2;
  const auto rows = cmd_ablate(opt);

  int result_rows = 0, summary_rows = 0;
  for (const auto& r : rows) {
    if (r.row_type == "result") ++result_rows;
    if (r.row_type == "summary") ++summary_rows;
  }
  CHECK(result_rows == 4);   // 2 variants x 2 seeds
  CHECK(summary_rows == 2);  // one per variant
  CHECK(fs::exists(opt.out_dir + "/ablate.csv"));

  // The stage grid adds the four quarter masks plus the unmasked row.
  AblateOptions stages = opt;
  stages.out_dir = fresh_dir("abl_stages");
  stages.variants = {"stages"};
  stages.n_seeds = 1;
  const auto srows = cmd_ablate(stages);
  int sresults = 0;
  bool saw_unmasked = false;
  for (const auto& r : srows) {
    if (r.row_type == "result") {
      ++sresults;
      if (r.variant == "unmasked") saw_unmasked = true;
    }
  }
  CHECK(sresults == 5);
  CHECK(saw_unmasked);
}

TEST_CASE("cli binary maps errors to exit codes") {
  const std::string dir = fresh_dir("exit");

  // Config error: rho must be positive.
  CHECK(run_cli("eval --pred /nonexistent.ipc --gt /nonexistent.ipc --rho 0") == 1);
  // Missing required flag.
  CHECK(run_cli("gen-data --n-shapes 2") == 1);
  // Unknown family.
  CHECK(run_cli("gen-data --out " + dir + "/d --families dodecahedron") == 1);
  // Reversed mask bounds.
  CHECK(run_cli("sample --ckpt x --input y --out " + dir +
                " --mask 500:250") == 1);

  // Success path.
  CHECK(run_cli("gen-data --out " + dir + "/ok --n-shapes 1 --points 32") == 0);

  // Numeric error: a checkpoint with non-finite weights exits with 2.
  NetConfig cfg;
  cfg.d_model = 8;
  cfg.n_heads = 2;
  cfg.n_cond_tokens = 4;
  cfg.time_embed_dim = 8;
  NetParams params = init_params(cfg, 1);
  params.at("query.l1.w").data[0] = std::numeric_limits<double>::infinity();
  const DiffusionSchedule sched = make_schedule(5, 1e-3, 0.05);
  save_checkpoint(dir + "/bad.ipk", params, sched, 0.5);
  CHECK(run_cli("sample --ckpt " + dir + "/bad.ipk --input " + dir +
                "/ok/partial_0000.ipc --out " + dir + "/s --points 8") == 2);
}
