#include "ipd/cli.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <sstream>

namespace ipd {

namespace fs = std::filesystem;

namespace {

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string instance_name(int i) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%04d", i);
  return buf;
}

ShapeSpec random_spec(ShapeFamily family, Rng& rng) {
  ShapeSpec spec;
  switch (family) {
    case ShapeFamily::sphere:
      spec = ShapeSpec::sphere(rng.uniform(0.6, 1.4));
      break;
    case ShapeFamily::box:
      spec = ShapeSpec::box(rng.uniform(0.4, 1.2), rng.uniform(0.4, 1.2),
                            rng.uniform(0.4, 1.2));
      break;
    case ShapeFamily::cylinder:
      spec = ShapeSpec::cylinder(rng.uniform(0.4, 1.0), rng.uniform(0.4, 1.2));
      break;
    case ShapeFamily::torus: {
      const double major = rng.uniform(0.7, 1.2);
      spec = ShapeSpec::torus(major, rng.uniform(0.2, 0.45) * major);
      break;
    }
    case ShapeFamily::superellipsoid:
      spec = ShapeSpec::superellipsoid(
          rng.uniform(0.5, 1.2), rng.uniform(0.5, 1.2), rng.uniform(0.5, 1.2),
          rng.uniform(0.4, 2.5), rng.uniform(0.4, 2.5));
      break;
  }
  spec.rotation = random_rotation(rng);
  return spec;
}

RunConfig load_run_config(const std::string& path) {
  if (path.empty()) return RunConfig{};
  return read_config(path);
}

}  // namespace

void write_provenance(const std::string& out_dir, const std::string& command,
                      const std::vector<std::pair<std::string, std::string>>& settings,
                      const std::vector<std::string>& input_files) {
  std::ostringstream out;
  out << "command: " << command << "\n";
  for (const auto& [k, v] : settings) out << k << " = " << v << "\n";
  for (const std::string& f : input_files)
    out << "input " << f << " sha1 " << file_sha1(f) << "\n";
  write_file_atomic(out_dir + "/provenance.txt", out.str());
}

void cmd_gen_data(const GenDataOptions& opt) {
  if (opt.n_shapes < 1) throw ConfigError("need at least one shape");
  std::vector<ShapeFamily> families = opt.families;
  if (families.empty())
    families = {ShapeFamily::sphere, ShapeFamily::box, ShapeFamily::cylinder,
                ShapeFamily::torus, ShapeFamily::superellipsoid};
  fs::create_directories(opt.out_dir);

  std::vector<std::vector<std::string>> manifest;
  for (int i = 0; i < opt.n_shapes; ++i) {
    const std::uint64_t inst_seed = Rng::mix(opt.seed, 1000 + i);
    Rng rng(inst_seed);
    const ShapeFamily family = families[rng.index(families.size())];
    const ShapeSpec spec = random_spec(family, rng);
    const Vec3 view = random_unit_vector(rng);
    const PointCloud gt = sample_shape(spec, opt.points, Rng::mix(inst_seed, 7));
    const PointCloud partial = partial_view(gt, view);

    const std::string id = instance_name(i);
    const std::string gt_file = "gt_" + id + ".ipc";
    const std::string partial_file = "partial_" + id + ".ipc";
    write_cloud(opt.out_dir + "/" + gt_file, gt);
    write_cloud(opt.out_dir + "/" + partial_file, partial);
    manifest.push_back({id, family_name(family), fmt(view.x), fmt(view.y),
                        fmt(view.z), std::to_string(inst_seed), gt_file,
                        partial_file, std::to_string(opt.points)});
  }
  write_csv(opt.out_dir + "/manifest.csv",
            {"instance_id", "family", "view_x", "view_y", "view_z", "seed",
             "gt_file", "partial_file", "points"},
            manifest);
  write_provenance(opt.out_dir, "gen-data",
                   {{"n_shapes", std::to_string(opt.n_shapes)},
                    {"points", std::to_string(opt.points)},
                    {"seed", std::to_string(opt.seed)}},
                   {});
}

Dataset load_dataset(const std::string& dir) {
  const std::string manifest_path = dir + "/manifest.csv";
  const auto rows = read_csv(manifest_path);
  if (rows.size() < 2)
    throw FormatError(manifest_path + ": manifest has no instances");
  Dataset data;
  for (std::size_t i = 1; i < rows.size(); ++i) {
    const auto& row = rows[i];
    if (row.size() < 9)
      throw FormatError(manifest_path + ": malformed manifest row");
    PointCloud gt = read_cloud(dir + "/" + row[6]);
    PointCloud partial = read_cloud(dir + "/" + row[7]);
    data.instances.push_back(
        make_instance(row[0], std::move(gt), std::move(partial)));
  }
  return data;
}

void cmd_train(const TrainOptions& opt) {
  RunConfig cfg = load_run_config(opt.config_path);
  if (opt.steps_override >= 0) cfg.train.steps = opt.steps_override;
  const Dataset data = load_dataset(opt.data_dir);
  const DiffusionSchedule sched = cfg.schedule();
  fs::create_directories(opt.out_dir);

  std::vector<std::vector<std::string>> log_rows;
  auto log = [&](const TrainLogRow& r) {
    log_rows.push_back({std::to_string(r.step), fmt(r.loss), fmt(r.udf_term),
                        fmt(r.noise_term), fmt(r.wall_ms)});
  };
  auto snapshot = [&](int step, const NetParams& p) {
    save_checkpoint(opt.out_dir + "/checkpoint_step_" + std::to_string(step) +
                        ".ipk",
                    p, sched, cfg.train.clamp);
    save_checkpoint(opt.out_dir + "/checkpoint.ipk", p, sched, cfg.train.clamp);
  };

  auto flush_log = [&] {
    write_csv(opt.out_dir + "/train_log.csv",
              {"step", "loss", "udf_term", "noise_term", "wall_ms"}, log_rows);
  };

  try {
    NetParams params =
        run_training(data, cfg.net, cfg.train, sched, log, snapshot);
    save_checkpoint(opt.out_dir + "/checkpoint.ipk", params, sched,
                    cfg.train.clamp);
  } catch (const NumericError&) {
    flush_log();
    throw;
  }
  flush_log();

  std::vector<std::string> inputs = {opt.data_dir + "/manifest.csv"};
  if (!opt.config_path.empty()) inputs.push_back(opt.config_path);
  write_provenance(opt.out_dir, "train",
                   {{"steps", std::to_string(cfg.train.steps)},
                    {"seed", std::to_string(cfg.train.seed)},
                    {"lambda_weight", fmt(cfg.train.lambda_weight)},
                    {"lr", fmt(cfg.train.lr)},
                    {"selfcond_prob", fmt(cfg.train.selfcond_prob)},
                    {"T", std::to_string(cfg.schedule_steps)}},
                   inputs);
}

SampleSummary cmd_sample(const SampleOptions& opt) {
  const Checkpoint ck = load_checkpoint(opt.ckpt_path);
  const DiffusionSchedule sched = ck.schedule();
  const PointCloud partial = read_cloud(opt.input_path);
  fs::create_directories(opt.out_dir);

  SamplerConfig scfg;
  scfg.n_points = opt.n_points;
  scfg.extract_tau = opt.tau;
  scfg.selfcond_mask = opt.masks;
  scfg.seed = opt.seed;
  scfg.capture_every = opt.capture_every;

  const SampleResult res = sample(ck.params, partial, sched, scfg, ck.clamp);
  write_cloud(opt.out_dir + "/raw.ipc", res.cloud);

  std::vector<std::vector<std::string>> nu_rows;
  for (std::size_t i = 0; i < res.nu.size(); ++i)
    nu_rows.push_back({std::to_string(i), fmt(res.nu[i])});
  write_csv(opt.out_dir + "/nu.csv", {"point_index", "nu_hat"}, nu_rows);

  SampleSummary summary;
  try {
    const PointCloud extracted = extract_points(res.cloud, res.nu, opt.tau);
    write_cloud(opt.out_dir + "/extracted.ipc", extracted);
    summary.n_extracted = extracted.size();
  } catch (const EmptyExtractionError& e) {
    summary.extraction_empty = true;
    std::cerr << "warning: " << e.what() << " (raw cloud still written)\n";
  }

  if (opt.capture_every > 0)
    export_trajectory(res.trajectory, opt.out_dir + "/traj");

  std::ostringstream masks;
  for (const auto& [a, b] : opt.masks) masks << a << ":" << b << " ";
  write_provenance(opt.out_dir, "sample",
                   {{"tau", fmt(opt.tau)},
                    {"seed", std::to_string(opt.seed)},
                    {"n_points", std::to_string(opt.n_points)},
                    {"mask", masks.str()}},
                   {opt.ckpt_path, opt.input_path});
  return summary;
}

namespace {

EvalReport eval_in_gt_frame(const PointCloud& pred_world,
                            const PointCloud& gt_world, double rho) {
  auto [gt_norm, tf] = normalize(gt_world);
  const PointCloud pred_norm = tf.to_normalized(pred_world);
  return evaluate(pred_norm, gt_norm, rho);
}

}  // namespace

std::vector<EvalReport> cmd_eval(const EvalOptions& opt) {
  if (!(opt.rho > 0.0)) throw ConfigError("rho must be positive");
  std::vector<EvalReport> reports;
  std::vector<std::string> labels;

  if (!opt.pred_path.empty()) {
    const PointCloud pred = read_cloud(opt.pred_path);
    const PointCloud gt = read_cloud(opt.gt_path);
    reports.push_back(eval_in_gt_frame(pred, gt, opt.rho));
    labels.push_back(fs::path(opt.pred_path).filename().string());
  } else {
    const auto rows = read_csv(opt.data_dir + "/manifest.csv");
    for (std::size_t i = 1; i < rows.size(); ++i) {
      if (rows[i].size() < 9)
        throw FormatError(opt.data_dir + "/manifest.csv: malformed row");
      const std::string& id = rows[i][0];
      const PointCloud gt = read_cloud(opt.data_dir + "/" + rows[i][6]);
      const PointCloud pred = read_cloud(opt.pred_dir + "/" + id + ".ipc");
      reports.push_back(eval_in_gt_frame(pred, gt, opt.rho));
      labels.push_back(id);
    }
  }
  if (!opt.out_csv.empty()) write_eval_csv(opt.out_csv, labels, reports);
  return reports;
}

namespace {

struct TrainedVariant {
  NetParams params;
  DiffusionSchedule sched;
};

EvalReport mean_report(const std::vector<EvalReport>& rs) {
  EvalReport m;
  for (const EvalReport& r : rs) {
    m.acc += r.acc; m.comp += r.comp; m.cd += r.cd;
    m.prec += r.prec; m.recall += r.recall; m.f1 += r.f1;
  }
  const double n = static_cast<double>(rs.size());
  m.acc /= n; m.comp /= n; m.cd /= n; m.prec /= n; m.recall /= n; m.f1 /= n;
  m.rho = rs.empty() ? 0.0 : rs.front().rho;
  return m;
}

}  // namespace

std::vector<AblateRow> cmd_ablate(const AblateOptions& opt) {
  RunConfig cfg = load_run_config(opt.config_path);
  const Dataset data = load_dataset(opt.data_dir);
  const DiffusionSchedule sched = cfg.schedule();
  const int total = sched.steps();
  fs::create_directories(opt.out_dir);

  std::vector<std::string> variants = opt.variants;
  if (variants.empty()) variants = {"on", "off"};
  for (const std::string& v : variants)
    if (v != "on" && v != "off" && v != "stages")
      throw ConfigError("unknown ablation variant '" + v + "'");
  if (opt.n_seeds < 1) throw ConfigError("need at least one seed");

  // Quarter-interval inference masks, labelled like the denoising stages.
  const int q = total / 4;
  const std::vector<std::pair<int, int>> stage_masks = {
      {3 * q + 1, total}, {2 * q + 1, 3 * q}, {q + 1, 2 * q}, {1, q}};

  std::vector<AblateRow> rows;
  std::map<std::string, std::vector<double>> f1_by_variant;

  for (int s = 0; s < opt.n_seeds; ++s) {
    const std::uint64_t seed = Rng::mix(opt.base_seed, 31 + s);
    // Shared across variants: one self-conditioned and one plain model.
    std::map<bool, NetParams> trained;
    auto model = [&](bool self_conditioned) -> const NetParams& {
      auto it = trained.find(self_conditioned);
      if (it == trained.end()) {
        TrainConfig tc = cfg.train;
        tc.seed = seed;
        if (!self_conditioned) tc.selfcond_prob = 0.0;
        it = trained.emplace(self_conditioned,
                             run_training(data, cfg.net, tc, sched)).first;
      }
      return it->second;
    };

    auto run_variant = [&](const std::string& label, bool self_conditioned,
                           const std::vector<std::pair<int, int>>& mask) {
      std::vector<EvalReport> per_instance;
      for (std::size_t i = 0; i < data.instances.size(); ++i) {
        const Instance& inst = data.instances[i];
        SamplerConfig scfg = cfg.sampler;
        scfg.seed = Rng::mix(seed, 500 + i);  // paired across variants
        scfg.selfcond_mask = mask;
        scfg.capture_every = 0;
        const SampleResult res =
            sample(model(self_conditioned), inst.partial_world, sched, scfg,
                   cfg.train.clamp);
        PointCloud pred = res.cloud;
        try {
          pred = extract_points(res.cloud, res.nu, cfg.sampler.extract_tau);
        } catch (const EmptyExtractionError&) {
          // fall back to the raw cloud
        }
        per_instance.push_back(eval_in_gt_frame(pred, inst.gt_world, cfg.rho));
      }
      AblateRow row{"result", label, seed, mean_report(per_instance)};
      f1_by_variant[label].push_back(row.report.f1);
      rows.push_back(std::move(row));
    };

    const std::vector<std::pair<int, int>> no_mask;
    const std::vector<std::pair<int, int>> full_mask = {{1, total}};
    for (const std::string& v : variants) {
      if (v == "on") run_variant("on", true, no_mask);
      else if (v == "off") run_variant("off", false, full_mask);
      else {
        run_variant("unmasked", true, no_mask);
        for (const auto& m : stage_masks)
          run_variant("mask_" + std::to_string(m.first) + "_" +
                          std::to_string(m.second),
                      true, {m});
      }
    }
  }

  // Summary rows: mean F1 per variant across seeds.
  for (const auto& [variant, f1s] : f1_by_variant) {
    EvalReport r;
    for (double f : f1s) r.f1 += f;
    r.f1 /= static_cast<double>(f1s.size());
    rows.push_back(AblateRow{"summary", variant, 0, r});
  }

  std::vector<std::vector<std::string>> csv_rows;
  for (const AblateRow& r : rows)
    csv_rows.push_back({r.row_type, r.variant, std::to_string(r.seed),
                        fmt(r.report.acc), fmt(r.report.comp),
                        fmt(r.report.cd), fmt(r.report.prec),
                        fmt(r.report.recall), fmt(r.report.f1)});
  write_csv(opt.out_dir + "/ablate.csv",
            {"row_type", "variant", "seed", "acc", "comp", "cd", "prec",
             "recall", "f1"},
            csv_rows);

  std::vector<std::string> inputs = {opt.data_dir + "/manifest.csv"};
  if (!opt.config_path.empty()) inputs.push_back(opt.config_path);
  std::ostringstream vs;
  for (const std::string& v : variants) vs << v << " ";
  write_provenance(opt.out_dir, "ablate",
                   {{"variants", vs.str()},
                    {"seeds", std::to_string(opt.n_seeds)},
                    {"base_seed", std::to_string(opt.base_seed)}},
                   inputs);
  return rows;
}

void cmd_traj(const TrajOptions& opt) {
  if (opt.capture_every < 1)
    throw ConfigError("traj requires capture-every >= 1");
  const Checkpoint ck = load_checkpoint(opt.ckpt_path);
  const DiffusionSchedule sched = ck.schedule();
  const PointCloud partial = read_cloud(opt.input_path);
  fs::create_directories(opt.out_dir);

  SamplerConfig scfg;
  scfg.n_points = opt.n_points;
  scfg.extract_tau = std::min(0.05, ck.clamp);
  scfg.seed = opt.seed;
  scfg.capture_every = opt.capture_every;
  const SampleResult res = sample(ck.params, partial, sched, scfg, ck.clamp);
  export_trajectory(res.trajectory, opt.out_dir);
  write_provenance(opt.out_dir, "traj",
                   {{"capture_every", std::to_string(opt.capture_every)},
                    {"seed", std::to_string(opt.seed)},
                    {"n_points", std::to_string(opt.n_points)}},
                   {opt.ckpt_path, opt.input_path});
}

}  // namespace ipd
