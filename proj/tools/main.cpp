#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "ipd/cli.hpp"

namespace {

std::pair<int, int> parse_mask(const std::string& s) {
  const std::size_t colon = s.find(':');
  if (colon == std::string::npos)
    throw ipd::ConfigError("mask must look like a:b, got '" + s + "'");
  try {
    const int a = std::stoi(s.substr(0, colon));
    const int b = std::stoi(s.substr(colon + 1));
    if (a > b) throw ipd::ConfigError("mask bounds reversed in '" + s + "'");
    return {a, b};
  } catch (const std::invalid_argument&) {
    throw ipd::ConfigError("mask must look like a:b, got '" + s + "'");
  } catch (const std::out_of_range&) {
    throw ipd::ConfigError("mask bounds out of range in '" + s + "'");
  }
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (c == ',') {
      if (!cur.empty()) out.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  if (!cur.empty()) out.push_back(cur);
  return out;
}

void print_reports(const std::vector<ipd::EvalReport>& reports) {
  std::cout << "label                acc    comp      cd    prec   recall"
               "      f1\n";
  ipd::EvalReport mean;
  for (std::size_t i = 0; i < reports.size(); ++i) {
    std::cout << ipd::format_report_row("pair_" + std::to_string(i),
                                        reports[i])
              << "\n";
    mean.acc += reports[i].acc;
    mean.comp += reports[i].comp;
    mean.cd += reports[i].cd;
    mean.prec += reports[i].prec;
    mean.recall += reports[i].recall;
    mean.f1 += reports[i].f1;
  }
  if (reports.size() > 1) {
    const double n = static_cast<double>(reports.size());
    mean.acc /= n; mean.comp /= n; mean.cd /= n;
    mean.prec /= n; mean.recall /= n; mean.f1 /= n;
    std::cout << ipd::format_report_row("mean", mean) << "\n";
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"conditional point-cloud diffusion with UDF self-conditioning"};
  app.require_subcommand(1);

  ipd::GenDataOptions gen_opt;
  std::string gen_families;
  auto* gen = app.add_subcommand("gen-data", "generate a synthetic dataset");
  gen->add_option("--out", gen_opt.out_dir, "output directory")->required();
  gen->add_option("--n-shapes", gen_opt.n_shapes, "number of instances");
  gen->add_option("--families", gen_families, "comma list of shape families");
  gen->add_option("--points", gen_opt.points, "points per ground-truth cloud");
  gen->add_option("--seed", gen_opt.seed, "master seed");

  ipd::TrainOptions train_opt;
  auto* train = app.add_subcommand("train", "train a model on a dataset");
  train->add_option("--data", train_opt.data_dir, "dataset directory")->required();
  train->add_option("--config", train_opt.config_path, "config file");
  train->add_option("--out", train_opt.out_dir, "output directory")->required();
  train->add_option("--steps", train_opt.steps_override,
                    "override step count (-1 keeps config)");

  ipd::SampleOptions sample_opt;
  std::vector<std::string> sample_masks;
  auto* sample =
      app.add_subcommand("sample", "denoise a cloud from a partial view");
  sample->add_option("--ckpt", sample_opt.ckpt_path, "checkpoint file")->required();
  sample->add_option("--input", sample_opt.input_path, "partial-view cloud file")
      ->required();
  sample->add_option("--out", sample_opt.out_dir, "output directory")->required();
  sample->add_option("--tau", sample_opt.tau, "UDF extraction threshold");
  sample->add_option("--mask", sample_masks,
                     "self-conditioning mask interval a:b (repeatable)");
  sample->add_option("--seed", sample_opt.seed, "sampling seed");
  sample->add_option("--points", sample_opt.n_points, "number of diffusion points");
  sample->add_option("--capture-every", sample_opt.capture_every,
                     "trajectory capture stride (0 = off)");

  ipd::EvalOptions eval_opt;
  auto* eval =
      app.add_subcommand("eval", "evaluate predictions against ground truth");
  eval->add_option("--pred", eval_opt.pred_path, "predicted cloud file");
  eval->add_option("--gt", eval_opt.gt_path, "ground-truth cloud file");
  eval->add_option("--data", eval_opt.data_dir, "dataset directory (batch mode)");
  eval->add_option("--pred-dir", eval_opt.pred_dir,
                   "directory of <instance_id>.ipc predictions");
  eval->add_option("--rho", eval_opt.rho, "distance threshold");
  eval->add_option("--out", eval_opt.out_csv, "CSV output path");

  ipd::AblateOptions ablate_opt;
  std::string ablate_variants = "on,off";
  auto* ablate =
      app.add_subcommand("ablate", "run the variant comparison grid");
  ablate->add_option("--data", ablate_opt.data_dir, "dataset directory")->required();
  ablate->add_option("--config", ablate_opt.config_path, "config file");
  ablate->add_option("--out", ablate_opt.out_dir, "output directory")->required();
  ablate->add_option("--variants", ablate_variants,
                     "comma list from {on, off, stages}");
  ablate->add_option("--seeds", ablate_opt.n_seeds, "number of paired seeds");
  ablate->add_option("--seed", ablate_opt.base_seed, "base seed");

  ipd::TrajOptions traj_opt;
  auto* traj = app.add_subcommand("traj", "export a denoising trajectory");
  traj->add_option("--ckpt", traj_opt.ckpt_path, "checkpoint file")->required();
  traj->add_option("--input", traj_opt.input_path, "partial-view cloud file")
      ->required();
  traj->add_option("--out", traj_opt.out_dir, "output directory")->required();
  traj->add_option("--capture-every", traj_opt.capture_every, "capture stride");
  traj->add_option("--seed", traj_opt.seed, "sampling seed");
  traj->add_option("--points", traj_opt.n_points, "number of diffusion points");

  try {
    app.parse(argc, argv);

    if (gen->parsed()) {
      for (const std::string& f : split_list(gen_families))
        gen_opt.families.push_back(ipd::family_from_name(f));
      ipd::cmd_gen_data(gen_opt);
      std::cout << "wrote " << gen_opt.n_shapes << " instances to "
                << gen_opt.out_dir << "\n";
    } else if (train->parsed()) {
      ipd::cmd_train(train_opt);
      std::cout << "checkpoint written to " << train_opt.out_dir
                << "/checkpoint.ipk\n";
    } else if (sample->parsed()) {
      for (const std::string& m : sample_masks)
        sample_opt.masks.push_back(parse_mask(m));
      const ipd::SampleSummary s = ipd::cmd_sample(sample_opt);
      if (!s.extraction_empty)
        std::cout << "extracted " << s.n_extracted << " points\n";
    } else if (eval->parsed()) {
      if (eval_opt.pred_path.empty() == eval_opt.data_dir.empty())
        throw ipd::ConfigError(
            "eval needs either --pred/--gt or --data/--pred-dir");
      print_reports(ipd::cmd_eval(eval_opt));
    } else if (ablate->parsed()) {
      ablate_opt.variants = split_list(ablate_variants);
      const auto rows = ipd::cmd_ablate(ablate_opt);
      for (const auto& r : rows)
        if (r.row_type == "summary")
          std::cout << "variant " << r.variant << " mean F1 " << r.report.f1
                    << "\n";
    } else if (traj->parsed()) {
      ipd::cmd_traj(traj_opt);
      std::cout << "trajectory written to " << traj_opt.out_dir << "\n";
    }
    return 0;
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 1;
  } catch (const ipd::NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return 2;
  } catch (const ipd::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
