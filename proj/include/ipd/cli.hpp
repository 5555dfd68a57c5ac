#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ipd/metrics.hpp"
#include "ipd/sampler.hpp"
#include "ipd/store.hpp"
#include "ipd/train.hpp"

namespace ipd {

// Command implementations behind the CLI front end, kept in the library so
// they are directly testable.

struct GenDataOptions {
  std::string out_dir;
  int n_shapes = 10;
  std::vector<ShapeFamily> families;  // empty means all five
  std::size_t points = 2048;
  std::uint64_t seed = 0;
};

/// Writes gt_<id>.ipc / partial_<id>.ipc pairs plus manifest.csv and a
/// provenance block. Byte-identical for a fixed seed.
void cmd_gen_data(const GenDataOptions& opt);

/// Loads a dataset directory produced by cmd_gen_data.
Dataset load_dataset(const std::string& dir);

struct TrainOptions {
  std::string data_dir;
  std::string config_path;  // empty = defaults
  std::string out_dir;
  int steps_override = -1;  // -1 keeps the config value
};

/// Trains and writes checkpoint.ipk, periodic checkpoint_step_<n>.ipk
/// snapshots, train_log.csv and provenance. On a numeric error the last
/// good checkpoint is (re)written before the error propagates.
void cmd_train(const TrainOptions& opt);

struct SampleOptions {
  std::string ckpt_path;
  std::string input_path;  // partial cloud, world frame
  std::string out_dir;
  double tau = 0.05;
  std::vector<std::pair<int, int>> masks;
  std::uint64_t seed = 0;
  std::size_t n_points = 2048;
  int capture_every = 0;
};

struct SampleSummary {
  bool extraction_empty = false;
  std::size_t n_extracted = 0;
};

/// Writes raw.ipc, extracted.ipc (unless extraction is empty, which is a
/// warning only), nu.csv, the optional trajectory and provenance.
SampleSummary cmd_sample(const SampleOptions& opt);

struct EvalOptions {
  // single-pair mode
  std::string pred_path;
  std::string gt_path;
  // batch mode over a dataset manifest
  std::string data_dir;
  std::string pred_dir;  // expects <pred_dir>/<instance_id>.ipc
  double rho = 0.1;
  std::string out_csv;  // empty = no CSV
};

/// Evaluates in the GT cloud's normalized frame; returns per-pair reports
/// (batch mode appends nothing; the CSV gets a mean row automatically).
std::vector<EvalReport> cmd_eval(const EvalOptions& opt);

struct AblateOptions {
  std::string data_dir;
  std::string config_path;
  std::string out_dir;
  std::vector<std::string> variants;  // subset of {"on", "off", "stages"}
  int n_seeds = 5;
  std::uint64_t base_seed = 0;
};

struct AblateRow {
  std::string row_type;  // "result" or "summary"
  std::string variant;
  std::uint64_t seed = 0;
  EvalReport report;
};

/// Trains/evaluates the requested variant grid with paired seeds and
/// writes ablate.csv. "stages" adds the four quarter-interval inference
/// masks plus the unmasked baseline on the self-conditioned model.
std::vector<AblateRow> cmd_ablate(const AblateOptions& opt);

struct TrajOptions {
  std::string ckpt_path;
  std::string input_path;
  std::string out_dir;
  int capture_every = 250;
  std::uint64_t seed = 0;
  std::size_t n_points = 2048;
};

/// Runs sampling with trajectory capture and exports the snapshot files.
void cmd_traj(const TrajOptions& opt);

/// Writes provenance.txt: a config/flag dump plus git-style content hashes
/// of the named input files.
void write_provenance(const std::string& out_dir, const std::string& command,
                      const std::vector<std::pair<std::string, std::string>>& settings,
                      const std::vector<std::string>& input_files);

}  // namespace ipd
