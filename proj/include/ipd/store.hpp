#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ipd/geometry.hpp"
#include "ipd/net.hpp"
#include "ipd/sampler.hpp"
#include "ipd/train.hpp"

namespace ipd {

// Cloud files ("IPC1"): u32-LE point count, u8 flags (bit 0 = normals),
// then n x 3 (or n x 6) 32-bit LE floats. Checkpoints ("IPK1"): u32-LE
// entry count; per entry a length-prefixed name, u32 rank, rank u32 dims
// and a 64-bit LE float payload; an 8-byte LE length check trails the
// file. Writers go through a temp file and rename.

void write_cloud(const std::string& path, const PointCloud& cloud);
PointCloud read_cloud(const std::string& path);

void save_checkpoint(const std::string& path, const NetParams& params,
                     const DiffusionSchedule& sched, double clamp);

struct Checkpoint {
  NetParams params;
  int schedule_steps;
  double beta_start;
  double beta_end;
  double clamp;

  DiffusionSchedule schedule() const {
    return make_schedule(schedule_steps, beta_start, beta_end);
  }
};

Checkpoint load_checkpoint(const std::string& path);
/// Loads and verifies the embedded configuration against an expected one;
/// throws IncompatibleCheckpointError on mismatch.
Checkpoint load_checkpoint(const std::string& path, const NetConfig& expected);

/// Everything a run needs, parsed from `key = value` lines. Unknown keys
/// and unparsable values are ConfigErrors carrying the line number.
/// An empty file yields the defaults (lambda 1.0, T 1000, rho 0.1,
/// clamp 0.5, ...).
struct RunConfig {
  NetConfig net;
  TrainConfig train;
  SamplerConfig sampler;
  int schedule_steps = 1000;
  double beta_start = 1e-4;
  double beta_end = 0.02;
  double rho = 0.1;

  DiffusionSchedule schedule() const {
    return make_schedule(schedule_steps, beta_start, beta_end);
  }
};

RunConfig parse_config(const std::string& text);
RunConfig read_config(const std::string& path);

// Minimal RFC-4180-style CSV support (header row + quoted fields where
// needed).
std::string csv_escape(const std::string& field);
void write_csv(const std::string& path,
               const std::vector<std::string>& header,
               const std::vector<std::vector<std::string>>& rows);
std::vector<std::vector<std::string>> read_csv(const std::string& path);

/// Git-style content hash (SHA-1 over "blob <len>\0" + bytes), hex-encoded.
std::string git_blob_sha1(const std::string& bytes);
std::string file_sha1(const std::string& path);  // hash of file contents

std::string read_file_bytes(const std::string& path);
void write_file_atomic(const std::string& path, const std::string& bytes);

}  // namespace ipd
