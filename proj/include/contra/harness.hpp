#pragma once

// Experiment front-end shared by the CLI and the acceptance suite. Each
// training run owns `<out>/<run-id>/` containing config.toml, manifest.json,
// metrics.jsonl, ckpt-best.json and ckpt-final.json.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "contra/datasets.hpp"
#include "contra/training.hpp"

namespace contra::harness {

namespace fs = std::filesystem;

enum ExitCode : int { kOk = 0, kConfigError = 2, kNumericAbort = 3, kPartialFailure = 4 };

// CONTRA_OUT when set, otherwise `fallback`.
fs::path output_root(const std::optional<fs::path>& flag, const fs::path& fallback = "runs");

// SHA-1 over "blob <len>\0<content>", as git hashes objects.
std::string git_blob_hash(const std::string& content);

struct DataSpec {
  std::string kind = "gmm";  // gmm | rings
  std::size_t classes = 8;
  std::size_t n_per_class = 500;
  std::uint64_t seed = 1;
  double radius = 0.8;
  double sigma = 0.05;
};

data::DatasetPair make_dataset(const DataSpec& spec);

struct GenDataOptions {
  DataSpec data;
  fs::path out = "data";
  bool force = false;
};

// Writes `<out>/<kind>_c<C>_n<n>_s<seed>_{train,val}.csv` and returns both paths.
std::vector<fs::path> cmd_gen_data(const GenDataOptions& opts);

struct RunPaths {
  fs::path dir;
  fs::path config;
  fs::path manifest;
  fs::path metrics;
  fs::path ckpt_best;
  fs::path ckpt_final;
};

RunPaths run_paths(const fs::path& root, const std::string& run_id);

struct RunOutcome {
  std::string run_id;
  RunPaths paths;
  std::string status;  // complete | failed
  std::string error;
  int exit_code = kOk;
  double best_class_frechet = 0.0;
  double final_class_frechet = 0.0;
  std::int64_t best_iteration = 0;
  std::vector<eval::HistoryRecord> history;
};

// Trains one configuration into its run directory. The manifest is written
// before training starts and updated with the final status. Existing run
// directories are rejected unless `force`.
RunOutcome execute_run(const train::TrainConfig& config, const data::DatasetPair& data, const fs::path& root,
                       const std::string& run_id, bool force);

// Default id: <loss>-s<seed>-<first 8 hex of the config hash>.
std::string default_run_id(const train::TrainConfig& config);

struct AblateOptions {
  train::TrainConfig base;
  std::vector<std::string> losses;
  std::vector<std::uint64_t> seeds = {0, 1, 2};
  std::vector<std::size_t> batch_sizes;  // empty: base batch size
  std::vector<double> cr_coefficients;   // empty: base CR setting; 0 disables CR
  DataSpec data;
  fs::path out;
  std::string name = "ablation";
  unsigned jobs = 1;
  bool force = false;
};

struct AblationCell {
  std::string loss;
  std::size_t batch_size = 0;
  double cr_coefficient = 0.0;
  std::uint64_t seed = 0;
  RunOutcome outcome;
};

struct AblationRow {
  std::string loss;
  std::size_t batch_size = 0;
  double cr_coefficient = 0.0;
  double mean = 0.0;
  double stddev = 0.0;
  std::size_t completed = 0;
  std::size_t failed = 0;
};

struct AblationReport {
  std::vector<AblationCell> cells;
  std::vector<AblationRow> rows;
  std::string summary;  // ordering line naming the best row
  int exit_code = kOk;
};

// Trains {loss} × {batch} × {cr} × {seed} and writes runs.csv (one line per
// run), table.csv and table.json (mean ± std of best class Fréchet per
// {loss, batch, cr}) under <out>/<name>/.
AblationReport cmd_ablate(const AblateOptions& opts, std::ostream& log);

struct SweepOptions {
  train::TrainConfig base;
  std::string param;               // temperature | proj_dim | proj_type | batch
  std::vector<std::string> values; // empty: default grid for the parameter
  std::vector<std::uint64_t> seeds = {0, 1, 2};
  DataSpec data;
  fs::path out;
  std::string name = "sweep";
  unsigned jobs = 1;
  bool force = false;
};

struct SweepRow {
  std::string value;
  double mean = 0.0;
  double stddev = 0.0;
  std::size_t completed = 0;
  std::size_t failed = 0;
};

struct SweepReport {
  std::vector<SweepRow> rows;
  std::size_t runs = 0;
  int exit_code = kOk;
};

std::vector<std::string> default_sweep_values(const std::string& param);
// Emits <out>/<name>/sweep.jsonl with one {param, value, mean, std, n, failed} object per value.
SweepReport cmd_sweep(const SweepOptions& opts, std::ostream& log);

struct GradCheckEntry {
  std::string op;
  double max_rel_error = 0.0;
  bool passed = false;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  bool passed = false;
};

inline constexpr double kGradCheckTolerance = 1e-4;

// Finite-difference checks of every loss and both networks, `seeds` random
// draws each. `inject_sign_flip` adds a deliberately wrong gradient rule so the
// harness can prove it catches one.
GradCheckReport cmd_gradcheck(std::size_t seeds, bool inject_sign_flip, std::ostream& log);

double mean_of(const std::vector<double>& v);
double stddev_of(const std::vector<double>& v);

}  // namespace contra::harness
