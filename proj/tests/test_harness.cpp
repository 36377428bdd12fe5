#include <gtest/gtest.h>

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "contra/config_toml.hpp"
#include "contra/errors.hpp"
#include "contra/harness.hpp"

namespace H = contra::harness;
namespace T = contra::train;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("contra_harness_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

T::TrainConfig quick() {
  T::TrainConfig c;
  c.batch_size = 16;
  c.n_dis = 1;
  c.g_hidden = {16};
  c.d_trunk = {16};
  c.iterations = 6;
  c.eval_interval = 3;
  c.eval_per_class = 16;
  return c;
}

H::DataSpec small_data() {
  H::DataSpec d;
  d.classes = 3;
  d.n_per_class = 30;
  return d;
}

}  // namespace

TEST(Toml, RoundTripAndOverrides) {
  auto c = quick();
  c.loss = contra::models::ConditioningMode::projgan;
  c.cr.enabled = true;
  c.cr.coefficient = 2.5;
  c.ema.start = 17;
  c.d_trunk = {8, 12};
  c.temperature = 0.25;
  c.proj_type = contra::models::ProjectionType::mlp;
  const auto back = contra::config::from_toml(contra::config::to_toml(c));
  EXPECT_EQ(T::to_json(back).dump(), T::to_json(c).dump());

  const auto f = contra::config::from_toml("preset = \"F\"\nn_dis = 3 # override\n[cr]\nenabled = true\n");
  EXPECT_EQ(f.lr_d, 4e-4);
  EXPECT_EQ(f.n_dis, 3);
  EXPECT_TRUE(f.cr.enabled);
  EXPECT_THROW(contra::config::from_toml("bogus = 1\n"), contra::ConfigError);
  EXPECT_THROW(contra::config::from_toml("loss = \"fancy\"\n"), contra::ConfigError);
}

TEST(Hash, GitBlobIds) {
  EXPECT_EQ(H::git_blob_hash(""), "e69de29bb2d1d6434b8b29ae775ad8c2e48c5391");
  EXPECT_EQ(H::git_blob_hash("hello\n"), "ce013625030ba8dba906f756967f9e9ca394464a");
}

TEST(OutputRoot, FlagThenEnvironmentThenFallback) {
  ::unsetenv("CONTRA_OUT");
  EXPECT_EQ(H::output_root(std::nullopt), fs::path("runs"));
  ::setenv("CONTRA_OUT", "/tmp/elsewhere", 1);
  EXPECT_EQ(H::output_root(std::nullopt), fs::path("/tmp/elsewhere"));
  EXPECT_EQ(H::output_root(fs::path("mine")), fs::path("mine"));
  ::unsetenv("CONTRA_OUT");
}

TEST(GenData, WritesTwoFilesAndRefusesOverwrite) {
  const auto dir = scratch("gendata");
  H::GenDataOptions o;
  o.out = dir;
  const auto paths = H::cmd_gen_data(o);
  ASSERT_EQ(paths.size(), 2U);
  EXPECT_EQ(paths[0].filename(), "gmm_c8_n500_s1_train.csv");
  EXPECT_EQ(paths[1].filename(), "gmm_c8_n500_s1_val.csv");
  const auto first = slurp(paths[0]);
  EXPECT_THROW(H::cmd_gen_data(o), contra::ConfigError);
  o.force = true;
  H::cmd_gen_data(o);
  EXPECT_EQ(slurp(paths[0]), first);
}

TEST(ExecuteRun, WritesAllArtifacts) {
  const auto root = scratch("run");
  const auto data = H::make_dataset(small_data());
  const auto out = H::execute_run(quick(), data, root, "r1", false);
  EXPECT_EQ(out.status, "complete");
  EXPECT_EQ(out.exit_code, H::kOk);
  for (const auto& p : {out.paths.config, out.paths.manifest, out.paths.metrics, out.paths.ckpt_best, out.paths.ckpt_final})
    EXPECT_TRUE(fs::exists(p)) << p;
  const auto manifest = nlohmann::json::parse(slurp(out.paths.manifest));
  EXPECT_EQ(manifest["status"], "complete");
  EXPECT_EQ(manifest["run_id"], "r1");
  std::ifstream metrics(out.paths.metrics);
  std::string line;
  int lines = 0;
  while (std::getline(metrics, line)) {
    EXPECT_TRUE(nlohmann::json::accept(line)) << line;
    ++lines;
  }
  EXPECT_EQ(lines, 2);
  EXPECT_EQ(contra::config::from_toml(slurp(out.paths.config)).iterations, 6);
  EXPECT_THROW(H::execute_run(quick(), data, root, "r1", false), contra::ConfigError);
  EXPECT_NO_THROW(H::execute_run(quick(), data, root, "r1", true));
}

TEST(ExecuteRun, MetricsAreByteIdenticalAcrossRuns) {
  const auto root = scratch("determinism");
  const auto data = H::make_dataset(small_data());
  const auto a = H::execute_run(quick(), data, root, "a", false);
  const auto b = H::execute_run(quick(), data, root, "b", false);
  EXPECT_EQ(slurp(a.paths.metrics), slurp(b.paths.metrics));
  EXPECT_FALSE(slurp(a.paths.metrics).empty());
}

TEST(RunId, DependsOnConfig) {
  auto a = quick();
  auto b = quick();
  EXPECT_EQ(H::default_run_id(a), H::default_run_id(b));
  b.temperature = 0.5;
  EXPECT_NE(H::default_run_id(a), H::default_run_id(b));
  EXPECT_EQ(H::default_run_id(a).rfind("2c-s0-", 0), 0U);
}

TEST(Ablate, GridShapeAndSummary) {
  H::AblateOptions o;
  o.base = quick();
  o.losses = {"none", "2c"};
  o.data = small_data();
  o.out = scratch("ablate");
  o.jobs = 2;
  std::ostringstream log;
  const auto r = H::cmd_ablate(o, log);
  EXPECT_EQ(r.exit_code, H::kOk);
  EXPECT_EQ(r.cells.size(), 6U);
  ASSERT_EQ(r.rows.size(), 2U);
  for (const auto& row : r.rows) EXPECT_EQ(row.completed, 3U);
  EXPECT_NE(r.summary.find("best:"), std::string::npos);
  std::ifstream runs(o.out / "ablation" / "runs.csv");
  std::string line;
  int n = 0;
  while (std::getline(runs, line)) ++n;
  EXPECT_EQ(n, 7);
  EXPECT_TRUE(fs::exists(o.out / "ablation" / "table.csv"));
  EXPECT_TRUE(fs::exists(o.out / "ablation" / "table.json"));
}

TEST(Ablate, IdenticalConfigsGiveIdenticalCells) {
  H::AblateOptions o;
  o.base = quick();
  o.losses = {"none", "2c"};
  o.seeds = {4};
  o.data = small_data();
  std::ostringstream log;
  o.out = scratch("ablate_same_a");
  const auto a = H::cmd_ablate(o, log);
  o.out = scratch("ablate_same_b");
  const auto b = H::cmd_ablate(o, log);
  ASSERT_EQ(a.cells.size(), b.cells.size());
  for (std::size_t i = 0; i < a.cells.size(); ++i)
    EXPECT_EQ(a.cells[i].outcome.best_class_frechet, b.cells[i].outcome.best_class_frechet);
}

TEST(Ablate, RejectsTooFewLosses) {
  H::AblateOptions o;
  o.base = quick();
  o.losses = {"2c"};
  o.out = scratch("ablate_bad");
  std::ostringstream log;
  EXPECT_THROW(H::cmd_ablate(o, log), contra::ConfigError);
}

TEST(Sweep, DefaultGridsAndAggregation) {
  const auto t = H::default_sweep_values("temperature");
  EXPECT_NE(std::find(t.begin(), t.end(), "1.0"), t.end());
  const auto p = H::default_sweep_values("proj_type");
  EXPECT_NE(std::find(p.begin(), p.end(), "linear"), p.end());
  EXPECT_NE(std::find(p.begin(), p.end(), "mlp"), p.end());
  EXPECT_THROW(H::default_sweep_values("learning_rate"), contra::ConfigError);

  H::SweepOptions o;
  o.base = quick();
  o.param = "temperature";
  o.values = {"0.5", "1.0", "2.0"};
  o.data = small_data();
  o.out = scratch("sweep");
  o.jobs = 2;
  std::ostringstream log;
  const auto r = H::cmd_sweep(o, log);
  EXPECT_EQ(r.runs, 9U);
  ASSERT_EQ(r.rows.size(), 3U);
  std::ifstream in(o.out / "sweep" / "sweep.jsonl");
  std::string line;
  int n = 0;
  while (std::getline(in, line)) {
    const auto j = nlohmann::json::parse(line);
    EXPECT_EQ(j["param"], "temperature");
    EXPECT_EQ(j["n"], 3);
    ++n;
  }
  EXPECT_EQ(n, 3);
}

TEST(GradCheck, PassesAndCatchesSignFlip) {
  std::ostringstream log;
  const auto ok = H::cmd_gradcheck(2, false, log);
  EXPECT_TRUE(ok.passed) << log.str();
  EXPECT_GE(ok.entries.size(), 8U);
  const auto flipped = H::cmd_gradcheck(1, true, log);
  EXPECT_FALSE(flipped.passed);
}

TEST(Stats, MeanAndSampleStddev) {
  EXPECT_DOUBLE_EQ(H::mean_of({1, 2, 3}), 2.0);
  EXPECT_DOUBLE_EQ(H::stddev_of({1, 2, 3}), 1.0);
  EXPECT_DOUBLE_EQ(H::stddev_of({5}), 0.0);
}
