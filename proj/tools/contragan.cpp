// contragan: command-line front-end for data generation, training, ablation
// grids, hyperparameter sweeps and gradient checks.

#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "contra/config_toml.hpp"
#include "contra/errors.hpp"
#include "contra/harness.hpp"

namespace {

using namespace contra;
namespace fs = std::filesystem;

struct TrainFlags {
  std::optional<std::string> config_file;
  std::optional<std::string> preset;
  std::optional<std::string> loss;
  std::optional<std::string> adv_loss;
  std::optional<double> lambda;
  std::optional<double> temperature;
  std::optional<std::size_t> batch;
  std::optional<long long> iterations;
  std::optional<int> n_dis;
  std::optional<std::uint64_t> seed;
  std::optional<double> cr;
  std::optional<double> cr_jitter;
  std::optional<std::size_t> proj_dim;
  std::optional<std::string> proj_type;
  std::optional<long long> eval_interval;
  std::optional<long long> ema_start;
  std::optional<double> lr_d;
  std::optional<double> lr_g;
  bool no_sn = false;
  bool log_wallclock = false;

  void add_to(CLI::App& app) {
    app.add_option("--config", config_file, "TOML config file (fields mirror the training config)");
    app.add_option("--preset", preset, "Hyperparameter preset A-F (default E)");
    app.add_option("--loss", loss, "Conditioning: none, acgan, projgan, ntxent, pnca, eq7, 2c, 2c-aps");
    app.add_option("--adv-loss", adv_loss, "Adversarial loss: hinge (default) or alg1_literal");
    app.add_option("--lambda", lambda, "Conditioning loss coefficient (default 1.0)");
    app.add_option("--t,--temperature", temperature, "Contrastive temperature (default 1.0)");
    app.add_option("--batch", batch, "Batch size m (default 64)");
    app.add_option("--iterations", iterations, "Generator iterations (default 5000)");
    app.add_option("--n-dis", n_dis, "Discriminator steps per generator step");
    app.add_option("--seed", seed, "Training seed");
    app.add_option("--cr", cr, "Enable consistency regularization with this coefficient");
    app.add_option("--cr-jitter", cr_jitter, "Consistency-regularization jitter sigma");
    app.add_option("--proj-dim", proj_dim, "Projection head output dimension");
    app.add_option("--proj-type", proj_type, "Projection head: linear or mlp");
    app.add_option("--eval-interval", eval_interval, "Generator iterations between evaluations");
    app.add_option("--ema-start", ema_start, "Generator iteration at which EMA blending starts");
    app.add_option("--lr-d", lr_d, "Discriminator learning rate (overrides preset)");
    app.add_option("--lr-g", lr_g, "Generator learning rate (overrides preset)");
    app.add_flag("--no-sn", no_sn, "Disable spectral normalization in both networks");
    app.add_flag("--log-wallclock", log_wallclock, "Add elapsed seconds to metrics records");
  }

  train::TrainConfig build() const {
    train::TrainConfig c;
    if (config_file) {
      std::ifstream in(*config_file);
      if (!in) throw ConfigError("cannot read config file " + *config_file);
      std::stringstream ss;
      ss << in.rdbuf();
      c = config::from_toml(ss.str());
    }
    if (preset) c = train::apply_preset(c, *preset);
    if (loss) c.loss = models::parse_mode(*loss);
    if (adv_loss) c.adv_loss = train::parse_adv_loss(*adv_loss);
    if (lambda) c.lambda = *lambda;
    if (temperature) c.temperature = *temperature;
    if (batch) c.batch_size = *batch;
    if (iterations) c.iterations = *iterations;
    if (n_dis) c.n_dis = *n_dis;
    if (seed) c.seed = *seed;
    if (cr) {
      c.cr.enabled = *cr > 0.0;
      c.cr.coefficient = *cr;
    }
    if (cr_jitter) c.cr.jitter_sigma = *cr_jitter;
    if (proj_dim) c.proj_dim = *proj_dim;
    if (proj_type) c.proj_type = models::parse_projection_type(*proj_type);
    if (eval_interval) c.eval_interval = *eval_interval;
    if (ema_start) c.ema.start = *ema_start;
    if (lr_d) c.lr_d = *lr_d;
    if (lr_g) c.lr_g = *lr_g;
    if (no_sn) c.d_spectral = c.g_spectral = false;
    if (log_wallclock) c.log_wallclock = true;
    c.validate();
    return c;
  }
};

void add_data_flags(CLI::App& app, harness::DataSpec& d) {
  app.add_option("--kind", d.kind, "Dataset: gmm or rings")->capture_default_str();
  app.add_option("--classes", d.classes, "Number of classes")->capture_default_str();
  app.add_option("--n", d.n_per_class, "Samples per class (90/10 train/val split)")->capture_default_str();
  app.add_option("--data-seed", d.seed, "Dataset seed")->capture_default_str();
  app.add_option("--radius", d.radius, "GMM ring radius")->capture_default_str();
  app.add_option("--sigma", d.sigma, "GMM per-class standard deviation")->capture_default_str();
}

int run(int argc, char** argv) {
  CLI::App app{"Conditional contrastive GAN laboratory on synthetic 2-D data"};
  app.require_subcommand(1);
  std::optional<std::string> out_flag;

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "Generate a labeled synthetic dataset as train/val CSV files");
  harness::GenDataOptions gen_opts;
  add_data_flags(*gen, gen_opts.data);
  gen->add_option("--seed", gen_opts.data.seed, "Dataset seed");
  std::string gen_out = "data";
  gen->add_option("--out", gen_out, "Output directory")->capture_default_str();
  gen->add_flag("--force", gen_opts.force, "Overwrite existing files");

  // train
  auto* tr = app.add_subcommand("train", "Train one configuration");
  TrainFlags train_flags;
  train_flags.add_to(*tr);
  harness::DataSpec train_data;
  add_data_flags(*tr, train_data);
  std::optional<std::string> train_csv, val_csv, run_id;
  bool train_force = false;
  tr->add_option("--train", train_csv, "Training CSV (instead of generating data)");
  tr->add_option("--val", val_csv, "Validation CSV");
  tr->add_option("--out", out_flag, "Output root (default $CONTRA_OUT or ./runs)");
  tr->add_option("--run-id", run_id, "Run directory name (default <loss>-s<seed>-<hash>)");
  tr->add_flag("--force", train_force, "Replace an existing run directory");

  // ablate
  auto* ab = app.add_subcommand("ablate", "Train a {loss} x {batch} x {cr} x {seed} grid and tabulate");
  ab->footer(
      "Outputs under <out>/<name>/:\n"
      "  runs.csv   loss,batch_size,cr,seed,status,best_class_frechet,best_iteration,final_class_frechet\n"
      "  table.csv  loss,batch_size,cr,mean,std,completed,failed\n"
      "  table.json {rows: [...same columns...], summary}");
  TrainFlags ab_flags;
  ab_flags.add_to(*ab);
  harness::AblateOptions ab_opts;
  add_data_flags(*ab, ab_opts.data);
  std::vector<std::string> ab_losses = {"none", "acgan", "projgan", "eq7", "2c"};
  ab->add_option("--losses", ab_losses, "Loss variants")->capture_default_str();
  ab->add_option("--seeds", ab_opts.seeds, "Seeds")->capture_default_str();
  ab->add_option("--batches", ab_opts.batch_sizes, "Batch sizes (default: --batch)");
  ab->add_option("--cr-values", ab_opts.cr_coefficients, "CR coefficients to grid over (0 = off)");
  ab->add_option("--jobs", ab_opts.jobs, "Parallel runs")->capture_default_str();
  ab->add_option("--name", ab_opts.name, "Ablation directory name")->capture_default_str();
  ab->add_option("--out", out_flag, "Output root (default $CONTRA_OUT or ./runs)");
  ab->add_flag("--force", ab_opts.force, "Replace existing run directories");

  // sweep
  auto* sw = app.add_subcommand("sweep", "Sweep one hyperparameter across seeds");
  sw->footer(
      "Output <out>/<name>/sweep.jsonl: one object per value with fields\n"
      "  param, value, mean, std, n, failed  (metric: best mean class-conditional Frechet)\n"
      "Default grids: temperature {0.1,0.25,0.5,1.0,2.0,5.0}, proj_dim {4,8,16,32,64},\n"
      "  proj_type {linear,mlp}, batch {16,32,64,128}");
  TrainFlags sw_flags;
  sw_flags.add_to(*sw);
  harness::SweepOptions sw_opts;
  add_data_flags(*sw, sw_opts.data);
  sw->add_option("--param", sw_opts.param, "temperature, proj_dim, proj_type or batch")->required();
  sw->add_option("--values", sw_opts.values, "Values (default grid per parameter)");
  sw->add_option("--seeds", sw_opts.seeds, "Seeds")->capture_default_str();
  sw->add_option("--jobs", sw_opts.jobs, "Parallel runs")->capture_default_str();
  sw->add_option("--name", sw_opts.name, "Sweep directory name")->capture_default_str();
  sw->add_option("--out", out_flag, "Output root (default $CONTRA_OUT or ./runs)");
  sw->add_flag("--force", sw_opts.force, "Replace existing run directories");

  // gradcheck
  auto* gc = app.add_subcommand("gradcheck", "Finite-difference check of every loss and both networks");
  std::size_t gc_seeds = 10;
  bool gc_flip = false;
  gc->add_option("--seeds", gc_seeds, "Random draws per check")->capture_default_str();
  gc->add_flag("--inject-sign-flip", gc_flip, "Add a deliberately wrong gradient rule (must FAIL)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : harness::kConfigError;
  }

  const auto root = [&] {
    return harness::output_root(out_flag ? std::optional<fs::path>(*out_flag) : std::nullopt);
  };

  if (gen->parsed()) {
    gen_opts.out = gen_out;
    for (const auto& p : harness::cmd_gen_data(gen_opts)) std::cout << p.string() << '\n';
    return harness::kOk;
  }
  if (tr->parsed()) {
    const auto cfg = train_flags.build();
    data::DatasetPair pair;
    if (train_csv || val_csv) {
      if (!train_csv || !val_csv) throw ConfigError("--train and --val must be given together");
      pair.train = data::load_csv(*train_csv, data::Split::train);
      pair.val = data::load_csv(*val_csv, data::Split::val);
      pair.val.num_classes = pair.train.num_classes = std::max(pair.train.num_classes, pair.val.num_classes);
    } else {
      pair = harness::make_dataset(train_data);
    }
    const std::string id = run_id ? *run_id : harness::default_run_id(cfg);
    const auto outcome = harness::execute_run(cfg, pair, root(), id, train_force);
    std::cout << "run " << outcome.run_id << ": " << outcome.status;
    if (outcome.status == "complete") {
      std::cout << ", best class-frechet " << outcome.best_class_frechet << " at iteration " << outcome.best_iteration;
    } else {
      std::cout << " (" << outcome.error << ")";
    }
    std::cout << "\n" << outcome.paths.dir.string() << '\n';
    return outcome.exit_code;
  }
  if (ab->parsed()) {
    ab_opts.base = ab_flags.build();
    ab_opts.losses = ab_losses;
    ab_opts.out = root();
    return harness::cmd_ablate(ab_opts, std::cout).exit_code;
  }
  if (sw->parsed()) {
    sw_opts.base = sw_flags.build();
    sw_opts.out = root();
    return harness::cmd_sweep(sw_opts, std::cout).exit_code;
  }
  if (gc->parsed()) {
    return harness::cmd_gradcheck(gc_seeds, gc_flip, std::cout).passed ? harness::kOk : 1;
  }
  return harness::kOk;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const contra::ConfigError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return contra::harness::kConfigError;
  } catch (const contra::NumericError& e) {
    std::cerr << "numeric abort: " << e.what() << '\n';
    return contra::harness::kNumericAbort;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return contra::harness::kConfigError;
  }
}
