#include "contra/harness.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <array>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <iomanip>
#include <mutex>
#include <random>
#include <sstream>
#include <thread>

#include "contra/config_toml.hpp"
#include "contra/errors.hpp"
#include "contra/losses.hpp"

namespace contra::harness {

namespace {

void write_file(const fs::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << content;
}

std::string format_number(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

// Runs tasks [0, count) on up to `jobs` threads; each task is independent.
void parallel_for(std::size_t count, unsigned jobs, const std::function<void(std::size_t)>& task) {
  jobs = std::max(1U, std::min<unsigned>(jobs, static_cast<unsigned>(count)));
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> workers;
  for (unsigned w = 0; w < jobs; ++w) {
    workers.emplace_back([&] {
      for (std::size_t i = next++; i < count; i = next++) task(i);
    });
  }
  for (auto& t : workers) t.join();
}

nlohmann::json manifest_json(const std::string& run_id, const train::TrainConfig& config, const std::string& hash,
                             const RunPaths& paths, const std::string& status, const std::string& error) {
  nlohmann::json j = {{"run_id", run_id},
                      {"config", train::to_json(config)},
                      {"content_hash", hash},
                      {"outputs",
                       {{"config", paths.config.filename().string()},
                        {"metrics", paths.metrics.filename().string()},
                        {"ckpt_best", paths.ckpt_best.filename().string()},
                        {"ckpt_final", paths.ckpt_final.filename().string()}}},
                      {"status", status}};
  if (!error.empty()) j["error"] = error;
  return j;
}

}  // namespace

fs::path output_root(const std::optional<fs::path>& flag, const fs::path& fallback) {
  if (flag) return *flag;
  if (const char* env = std::getenv("CONTRA_OUT"); env && *env) return env;
  return fallback;
}

std::string git_blob_hash(const std::string& content) {
  const std::string header = "blob " + std::to_string(content.size()) + '\0';
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  EVP_DigestInit_ex(ctx, EVP_sha1(), nullptr);
  EVP_DigestUpdate(ctx, header.data(), header.size());
  EVP_DigestUpdate(ctx, content.data(), content.size());
  EVP_DigestFinal_ex(ctx, digest, &len);
  EVP_MD_CTX_free(ctx);
  std::ostringstream hex;
  for (unsigned int i = 0; i < len; ++i) hex << std::hex << std::setw(2) << std::setfill('0') << int(digest[i]);
  return hex.str();
}

data::DatasetPair make_dataset(const DataSpec& spec) {
  if (spec.kind == "gmm") {
    return data::make_gaussian_mixture(spec.classes, spec.n_per_class, spec.radius, spec.sigma, spec.seed);
  }
  if (spec.kind == "rings") return data::make_rings(spec.classes, spec.n_per_class, spec.seed);
  throw ConfigError("unknown dataset kind '" + spec.kind + "' (valid: gmm, rings)");
}

std::vector<fs::path> cmd_gen_data(const GenDataOptions& opts) {
  const auto pair = make_dataset(opts.data);
  const std::string stem = opts.data.kind + "_c" + std::to_string(opts.data.classes) + "_n" +
                           std::to_string(opts.data.n_per_class) + "_s" + std::to_string(opts.data.seed);
  const std::vector<fs::path> paths = {opts.out / (stem + "_train.csv"), opts.out / (stem + "_val.csv")};
  if (!opts.force) {
    for (const auto& p : paths) {
      if (fs::exists(p)) throw ConfigError(p.string() + " already exists (use --force to overwrite)");
    }
  }
  fs::create_directories(opts.out);
  data::save_csv(paths[0], pair.train);
  data::save_csv(paths[1], pair.val);
  return paths;
}

RunPaths run_paths(const fs::path& root, const std::string& run_id) {
  const fs::path dir = root / run_id;
  return {dir, dir / "config.toml", dir / "manifest.json", dir / "metrics.jsonl", dir / "ckpt-best.json",
          dir / "ckpt-final.json"};
}

std::string default_run_id(const train::TrainConfig& config) {
  return models::to_string(config.loss) + "-s" + std::to_string(config.seed) + "-" +
         git_blob_hash(config::to_toml(config)).substr(0, 8);
}

RunOutcome execute_run(const train::TrainConfig& config, const data::DatasetPair& data, const fs::path& root,
                       const std::string& run_id, bool force) {
  config.validate();
  RunOutcome outcome;
  outcome.run_id = run_id;
  outcome.paths = run_paths(root, run_id);
  const auto& paths = outcome.paths;
  if (fs::exists(paths.dir)) {
    if (!force) throw ConfigError("run directory " + paths.dir.string() + " already exists (use --force)");
    fs::remove_all(paths.dir);
  }
  fs::create_directories(paths.dir);

  const std::string toml = config::to_toml(config);
  const std::string hash = git_blob_hash(toml + data::to_csv(data.train) + data::to_csv(data.val));
  write_file(paths.config, toml);
  write_file(paths.manifest, manifest_json(run_id, config, hash, paths, "running", "").dump(2) + "\n");

  std::ofstream metrics(paths.metrics, std::ios::binary | std::ios::trunc);
  const auto sink = [&](const eval::HistoryRecord& r) {
    metrics << eval::to_json(r).dump() << '\n';
    metrics.flush();
  };
  try {
    auto result = train::run_training(config, data.train, data.val, sink);
    write_file(paths.ckpt_best, result.best_checkpoint.dump() + "\n");
    write_file(paths.ckpt_final, result.final_checkpoint.dump() + "\n");
    outcome.status = "complete";
    outcome.best_class_frechet = result.best_class_frechet;
    outcome.best_iteration = result.best_iteration;
    outcome.final_class_frechet = result.history.empty() ? 0.0 : result.history.back().class_frechet;
    outcome.history = std::move(result.history);
  } catch (const NumericError& e) {
    outcome.status = "failed";
    outcome.error = e.what();
    outcome.exit_code = kNumericAbort;
  } catch (const std::exception& e) {
    outcome.status = "failed";
    outcome.error = e.what();
    outcome.exit_code = kConfigError;
  }
  write_file(paths.manifest, manifest_json(run_id, config, hash, paths, outcome.status, outcome.error).dump(2) + "\n");
  return outcome;
}

double mean_of(const std::vector<double>& v) {
  if (v.empty()) return std::nan("");
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

double stddev_of(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  const double m = mean_of(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(v.size() - 1));
}

AblationReport cmd_ablate(const AblateOptions& opts, std::ostream& log) {
  if (opts.losses.size() < 2) throw ConfigError("ablate: need at least 2 loss variants");
  if (opts.seeds.empty()) throw ConfigError("ablate: need at least 1 seed");
  for (const auto& l : opts.losses) models::parse_mode(l);

  const std::vector<std::size_t> batches =
      opts.batch_sizes.empty() ? std::vector<std::size_t>{opts.base.batch_size} : opts.batch_sizes;
  const bool sweep_cr = !opts.cr_coefficients.empty();
  const std::vector<double> crs = sweep_cr ? opts.cr_coefficients
                                           : std::vector<double>{opts.base.cr.enabled ? opts.base.cr.coefficient : 0.0};
  const fs::path root = opts.out / opts.name;
  const auto data = make_dataset(opts.data);

  AblationReport report;
  for (const auto& loss : opts.losses)
    for (std::size_t b : batches)
      for (double cr : crs)
        for (auto seed : opts.seeds) report.cells.push_back({loss, b, cr, seed, {}});

  std::mutex log_mutex;
  parallel_for(report.cells.size(), opts.jobs, [&](std::size_t i) {
    auto& cell = report.cells[i];
    train::TrainConfig cfg = opts.base;
    cfg.loss = models::parse_mode(cell.loss);
    cfg.batch_size = cell.batch_size;
    cfg.seed = cell.seed;
    cfg.cr.enabled = cell.cr_coefficient > 0.0;
    if (cfg.cr.enabled) cfg.cr.coefficient = cell.cr_coefficient;
    std::string id = cell.loss + "-m" + std::to_string(cell.batch_size);
    if (sweep_cr) id += "-cr" + format_number(cell.cr_coefficient);
    id += "-s" + std::to_string(cell.seed);
    try {
      cell.outcome = execute_run(cfg, data, root, id, opts.force);
    } catch (const std::exception& e) {
      cell.outcome.run_id = id;
      cell.outcome.status = "failed";
      cell.outcome.error = e.what();
      cell.outcome.exit_code = kConfigError;
    }
    std::lock_guard lock(log_mutex);
    log << "[ablate] " << id << ": " << cell.outcome.status;
    if (cell.outcome.status == "complete") log << " best class-frechet " << format_number(cell.outcome.best_class_frechet);
    else log << " (" << cell.outcome.error << ")";
    log << '\n';
  });

  std::ostringstream runs_csv;
  runs_csv << "loss,batch_size,cr,seed,status,best_class_frechet,best_iteration,final_class_frechet\n";
  for (const auto& c : report.cells) {
    runs_csv << c.loss << ',' << c.batch_size << ',' << format_number(c.cr_coefficient) << ',' << c.seed << ','
             << c.outcome.status << ',' << format_number(c.outcome.best_class_frechet) << ','
             << c.outcome.best_iteration << ',' << format_number(c.outcome.final_class_frechet) << '\n';
    if (c.outcome.status != "complete") report.exit_code = kPartialFailure;
  }

  for (const auto& loss : opts.losses) {
    for (std::size_t b : batches) {
      for (double cr : crs) {
        AblationRow row{loss, b, cr};
        std::vector<double> values;
        for (const auto& c : report.cells) {
          if (c.loss != loss || c.batch_size != b || c.cr_coefficient != cr) continue;
          if (c.outcome.status == "complete") values.push_back(c.outcome.best_class_frechet);
          else ++row.failed;
        }
        row.completed = values.size();
        row.mean = mean_of(values);
        row.stddev = stddev_of(values);
        report.rows.push_back(row);
      }
    }
  }

  std::vector<const AblationRow*> ranked;
  for (const auto& r : report.rows)
    if (r.completed > 0) ranked.push_back(&r);
  std::stable_sort(ranked.begin(), ranked.end(), [](auto* a, auto* b) { return a->mean < b->mean; });
  const auto label = [&](const AblationRow& r) {
    std::string s = r.loss + " (m=" + std::to_string(r.batch_size);
    if (sweep_cr) s += ", cr=" + format_number(r.cr_coefficient);
    return s + ")";
  };
  if (ranked.empty()) {
    report.summary = "no cell completed";
  } else {
    report.summary = "best: " + label(*ranked.front()) + " " + format_number(ranked.front()->mean) + " ± " +
                     format_number(ranked.front()->stddev) + "; ordering:";
    for (std::size_t i = 0; i < ranked.size(); ++i) report.summary += (i ? " < " : " ") + label(*ranked[i]);
  }

  std::ostringstream table_csv;
  nlohmann::json table = nlohmann::json::array();
  table_csv << "loss,batch_size,cr,mean,std,completed,failed\n";
  log << "\nloss        batch  cr      best class-Fréchet (mean ± std)   n\n";
  for (const auto& r : report.rows) {
    table_csv << r.loss << ',' << r.batch_size << ',' << format_number(r.cr_coefficient) << ','
              << format_number(r.mean) << ',' << format_number(r.stddev) << ',' << r.completed << ',' << r.failed
              << '\n';
    table.push_back({{"loss", r.loss},
                     {"batch_size", r.batch_size},
                     {"cr", r.cr_coefficient},
                     {"mean", r.mean},
                     {"std", r.stddev},
                     {"completed", r.completed},
                     {"failed", r.failed}});
    char line[160];
    std::snprintf(line, sizeof line, "%-11s %5zu  %-6s  %.6f ± %.6f              %zu\n", r.loss.c_str(), r.batch_size,
                  format_number(r.cr_coefficient).c_str(), r.mean, r.stddev, r.completed);
    log << line;
  }
  log << report.summary << '\n';

  fs::create_directories(root);
  write_file(root / "runs.csv", runs_csv.str());
  write_file(root / "table.csv", table_csv.str());
  write_file(root / "table.json", nlohmann::json({{"rows", table}, {"summary", report.summary}}).dump(2) + "\n");
  return report;
}

std::vector<std::string> default_sweep_values(const std::string& param) {
  if (param == "temperature") return {"0.1", "0.25", "0.5", "1.0", "2.0", "5.0"};
  if (param == "proj_dim") return {"4", "8", "16", "32", "64"};
  if (param == "proj_type") return {"linear", "mlp"};
  if (param == "batch") return {"16", "32", "64", "128"};
  throw ConfigError("unknown sweep parameter '" + param + "' (valid: temperature, proj_dim, proj_type, batch)");
}

SweepReport cmd_sweep(const SweepOptions& opts, std::ostream& log) {
  const auto values = opts.values.empty() ? default_sweep_values(opts.param) : opts.values;
  default_sweep_values(opts.param);  // validates the parameter name
  if (opts.seeds.empty()) throw ConfigError("sweep: need at least 1 seed");

  const auto apply = [&](train::TrainConfig cfg, const std::string& v) {
    try {
      if (opts.param == "temperature") cfg.temperature = std::stod(v);
      else if (opts.param == "proj_dim") cfg.proj_dim = std::stoul(v);
      else if (opts.param == "proj_type") cfg.proj_type = models::parse_projection_type(v);
      else if (opts.param == "batch") cfg.batch_size = std::stoul(v);
    } catch (const std::logic_error&) {
      throw ConfigError("sweep: bad value '" + v + "' for " + opts.param);
    }
    cfg.validate();
    return cfg;
  };
  std::vector<train::TrainConfig> configs;
  for (const auto& v : values) configs.push_back(apply(opts.base, v));

  const fs::path root = opts.out / opts.name;
  const auto data = make_dataset(opts.data);
  struct Job {
    std::size_t value;
    std::uint64_t seed;
    RunOutcome outcome;
  };
  std::vector<Job> jobs;
  for (std::size_t v = 0; v < values.size(); ++v)
    for (auto s : opts.seeds) jobs.push_back({v, s, {}});

  std::mutex log_mutex;
  parallel_for(jobs.size(), opts.jobs, [&](std::size_t i) {
    auto& job = jobs[i];
    auto cfg = configs[job.value];
    cfg.seed = job.seed;
    const std::string id = opts.param + "-" + values[job.value] + "-s" + std::to_string(job.seed);
    try {
      job.outcome = execute_run(cfg, data, root, id, opts.force);
    } catch (const std::exception& e) {
      job.outcome.status = "failed";
      job.outcome.error = e.what();
    }
    std::lock_guard lock(log_mutex);
    log << "[sweep] " << id << ": " << job.outcome.status << '\n';
  });

  SweepReport report;
  report.runs = jobs.size();
  std::ostringstream jsonl;
  for (std::size_t v = 0; v < values.size(); ++v) {
    SweepRow row{values[v]};
    std::vector<double> metric;
    for (const auto& j : jobs) {
      if (j.value != v) continue;
      if (j.outcome.status == "complete") metric.push_back(j.outcome.best_class_frechet);
      else ++row.failed;
    }
    row.completed = metric.size();
    row.mean = mean_of(metric);
    row.stddev = stddev_of(metric);
    if (row.failed) report.exit_code = kPartialFailure;
    report.rows.push_back(row);
    jsonl << nlohmann::json({{"param", opts.param},
                             {"value", row.value},
                             {"mean", row.mean},
                             {"std", row.stddev},
                             {"n", row.completed},
                             {"failed", row.failed}})
                 .dump()
          << '\n';
    log << opts.param << "=" << row.value << ": " << format_number(row.mean) << " ± " << format_number(row.stddev)
        << " (n=" << row.completed << ")\n";
  }
  fs::create_directories(root);
  write_file(root / "sweep.jsonl", jsonl.str());
  return report;
}

namespace {

Matrix uniform(std::size_t r, std::size_t c, std::mt19937_64& rng, double lo = -2.0, double hi = 2.0) {
  std::uniform_real_distribution<double> dist(lo, hi);
  Matrix m(r, c);
  for (double& v : m.data) v = dist(rng);
  return m;
}

std::vector<std::size_t> random_labels(std::size_t m, std::size_t classes, std::mt19937_64& rng) {
  std::uniform_int_distribution<std::size_t> pick(0, classes - 1);
  std::vector<std::size_t> y(m);
  for (auto& v : y) v = pick(rng);
  return y;
}

// Identity whose backward rule negates the incoming gradient.
ad::Tensor sign_flipped_identity(ad::Tape& tape, const ad::Tensor& x) {
  return tape.record(x.value(), {x}, [](std::span<ad::Tensor> in, const ad::Tensor& out) {
    if (!in[0].requires_grad()) return;
    auto& acc = in[0].mutable_grad().data;
    for (std::size_t i = 0; i < acc.size(); ++i) acc[i] -= out.grad().data[i];
  });
}

std::vector<ad::Tensor> leaves_of(const std::vector<models::NamedParam>& params) {
  std::vector<ad::Tensor> out;
  for (const auto& p : params) out.push_back(p.tensor);
  return out;
}

}  // namespace

GradCheckReport cmd_gradcheck(std::size_t seeds, bool inject_sign_flip, std::ostream& log) {
  using ad::Tape;
  using ad::Tensor;
  const losses::Temperature temp(1.0);
  std::vector<std::pair<std::string, std::function<double(std::mt19937_64&)>>> checks;

  const auto batch_dims = [](std::mt19937_64& rng) {
    std::uniform_int_distribution<std::size_t> md(2, 8), dd(2, 8), cd(2, 4);
    return std::array<std::size_t, 3>{md(rng), dd(rng), cd(rng)};
  };
  // Contrastive losses see raw leaves pushed through l2 normalization.
  const auto contrastive_check = [&](const std::string& name, bool flip) {
    return [=](std::mt19937_64& rng) {
      const auto [m, d, c] = batch_dims(rng);
      Tensor feats = Tensor::parameter(uniform(m, d, rng));
      Tensor table = Tensor::parameter(uniform(c, d, rng));
      Tensor aug = Tensor::parameter(uniform(m, d, rng));
      Tensor pair_feats = Tensor::parameter(uniform(2 * m, d, rng));
      const auto labels = random_labels(m, c, rng);
      std::vector<Tensor> leaves = {feats, table, aug, pair_feats};
      return ad::grad_check(
          [&](Tape& tape) {
            Tensor f = ad::l2_normalize_rows(tape, feats);
            if (flip) f = sign_flipped_identity(tape, f);
            const losses::EmbeddingBatch batch{f, labels, table};
            if (name == "nt_xent") return losses::nt_xent(tape, ad::l2_normalize_rows(tape, pair_feats), temp);
            if (name == "loss_eq7") return losses::loss_eq7(tape, batch, temp);
            if (name == "loss_2c_aps") {
              return losses::loss_2c_aps(tape, {f, labels, {}}, ad::l2_normalize_rows(tape, aug), temp);
            }
            if (name == "proxy_nca") return losses::proxy_nca(tape, batch, temp);
            return losses::loss_2c(tape, batch, temp);
          },
          leaves);
    };
  };

  checks.emplace_back("matmul", [](std::mt19937_64& rng) {
    Tensor a = Tensor::parameter(uniform(3, 4, rng));
    Tensor b = Tensor::parameter(uniform(4, 2, rng));
    const Tensor w = Tensor::constant(uniform(3, 2, rng));
    std::vector<Tensor> leaves = {a, b};
    return ad::grad_check([&](Tape& t) { return ad::sum(t, ad::mul(t, ad::matmul(t, a, b), w)); }, leaves);
  });
  checks.emplace_back("l2_normalize_rows", [](std::mt19937_64& rng) {
    Tensor a = Tensor::parameter(uniform(4, 3, rng));
    const Tensor w = Tensor::constant(uniform(4, 3, rng));
    std::vector<Tensor> leaves = {a};
    return ad::grad_check([&](Tape& t) { return ad::sum(t, ad::mul(t, ad::l2_normalize_rows(t, a), w)); }, leaves);
  });
  checks.emplace_back("log_sum_exp_rows", [](std::mt19937_64& rng) {
    Tensor a = Tensor::parameter(uniform(4, 5, rng));
    const Tensor w = Tensor::constant(uniform(4, 1, rng));
    std::vector<Tensor> leaves = {a};
    return ad::grad_check([&](Tape& t) { return ad::sum(t, ad::mul(t, ad::log_sum_exp_rows(t, a), w)); }, leaves);
  });
  for (const char* name : {"nt_xent", "loss_eq7", "loss_2c", "loss_2c_aps", "proxy_nca"}) {
    checks.emplace_back(name, contrastive_check(name, false));
  }
  checks.emplace_back("acgan_aux_loss", [](std::mt19937_64& rng) {
    std::uniform_int_distribution<std::size_t> md(2, 8), cd(2, 8);
    const std::size_t m = md(rng), c = cd(rng);
    Tensor logits = Tensor::parameter(uniform(m, c, rng));
    const auto labels = random_labels(m, c, rng);
    std::vector<Tensor> leaves = {logits};
    return ad::grad_check([&](Tape& t) { return losses::acgan_aux_loss(t, logits, labels); }, leaves);
  });
  checks.emplace_back("projection_term", [](std::mt19937_64& rng) {
    std::uniform_int_distribution<std::size_t> md(2, 8), kd(2, 8), cd(2, 4);
    const std::size_t m = md(rng), k = kd(rng), c = cd(rng);
    Tensor feats = Tensor::parameter(uniform(m, k, rng));
    Tensor table = Tensor::parameter(uniform(c, k, rng));
    const Tensor w = Tensor::constant(uniform(m, 1, rng));
    const auto labels = random_labels(m, c, rng);
    std::vector<Tensor> leaves = {feats, table};
    return ad::grad_check(
        [&](Tape& t) { return ad::sum(t, ad::mul(t, losses::projection_term(t, feats, table, labels), w)); }, leaves);
  });

  // Small networks; the stored σ is a constant of the forward pass, so finite
  // differences see the same function the tape differentiates.
  const auto small_config = [](models::ConditioningMode mode) {
    train::TrainConfig cfg;
    cfg.loss = mode;
    cfg.noise_dim = 4;
    cfg.g_hidden = {8, 8};
    cfg.g_embed_dim = 4;
    cfg.d_trunk = {8, 8};
    cfg.proj_dim = 4;
    return cfg;
  };
  const auto network_check = [&](models::ConditioningMode mode, bool generator_side) {
    return [=](std::mt19937_64& rng) {
      const std::size_t m = 6, classes = 3;
      const auto cfg = small_config(mode);
      std::mt19937_64 init(rng());
      models::GeneratorConfig gc{cfg.noise_dim, cfg.g_hidden, cfg.g_embed_dim, 2, classes, true, true};
      models::DiscriminatorConfig dc{2, cfg.d_trunk, cfg.proj_dim, models::ProjectionType::mlp, classes, mode, true, 0.2};
      models::Generator g(gc, init);
      models::Discriminator d(dc, init);
      // zero biases let a whole row die to exactly zero; move off that point
      std::uniform_real_distribution<double> jitter(-0.1, 0.1);
      for (auto params : {g.parameters(), d.parameters()}) {
        for (auto& p : params) {
          for (double& v : p.tensor.mutable_value().data) v += jitter(init);
        }
      }
      const Matrix z = uniform(m, cfg.noise_dim, rng, -1.0, 1.0);
      const Matrix real = uniform(m, 2, rng, -1.0, 1.0);
      const auto y_real = random_labels(m, classes, rng);
      const auto y_fake = random_labels(m, classes, rng);
      const auto conditioning = [&](Tape& t, const models::DiscriminatorOutput& out, std::span<const std::size_t> y) {
        const std::vector<std::size_t> ys(y.begin(), y.end());
        switch (mode) {
          case models::ConditioningMode::acgan: return losses::acgan_aux_loss(t, *out.class_logits, y);
          case models::ConditioningMode::contra: return losses::loss_2c(t, {out.embedding, ys, d.class_table()}, temp);
          default: return Tensor::constant(Matrix(1, 1));
        }
      };
      if (generator_side) {
        auto leaves = leaves_of(g.parameters());
        return ad::grad_check(
            [&](Tape& t) {
              const Tensor fake = g.forward(t, Tensor::constant(z), y_fake);
              const auto out = d.forward(t, fake, y_fake);
              return ad::add(t, train::adv_g_loss(t, out.adv_score, train::AdvLoss::hinge),
                             conditioning(t, out, y_fake));
            },
            leaves);
      }
      const Matrix fake = g.sample(z, y_fake);
      auto leaves = leaves_of(d.parameters());
      return ad::grad_check(
          [&](Tape& t) {
            const auto out_r = d.forward(t, Tensor::constant(real), y_real);
            const auto out_f = d.forward(t, Tensor::constant(fake), y_fake);
            return ad::add(t, train::adv_d_loss(t, out_r.adv_score, out_f.adv_score, train::AdvLoss::hinge),
                           conditioning(t, out_r, y_real));
          },
          leaves);
    };
  };
  checks.emplace_back("discriminator (hinge + 2c)", network_check(models::ConditioningMode::contra, false));
  checks.emplace_back("discriminator (hinge + projgan)", network_check(models::ConditioningMode::projgan, false));
  checks.emplace_back("discriminator (hinge + acgan)", network_check(models::ConditioningMode::acgan, false));
  checks.emplace_back("generator (hinge + 2c)", network_check(models::ConditioningMode::contra, true));
  if (inject_sign_flip) checks.emplace_back("loss_2c [sign-flipped rule]", contrastive_check("loss_2c", true));

  GradCheckReport report;
  report.passed = true;
  for (const auto& [name, check] : checks) {
    GradCheckEntry entry{name, 0.0, true};
    for (std::size_t s = 0; s < seeds; ++s) {
      std::mt19937_64 rng(1000 + s);
      try {
        entry.max_rel_error = std::max(entry.max_rel_error, check(rng));
      } catch (const std::exception& e) {
        throw NumericError("gradcheck " + name + " seed " + std::to_string(s) + ": " + e.what());
      }
    }
    entry.passed = entry.max_rel_error < kGradCheckTolerance;
    report.passed = report.passed && entry.passed;
    char line[160];
    std::snprintf(line, sizeof line, "%-34s max rel err %.3e  %s\n", name.c_str(), entry.max_rel_error,
                  entry.passed ? "PASS" : "FAIL");
    log << line;
    report.entries.push_back(entry);
  }
  log << (report.passed ? "gradcheck: all checks passed\n" : "gradcheck: FAILED\n");
  return report;
}

}  // namespace contra::harness
