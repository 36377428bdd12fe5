#include "contra/training.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "contra/errors.hpp"
#include "contra/losses.hpp"

namespace contra::train {

namespace {

using models::ConditioningMode;

struct PresetRow {
  const char* name;
  double lr_d, lr_g, beta1, beta2;
  int n_dis;
};

// Hyperparameter settings A–F.
constexpr PresetRow kPresets[] = {
    {"A", 0.0001, 0.0001, 0.5, 0.999, 2}, {"B", 0.0001, 0.0001, 0.5, 0.999, 1},
    {"C", 0.0002, 0.0002, 0.5, 0.999, 1}, {"D", 0.0002, 0.0002, 0.5, 0.999, 2},
    {"E", 0.0002, 0.0002, 0.5, 0.999, 5}, {"F", 0.0004, 0.0001, 0.0, 0.999, 1},
};

Tensor zero_scalar() { return Tensor::constant(Matrix(1, 1)); }

void zero_grads(const std::vector<models::NamedParam>& params) {
  for (auto p : params) p.tensor.zero_grad();
}

models::GeneratorConfig generator_config(const TrainConfig& c, std::size_t classes, std::size_t dim) {
  models::GeneratorConfig g;
  g.noise_dim = c.noise_dim;
  g.hidden = c.g_hidden;
  g.class_embed_dim = c.g_embed_dim;
  g.output_dim = dim;
  g.num_classes = classes;
  g.conditional = c.loss != ConditioningMode::none;
  g.spectral = c.g_spectral;
  return g;
}

models::DiscriminatorConfig discriminator_config(const TrainConfig& c, std::size_t classes, std::size_t dim) {
  models::DiscriminatorConfig d;
  d.input_dim = dim;
  d.trunk = c.d_trunk;
  d.proj_dim = c.proj_dim;
  d.proj_type = c.proj_type;
  d.num_classes = classes;
  d.mode = c.loss;
  d.spectral = c.d_spectral;
  return d;
}

nlohmann::json spectral_to_json(const std::vector<std::pair<std::string, const models::Linear*>>& layers) {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& [name, layer] : layers) {
    if (!layer->spectral()) continue;
    j[name] = {{"u", layer->spectral_state().u}, {"sigma", layer->spectral_state().sigma}};
  }
  return j;
}

template <typename LinearPtr>
std::vector<std::pair<std::string, LinearPtr>> named_layers(const std::vector<LinearPtr>& layers) {
  std::vector<std::pair<std::string, LinearPtr>> out;
  for (std::size_t i = 0; i < layers.size(); ++i) out.emplace_back("g.layer" + std::to_string(i), layers[i]);
  return out;
}

void spectral_from_json(const nlohmann::json& j, const std::vector<std::pair<std::string, models::Linear*>>& layers) {
  for (const auto& [name, layer] : layers) {
    if (!layer->spectral() || !j.contains(name)) continue;
    auto& state = layer->spectral_state();
    state.u = j.at(name).at("u").get<std::vector<double>>();
    state.sigma = j.at(name).at("sigma").get<double>();
  }
}

}  // namespace

std::string to_string(AdvLoss kind) { return kind == AdvLoss::hinge ? "hinge" : "alg1_literal"; }

AdvLoss parse_adv_loss(const std::string& name) {
  if (name == "hinge") return AdvLoss::hinge;
  if (name == "alg1_literal") return AdvLoss::alg1_literal;
  throw ConfigError("unknown adversarial loss '" + name + "' (valid: hinge, alg1_literal)");
}

void TrainConfig::validate() const {
  const auto fail = [](const std::string& field, const std::string& why) {
    throw ConfigError("config: " + field + " " + why);
  };
  if (!(lr_d >= 0.0) || !std::isfinite(lr_d)) fail("lr_d", "must be a finite value >= 0");
  if (!(lr_g >= 0.0) || !std::isfinite(lr_g)) fail("lr_g", "must be a finite value >= 0");
  if (!(beta1 >= 0.0 && beta1 < 1.0)) fail("beta1", "must lie in [0, 1)");
  if (!(beta2 >= 0.0 && beta2 < 1.0)) fail("beta2", "must lie in [0, 1)");
  if (batch_size == 0) fail("batch_size", "must be > 0");
  if (!(temperature > 0.0)) fail("temperature", "must be > 0");
  if (n_dis < 1) fail("n_dis", "must be >= 1");
  if (!(lambda >= 0.0)) fail("lambda", "must be >= 0");
  if (iterations < 1) fail("iterations", "must be >= 1");
  if (eval_interval < 1) fail("eval_interval", "must be >= 1");
  if (!(ema.decay >= 0.0 && ema.decay <= 1.0)) fail("ema.decay", "must lie in [0, 1]");
  if (!(cr.jitter_sigma >= 0.0)) fail("cr.jitter_sigma", "must be >= 0");
  if (!(cr.coefficient >= 0.0)) fail("cr.coefficient", "must be >= 0");
  if (!(aug_sigma >= 0.0)) fail("aug_sigma", "must be >= 0");
  if (noise_dim == 0 || proj_dim == 0 || g_embed_dim == 0 || d_trunk.empty()) fail("network dims", "must be positive");
  if (eval_per_class < 2) fail("eval_per_class", "must be >= 2");
}

std::vector<std::string> preset_names() {
  std::vector<std::string> out;
  for (const auto& p : kPresets) out.emplace_back(p.name);
  return out;
}

TrainConfig apply_preset(TrainConfig base, const std::string& name) {
  for (const auto& p : kPresets) {
    if (name != p.name) continue;
    base.preset = p.name;
    base.lr_d = p.lr_d;
    base.lr_g = p.lr_g;
    base.beta1 = p.beta1;
    base.beta2 = p.beta2;
    base.n_dis = p.n_dis;
    return base;
  }
  throw ConfigError("unknown preset '" + name + "' (valid: A, B, C, D, E, F)");
}

nlohmann::json to_json(const TrainConfig& c) {
  return {{"preset", c.preset},
          {"lr_d", c.lr_d},
          {"lr_g", c.lr_g},
          {"beta1", c.beta1},
          {"beta2", c.beta2},
          {"batch_size", c.batch_size},
          {"temperature", c.temperature},
          {"n_dis", c.n_dis},
          {"lambda", c.lambda},
          {"loss", models::to_string(c.loss)},
          {"adv_loss", to_string(c.adv_loss)},
          {"iterations", c.iterations},
          {"ema", {{"decay", c.ema.decay}, {"start", c.ema.start}}},
          {"cr", {{"enabled", c.cr.enabled}, {"coefficient", c.cr.coefficient}, {"jitter_sigma", c.cr.jitter_sigma}}},
          {"eval_interval", c.eval_interval},
          {"seed", c.seed},
          {"noise_dim", c.noise_dim},
          {"g_hidden", c.g_hidden},
          {"g_embed_dim", c.g_embed_dim},
          {"d_trunk", c.d_trunk},
          {"proj_dim", c.proj_dim},
          {"proj_type", models::to_string(c.proj_type)},
          {"d_spectral", c.d_spectral},
          {"g_spectral", c.g_spectral},
          {"aug_sigma", c.aug_sigma},
          {"eval_per_class", c.eval_per_class},
          {"log_wallclock", c.log_wallclock}};
}

void adam_step(std::span<const models::NamedParam> params, AdamState& state, double lr, double beta1, double beta2) {
  if (state.first.empty()) {
    for (const auto& p : params) {
      state.first.emplace_back(p.tensor.rows(), p.tensor.cols());
      state.second.emplace_back(p.tensor.rows(), p.tensor.cols());
    }
  }
  if (state.first.size() != params.size()) throw DimensionError("adam_step: optimizer state does not match parameters");
  for (const auto& p : params) {
    for (double g : p.tensor.grad().data) {
      if (!std::isfinite(g)) throw NumericError("adam_step: non-finite gradient in parameter " + p.name);
    }
  }
  ++state.step;
  const double c1 = 1.0 - std::pow(beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(beta2, static_cast<double>(state.step));
  for (std::size_t k = 0; k < params.size(); ++k) {
    Tensor t = params[k].tensor;
    auto& theta = t.mutable_value().data;
    const auto& g = t.grad().data;
    auto& m = state.first[k].data;
    auto& v = state.second[k].data;
    if (m.size() != theta.size()) throw DimensionError("adam_step: shape mismatch for " + params[k].name);
    for (std::size_t i = 0; i < theta.size(); ++i) {
      m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
      v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
      theta[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + state.eps);
    }
  }
}

Tensor adv_d_loss(Tape& tape, const Tensor& real_scores, const Tensor& fake_scores, AdvLoss kind) {
  if (real_scores.rows() != fake_scores.rows() || real_scores.cols() != fake_scores.cols()) {
    throw DimensionError("adv_d_loss: real " + real_scores.value().shape_string() + " vs fake " +
                         fake_scores.value().shape_string());
  }
  if (kind == AdvLoss::alg1_literal) return ad::sub(tape, ad::mean(tape, fake_scores), ad::mean(tape, real_scores));
  const Tensor real_term = ad::mean(tape, ad::relu(tape, ad::add_scalar(tape, ad::scale(tape, real_scores, -1.0), 1.0)));
  const Tensor fake_term = ad::mean(tape, ad::relu(tape, ad::add_scalar(tape, fake_scores, 1.0)));
  return ad::add(tape, real_term, fake_term);
}

Tensor adv_g_loss(Tape& tape, const Tensor& fake_scores, AdvLoss) {
  return ad::scale(tape, ad::mean(tape, fake_scores), -1.0);
}

Tensor consistency_regularization(Tape& tape, const ScoreFn& score, const Matrix& x, double jitter_sigma,
                                  std::mt19937_64& rng) {
  if (!(jitter_sigma >= 0.0)) throw ContractError("consistency_regularization: jitter_sigma must be >= 0");
  Matrix jittered = x;
  if (jitter_sigma > 0.0) {
    std::normal_distribution<double> noise(0.0, jitter_sigma);
    for (double& v : jittered.data) v += noise(rng);
  }
  const Tensor diff = ad::sub(tape, score(tape, Tensor::constant(x)), score(tape, Tensor::constant(jittered)));
  return ad::mean(tape, ad::mul(tape, diff, diff));
}

Tensor consistency_regularization(Tape& tape, const models::Discriminator& d, const Matrix& x,
                                  std::span<const std::size_t> labels, double jitter_sigma, std::mt19937_64& rng) {
  return consistency_regularization(
      tape, [&](Tape& t, const Tensor& input) { return d.forward(t, input, labels).adv_score; }, x, jitter_sigma, rng);
}

Trainer::Trainer(const TrainConfig& config, const data::LabeledDataset& train)
    : config_(config), train_(&train), rng_(config.seed) {
  config_.validate();
  if (train.size() == 0 || train.num_classes < 1) throw ConfigError("Trainer: empty training set");
  std::mt19937_64 init_rng(config.seed ^ 0x9e3779b97f4a7c15ULL);
  generator_ = models::Generator(generator_config(config_, train.num_classes, train.dim()), init_rng);
  discriminator_ = models::Discriminator(discriminator_config(config_, train.num_classes, train.dim()), init_rng);
  ema_ = models::EmaShadow{generator_.clone(), config_.ema.decay, config_.ema.start};
}

Matrix Trainer::sample_noise(std::size_t m) {
  std::normal_distribution<double> normal;
  Matrix z(m, config_.noise_dim);
  for (double& v : z.data) v = normal(rng_);
  return z;
}

std::vector<std::size_t> Trainer::sample_fake_labels(std::size_t m) {
  std::uniform_int_distribution<std::size_t> pick(0, train_->num_classes - 1);
  std::vector<std::size_t> y(m);
  for (auto& v : y) v = pick(rng_);
  return y;
}

std::pair<Matrix, std::vector<std::size_t>> Trainer::sample_real_batch() {
  const std::size_t m = config_.batch_size;
  std::uniform_int_distribution<std::size_t> pick(0, train_->size() - 1);
  Matrix x(m, train_->dim());
  std::vector<std::size_t> y(m);
  for (std::size_t i = 0; i < m; ++i) {
    const std::size_t idx = pick(rng_);
    std::copy(train_->samples.row(idx).begin(), train_->samples.row(idx).end(), x.row(i).begin());
    y[i] = train_->labels[idx];
  }
  return {std::move(x), std::move(y)};
}

Tensor Trainer::conditioning_loss(Tape& tape, const models::DiscriminatorOutput& out, const Tensor& x,
                                  std::span<const std::size_t> labels) {
  const losses::Temperature t(config_.temperature);
  const std::vector<std::size_t> ys(labels.begin(), labels.end());
  switch (config_.loss) {
    case ConditioningMode::none:
    case ConditioningMode::projgan:
      return zero_scalar();
    case ConditioningMode::acgan:
      return losses::acgan_aux_loss(tape, *out.class_logits, labels);
    case ConditioningMode::contra:
      return losses::loss_2c(tape, {out.embedding, ys, discriminator_.class_table()}, t);
    case ConditioningMode::eq7:
      return losses::loss_eq7(tape, {out.embedding, ys, discriminator_.class_table()}, t);
    case ConditioningMode::pnca:
      return losses::proxy_nca(tape, {out.embedding, ys, discriminator_.class_table()}, t);
    case ConditioningMode::ntxent:
    case ConditioningMode::contra_aps: {
      Matrix noise(x.rows(), x.cols());
      std::normal_distribution<double> jitter(0.0, config_.aug_sigma > 0.0 ? config_.aug_sigma : 1.0);
      if (config_.aug_sigma > 0.0)
        for (double& v : noise.data) v = jitter(rng_);
      const Tensor augmented = ad::add(tape, x, Tensor::constant(std::move(noise)));
      const auto aug_out = discriminator_.forward(tape, augmented, labels);
      if (config_.loss == ConditioningMode::contra_aps) {
        return losses::loss_2c_aps(tape, {out.embedding, ys, {}}, aug_out.embedding, t);
      }
      const std::size_t m = labels.size();
      std::vector<std::size_t> interleave(2 * m);
      for (std::size_t i = 0; i < m; ++i) {
        interleave[2 * i] = i;
        interleave[2 * i + 1] = m + i;
      }
      const Tensor pairs =
          ad::gather_rows(tape, ad::concat_rows(tape, out.embedding, aug_out.embedding), interleave);
      return losses::nt_xent(tape, pairs, t);
    }
  }
  return zero_scalar();
}

StepLosses Trainer::train_discriminator_step() {
  auto [x, y] = sample_real_batch();
  return train_discriminator_step(x, y);
}

StepLosses Trainer::train_discriminator_step(const Matrix& real, std::span<const std::size_t> labels) {
  if (real.rows != config_.batch_size || labels.size() != config_.batch_size) {
    throw ContractError("train_discriminator_step: batch must have " + std::to_string(config_.batch_size) + " rows");
  }
  discriminator_.power_iterate(1);
  const std::size_t m = config_.batch_size;
  const Matrix z = sample_noise(m);
  const auto fake_labels = sample_fake_labels(m);
  const Matrix fake = generator_.sample(z, fake_labels);

  Tape tape;
  const Tensor x = Tensor::constant(real);
  const auto out_real = discriminator_.forward(tape, x, labels);
  const auto out_fake = discriminator_.forward(tape, Tensor::constant(fake), fake_labels);
  const Tensor adversarial = adv_d_loss(tape, out_real.adv_score, out_fake.adv_score, config_.adv_loss);
  const Tensor conditioning = conditioning_loss(tape, out_real, x, labels);
  Tensor total = ad::add(tape, adversarial, ad::scale(tape, conditioning, config_.lambda));
  StepLosses losses{0.0, adversarial.item(), conditioning.item(), 0.0};
  if (config_.cr.enabled) {
    const Tensor cr = consistency_regularization(tape, discriminator_, real, labels, config_.cr.jitter_sigma, rng_);
    losses.consistency = cr.item();
    total = ad::add(tape, total, ad::scale(tape, cr, config_.cr.coefficient));
  }
  losses.total = total.item();

  const auto params = discriminator_.parameters();
  zero_grads(params);
  tape.backward(total);
  adam_step(params, adam_d_, config_.lr_d, config_.beta1, config_.beta2);
  return losses;
}

StepLosses Trainer::train_generator_step() {
  generator_.power_iterate(1);
  const std::size_t m = config_.batch_size;
  const Matrix z = sample_noise(m);
  const auto fake_labels = sample_fake_labels(m);

  Tape tape;
  const Tensor fake = generator_.forward(tape, Tensor::constant(z), fake_labels);
  const auto out_fake = discriminator_.forward(tape, fake, fake_labels);
  const Tensor adversarial = adv_g_loss(tape, out_fake.adv_score, config_.adv_loss);
  const Tensor conditioning = conditioning_loss(tape, out_fake, fake, fake_labels);
  const Tensor total = ad::add(tape, adversarial, ad::scale(tape, conditioning, config_.lambda));

  const auto params = generator_.parameters();
  zero_grads(params);
  tape.backward(total);
  // The discriminator only served as a critic here.
  zero_grads(discriminator_.parameters());
  adam_step(params, adam_g_, config_.lr_g, config_.beta1, config_.beta2);
  ++g_iterations_;
  models::ema_update(ema_, generator_, g_iterations_);
  return {total.item(), adversarial.item(), conditioning.item(), 0.0};
}

nlohmann::json Trainer::checkpoint() const {
  return {{"format_version", 1},
          {"config", to_json(config_)},
          {"iteration", g_iterations_},
          {"generator", models::parameters_to_json(generator_.parameters())},
          {"ema", models::parameters_to_json(ema_.params.parameters())},
          {"discriminator", models::parameters_to_json(discriminator_.parameters())},
          {"spectral",
           {{"generator", spectral_to_json(named_layers(generator_.layers()))},
            {"discriminator", spectral_to_json(discriminator_.layers())}}}};
}

void Trainer::load_checkpoint(const nlohmann::json& j) {
  if (j.value("format_version", 0) != 1) throw ConfigError("checkpoint: unsupported format_version");
  models::parameters_from_json(j.at("generator"), generator_.parameters());
  models::parameters_from_json(j.at("ema"), ema_.params.parameters());
  models::parameters_from_json(j.at("discriminator"), discriminator_.parameters());
  spectral_from_json(j.at("spectral").at("generator"), named_layers(generator_.mutable_layers()));
  spectral_from_json(j.at("spectral").at("discriminator"), discriminator_.mutable_layers());
  ema_.params.copy_spectral_state(generator_);
  g_iterations_ = j.at("iteration").get<std::int64_t>();
}

eval::HistoryRecord Evaluator::evaluate(const Trainer& trainer) const {
  const std::size_t classes = train->num_classes;
  std::mt19937_64 rng(seed ^ 0x5eedf00dULL);
  std::normal_distribution<double> normal;
  const std::size_t n = per_class * classes;
  Matrix z(n, trainer.config().noise_dim);
  for (double& v : z.data) v = normal(rng);
  std::vector<std::size_t> labels(n);
  for (std::size_t i = 0; i < n; ++i) labels[i] = i % classes;
  const Matrix fake = trainer.eval_generator().sample(z, labels);

  eval::HistoryRecord r;
  r.iteration = trainer.generator_iterations();
  const auto fd = eval::class_conditional_frechet(train->samples, train->labels, fake, labels, classes);
  r.frechet = fd.pooled;
  r.class_frechet = fd.mean;
  r.class_frechet_per_class = fd.per_class;
  const auto acc = eval::authenticity_accuracy(trainer.discriminator(), *train, *val, fake, labels);
  r.acc_train = acc.acc_train;
  r.acc_val = acc.acc_val;
  r.acc_fake = acc.acc_fake;
  for (const auto& s : eval::spectral_trend(trainer.discriminator())) {
    r.sigma.push_back(s.effective);
    r.sigma_raw.push_back(s.raw);
  }
  return r;
}

TrainResult run_training(const TrainConfig& config, const data::LabeledDataset& train, const data::LabeledDataset& val,
                         const RecordSink& sink) {
  if (val.num_classes != train.num_classes) {
    throw ConfigError("run_training: train has " + std::to_string(train.num_classes) + " classes, val " +
                      std::to_string(val.num_classes));
  }
  const auto started = std::chrono::steady_clock::now();
  Trainer trainer(config, train);
  const Evaluator evaluator{&train, &val, config.eval_per_class, config.seed};

  TrainResult result;
  StepLosses d_sum, g_sum;
  std::int64_t d_steps = 0, g_steps = 0;
  for (std::int64_t it = 1; it <= config.iterations; ++it) {
    try {
      for (int k = 0; k < config.n_dis; ++k) {
        const auto l = trainer.train_discriminator_step();
        d_sum.total += l.total;
        d_sum.conditioning += l.conditioning;
        ++d_steps;
      }
      const auto l = trainer.train_generator_step();
      g_sum.total += l.total;
      g_sum.conditioning += l.conditioning;
      ++g_steps;
      if (!std::isfinite(d_sum.total) || !std::isfinite(g_sum.total)) throw NumericError("non-finite loss");
    } catch (const NumericError& e) {
      throw NumericError("iteration " + std::to_string(it) + ": " + e.what());
    }

    if (it % config.eval_interval != 0 && it != config.iterations) continue;
    auto record = evaluator.evaluate(trainer);
    record.loss_d = d_sum.total / static_cast<double>(d_steps);
    record.loss_c_real = d_sum.conditioning / static_cast<double>(d_steps);
    record.loss_g = g_sum.total / static_cast<double>(g_steps);
    record.loss_c_fake = g_sum.conditioning / static_cast<double>(g_steps);
    if (config.log_wallclock) {
      record.wallclock = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    }
    d_sum = g_sum = {};
    d_steps = g_steps = 0;

    if (sink) sink(record);
    if (result.history.empty() || record.class_frechet < result.best_class_frechet) {
      result.best_class_frechet = record.class_frechet;
      result.best_iteration = record.iteration;
      result.best_checkpoint = trainer.checkpoint();
    }
    result.history.push_back(std::move(record));
  }
  result.final_checkpoint = trainer.checkpoint();
  return result;
}

}  // namespace contra::train
