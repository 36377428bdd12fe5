#pragma once

// Alternating discriminator/generator optimization: n_dis discriminator
// updates per generator update, hinge (or plain-difference) adversarial loss,
// λ-weighted conditioning loss, Adam, generator EMA and optional consistency
// regularization.

#include <chrono>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "contra/autodiff.hpp"
#include "contra/datasets.hpp"
#include "contra/evaluation.hpp"
#include "contra/models.hpp"

namespace contra::train {

using ad::Tape;
using ad::Tensor;

enum class AdvLoss { hinge, alg1_literal };
std::string to_string(AdvLoss kind);
AdvLoss parse_adv_loss(const std::string& name);

struct EmaConfig {
  double decay = 0.9999;
  std::int64_t start = 20000;
};

struct CrConfig {
  bool enabled = false;
  double coefficient = 10.0;
  double jitter_sigma = 0.05;
};

struct TrainConfig {
  std::string preset = "E";
  double lr_d = 2e-4;
  double lr_g = 2e-4;
  double beta1 = 0.5;
  double beta2 = 0.999;
  std::size_t batch_size = 64;
  double temperature = 1.0;
  int n_dis = 5;
  double lambda = 1.0;
  models::ConditioningMode loss = models::ConditioningMode::contra;
  AdvLoss adv_loss = AdvLoss::hinge;
  std::int64_t iterations = 5000;
  EmaConfig ema;
  CrConfig cr;
  std::int64_t eval_interval = 250;
  std::uint64_t seed = 0;

  // Network shape.
  std::size_t noise_dim = 8;
  std::vector<std::size_t> g_hidden = {64, 64};
  std::size_t g_embed_dim = 16;
  std::vector<std::size_t> d_trunk = {64, 64};
  std::size_t proj_dim = 16;
  models::ProjectionType proj_type = models::ProjectionType::linear;
  bool d_spectral = true;
  bool g_spectral = true;

  // Gaussian jitter standing in for the image augmentation T(x) (NT-Xent, APS).
  double aug_sigma = 0.05;
  std::size_t eval_per_class = 256;
  bool log_wallclock = false;

  // Throws ConfigError naming the offending field.
  void validate() const;
};

// Preset hyperparameter rows A–F applied on top of `base` (α1, α2, β1, β2, n_dis).
TrainConfig apply_preset(TrainConfig base, const std::string& name);
std::vector<std::string> preset_names();

nlohmann::json to_json(const TrainConfig& c);

struct AdamState {
  std::vector<Matrix> first;
  std::vector<Matrix> second;
  std::int64_t step = 0;
  double eps = 1e-8;
};

// One bias-corrected Adam update of every parameter from its accumulated gradient.
void adam_step(std::span<const models::NamedParam> params, AdamState& state, double lr, double beta1, double beta2);

Tensor adv_d_loss(Tape& tape, const Tensor& real_scores, const Tensor& fake_scores, AdvLoss kind);
Tensor adv_g_loss(Tape& tape, const Tensor& fake_scores, AdvLoss kind);

using ScoreFn = std::function<Tensor(Tape&, const Tensor& x)>;
// Mean squared change of the score under x + N(0, σ²) jitter.
Tensor consistency_regularization(Tape& tape, const ScoreFn& score, const Matrix& x, double jitter_sigma,
                                  std::mt19937_64& rng);
Tensor consistency_regularization(Tape& tape, const models::Discriminator& d, const Matrix& x,
                                  std::span<const std::size_t> labels, double jitter_sigma, std::mt19937_64& rng);

struct StepLosses {
  double total = 0.0;        // L_D or L_G
  double adversarial = 0.0;  // adversarial part
  double conditioning = 0.0; // L_C^real or L_C^fake (unweighted)
  double consistency = 0.0;
};

// Owns the networks and optimizer state of one run. Strictly sequential.
class Trainer {
 public:
  Trainer(const TrainConfig& config, const data::LabeledDataset& train);

  StepLosses train_discriminator_step();
  StepLosses train_discriminator_step(const Matrix& real, std::span<const std::size_t> labels);
  StepLosses train_generator_step();

  // Real minibatch drawn uniformly with replacement from the training set.
  std::pair<Matrix, std::vector<std::size_t>> sample_real_batch();

  const TrainConfig& config() const { return config_; }
  const models::Generator& generator() const { return generator_; }
  const models::Discriminator& discriminator() const { return discriminator_; }
  const models::EmaShadow& ema() const { return ema_; }
  // EMA shadow, identical to the live generator before ema.start.
  const models::Generator& eval_generator() const { return ema_.params; }
  std::int64_t generator_iterations() const { return g_iterations_; }

  nlohmann::json checkpoint() const;
  void load_checkpoint(const nlohmann::json& j);

 private:
  // Conditioning loss on a batch of discriminator outputs; x is needed by the
  // augmentation-based modes.
  Tensor conditioning_loss(Tape& tape, const models::DiscriminatorOutput& out, const Tensor& x,
                           std::span<const std::size_t> labels);
  Matrix sample_noise(std::size_t m);
  std::vector<std::size_t> sample_fake_labels(std::size_t m);

  TrainConfig config_;
  const data::LabeledDataset* train_;
  std::mt19937_64 rng_;
  models::Generator generator_;
  models::Discriminator discriminator_;
  models::EmaShadow ema_;
  AdamState adam_g_;
  AdamState adam_d_;
  std::int64_t g_iterations_ = 0;
};

struct Evaluator {
  const data::LabeledDataset* train;
  const data::LabeledDataset* val;
  std::size_t per_class = 256;
  std::uint64_t seed = 0;

  // Fixed noise per evaluation so records depend only on network state.
  eval::HistoryRecord evaluate(const Trainer& trainer) const;
};

struct TrainResult {
  std::vector<eval::HistoryRecord> history;
  nlohmann::json best_checkpoint;
  nlohmann::json final_checkpoint;
  double best_class_frechet = 0.0;
  std::int64_t best_iteration = 0;
};

using RecordSink = std::function<void(const eval::HistoryRecord&)>;

// Runs the full loop. Every evaluation record is passed to `sink` as soon as it
// exists. A non-finite loss raises NumericError naming the iteration; records
// produced before it have already reached the sink.
TrainResult run_training(const TrainConfig& config, const data::LabeledDataset& train, const data::LabeledDataset& val,
                         const RecordSink& sink = {});

}  // namespace contra::train
