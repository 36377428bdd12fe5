#pragma once

// Spectral-normalized conditional MLPs. The generator conditions every hidden
// layer with a class-dependent scale/shift; the discriminator exposes an
// adversarial head, a unit-sphere projection head and the per-mode
// conditioning tables.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "contra/autodiff.hpp"

namespace contra::models {

using ad::Tape;
using ad::Tensor;

enum class ConditioningMode { none, acgan, projgan, contra, eq7, ntxent, pnca, contra_aps };

std::string to_string(ConditioningMode mode);
// Accepts the command-line names: none, acgan, projgan, 2c, eq7, ntxent, pnca, 2c-aps.
ConditioningMode parse_mode(const std::string& name);
std::vector<std::string> mode_names();
// Modes whose loss reads the contrastive class table e(·).
bool uses_class_table(ConditioningMode mode);

struct NamedParam {
  std::string name;
  Tensor tensor;
};

// Power-iteration state of one spectrally normalized weight.
struct SpectralState {
  std::vector<double> u;
  double sigma = 1.0;
};

struct SpectralNormResult {
  Tensor weight;
  std::vector<double> u;
  double sigma = 1.0;
};

// v = normalize(Wᵀu), u' = normalize(W v), σ = u'ᵀ W v, repeated n times.
// The returned weight is W / σ with σ treated as a constant.
SpectralNormResult spectral_normalize(Tape& tape, const Tensor& w, std::span<const double> u, int n_power_iters = 1);

// Dense layer x·W + b with optional spectral normalization of W (in×out).
class Linear {
 public:
  Linear() = default;
  Linear(std::size_t in, std::size_t out, bool spectral, bool bias, std::mt19937_64& rng);

  Tensor forward(Tape& tape, const Tensor& x) const;
  // Advances the power iteration and refreshes σ.
  void power_iterate(int iterations = 1);
  // W / σ with the currently stored σ (identity scaling without SN).
  Matrix effective_weight() const;

  bool spectral() const { return spectral_; }
  const SpectralState& spectral_state() const { return sn_; }
  SpectralState& spectral_state() { return sn_; }
  const Tensor& weight() const { return weight_; }
  void append_parameters(const std::string& prefix, std::vector<NamedParam>& out) const;
  Linear clone() const;

 private:
  Tensor weight_;
  Tensor bias_;
  bool spectral_ = false;
  SpectralState sn_;
};

Matrix orthogonal_init(std::size_t rows, std::size_t cols, std::mt19937_64& rng);

struct GeneratorConfig {
  std::size_t noise_dim = 8;
  std::vector<std::size_t> hidden = {64, 64};
  std::size_t class_embed_dim = 16;
  std::size_t output_dim = 2;
  std::size_t num_classes = 8;
  bool conditional = true;
  bool spectral = true;
};

class Generator {
 public:
  Generator() = default;
  Generator(const GeneratorConfig& config, std::mt19937_64& rng);

  // z: m×noise_dim, output m×output_dim in (-1, 1).
  Tensor forward(Tape& tape, const Tensor& z, std::span<const std::size_t> labels) const;
  Matrix sample(const Matrix& z, std::span<const std::size_t> labels) const;

  void power_iterate(int iterations = 1);
  void copy_spectral_state(const Generator& other);
  std::vector<NamedParam> parameters() const;
  std::vector<const Linear*> layers() const;
  std::vector<Linear*> mutable_layers();
  const GeneratorConfig& config() const { return config_; }
  Generator clone() const;

  // Conditioning maps (scale_i, shift_i), exposed for degenerate-conditioning checks.
  std::vector<Tensor> scale_maps() const { return scale_maps_; }
  std::vector<Tensor> shift_maps() const { return shift_maps_; }

 private:
  GeneratorConfig config_;
  Tensor class_embed_;
  std::vector<Linear> hidden_;
  std::vector<Tensor> scale_maps_;
  std::vector<Tensor> shift_maps_;
  Linear out_;
};

enum class ProjectionType { linear, mlp };
std::string to_string(ProjectionType type);
ProjectionType parse_projection_type(const std::string& name);

struct DiscriminatorConfig {
  std::size_t input_dim = 2;
  std::vector<std::size_t> trunk = {64, 64};
  std::size_t proj_dim = 16;
  ProjectionType proj_type = ProjectionType::linear;
  std::size_t num_classes = 8;
  ConditioningMode mode = ConditioningMode::contra;
  bool spectral = true;
  double leaky_slope = 0.2;
};

struct DiscriminatorOutput {
  Tensor adv_score;                    // m×1
  Tensor embedding;                    // m×proj_dim, unit rows
  Tensor trunk;                        // m×k
  std::optional<Tensor> class_logits;  // m×C, acgan only
};

class Discriminator {
 public:
  Discriminator() = default;
  Discriminator(const DiscriminatorConfig& config, std::mt19937_64& rng);

  DiscriminatorOutput forward(Tape& tape, const Tensor& x, std::span<const std::size_t> labels) const;
  // Adversarial scores only, no tape kept.
  std::vector<double> score(const Matrix& x, std::span<const std::size_t> labels) const;

  void power_iterate(int iterations = 1);
  std::vector<NamedParam> parameters() const;
  // All weight layers in forward order with stable names.
  std::vector<std::pair<std::string, const Linear*>> layers() const;
  std::vector<std::pair<std::string, Linear*>> mutable_layers();
  const DiscriminatorConfig& config() const { return config_; }
  const Tensor& class_table() const { return class_table_; }
  const Tensor& projection_table() const { return proj_table_; }

 private:
  // Trunk and adversarial head only; embedding and class logits left empty.
  DiscriminatorOutput adversarial(Tape& tape, const Tensor& x, std::span<const std::size_t> labels) const;

  DiscriminatorConfig config_;
  std::vector<Linear> trunk_;
  Linear adv_head_;
  std::vector<Linear> proj_head_;
  Linear classifier_;
  Tensor class_table_;  // C×proj_dim, contrastive modes
  Tensor proj_table_;   // C×k, projgan
};

struct EmaShadow {
  Generator params;
  double decay = 0.9999;
  std::int64_t start_iteration = 20000;
};

// Before start_iteration the shadow copies live; afterwards it blends
// decay·shadow + (1-decay)·live.
void ema_update(EmaShadow& shadow, const Generator& live, std::int64_t iteration);

nlohmann::json parameters_to_json(const std::vector<NamedParam>& params);
// Copies values from json into the named parameters; shapes must agree.
void parameters_from_json(const nlohmann::json& j, const std::vector<NamedParam>& params);

}  // namespace contra::models
