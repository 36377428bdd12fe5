#include "contra/models.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>

#include "contra/errors.hpp"
#include "contra/losses.hpp"

namespace contra::models {

namespace {

constexpr double kSigmaFloor = 1e-12;

double normalize_in_place(std::vector<double>& v) {
  double n2 = 0.0;
  for (double x : v) n2 += x * x;
  const double n = std::sqrt(n2);
  if (n > kSigmaFloor)
    for (double& x : v) x /= n;
  return n;
}

Matrix gaussian(std::size_t rows, std::size_t cols, double stddev, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  Matrix m(rows, cols);
  for (double& v : m.data) v = dist(rng);
  return m;
}

void check_labels(const char* who, std::span<const std::size_t> labels, std::size_t classes) {
  for (std::size_t y : labels) {
    if (y >= classes) {
      throw ContractError(std::string(who) + ": label " + std::to_string(y) + " out of range for " +
                          std::to_string(classes) + " classes");
    }
  }
}

// One power-iteration step on W (rows×cols), u of length rows.
double power_step(const Matrix& w, std::vector<double>& u) {
  std::vector<double> v(w.cols, 0.0);
  for (std::size_t i = 0; i < w.rows; ++i)
    for (std::size_t j = 0; j < w.cols; ++j) v[j] += w(i, j) * u[i];
  normalize_in_place(v);
  std::vector<double> wv(w.rows, 0.0);
  for (std::size_t i = 0; i < w.rows; ++i)
    for (std::size_t j = 0; j < w.cols; ++j) wv[i] += w(i, j) * v[j];
  u = wv;
  normalize_in_place(u);
  double sigma = 0.0;
  for (std::size_t i = 0; i < w.rows; ++i) sigma += u[i] * wv[i];
  return sigma;
}

double floor_sigma(double sigma) {
  if (sigma < kSigmaFloor) {
    std::cerr << "warning: spectral norm below " << kSigmaFloor << ", flooring\n";
    return kSigmaFloor;
  }
  return sigma;
}

}  // namespace

std::string to_string(ConditioningMode mode) {
  switch (mode) {
    case ConditioningMode::none: return "none";
    case ConditioningMode::acgan: return "acgan";
    case ConditioningMode::projgan: return "projgan";
    case ConditioningMode::contra: return "2c";
    case ConditioningMode::eq7: return "eq7";
    case ConditioningMode::ntxent: return "ntxent";
    case ConditioningMode::pnca: return "pnca";
    case ConditioningMode::contra_aps: return "2c-aps";
  }
  return "?";
}

std::vector<std::string> mode_names() { return {"none", "acgan", "projgan", "ntxent", "pnca", "eq7", "2c", "2c-aps"}; }

ConditioningMode parse_mode(const std::string& name) {
  for (auto mode : {ConditioningMode::none, ConditioningMode::acgan, ConditioningMode::projgan, ConditioningMode::contra,
                    ConditioningMode::eq7, ConditioningMode::ntxent, ConditioningMode::pnca,
                    ConditioningMode::contra_aps}) {
    if (to_string(mode) == name) return mode;
  }
  if (name == "contra") return ConditioningMode::contra;
  std::string valid;
  for (const auto& n : mode_names()) valid += (valid.empty() ? "" : ", ") + n;
  throw ConfigError("unknown loss '" + name + "' (valid: " + valid + ")");
}

bool uses_class_table(ConditioningMode mode) {
  return mode == ConditioningMode::contra || mode == ConditioningMode::eq7 || mode == ConditioningMode::pnca;
}

std::string to_string(ProjectionType type) { return type == ProjectionType::linear ? "linear" : "mlp"; }

ProjectionType parse_projection_type(const std::string& name) {
  if (name == "linear") return ProjectionType::linear;
  if (name == "mlp") return ProjectionType::mlp;
  throw ConfigError("unknown projection type '" + name + "' (valid: linear, mlp)");
}

SpectralNormResult spectral_normalize(Tape& tape, const Tensor& w, std::span<const double> u, int n_power_iters) {
  if (n_power_iters < 1) throw ContractError("spectral_normalize: need at least one power iteration");
  if (u.size() != w.rows()) {
    throw DimensionError("spectral_normalize: u has length " + std::to_string(u.size()) + " for weight " +
                         w.value().shape_string());
  }
  SpectralNormResult out;
  out.u.assign(u.begin(), u.end());
  double sigma = 0.0;
  for (int i = 0; i < n_power_iters; ++i) sigma = power_step(w.value(), out.u);
  out.sigma = floor_sigma(sigma);
  out.weight = ad::scale(tape, w, 1.0 / out.sigma);
  return out;
}

Matrix orthogonal_init(std::size_t rows, std::size_t cols, std::mt19937_64& rng) {
  // Gram-Schmidt over the shorter dimension's vectors taken along the longer one.
  const bool by_cols = rows >= cols;
  const std::size_t count = by_cols ? cols : rows;
  const std::size_t len = by_cols ? rows : cols;
  Matrix g = gaussian(count, len, 1.0, rng);
  for (std::size_t i = 0; i < count; ++i) {
    auto vi = g.row(i);
    for (std::size_t j = 0; j < i; ++j) {
      auto vj = g.row(j);
      double d = 0.0;
      for (std::size_t k = 0; k < len; ++k) d += vi[k] * vj[k];
      for (std::size_t k = 0; k < len; ++k) vi[k] -= d * vj[k];
    }
    double n2 = 0.0;
    for (double x : vi) n2 += x * x;
    const double n = std::sqrt(n2);
    for (double& x : vi) x /= n;
  }
  return by_cols ? transpose(g) : g;
}

Linear::Linear(std::size_t in, std::size_t out, bool spectral, bool bias, std::mt19937_64& rng)
    : weight_(Tensor::parameter(orthogonal_init(in, out, rng))), spectral_(spectral) {
  if (bias) bias_ = Tensor::parameter(Matrix(1, out));
  if (spectral_) {
    std::normal_distribution<double> dist;
    sn_.u.resize(in);
    for (double& x : sn_.u) x = dist(rng);
    normalize_in_place(sn_.u);
    power_iterate(10);
  }
}

void Linear::power_iterate(int iterations) {
  if (!spectral_) return;
  double sigma = sn_.sigma;
  for (int i = 0; i < iterations; ++i) sigma = power_step(weight_.value(), sn_.u);
  sn_.sigma = floor_sigma(sigma);
}

Tensor Linear::forward(Tape& tape, const Tensor& x) const {
  const Tensor w = spectral_ ? ad::scale(tape, weight_, 1.0 / sn_.sigma) : weight_;
  Tensor y = ad::matmul(tape, x, w);
  return bias_.defined() ? ad::add_row(tape, y, bias_) : y;
}

Matrix Linear::effective_weight() const {
  Matrix w = weight_.value();
  if (spectral_)
    for (double& v : w.data) v /= sn_.sigma;
  return w;
}

void Linear::append_parameters(const std::string& prefix, std::vector<NamedParam>& out) const {
  out.push_back({prefix + ".weight", weight_});
  if (bias_.defined()) out.push_back({prefix + ".bias", bias_});
}

Linear Linear::clone() const {
  Linear c;
  c.weight_ = Tensor::parameter(weight_.value());
  if (bias_.defined()) c.bias_ = Tensor::parameter(bias_.value());
  c.spectral_ = spectral_;
  c.sn_ = sn_;
  return c;
}

Generator::Generator(const GeneratorConfig& config, std::mt19937_64& rng) : config_(config) {
  if (config.num_classes == 0 || config.noise_dim == 0 || config.output_dim == 0) {
    throw ConfigError("Generator: dimensions must be positive");
  }
  if (config.conditional) class_embed_ = Tensor::parameter(gaussian(config.num_classes, config.class_embed_dim, 0.02, rng));
  std::size_t width = config.noise_dim;
  for (std::size_t h : config.hidden) {
    hidden_.emplace_back(width, h, config.spectral, true, rng);
    if (config.conditional) {
      scale_maps_.push_back(Tensor::parameter(orthogonal_init(config.class_embed_dim, h, rng)));
      shift_maps_.push_back(Tensor::parameter(orthogonal_init(config.class_embed_dim, h, rng)));
    }
    width = h;
  }
  out_ = Linear(width, config.output_dim, config.spectral, true, rng);
}

Tensor Generator::forward(Tape& tape, const Tensor& z, std::span<const std::size_t> labels) const {
  if (z.cols() != config_.noise_dim || z.rows() != labels.size()) {
    throw DimensionError("Generator::forward: noise " + z.value().shape_string() + " with " +
                         std::to_string(labels.size()) + " labels, noise_dim " + std::to_string(config_.noise_dim));
  }
  check_labels("Generator::forward", labels, config_.num_classes);
  Tensor e;
  if (config_.conditional) e = ad::gather_rows(tape, class_embed_, labels);
  Tensor h = z;
  for (std::size_t i = 0; i < hidden_.size(); ++i) {
    h = hidden_[i].forward(tape, h);
    if (config_.conditional) {
      const Tensor gain = ad::add_scalar(tape, ad::matmul(tape, e, scale_maps_[i]), 1.0);
      const Tensor shift = ad::matmul(tape, e, shift_maps_[i]);
      h = ad::add(tape, ad::mul(tape, h, gain), shift);
    }
    h = ad::relu(tape, h);
  }
  return ad::tanh(tape, out_.forward(tape, h));
}

Matrix Generator::sample(const Matrix& z, std::span<const std::size_t> labels) const {
  Tape tape;
  return forward(tape, Tensor::constant(z), labels).value();
}

void Generator::power_iterate(int iterations) {
  for (auto& l : hidden_) l.power_iterate(iterations);
  out_.power_iterate(iterations);
}

void Generator::copy_spectral_state(const Generator& other) {
  if (other.hidden_.size() != hidden_.size()) throw DimensionError("copy_spectral_state: layer count mismatch");
  for (std::size_t i = 0; i < hidden_.size(); ++i) hidden_[i].spectral_state() = other.hidden_[i].spectral_state();
  out_.spectral_state() = other.out_.spectral_state();
}

std::vector<NamedParam> Generator::parameters() const {
  std::vector<NamedParam> out;
  if (config_.conditional) out.push_back({"g.class_embed", class_embed_});
  for (std::size_t i = 0; i < hidden_.size(); ++i) {
    hidden_[i].append_parameters("g.hidden" + std::to_string(i), out);
    if (!config_.conditional) continue;
    out.push_back({"g.scale" + std::to_string(i), scale_maps_[i]});
    out.push_back({"g.shift" + std::to_string(i), shift_maps_[i]});
  }
  out_.append_parameters("g.out", out);
  return out;
}

std::vector<const Linear*> Generator::layers() const {
  std::vector<const Linear*> out;
  for (const auto& l : hidden_) out.push_back(&l);
  out.push_back(&out_);
  return out;
}

std::vector<Linear*> Generator::mutable_layers() {
  std::vector<Linear*> out;
  for (auto& l : hidden_) out.push_back(&l);
  out.push_back(&out_);
  return out;
}

Generator Generator::clone() const {
  Generator g;
  g.config_ = config_;
  if (class_embed_.defined()) g.class_embed_ = Tensor::parameter(class_embed_.value());
  for (const auto& l : hidden_) g.hidden_.push_back(l.clone());
  for (const auto& t : scale_maps_) g.scale_maps_.push_back(Tensor::parameter(t.value()));
  for (const auto& t : shift_maps_) g.shift_maps_.push_back(Tensor::parameter(t.value()));
  g.out_ = out_.clone();
  return g;
}

Discriminator::Discriminator(const DiscriminatorConfig& config, std::mt19937_64& rng) : config_(config) {
  if (config.trunk.empty() || config.input_dim == 0 || config.proj_dim == 0 || config.num_classes == 0) {
    throw ConfigError("Discriminator: dimensions must be positive and the trunk non-empty");
  }
  std::size_t width = config.input_dim;
  for (std::size_t h : config.trunk) {
    trunk_.emplace_back(width, h, config.spectral, true, rng);
    width = h;
  }
  const std::size_t k = width;
  adv_head_ = Linear(k, 1, config.spectral, true, rng);
  if (config.proj_type == ProjectionType::mlp) {
    proj_head_.emplace_back(k, k, config.spectral, true, rng);
  }
  proj_head_.emplace_back(k, config.proj_dim, config.spectral, true, rng);
  if (uses_class_table(config.mode)) {
    class_table_ = Tensor::parameter(gaussian(config.num_classes, config.proj_dim, 0.02, rng));
  }
  if (config.mode == ConditioningMode::projgan) {
    proj_table_ = Tensor::parameter(gaussian(config.num_classes, k, 0.02, rng));
  }
  if (config.mode == ConditioningMode::acgan) {
    classifier_ = Linear(k, config.num_classes, config.spectral, true, rng);
  }
}

DiscriminatorOutput Discriminator::adversarial(Tape& tape, const Tensor& x, std::span<const std::size_t> labels) const {
  if (x.cols() != config_.input_dim || x.rows() != labels.size()) {
    throw DimensionError("Discriminator::forward: input " + x.value().shape_string() + " with " +
                         std::to_string(labels.size()) + " labels");
  }
  if (config_.mode != ConditioningMode::none) check_labels("Discriminator::forward", labels, config_.num_classes);

  DiscriminatorOutput out;
  Tensor h = x;
  for (const auto& layer : trunk_) h = ad::leaky_relu(tape, layer.forward(tape, h), config_.leaky_slope);
  out.trunk = h;
  out.adv_score = adv_head_.forward(tape, h);
  if (config_.mode == ConditioningMode::projgan) {
    out.adv_score = ad::add(tape, out.adv_score, losses::projection_term(tape, h, proj_table_, labels));
  }
  return out;
}

DiscriminatorOutput Discriminator::forward(Tape& tape, const Tensor& x, std::span<const std::size_t> labels) const {
  DiscriminatorOutput out = adversarial(tape, x, labels);
  Tensor p = out.trunk;
  for (std::size_t i = 0; i < proj_head_.size(); ++i) {
    p = proj_head_[i].forward(tape, p);
    if (i + 1 < proj_head_.size()) p = ad::leaky_relu(tape, p, config_.leaky_slope);
  }
  out.embedding = ad::l2_normalize_rows(tape, p);
  if (config_.mode == ConditioningMode::acgan) out.class_logits = classifier_.forward(tape, out.trunk);
  return out;
}

std::vector<double> Discriminator::score(const Matrix& x, std::span<const std::size_t> labels) const {
  Tape tape;
  return adversarial(tape, Tensor::constant(x), labels).adv_score.value().data;
}

void Discriminator::power_iterate(int iterations) {
  for (auto& l : trunk_) l.power_iterate(iterations);
  adv_head_.power_iterate(iterations);
  for (auto& l : proj_head_) l.power_iterate(iterations);
  if (config_.mode == ConditioningMode::acgan) classifier_.power_iterate(iterations);
}

std::vector<std::pair<std::string, const Linear*>> Discriminator::layers() const {
  std::vector<std::pair<std::string, const Linear*>> out;
  for (std::size_t i = 0; i < trunk_.size(); ++i) out.emplace_back("d.trunk" + std::to_string(i), &trunk_[i]);
  out.emplace_back("d.adv", &adv_head_);
  for (std::size_t i = 0; i < proj_head_.size(); ++i) out.emplace_back("d.proj" + std::to_string(i), &proj_head_[i]);
  if (config_.mode == ConditioningMode::acgan) out.emplace_back("d.classifier", &classifier_);
  return out;
}

std::vector<std::pair<std::string, Linear*>> Discriminator::mutable_layers() {
  std::vector<std::pair<std::string, Linear*>> out;
  for (std::size_t i = 0; i < trunk_.size(); ++i) out.emplace_back("d.trunk" + std::to_string(i), &trunk_[i]);
  out.emplace_back("d.adv", &adv_head_);
  for (std::size_t i = 0; i < proj_head_.size(); ++i) out.emplace_back("d.proj" + std::to_string(i), &proj_head_[i]);
  if (config_.mode == ConditioningMode::acgan) out.emplace_back("d.classifier", &classifier_);
  return out;
}

std::vector<NamedParam> Discriminator::parameters() const {
  std::vector<NamedParam> out;
  for (const auto& [name, layer] : layers()) layer->append_parameters(name, out);
  if (class_table_.defined()) out.push_back({"d.class_table", class_table_});
  if (proj_table_.defined()) out.push_back({"d.proj_table", proj_table_});
  return out;
}

void ema_update(EmaShadow& shadow, const Generator& live, std::int64_t iteration) {
  const auto dst = shadow.params.parameters();
  const auto src = live.parameters();
  if (dst.size() != src.size()) throw DimensionError("ema_update: parameter count mismatch");
  const bool copy = iteration < shadow.start_iteration;
  for (std::size_t p = 0; p < dst.size(); ++p) {
    Tensor target = dst[p].tensor;
    const Matrix& value = src[p].tensor.value();
    if (target.rows() != value.rows || target.cols() != value.cols) {
      throw DimensionError("ema_update: shape mismatch for " + src[p].name);
    }
    auto& out = target.mutable_value().data;
    if (copy) {
      out = value.data;
    } else {
      for (std::size_t i = 0; i < out.size(); ++i) out[i] = shadow.decay * out[i] + (1.0 - shadow.decay) * value.data[i];
    }
  }
  // Keep the shadow's SN state in step with the live network.
  shadow.params.copy_spectral_state(live);
}

nlohmann::json parameters_to_json(const std::vector<NamedParam>& params) {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& p : params) {
    j[p.name] = {{"shape", {p.tensor.rows(), p.tensor.cols()}}, {"data", p.tensor.value().data}};
  }
  return j;
}

void parameters_from_json(const nlohmann::json& j, const std::vector<NamedParam>& params) {
  for (const auto& p : params) {
    if (!j.contains(p.name)) throw ConfigError("checkpoint is missing parameter " + p.name);
    const auto& entry = j.at(p.name);
    const auto shape = entry.at("shape").get<std::vector<std::size_t>>();
    if (shape.size() != 2 || shape[0] != p.tensor.rows() || shape[1] != p.tensor.cols()) {
      throw DimensionError("checkpoint shape mismatch for " + p.name);
    }
    Tensor t = p.tensor;
    t.mutable_value().data = entry.at("data").get<std::vector<double>>();
    if (t.value().data.size() != shape[0] * shape[1]) throw DimensionError("checkpoint data size mismatch for " + p.name);
  }
}

}  // namespace contra::models
