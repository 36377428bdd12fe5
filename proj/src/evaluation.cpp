#include "contra/evaluation.hpp"

#include <algorithm>
#include <cmath>

#include "contra/errors.hpp"

namespace contra::eval {

GaussianStats fit_gaussian(const Matrix& samples) {
  if (samples.rows < 2) {
    throw ContractError("fit_gaussian: insufficient samples, need >= 2, got " + std::to_string(samples.rows));
  }
  const std::size_t n = samples.rows;
  const std::size_t dim = samples.cols;
  GaussianStats s;
  s.n = n;
  s.mean.assign(dim, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t d = 0; d < dim; ++d) s.mean[d] += samples(i, d);
  for (double& v : s.mean) v /= static_cast<double>(n);

  s.cov = Matrix(dim, dim);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t a = 0; a < dim; ++a) {
      const double da = samples(i, a) - s.mean[a];
      for (std::size_t b = a; b < dim; ++b) s.cov(a, b) += da * (samples(i, b) - s.mean[b]);
    }
  for (std::size_t a = 0; a < dim; ++a) {
    for (std::size_t b = a; b < dim; ++b) {
      s.cov(a, b) /= static_cast<double>(n);
      s.cov(b, a) = s.cov(a, b);
    }
    s.cov(a, a) += kCovarianceRegularizer;
  }
  return s;
}

double frechet_distance(const GaussianStats& a, const GaussianStats& b) {
  if (a.mean.size() != b.mean.size()) {
    throw DimensionError("frechet_distance: dimension mismatch " + std::to_string(a.mean.size()) + " vs " +
                         std::to_string(b.mean.size()));
  }
  double mean_term = 0.0;
  for (std::size_t d = 0; d < a.mean.size(); ++d) mean_term += (a.mean[d] - b.mean[d]) * (a.mean[d] - b.mean[d]);
  const Matrix root_a = psd_sqrt(a.cov);
  const Matrix inner = multiply(multiply(root_a, b.cov), root_a);
  const double d2 = mean_term + trace(a.cov) + trace(b.cov) - 2.0 * trace(psd_sqrt(inner));
  return std::max(d2, 0.0);
}

ClassFrechet class_conditional_frechet(const Matrix& real, std::span<const std::size_t> real_labels, const Matrix& fake,
                                       std::span<const std::size_t> fake_labels, std::size_t num_classes) {
  if (real.rows != real_labels.size() || fake.rows != fake_labels.size()) {
    throw DimensionError("class_conditional_frechet: sample/label count mismatch");
  }
  const auto select = [](const Matrix& m, std::span<const std::size_t> labels, std::size_t c) {
    std::vector<double> rows;
    for (std::size_t i = 0; i < labels.size(); ++i)
      if (labels[i] == c) rows.insert(rows.end(), m.row(i).begin(), m.row(i).end());
    const std::size_t n = m.cols == 0 ? 0 : rows.size() / m.cols;
    return Matrix(n, m.cols, std::move(rows));
  };

  ClassFrechet out;
  for (std::size_t c = 0; c < num_classes; ++c) {
    const Matrix r = select(real, real_labels, c);
    const Matrix f = select(fake, fake_labels, c);
    if (r.rows < 2 || f.rows < 2) {
      throw ContractError("class_conditional_frechet: class " + std::to_string(c) +
                          " needs >= 2 samples in both sets (real " + std::to_string(r.rows) + ", fake " +
                          std::to_string(f.rows) + ")");
    }
    out.per_class.push_back(frechet_distance(fit_gaussian(r), fit_gaussian(f)));
  }
  double total = 0.0;
  for (double v : out.per_class) total += v;
  out.mean = num_classes ? total / static_cast<double>(num_classes) : 0.0;
  out.pooled = frechet_distance(fit_gaussian(real), fit_gaussian(fake));
  return out;
}

AuthenticityAccuracy authenticity_accuracy(const models::Discriminator& d, const data::LabeledDataset& real_train,
                                           const data::LabeledDataset& real_val, const Matrix& fake,
                                           std::span<const std::size_t> fake_labels) {
  if (real_train.size() == 0 || real_val.size() == 0 || fake.rows == 0) {
    throw ContractError("authenticity_accuracy: empty sample set");
  }
  const auto fraction = [](const std::vector<double>& scores, bool real) {
    const auto correct = std::count_if(scores.begin(), scores.end(), [real](double s) { return real ? s > 0.0 : s <= 0.0; });
    return static_cast<double>(correct) / static_cast<double>(scores.size());
  };
  AuthenticityAccuracy acc;
  acc.acc_train = fraction(d.score(real_train.samples, real_train.labels), true);
  acc.acc_val = fraction(d.score(real_val.samples, real_val.labels), true);
  acc.acc_fake = fraction(d.score(fake, fake_labels), false);
  return acc;
}

std::vector<LayerSigma> spectral_trend(const models::Discriminator& d) {
  std::vector<LayerSigma> out;
  for (const auto& [name, layer] : d.layers()) {
    out.push_back({name, largest_singular_value(layer->effective_weight()), largest_singular_value(layer->weight().value())});
  }
  return out;
}

nlohmann::json to_json(const HistoryRecord& r) {
  nlohmann::json j = {{"iteration", r.iteration},
                      {"L_D", r.loss_d},
                      {"L_G", r.loss_g},
                      {"L_C_real", r.loss_c_real},
                      {"L_C_fake", r.loss_c_fake},
                      {"frechet", r.frechet},
                      {"class_frechet", r.class_frechet},
                      {"class_frechet_per_class", r.class_frechet_per_class},
                      {"acc_train", r.acc_train},
                      {"acc_val", r.acc_val},
                      {"acc_fake", r.acc_fake},
                      {"gap", r.acc_train - r.acc_val},
                      {"sigma", r.sigma},
                      {"sigma_raw", r.sigma_raw}};
  if (r.wallclock) j["wallclock"] = *r.wallclock;
  return j;
}

CollapseFlags collapse_detector(std::span<const HistoryRecord> history) {
  if (history.empty()) throw ContractError("collapse_detector: empty history");
  CollapseFlags flags;
  const auto jumped = [](const std::vector<double>& prev, const std::vector<double>& cur) {
    for (std::size_t l = 0; l < std::min(prev.size(), cur.size()); ++l) {
      if (prev[l] > 0.0 && std::abs(cur[l] - prev[l]) / prev[l] > kSigmaJumpThreshold) return true;
    }
    return false;
  };
  for (std::size_t i = 0; i < history.size(); ++i) {
    if (!flags.gap_index && history[i].acc_train - history[i].acc_val > kGapThreshold) flags.gap_index = i;
    if (!flags.sigma_index && i > 0 &&
        (jumped(history[i - 1].sigma, history[i].sigma) || jumped(history[i - 1].sigma_raw, history[i].sigma_raw))) {
      flags.sigma_index = i;
    }
  }
  return flags;
}

}  // namespace contra::eval
