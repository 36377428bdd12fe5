#pragma once

// Fréchet distance between Gaussian fits of raw sample coordinates, plus the
// discriminator stability monitors (authenticity-accuracy gap, spectral norm
// trends, collapse flags). Distances here are on data coordinates and are not
// comparable to Inception-feature FID values.

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "contra/datasets.hpp"
#include "contra/linalg.hpp"
#include "contra/models.hpp"

namespace contra::eval {

inline constexpr double kCovarianceRegularizer = 1e-6;

struct GaussianStats {
  std::vector<double> mean;
  Matrix cov;  // population covariance + 1e-6·I, symmetrized
  std::size_t n = 0;
};

GaussianStats fit_gaussian(const Matrix& samples);

// Squared Wasserstein-2 distance between two Gaussians (FID convention).
double frechet_distance(const GaussianStats& a, const GaussianStats& b);

struct ClassFrechet {
  std::vector<double> per_class;
  double mean = 0.0;
  double pooled = 0.0;
};

ClassFrechet class_conditional_frechet(const Matrix& real, std::span<const std::size_t> real_labels, const Matrix& fake,
                                       std::span<const std::size_t> fake_labels, std::size_t num_classes);

struct AuthenticityAccuracy {
  double acc_train = 0.0;
  double acc_val = 0.0;
  double acc_fake = 0.0;
  double gap() const { return acc_train - acc_val; }
};

// A real sample is classified correctly when its score is > 0, a fake one when
// its score is <= 0.
AuthenticityAccuracy authenticity_accuracy(const models::Discriminator& d, const data::LabeledDataset& real_train,
                                           const data::LabeledDataset& real_val, const Matrix& fake,
                                           std::span<const std::size_t> fake_labels);

struct LayerSigma {
  std::string layer;
  double effective = 0.0;  // largest singular value of the weight actually applied
  double raw = 0.0;        // largest singular value of the stored weight
};

// Brute-force (Jacobi) singular values, independent of the power-iteration state.
std::vector<LayerSigma> spectral_trend(const models::Discriminator& d);

struct HistoryRecord {
  long long iteration = 0;
  double loss_d = 0.0;
  double loss_g = 0.0;
  double loss_c_real = 0.0;
  double loss_c_fake = 0.0;
  double frechet = 0.0;        // pooled, unconditional
  double class_frechet = 0.0;  // mean over classes
  std::vector<double> class_frechet_per_class;
  double acc_train = 0.0;
  double acc_val = 0.0;
  double acc_fake = 0.0;
  std::vector<double> sigma;      // effective, per D layer
  std::vector<double> sigma_raw;  // stored weights, per D layer
  std::optional<double> wallclock;
};

nlohmann::json to_json(const HistoryRecord& r);

struct CollapseFlags {
  std::optional<std::size_t> gap_index;    // first record with gap > 0.5
  std::optional<std::size_t> sigma_index;  // first record with a >50% σ jump
};

inline constexpr double kGapThreshold = 0.5;
inline constexpr double kSigmaJumpThreshold = 0.5;

CollapseFlags collapse_detector(std::span<const HistoryRecord> history);

}  // namespace contra::eval
