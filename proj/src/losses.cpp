#include "contra/losses.hpp"

#include <cmath>
#include <string>

#include "contra/errors.hpp"

namespace contra::losses {

namespace {

constexpr double kUnitTolerance = 1e-6;

void require_unit_rows(const char* what, const Matrix& m) {
  for (std::size_t i = 0; i < m.rows; ++i) {
    double n2 = 0.0;
    for (double v : m.row(i)) n2 += v * v;
    if (std::abs(std::sqrt(n2) - 1.0) > kUnitTolerance) {
      throw ContractError(std::string(what) + ": row " + std::to_string(i) + " is not unit length (norm " +
                          std::to_string(std::sqrt(n2)) + ")");
    }
  }
}

// Row-wise dot products of two m×d tensors, m×1.
Tensor row_dot(Tape& tape, const Tensor& a, const Tensor& b) {
  return ad::reduce(tape, ad::mul(tape, a, b), ad::ReduceKind::sum, ad::ReduceAxis::rows);
}

// Shared body of the eq7, 2C and APS losses. Column 0 of the logit matrix holds the
// anchor positive, columns 1..m the data-to-data similarities.
Tensor contrastive(Tape& tape, const Tensor& features, const Tensor& positives,
                   std::span<const std::size_t> labels, Temperature t, bool same_label_positives) {
  const std::size_t m = features.rows();
  const double inv_t = 1.0 / t.value();
  const Tensor pos = ad::scale(tape, row_dot(tape, features, positives), inv_t);
  const Tensor sims = ad::scale(tape, ad::matmul(tape, features, ad::transpose(tape, features)), inv_t);
  const Tensor logits = ad::concat_cols(tape, pos, sims);

  Matrix denominator(m, m + 1);
  Matrix numerator(m, m + 1);
  for (std::size_t i = 0; i < m; ++i) {
    denominator(i, 0) = numerator(i, 0) = 1.0;
    for (std::size_t k = 0; k < m; ++k) {
      if (k == i) continue;
      denominator(i, k + 1) = 1.0;
      if (same_label_positives && labels[k] == labels[i]) numerator(i, k + 1) = 1.0;
    }
  }
  const Tensor per_anchor = ad::sub(tape, ad::masked_log_sum_exp_rows(tape, logits, denominator),
                                    ad::masked_log_sum_exp_rows(tape, logits, numerator));
  return ad::mean(tape, per_anchor);
}

}  // namespace

Temperature::Temperature(double t) : t_(t) {
  if (!(t > 0.0) || !std::isfinite(t)) throw ContractError("temperature must be positive, got " + std::to_string(t));
}

void EmbeddingBatch::validate() const {
  if (!features.defined() || labels.empty()) throw ContractError("EmbeddingBatch: empty batch");
  if (features.rows() != labels.size()) {
    throw ContractError("EmbeddingBatch: " + std::to_string(features.rows()) + " feature rows for " +
                        std::to_string(labels.size()) + " labels");
  }
  if (class_table.defined()) {
    if (class_table.cols() != features.cols()) {
      throw ContractError("EmbeddingBatch: class table " + class_table.value().shape_string() +
                          " does not match features " + features.value().shape_string());
    }
    for (std::size_t y : labels) {
      if (y >= class_table.rows()) {
        throw ContractError("EmbeddingBatch: label " + std::to_string(y) + " out of range for " +
                            std::to_string(class_table.rows()) + " classes");
      }
    }
  }
  require_unit_rows("EmbeddingBatch features", features.value());
}

Tensor nt_xent(Tape& tape, const Tensor& augmented, Temperature t) {
  const std::size_t n = augmented.rows();
  if (n == 0 || n % 2 != 0) throw ContractError("nt_xent: need an even, non-zero row count, got " + std::to_string(n));
  require_unit_rows("nt_xent", augmented.value());
  const Tensor sims =
      ad::scale(tape, ad::matmul(tape, augmented, ad::transpose(tape, augmented)), 1.0 / t.value());
  Matrix denominator(n, n, 1.0);
  Matrix partner(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    denominator(i, i) = 0.0;
    partner(i, i ^ 1U) = 1.0;
  }
  const Tensor per_anchor = ad::sub(tape, ad::masked_log_sum_exp_rows(tape, sims, denominator),
                                    ad::masked_log_sum_exp_rows(tape, sims, partner));
  return ad::mean(tape, per_anchor);
}

Tensor loss_eq7(Tape& tape, const EmbeddingBatch& batch, Temperature t) {
  batch.validate();
  const Tensor e = ad::gather_rows(tape, ad::l2_normalize_rows(tape, batch.class_table), batch.labels);
  return contrastive(tape, batch.features, e, batch.labels, t, false);
}

Tensor loss_2c(Tape& tape, const EmbeddingBatch& batch, Temperature t) {
  batch.validate();
  const Tensor e = ad::gather_rows(tape, ad::l2_normalize_rows(tape, batch.class_table), batch.labels);
  return contrastive(tape, batch.features, e, batch.labels, t, true);
}

Tensor loss_2c_aps(Tape& tape, const EmbeddingBatch& batch, const Tensor& augmented_features, Temperature t) {
  if (!batch.features.defined() || augmented_features.rows() != batch.features.rows() ||
      augmented_features.cols() != batch.features.cols()) {
    throw ContractError("loss_2c_aps: augmented features " + augmented_features.value().shape_string() +
                        " not row-aligned with batch");
  }
  EmbeddingBatch unconditioned{batch.features, batch.labels, {}};
  unconditioned.validate();
  require_unit_rows("loss_2c_aps augmented features", augmented_features.value());
  return contrastive(tape, batch.features, augmented_features, batch.labels, t, true);
}

Tensor proxy_nca(Tape& tape, const EmbeddingBatch& batch, Temperature t) {
  batch.validate();
  const std::size_t classes = batch.num_classes();
  if (classes < 2) throw ContractError("proxy_nca: need at least 2 classes, got " + std::to_string(classes));
  const Tensor proxies = ad::l2_normalize_rows(tape, batch.class_table);
  const Tensor sims = ad::scale(tape, ad::matmul(tape, batch.features, ad::transpose(tape, proxies)), 1.0 / t.value());
  const std::size_t m = batch.size();
  Matrix target(m, classes);
  Matrix others(m, classes, 1.0);
  for (std::size_t i = 0; i < m; ++i) {
    target(i, batch.labels[i]) = 1.0;
    others(i, batch.labels[i]) = 0.0;
  }
  const Tensor per_anchor = ad::sub(tape, ad::masked_log_sum_exp_rows(tape, sims, others),
                                    ad::masked_log_sum_exp_rows(tape, sims, target));
  return ad::mean(tape, per_anchor);
}

Tensor acgan_aux_loss(Tape& tape, const Tensor& class_logits, std::span<const std::size_t> labels) {
  if (class_logits.rows() != labels.size()) {
    throw ContractError("acgan_aux_loss: " + std::to_string(labels.size()) + " labels for logits " +
                        class_logits.value().shape_string());
  }
  Matrix target(class_logits.rows(), class_logits.cols());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] >= class_logits.cols()) {
      throw ContractError("acgan_aux_loss: label " + std::to_string(labels[i]) + " out of range for " +
                          std::to_string(class_logits.cols()) + " classes");
    }
    target(i, labels[i]) = 1.0;
  }
  const Tensor per_sample = ad::sub(tape, ad::log_sum_exp_rows(tape, class_logits),
                                    ad::masked_log_sum_exp_rows(tape, class_logits, target));
  return ad::mean(tape, per_sample);
}

Tensor projection_term(Tape& tape, const Tensor& trunk_features, const Tensor& class_table_proj,
                       std::span<const std::size_t> labels) {
  if (trunk_features.cols() != class_table_proj.cols() || trunk_features.rows() != labels.size()) {
    throw DimensionError("projection_term: features " + trunk_features.value().shape_string() + ", table " +
                         class_table_proj.value().shape_string() + ", " + std::to_string(labels.size()) +
                         " labels");
  }
  for (std::size_t y : labels) {
    if (y >= class_table_proj.rows()) {
      throw DimensionError("projection_term: label " + std::to_string(y) + " out of range for " +
                           std::to_string(class_table_proj.rows()) + " classes");
    }
  }
  return row_dot(tape, trunk_features, ad::gather_rows(tape, class_table_proj, labels));
}

}  // namespace contra::losses
