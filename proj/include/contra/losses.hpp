#pragma once

// Conditioning objectives evaluated on discriminator embeddings. Every
// contrastive loss works on cosine similarities of unit rows and routes its
// exponentials through log-sum-exp.

#include <cstddef>
#include <span>
#include <vector>

#include "contra/autodiff.hpp"

namespace contra::losses {

using ad::Tape;
using ad::Tensor;

class Temperature {
 public:
  explicit Temperature(double t);
  double value() const { return t_; }

 private:
  double t_;
};

// features: m×d unit rows l(x_i); labels: class ids; class_table: C×d class
// embeddings e(·), unit-normalized inside the contrastive losses.
struct EmbeddingBatch {
  Tensor features;
  std::vector<std::size_t> labels;
  Tensor class_table;

  std::size_t size() const { return labels.size(); }
  std::size_t num_classes() const { return class_table.defined() ? class_table.rows() : 0; }
  // Throws ContractError when an invariant is broken.
  void validate() const;
};

// NT-Xent over 2m rows paired as (2k, 2k+1); mean over all 2m anchors.
Tensor nt_xent(Tape& tape, const Tensor& augmented, Temperature t);

// Class embedding is the only positive; every other sample is a negative.
Tensor loss_eq7(Tape& tape, const EmbeddingBatch& batch, Temperature t);

// Conditional contrastive (2C) loss. Same-label samples k != i join the
// class embedding in the numerator.
Tensor loss_2c(Tape& tape, const EmbeddingBatch& batch, Temperature t);

// 2C with e(y_i) replaced by the embedding of an augmented copy of x_i.
Tensor loss_2c_aps(Tape& tape, const EmbeddingBatch& batch, const Tensor& augmented_features, Temperature t);

// Cosine-similarity proxy-NCA: target proxy against all other proxies.
Tensor proxy_nca(Tape& tape, const EmbeddingBatch& batch, Temperature t);

// Mean softmax cross-entropy of m×C logits.
Tensor acgan_aux_loss(Tape& tape, const Tensor& class_logits, std::span<const std::size_t> labels);

// Per-sample trunk(x_i)ᵀ emb(y_i), m×1. The table is used unnormalized.
Tensor projection_term(Tape& tape, const Tensor& trunk_features, const Tensor& class_table_proj,
                       std::span<const std::size_t> labels);

}  // namespace contra::losses
