#pragma once

// Minimal define-by-run reverse-mode differentiation over dense double
// matrices. A Tape records every differentiable operation in execution order;
// Tape::backward walks the records in exact reverse order.

#include <cstddef>
#include <functional>
#include <limits>
#include <memory>
#include <span>
#include <vector>

#include "contra/linalg.hpp"

namespace contra::ad {

class Tape;

class Tensor {
 public:
  static constexpr std::size_t kLeaf = std::numeric_limits<std::size_t>::max();

  Tensor() = default;

  // Leaf that receives gradients.
  static Tensor parameter(Matrix value);
  // Leaf excluded from differentiation.
  static Tensor constant(Matrix value);

  bool defined() const { return node_ != nullptr; }
  std::size_t rows() const { return node_->value.rows; }
  std::size_t cols() const { return node_->value.cols; }
  bool is_scalar() const { return rows() == 1 && cols() == 1; }

  const Matrix& value() const { return node_->value; }
  Matrix& mutable_value() { return node_->value; }
  double item() const;

  // Gradient accumulator, same shape as value. Zero until a backward pass reaches it.
  const Matrix& grad() const { return node_->grad; }
  Matrix& mutable_grad() { return node_->grad; }
  void zero_grad();

  bool requires_grad() const { return node_->requires_grad; }
  bool is_leaf() const { return node_->tape_id == kLeaf; }
  // Index of the producing record on its tape, kLeaf for leaves.
  std::size_t tape_id() const { return node_->tape_id; }

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    bool requires_grad = false;
    std::size_t tape_id = kLeaf;
  };

  explicit Tensor(std::shared_ptr<Node> n) : node_(std::move(n)) {}
  Node& node() const { return *node_; }

  std::shared_ptr<Node> node_;

  friend class Tape;
};

class Tape {
 public:
  using BackwardRule = std::function<void()>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Creates the output of an operation. When any input requires a gradient the
  // output is recorded together with `rule`, which receives (inputs, output)
  // and must accumulate into the inputs' gradients.
  Tensor record(Matrix value, std::vector<Tensor> inputs,
                std::function<void(std::span<Tensor> inputs, const Tensor& output)> rule);

  // Seeds d(objective)/d(objective) = 1 and propagates to every reachable
  // leaf. Gradients of intermediates are reset at the start of each call, leaf
  // gradients accumulate across calls until zero_grad().
  void backward(const Tensor& objective);

  std::size_t size() const { return records_.size(); }
  void clear() { records_.clear(); }

 private:
  struct Record {
    std::vector<Tensor> inputs;
    Tensor output;
    std::function<void(std::span<Tensor>, const Tensor&)> rule;
  };
  std::vector<Record> records_;
};

enum class ReduceKind { mean, sum };
// rows: one value per row (m×1); cols: one value per column (1×n); all: 1×1.
enum class ReduceAxis { all, rows, cols };

Tensor matmul(Tape& tape, const Tensor& a, const Tensor& b);
Tensor transpose(Tape& tape, const Tensor& a);

Tensor add(Tape& tape, const Tensor& a, const Tensor& b);
Tensor sub(Tape& tape, const Tensor& a, const Tensor& b);
Tensor mul(Tape& tape, const Tensor& a, const Tensor& b);
Tensor scale(Tape& tape, const Tensor& a, double c);
Tensor add_scalar(Tape& tape, const Tensor& a, double c);
// a (m×n) + row (1×n) broadcast over rows.
Tensor add_row(Tape& tape, const Tensor& a, const Tensor& row);

Tensor relu(Tape& tape, const Tensor& a);
Tensor leaky_relu(Tape& tape, const Tensor& a, double slope = 0.2);
Tensor tanh(Tape& tape, const Tensor& a);
Tensor exp(Tape& tape, const Tensor& a);
Tensor log(Tape& tape, const Tensor& a);

enum class Elementwise { add, sub, mul, scale, relu, leaky_relu, tanh, exp, log };
// Dispatching form. `b` is required for binary kinds; `param` is the scale
// factor for `scale` and the slope for `leaky_relu`.
Tensor elementwise(Tape& tape, Elementwise kind, const Tensor& a, const Tensor& b = {},
                   double param = 0.2);

// Per-row log Σ exp with max subtraction, m×1.
Tensor log_sum_exp_rows(Tape& tape, const Tensor& a);
// Same, restricted to entries where mask(i, j) != 0. Every row needs one live entry.
Tensor masked_log_sum_exp_rows(Tape& tape, const Tensor& a, const Matrix& mask);

Tensor l2_normalize_rows(Tape& tape, const Tensor& a);

Tensor reduce(Tape& tape, const Tensor& a, ReduceKind kind, ReduceAxis axis);
inline Tensor mean(Tape& tape, const Tensor& a) { return reduce(tape, a, ReduceKind::mean, ReduceAxis::all); }
inline Tensor sum(Tape& tape, const Tensor& a) { return reduce(tape, a, ReduceKind::sum, ReduceAxis::all); }

// out.row(i) = a.row(index[i]); gradients scatter-add back.
Tensor gather_rows(Tape& tape, const Tensor& a, std::span<const std::size_t> index);
Tensor concat_rows(Tape& tape, const Tensor& top, const Tensor& bottom);
Tensor concat_cols(Tape& tape, const Tensor& left, const Tensor& right);

// Scalar function of a set of leaves, rebuilt on the given tape.
using ScalarFn = std::function<Tensor(Tape&)>;

// Central-difference check of d f / d leaves. Returns the maximum over all
// entries of |g_ad - g_fd| / max(1, |g_fd|). Leaf values are restored.
double grad_check(const ScalarFn& f, std::span<Tensor> leaves, double eps = 1e-5);
double grad_check(const std::function<Tensor(Tape&, const Tensor&)>& f, Tensor x, double eps = 1e-5);

}  // namespace contra::ad
