#include "contra/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "contra/errors.hpp"

namespace contra::ad {

namespace {

void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + a.value().shape_string() + " vs " +
                         b.value().shape_string());
  }
}

// Accumulate g into t's gradient if t participates in differentiation.
void accumulate(Tensor& t, const Matrix& g) {
  if (!t.requires_grad()) return;
  auto& acc = t.mutable_grad().data;
  for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += g.data[i];
}

template <typename F>
Matrix map(const Matrix& a, F f) {
  Matrix out(a.rows, a.cols);
  std::transform(a.data.begin(), a.data.end(), out.data.begin(), f);
  return out;
}

// Unary elementwise op whose local derivative is computed from (input, output).
template <typename Fwd, typename Deriv>
Tensor unary(Tape& tape, const Tensor& a, Fwd fwd, Deriv deriv) {
  return tape.record(map(a.value(), fwd), {a}, [deriv](std::span<Tensor> in, const Tensor& out) {
    if (!in[0].requires_grad()) return;
    const auto& x = in[0].value().data;
    const auto& y = out.value().data;
    const auto& g = out.grad().data;
    auto& acc = in[0].mutable_grad().data;
    for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += g[i] * deriv(x[i], y[i]);
  });
}

}  // namespace

Tensor Tensor::parameter(Matrix value) {
  auto n = std::make_shared<Node>();
  n->grad = Matrix(value.rows, value.cols);
  n->value = std::move(value);
  n->requires_grad = true;
  return Tensor(std::move(n));
}

Tensor Tensor::constant(Matrix value) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  return Tensor(std::move(n));
}

double Tensor::item() const {
  if (!is_scalar()) throw ContractError("Tensor::item on non-scalar " + value().shape_string());
  return value().data[0];
}

void Tensor::zero_grad() {
  if (requires_grad()) std::fill(node_->grad.data.begin(), node_->grad.data.end(), 0.0);
}

Tensor Tape::record(Matrix value, std::vector<Tensor> inputs,
                    std::function<void(std::span<Tensor>, const Tensor&)> rule) {
  const bool needs_grad =
      std::any_of(inputs.begin(), inputs.end(), [](const Tensor& t) { return t.requires_grad(); });
  if (!needs_grad) return Tensor::constant(std::move(value));

  auto n = std::make_shared<Tensor::Node>();
  n->grad = Matrix(value.rows, value.cols);
  n->value = std::move(value);
  n->requires_grad = true;
  n->tape_id = records_.size();
  Tensor out(std::move(n));
  records_.push_back(Record{std::move(inputs), out, std::move(rule)});
  return out;
}

void Tape::backward(const Tensor& objective) {
  if (!objective.defined() || !objective.is_scalar()) {
    throw ContractError("backward: objective must be 1x1, got " +
                        (objective.defined() ? objective.value().shape_string() : std::string("undefined")));
  }
  if (!objective.requires_grad()) return;
  for (auto& r : records_) r.output.zero_grad();
  objective.node().grad.data[0] += 1.0;
  for (auto it = records_.rbegin(); it != records_.rend(); ++it) {
    it->rule(it->inputs, it->output);
  }
}

Tensor matmul(Tape& tape, const Tensor& a, const Tensor& b) {
  if (a.cols() != b.rows()) {
    throw DimensionError("matmul: shape mismatch " + a.value().shape_string() + " x " +
                         b.value().shape_string());
  }
  return tape.record(multiply(a.value(), b.value()), {a, b}, [](std::span<Tensor> in, const Tensor& out) {
    if (in[0].requires_grad()) accumulate(in[0], multiply(out.grad(), contra::transpose(in[1].value())));
    if (in[1].requires_grad()) accumulate(in[1], multiply(contra::transpose(in[0].value()), out.grad()));
  });
}

Tensor transpose(Tape& tape, const Tensor& a) {
  return tape.record(contra::transpose(a.value()), {a}, [](std::span<Tensor> in, const Tensor& out) {
    accumulate(in[0], contra::transpose(out.grad()));
  });
}

Tensor add(Tape& tape, const Tensor& a, const Tensor& b) {
  require_same_shape("add", a, b);
  Matrix v = a.value();
  for (std::size_t i = 0; i < v.size(); ++i) v.data[i] += b.value().data[i];
  return tape.record(std::move(v), {a, b}, [](std::span<Tensor> in, const Tensor& out) {
    accumulate(in[0], out.grad());
    accumulate(in[1], out.grad());
  });
}

Tensor sub(Tape& tape, const Tensor& a, const Tensor& b) {
  require_same_shape("sub", a, b);
  Matrix v = a.value();
  for (std::size_t i = 0; i < v.size(); ++i) v.data[i] -= b.value().data[i];
  return tape.record(std::move(v), {a, b}, [](std::span<Tensor> in, const Tensor& out) {
    accumulate(in[0], out.grad());
    if (in[1].requires_grad()) accumulate(in[1], map(out.grad(), [](double g) { return -g; }));
  });
}

Tensor mul(Tape& tape, const Tensor& a, const Tensor& b) {
  require_same_shape("mul", a, b);
  Matrix v = a.value();
  for (std::size_t i = 0; i < v.size(); ++i) v.data[i] *= b.value().data[i];
  return tape.record(std::move(v), {a, b}, [](std::span<Tensor> in, const Tensor& out) {
    const auto& g = out.grad().data;
    for (int k = 0; k < 2; ++k) {
      if (!in[k].requires_grad()) continue;
      const auto& other = in[1 - k].value().data;
      auto& acc = in[k].mutable_grad().data;
      for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += g[i] * other[i];
    }
  });
}

Tensor scale(Tape& tape, const Tensor& a, double c) {
  return unary(tape, a, [c](double x) { return c * x; }, [c](double, double) { return c; });
}

Tensor add_scalar(Tape& tape, const Tensor& a, double c) {
  return unary(tape, a, [c](double x) { return x + c; }, [](double, double) { return 1.0; });
}

Tensor add_row(Tape& tape, const Tensor& a, const Tensor& row) {
  if (row.rows() != 1 || row.cols() != a.cols()) {
    throw DimensionError("add_row: cannot broadcast " + row.value().shape_string() + " over " +
                         a.value().shape_string());
  }
  Matrix v = a.value();
  for (std::size_t i = 0; i < v.rows; ++i)
    for (std::size_t j = 0; j < v.cols; ++j) v(i, j) += row.value()(0, j);
  return tape.record(std::move(v), {a, row}, [](std::span<Tensor> in, const Tensor& out) {
    accumulate(in[0], out.grad());
    if (in[1].requires_grad()) {
      auto& acc = in[1].mutable_grad();
      const auto& g = out.grad();
      for (std::size_t i = 0; i < g.rows; ++i)
        for (std::size_t j = 0; j < g.cols; ++j) acc(0, j) += g(i, j);
    }
  });
}

Tensor relu(Tape& tape, const Tensor& a) {
  return unary(tape, a, [](double x) { return x > 0.0 ? x : 0.0; },
               [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Tensor leaky_relu(Tape& tape, const Tensor& a, double slope) {
  return unary(tape, a, [slope](double x) { return x > 0.0 ? x : slope * x; },
               [slope](double x, double) { return x > 0.0 ? 1.0 : slope; });
}

Tensor tanh(Tape& tape, const Tensor& a) {
  return unary(tape, a, [](double x) { return std::tanh(x); }, [](double, double y) { return 1.0 - y * y; });
}

Tensor exp(Tape& tape, const Tensor& a) {
  return unary(tape, a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Tensor log(Tape& tape, const Tensor& a) {
  for (double x : a.value().data) {
    if (!(x > 0.0)) throw DomainError("log: non-positive input " + std::to_string(x));
  }
  return unary(tape, a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

Tensor elementwise(Tape& tape, Elementwise kind, const Tensor& a, const Tensor& b, double param) {
  const auto need_b = [&] {
    if (!b.defined()) throw ContractError("elementwise: binary kind needs a second operand");
  };
  switch (kind) {
    case Elementwise::add: need_b(); return add(tape, a, b);
    case Elementwise::sub: need_b(); return sub(tape, a, b);
    case Elementwise::mul: need_b(); return mul(tape, a, b);
    case Elementwise::scale: return scale(tape, a, param);
    case Elementwise::relu: return relu(tape, a);
    case Elementwise::leaky_relu: return leaky_relu(tape, a, param);
    case Elementwise::tanh: return tanh(tape, a);
    case Elementwise::exp: return exp(tape, a);
    case Elementwise::log: return log(tape, a);
  }
  throw ContractError("elementwise: unknown kind");
}

Tensor masked_log_sum_exp_rows(Tape& tape, const Tensor& a, const Matrix& mask) {
  if (a.cols() == 0 || a.rows() == 0) throw DimensionError("log_sum_exp_rows: empty rows " + a.value().shape_string());
  if (mask.rows != a.rows() || mask.cols != a.cols()) {
    throw DimensionError("masked_log_sum_exp_rows: mask " + mask.shape_string() + " vs " + a.value().shape_string());
  }
  const Matrix& x = a.value();
  Matrix out(x.rows, 1);
  // Softmax weights over the live entries, reused by the backward rule.
  Matrix weights(x.rows, x.cols);
  for (std::size_t i = 0; i < x.rows; ++i) {
    double hi = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < x.cols; ++j)
      if (mask(i, j) != 0.0) hi = std::max(hi, x(i, j));
    if (std::isinf(hi) && hi < 0) throw DimensionError("log_sum_exp_rows: row " + std::to_string(i) + " has no entries");
    double s = 0.0;
    for (std::size_t j = 0; j < x.cols; ++j) {
      if (mask(i, j) == 0.0) continue;
      weights(i, j) = std::exp(x(i, j) - hi);
      s += weights(i, j);
    }
    for (std::size_t j = 0; j < x.cols; ++j) weights(i, j) /= s;
    out(i, 0) = hi + std::log(s);
  }
  return tape.record(std::move(out), {a}, [weights = std::move(weights)](std::span<Tensor> in, const Tensor& o) {
    if (!in[0].requires_grad()) return;
    auto& acc = in[0].mutable_grad();
    for (std::size_t i = 0; i < acc.rows; ++i) {
      const double g = o.grad()(i, 0);
      for (std::size_t j = 0; j < acc.cols; ++j) acc(i, j) += g * weights(i, j);
    }
  });
}

Tensor log_sum_exp_rows(Tape& tape, const Tensor& a) {
  return masked_log_sum_exp_rows(tape, a, Matrix(a.rows(), a.cols(), 1.0));
}

Tensor l2_normalize_rows(Tape& tape, const Tensor& a) {
  const Matrix& x = a.value();
  Matrix y(x.rows, x.cols);
  std::vector<double> norms(x.rows);
  for (std::size_t i = 0; i < x.rows; ++i) {
    double n2 = 0.0;
    for (double v : x.row(i)) n2 += v * v;
    norms[i] = std::sqrt(n2);
    if (norms[i] < 1e-12) {
      throw DomainError("l2_normalize_rows: degenerate embedding, row " + std::to_string(i) + " has norm " +
                        std::to_string(norms[i]));
    }
    for (std::size_t j = 0; j < x.cols; ++j) y(i, j) = x(i, j) / norms[i];
  }
  return tape.record(std::move(y), {a}, [norms = std::move(norms)](std::span<Tensor> in, const Tensor& out) {
    if (!in[0].requires_grad()) return;
    const Matrix& yv = out.value();
    const Matrix& g = out.grad();
    auto& acc = in[0].mutable_grad();
    for (std::size_t i = 0; i < yv.rows; ++i) {
      double dot = 0.0;
      for (std::size_t j = 0; j < yv.cols; ++j) dot += yv(i, j) * g(i, j);
      for (std::size_t j = 0; j < yv.cols; ++j) acc(i, j) += (g(i, j) - yv(i, j) * dot) / norms[i];
    }
  });
}

Tensor reduce(Tape& tape, const Tensor& a, ReduceKind kind, ReduceAxis axis) {
  const Matrix& x = a.value();
  const std::size_t out_rows = axis == ReduceAxis::rows ? x.rows : 1;
  const std::size_t out_cols = axis == ReduceAxis::cols ? x.cols : 1;
  const std::size_t count = axis == ReduceAxis::all ? x.size() : axis == ReduceAxis::rows ? x.cols : x.rows;
  const double factor = (kind == ReduceKind::mean && count > 0) ? 1.0 / static_cast<double>(count) : 1.0;
  Matrix out(out_rows, out_cols);
  auto target = [axis](std::size_t i, std::size_t j) {
    return axis == ReduceAxis::all ? std::size_t{0} : axis == ReduceAxis::rows ? i : j;
  };
  for (std::size_t i = 0; i < x.rows; ++i)
    for (std::size_t j = 0; j < x.cols; ++j) out.data[target(i, j)] += x(i, j);
  for (double& v : out.data) v *= factor;
  return tape.record(std::move(out), {a}, [factor, target](std::span<Tensor> in, const Tensor& o) {
    if (!in[0].requires_grad()) return;
    auto& acc = in[0].mutable_grad();
    for (std::size_t i = 0; i < acc.rows; ++i)
      for (std::size_t j = 0; j < acc.cols; ++j) acc(i, j) += factor * o.grad().data[target(i, j)];
  });
}

Tensor gather_rows(Tape& tape, const Tensor& a, std::span<const std::size_t> index) {
  const Matrix& x = a.value();
  Matrix out(index.size(), x.cols);
  for (std::size_t i = 0; i < index.size(); ++i) {
    if (index[i] >= x.rows) {
      throw DimensionError("gather_rows: index " + std::to_string(index[i]) + " out of range for " +
                           x.shape_string());
    }
    std::copy(x.row(index[i]).begin(), x.row(index[i]).end(), out.row(i).begin());
  }
  return tape.record(std::move(out), {a},
                     [idx = std::vector<std::size_t>(index.begin(), index.end())](std::span<Tensor> in,
                                                                                 const Tensor& o) {
                       if (!in[0].requires_grad()) return;
                       auto& acc = in[0].mutable_grad();
                       for (std::size_t i = 0; i < idx.size(); ++i)
                         for (std::size_t j = 0; j < acc.cols; ++j) acc(idx[i], j) += o.grad()(i, j);
                     });
}

Tensor concat_rows(Tape& tape, const Tensor& top, const Tensor& bottom) {
  if (top.cols() != bottom.cols()) {
    throw DimensionError("concat_rows: column mismatch " + top.value().shape_string() + " vs " +
                         bottom.value().shape_string());
  }
  Matrix out(top.rows() + bottom.rows(), top.cols());
  std::copy(top.value().data.begin(), top.value().data.end(), out.data.begin());
  std::copy(bottom.value().data.begin(), bottom.value().data.end(), out.data.begin() + top.value().size());
  return tape.record(std::move(out), {top, bottom}, [](std::span<Tensor> in, const Tensor& o) {
    const auto& g = o.grad().data;
    const std::size_t split = in[0].value().size();
    if (in[0].requires_grad()) {
      auto& acc = in[0].mutable_grad().data;
      for (std::size_t i = 0; i < split; ++i) acc[i] += g[i];
    }
    if (in[1].requires_grad()) {
      auto& acc = in[1].mutable_grad().data;
      for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += g[split + i];
    }
  });
}

Tensor concat_cols(Tape& tape, const Tensor& left, const Tensor& right) {
  if (left.rows() != right.rows()) {
    throw DimensionError("concat_cols: row mismatch " + left.value().shape_string() + " vs " +
                         right.value().shape_string());
  }
  const std::size_t lc = left.cols();
  Matrix out(left.rows(), lc + right.cols());
  for (std::size_t i = 0; i < out.rows; ++i) {
    std::copy(left.value().row(i).begin(), left.value().row(i).end(), out.row(i).begin());
    std::copy(right.value().row(i).begin(), right.value().row(i).end(), out.row(i).begin() + lc);
  }
  return tape.record(std::move(out), {left, right}, [lc](std::span<Tensor> in, const Tensor& o) {
    const Matrix& g = o.grad();
    for (std::size_t i = 0; i < g.rows; ++i) {
      if (in[0].requires_grad())
        for (std::size_t j = 0; j < lc; ++j) in[0].mutable_grad()(i, j) += g(i, j);
      if (in[1].requires_grad())
        for (std::size_t j = lc; j < g.cols; ++j) in[1].mutable_grad()(i, j - lc) += g(i, j);
    }
  });
}

double grad_check(const ScalarFn& f, std::span<Tensor> leaves, double eps) {
  if (!(eps > 0.0 && eps <= 1e-2)) throw ContractError("grad_check: eps must lie in (0, 1e-2]");

  std::vector<Matrix> analytic;
  {
    for (auto& leaf : leaves) leaf.zero_grad();
    Tape tape;
    const Tensor y = f(tape);
    if (!std::isfinite(y.item())) throw NumericError("grad_check: objective is not finite");
    tape.backward(y);
    for (const auto& leaf : leaves) analytic.push_back(leaf.grad());
  }

  const auto evaluate = [&] {
    Tape tape;
    const double v = f(tape).item();
    if (!std::isfinite(v)) throw NumericError("grad_check: objective is not finite under perturbation");
    return v;
  };

  double worst = 0.0;
  for (std::size_t l = 0; l < leaves.size(); ++l) {
    auto& values = leaves[l].mutable_value().data;
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double saved = values[i];
      values[i] = saved + eps;
      const double up = evaluate();
      values[i] = saved - eps;
      const double down = evaluate();
      values[i] = saved;
      const double fd = (up - down) / (2.0 * eps);
      const double ad = analytic[l].data[i];
      if (!std::isfinite(ad)) throw NumericError("grad_check: analytic gradient is not finite");
      worst = std::max(worst, std::abs(ad - fd) / std::max(1.0, std::abs(fd)));
    }
  }
  for (auto& leaf : leaves) leaf.zero_grad();
  return worst;
}

double grad_check(const std::function<Tensor(Tape&, const Tensor&)>& f, Tensor x, double eps) {
  Tensor leaves[] = {x};
  return grad_check([&](Tape& tape) { return f(tape, x); }, leaves, eps);
}

}  // namespace contra::ad
