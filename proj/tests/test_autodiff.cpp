#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "contra/autodiff.hpp"
#include "contra/errors.hpp"

namespace ad = contra::ad;
using contra::Matrix;

namespace {

Matrix random_matrix(std::size_t r, std::size_t c, std::mt19937_64& rng, double lo = -2.0, double hi = 2.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Matrix m(r, c);
  for (double& x : m.data) x = u(rng);
  return m;
}

// Plain central differences, kept separate from ad::grad_check so that the
// checker itself is checked.
Matrix numeric_gradient(const std::function<double(const Matrix&)>& f, Matrix x, double eps = 1e-6) {
  Matrix g(x.rows, x.cols);
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double keep = x.data[i];
    x.data[i] = keep + eps;
    const double up = f(x);
    x.data[i] = keep - eps;
    const double down = f(x);
    x.data[i] = keep;
    g.data[i] = (up - down) / (2 * eps);
  }
  return g;
}

}  // namespace

TEST(Matmul, IdentityAndOrthogonalPick) {
  ad::Tape tape;
  auto i2 = ad::Tensor::constant(Matrix::identity(2));
  auto b = ad::Tensor::constant(Matrix::from_rows({{1, 2}, {3, 4}}));
  EXPECT_EQ(ad::matmul(tape, i2, b).value(), b.value());
  auto r = ad::matmul(tape, ad::Tensor::constant(Matrix::from_rows({{1, 0}})),
                      ad::Tensor::constant(Matrix::from_rows({{0}, {5}})));
  EXPECT_EQ(r.value(), Matrix::from_rows({{0}}));
}

TEST(Matmul, ShapeMismatchNamesBothShapes) {
  ad::Tape tape;
  auto a = ad::Tensor::constant(Matrix(2, 3));
  auto b = ad::Tensor::constant(Matrix(2, 3));
  try {
    ad::matmul(tape, a, b);
    FAIL();
  } catch (const contra::DimensionError& e) {
    EXPECT_NE(std::string(e.what()).find("(2, 3)"), std::string::npos) << e.what();
  }
}

TEST(Matmul, GradientMatchesIndependentDifferences) {
  std::mt19937_64 rng(7);
  const Matrix a0 = random_matrix(3, 4, rng);
  const Matrix b0 = random_matrix(4, 2, rng);
  const Matrix w = random_matrix(3, 2, rng);
  auto objective = [&](const Matrix& a, const Matrix& b) {
    const Matrix c = contra::multiply(a, b);
    double s = 0;
    for (std::size_t i = 0; i < c.size(); ++i) s += w.data[i] * c.data[i];
    return s;
  };
  ad::Tape tape;
  auto a = ad::Tensor::parameter(a0);
  auto b = ad::Tensor::parameter(b0);
  auto out = ad::sum(tape, ad::mul(tape, ad::matmul(tape, a, b), ad::Tensor::constant(w)));
  tape.backward(out);
  const Matrix ga = numeric_gradient([&](const Matrix& x) { return objective(x, b0); }, a0);
  const Matrix gb = numeric_gradient([&](const Matrix& x) { return objective(a0, x); }, b0);
  for (std::size_t i = 0; i < ga.size(); ++i) EXPECT_NEAR(a.grad().data[i], ga.data[i], 1e-6);
  for (std::size_t i = 0; i < gb.size(); ++i) EXPECT_NEAR(b.grad().data[i], gb.data[i], 1e-6);

  std::vector<ad::Tensor> leaves{ad::Tensor::parameter(a0), ad::Tensor::parameter(b0)};
  const double err = ad::grad_check(
      [&](ad::Tape& t) {
        return ad::sum(t, ad::mul(t, ad::matmul(t, leaves[0], leaves[1]), ad::Tensor::constant(w)));
      },
      leaves);
  EXPECT_LT(err, 1e-6);
}

TEST(Elementwise, Examples) {
  ad::Tape tape;
  auto x = ad::Tensor::constant(Matrix::from_rows({{-1, 2}}));
  EXPECT_EQ(ad::relu(tape, x).value(), Matrix::from_rows({{0, 2}}));
  EXPECT_EQ(ad::tanh(tape, ad::Tensor::constant(Matrix(1, 1, 0.0))).value(), Matrix(1, 1, 0.0));
  EXPECT_EQ(ad::elementwise(tape, ad::Elementwise::relu, x).value(), Matrix::from_rows({{0, 2}}));
  EXPECT_DOUBLE_EQ(ad::leaky_relu(tape, x).value()(0, 0), -0.2);
}

TEST(Elementwise, LeakyReluSlopeBelowZero) {
  auto x = ad::Tensor::parameter(Matrix::from_rows({{-0.7, -1.3}}));
  ad::Tape tape;
  tape.backward(ad::sum(tape, ad::leaky_relu(tape, x)));
  EXPECT_DOUBLE_EQ(x.grad()(0, 0), 0.2);
  EXPECT_DOUBLE_EQ(x.grad()(0, 1), 0.2);
  const Matrix g = numeric_gradient(
      [](const Matrix& m) {
        double s = 0;
        for (double v : m.data) s += v < 0 ? 0.2 * v : v;
        return s;
      },
      x.value());
  EXPECT_NEAR(g(0, 0), 0.2, 1e-8);
}

TEST(Elementwise, ErrorsOnShapeAndDomain) {
  ad::Tape tape;
  auto a = ad::Tensor::constant(Matrix(2, 2, 1.0));
  auto b = ad::Tensor::constant(Matrix(2, 3, 1.0));
  EXPECT_THROW(ad::add(tape, a, b), contra::DimensionError);
  EXPECT_THROW(ad::mul(tape, a, b), contra::DimensionError);
  EXPECT_THROW(ad::log(tape, ad::Tensor::constant(Matrix::from_rows({{1.0, 0.0}}))), contra::DomainError);
  EXPECT_THROW(ad::log(tape, ad::Tensor::constant(Matrix::from_rows({{-3.0}}))), contra::DomainError);
}

TEST(LogSumExp, Examples) {
  ad::Tape tape;
  auto r = ad::log_sum_exp_rows(tape, ad::Tensor::constant(Matrix::from_rows({{0, 0}})));
  EXPECT_NEAR(r.item(), std::log(2.0), 1e-15);
  auto big = ad::log_sum_exp_rows(tape, ad::Tensor::constant(Matrix::from_rows({{1000, 1000}})));
  ASSERT_TRUE(std::isfinite(big.item()));
  EXPECT_NEAR(big.item(), 1000 + std::log(2.0), 1e-12);
  auto neg = ad::log_sum_exp_rows(tape, ad::Tensor::constant(Matrix::from_rows({{-700, -700}})));
  EXPECT_NEAR(neg.item(), -700 + std::log(2.0), 1e-12);
  EXPECT_THROW(ad::log_sum_exp_rows(tape, ad::Tensor::constant(Matrix(2, 0))), contra::DimensionError);
}

TEST(LogSumExp, MatchesNaiveAtSmallMagnitude) {
  std::mt19937_64 rng(3);
  for (int s = 0; s < 20; ++s) {
    const Matrix x = random_matrix(3, 5, rng);
    ad::Tape tape;
    auto r = ad::log_sum_exp_rows(tape, ad::Tensor::constant(x));
    for (std::size_t i = 0; i < 3; ++i) {
      double acc = 0;
      for (double v : x.row(i)) acc += std::exp(v);
      EXPECT_NEAR(r.value()(i, 0), std::log(acc), 1e-12);
    }
  }
}

TEST(LogSumExp, ShiftEquivariance) {
  std::mt19937_64 rng(11);
  for (int s = 0; s < 20; ++s) {
    Matrix x = random_matrix(4, 6, rng);
    const double c = std::uniform_real_distribution<double>(-50, 50)(rng);
    Matrix shifted = x;
    for (double& v : shifted.data) v += c;
    ad::Tape tape;
    auto a = ad::log_sum_exp_rows(tape, ad::Tensor::constant(x));
    auto b = ad::log_sum_exp_rows(tape, ad::Tensor::constant(shifted));
    for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(b.value()(i, 0), a.value()(i, 0) + c, 1e-12);
  }
}

TEST(L2Normalize, ExamplesAndIdempotence) {
  ad::Tape tape;
  auto r = ad::l2_normalize_rows(tape, ad::Tensor::constant(Matrix::from_rows({{3, 4}})));
  EXPECT_NEAR(r.value()(0, 0), 0.6, 1e-15);
  EXPECT_NEAR(r.value()(0, 1), 0.8, 1e-15);
  auto unit = Matrix::from_rows({{0.6, 0.8}, {1, 0}});
  EXPECT_EQ(ad::l2_normalize_rows(tape, ad::Tensor::constant(unit)).value(), unit);

  std::mt19937_64 rng(5);
  for (int s = 0; s < 20; ++s) {
    auto once = ad::l2_normalize_rows(tape, ad::Tensor::constant(random_matrix(5, 4, rng)));
    auto twice = ad::l2_normalize_rows(tape, once);
    for (std::size_t i = 0; i < 5; ++i) {
      double n = 0;
      for (double v : once.value().row(i)) n += v * v;
      EXPECT_NEAR(std::sqrt(n), 1.0, 1e-12);
    }
    for (std::size_t i = 0; i < once.value().size(); ++i)
      EXPECT_NEAR(twice.value().data[i], once.value().data[i], 1e-12);
  }
}

TEST(L2Normalize, ZeroRowIsDegenerate) {
  ad::Tape tape;
  EXPECT_THROW(ad::l2_normalize_rows(tape, ad::Tensor::constant(Matrix::from_rows({{1, 1}, {0, 0}}))),
               contra::DomainError);
}

TEST(L2Normalize, GradientMatchesDifferences) {
  std::mt19937_64 rng(9);
  const Matrix w = random_matrix(4, 3, rng);
  auto x = ad::Tensor::parameter(random_matrix(4, 3, rng));
  const double err = ad::grad_check(
      [&](ad::Tape& t, const ad::Tensor& in) {
        return ad::sum(t, ad::mul(t, ad::l2_normalize_rows(t, in), ad::Tensor::constant(w)));
      },
      x);
  EXPECT_LT(err, 1e-6);
}

TEST(Reduce, Examples) {
  ad::Tape tape;
  EXPECT_DOUBLE_EQ(ad::mean(tape, ad::Tensor::constant(Matrix::from_rows({{1, 3}}))).item(), 2.0);
  EXPECT_DOUBLE_EQ(ad::sum(tape, ad::Tensor::constant(Matrix(3, 3, 0.0))).item(), 0.0);
  auto m = Matrix::from_rows({{1, 2, 3}, {4, 5, 6}});
  auto rows = ad::reduce(tape, ad::Tensor::constant(m), ad::ReduceKind::sum, ad::ReduceAxis::rows);
  EXPECT_EQ(rows.value(), Matrix::from_rows({{6}, {15}}));
  auto cols = ad::reduce(tape, ad::Tensor::constant(m), ad::ReduceKind::mean, ad::ReduceAxis::cols);
  EXPECT_EQ(cols.value(), Matrix::from_rows({{2.5, 3.5, 4.5}}));

  auto x = ad::Tensor::parameter(Matrix(2, 5, 1.0));
  ad::Tape t2;
  t2.backward(ad::mean(t2, x));
  for (double g : x.grad().data) EXPECT_DOUBLE_EQ(g, 0.1);
}

TEST(Backward, SumAndZeroScale) {
  auto w = ad::Tensor::parameter(Matrix(2, 3, 0.5));
  ad::Tape tape;
  tape.backward(ad::sum(tape, w));
  for (double g : w.grad().data) EXPECT_EQ(g, 1.0);

  auto x = ad::Tensor::parameter(Matrix(1, 1, 4.0));
  ad::Tape t2;
  t2.backward(ad::scale(t2, x, 0.0));
  EXPECT_EQ(x.grad()(0, 0), 0.0);
}

TEST(Backward, NonScalarObjectiveRejected) {
  auto w = ad::Tensor::parameter(Matrix(2, 2, 1.0));
  ad::Tape tape;
  auto y = ad::relu(tape, w);
  EXPECT_THROW(tape.backward(y), contra::ContractError);
}

TEST(Backward, LeafGradientsAccumulateUntilReset) {
  auto w = ad::Tensor::parameter(Matrix(1, 2, 1.0));
  for (int k = 0; k < 2; ++k) {
    ad::Tape tape;
    tape.backward(ad::sum(tape, ad::scale(tape, w, 3.0)));
  }
  EXPECT_EQ(w.grad()(0, 0), 6.0);
  w.zero_grad();
  EXPECT_EQ(w.grad()(0, 0), 0.0);
}

TEST(Tape, RecordsInTopologicalOrder) {
  auto a = ad::Tensor::parameter(Matrix(2, 2, 1.0));
  ad::Tape tape;
  auto b = ad::relu(tape, a);
  auto c = ad::mul(tape, b, a);
  auto d = ad::sum(tape, c);
  EXPECT_TRUE(a.is_leaf());
  EXPECT_LT(b.tape_id(), c.tape_id());
  EXPECT_LT(c.tape_id(), d.tape_id());
  EXPECT_EQ(tape.size(), 3U);
}

TEST(Tape, ConstantsAreNotRecorded) {
  ad::Tape tape;
  auto r = ad::relu(tape, ad::Tensor::constant(Matrix(2, 2, 1.0)));
  EXPECT_EQ(tape.size(), 0U);
  EXPECT_FALSE(r.requires_grad());
}

TEST(GradCheck, QuadraticIsExact) {
  std::mt19937_64 rng(1);
  auto x = ad::Tensor::parameter(random_matrix(3, 3, rng));
  const double err = ad::grad_check([](ad::Tape& t, const ad::Tensor& in) { return ad::sum(t, ad::mul(t, in, in)); }, x);
  EXPECT_LT(err, 1e-8);
}

TEST(GradCheck, RejectsBadEpsilonAndNonFinite) {
  auto x = ad::Tensor::parameter(Matrix(1, 1, 1.0));
  auto f = [](ad::Tape& t, const ad::Tensor& in) { return ad::sum(t, in); };
  EXPECT_THROW(ad::grad_check(f, x, 0.0), contra::ContractError);
  EXPECT_THROW(ad::grad_check(f, x, 0.1), contra::ContractError);
  auto blow = ad::Tensor::parameter(Matrix(1, 1, 800.0));
  EXPECT_THROW(ad::grad_check([](ad::Tape& t, const ad::Tensor& in) { return ad::sum(t, ad::exp(t, in)); }, blow),
               contra::NumericError);
}

// Every op gradient against finite differences over 20 seeds, inputs in [-2, 2].
TEST(GradCheck, EveryOperationTwentySeeds) {
  using Fn = std::function<ad::Tensor(ad::Tape&, const ad::Tensor&)>;
  const std::vector<std::pair<std::string, Fn>> ops = {
      {"transpose", [](ad::Tape& t, const ad::Tensor& x) { return ad::transpose(t, x); }},
      {"add", [](ad::Tape& t, const ad::Tensor& x) { return ad::add(t, x, ad::mul(t, x, x)); }},
      {"sub", [](ad::Tape& t, const ad::Tensor& x) { return ad::sub(t, ad::mul(t, x, x), x); }},
      {"scale", [](ad::Tape& t, const ad::Tensor& x) { return ad::scale(t, x, -1.7); }},
      {"add_scalar", [](ad::Tape& t, const ad::Tensor& x) { return ad::mul(t, ad::add_scalar(t, x, 0.3), x); }},
      {"add_row",
       [](ad::Tape& t, const ad::Tensor& x) {
         return ad::add_row(t, x, ad::reduce(t, x, ad::ReduceKind::sum, ad::ReduceAxis::cols));
       }},
      {"relu", [](ad::Tape& t, const ad::Tensor& x) { return ad::relu(t, x); }},
      {"leaky_relu", [](ad::Tape& t, const ad::Tensor& x) { return ad::leaky_relu(t, x); }},
      {"tanh", [](ad::Tape& t, const ad::Tensor& x) { return ad::tanh(t, x); }},
      {"exp", [](ad::Tape& t, const ad::Tensor& x) { return ad::exp(t, x); }},
      {"log", [](ad::Tape& t, const ad::Tensor& x) { return ad::log(t, ad::add_scalar(t, ad::mul(t, x, x), 0.5)); }},
      {"log_sum_exp_rows", [](ad::Tape& t, const ad::Tensor& x) { return ad::log_sum_exp_rows(t, x); }},
      {"masked_log_sum_exp_rows",
       [](ad::Tape& t, const ad::Tensor& x) {
         Matrix mask(x.rows(), x.cols(), 1.0);
         for (std::size_t i = 0; i < std::min(x.rows(), x.cols()); ++i) mask(i, i) = 0.0;
         return ad::masked_log_sum_exp_rows(t, x, mask);
       }},
      {"l2_normalize_rows", [](ad::Tape& t, const ad::Tensor& x) { return ad::l2_normalize_rows(t, x); }},
      {"reduce_rows",
       [](ad::Tape& t, const ad::Tensor& x) { return ad::reduce(t, x, ad::ReduceKind::mean, ad::ReduceAxis::rows); }},
      {"gather_rows",
       [](ad::Tape& t, const ad::Tensor& x) {
         const std::vector<std::size_t> idx{2, 0, 2, 1};
         return ad::gather_rows(t, x, idx);
       }},
      {"concat_rows", [](ad::Tape& t, const ad::Tensor& x) { return ad::concat_rows(t, x, ad::tanh(t, x)); }},
      {"concat_cols", [](ad::Tape& t, const ad::Tensor& x) { return ad::concat_cols(t, ad::exp(t, x), x); }},
      {"matmul", [](ad::Tape& t, const ad::Tensor& x) { return ad::matmul(t, x, ad::transpose(t, x)); }},
  };
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    std::mt19937_64 rng(seed);
    const Matrix x0 = random_matrix(3, 3, rng);
    for (const auto& [name, op] : ops) {
      auto x = ad::Tensor::parameter(x0);
      const double err = ad::grad_check(
          [&](ad::Tape& t, const ad::Tensor& in) {
            auto y = op(t, in);
            std::mt19937_64 local(seed + 100);
            return ad::sum(t, ad::mul(t, y, ad::Tensor::constant(random_matrix(y.rows(), y.cols(), local))));
          },
          x);
      EXPECT_LT(err, 1e-4) << name << " seed " << seed;
    }
  }
}

TEST(Properties, LinearityOfBackward) {
  std::mt19937_64 rng(21);
  for (int s = 0; s < 10; ++s) {
    const Matrix x0 = random_matrix(3, 4, rng);
    const double a = 1.5, b = -0.25;
    auto f = [](ad::Tape& t, const ad::Tensor& x) { return ad::sum(t, ad::tanh(t, x)); };
    auto g = [](ad::Tape& t, const ad::Tensor& x) { return ad::mean(t, ad::mul(t, x, x)); };
    auto x1 = ad::Tensor::parameter(x0);
    {
      ad::Tape t;
      t.backward(f(t, x1));
    }
    const Matrix gf = x1.grad();
    x1.zero_grad();
    {
      ad::Tape t;
      t.backward(g(t, x1));
    }
    const Matrix gg = x1.grad();
    auto x2 = ad::Tensor::parameter(x0);
    ad::Tape t;
    t.backward(ad::add(t, ad::scale(t, f(t, x2), a), ad::scale(t, g(t, x2), b)));
    for (std::size_t i = 0; i < x0.size(); ++i) EXPECT_NEAR(x2.grad().data[i], a * gf.data[i] + b * gg.data[i], 1e-14);
  }
}
