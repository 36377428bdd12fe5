#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

#include "contra/datasets.hpp"
#include "contra/errors.hpp"
#include "contra/evaluation.hpp"
#include "oracles.hpp"

namespace E = contra::eval;
namespace M = contra::models;
using contra::Matrix;

namespace {

E::GaussianStats stats1d(double mu, double var) { return {{mu}, Matrix(1, 1, var), 100}; }

E::GaussianStats from_oracle(const oracle::Gauss2& g) {
  return {{g.mu[0], g.mu[1]}, Matrix::from_rows({{g.cov[0][0], g.cov[0][1]}, {g.cov[1][0], g.cov[1][1]}}), 100};
}

Matrix gaussian_samples(std::size_t n, const std::vector<double>& mu, const Matrix& chol, std::mt19937_64& rng) {
  std::normal_distribution<double> z;
  Matrix out(n, mu.size());
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<double> e(mu.size());
    for (double& v : e) v = z(rng);
    for (std::size_t r = 0; r < mu.size(); ++r) {
      double s = mu[r];
      for (std::size_t c = 0; c <= r; ++c) s += chol(r, c) * e[c];
      out(i, r) = s;
    }
  }
  return out;
}

E::HistoryRecord record(double gap, std::vector<double> sigma) {
  E::HistoryRecord r;
  r.acc_train = 0.5 + gap;
  r.acc_val = 0.5;
  r.sigma = sigma;
  r.sigma_raw = sigma;
  return r;
}

M::Discriminator constant_critic(double bias) {
  std::mt19937_64 rng(1);
  M::DiscriminatorConfig cfg;
  cfg.trunk = {8};
  cfg.mode = M::ConditioningMode::none;
  M::Discriminator d(cfg, rng);
  for (auto& p : d.parameters()) {
    auto& v = p.tensor.mutable_value().data;
    std::fill(v.begin(), v.end(), p.name == "d.adv.bias" ? bias : 0.0);
  }
  return d;
}

}  // namespace

TEST(FitGaussian, Examples) {
  const auto s = E::fit_gaussian(Matrix::from_rows({{0, 0}, {2, 0}}));
  EXPECT_EQ(s.mean, (std::vector<double>{1, 0}));
  EXPECT_NEAR(s.cov(0, 0), 1 + 1e-6, 1e-15);
  EXPECT_NEAR(s.cov(1, 1), 1e-6, 1e-18);
  EXPECT_EQ(s.cov(0, 1), 0.0);
  const auto flat = E::fit_gaussian(Matrix::from_rows({{3, -1}, {3, -1}, {3, -1}}));
  EXPECT_NEAR(flat.cov(0, 0), 1e-6, 1e-18);
  EXPECT_NEAR(flat.cov(1, 1), 1e-6, 1e-18);
  EXPECT_EQ(flat.cov(0, 1), 0.0);
  EXPECT_THROW(E::fit_gaussian(Matrix::from_rows({{1, 2}})), contra::ContractError);
}

TEST(FitGaussian, RecoversKnownDistribution) {
  std::mt19937_64 rng(99);
  const Matrix chol = Matrix::from_rows({{0.5, 0}, {0.3, 0.2}});
  const std::vector<double> mu{0.4, -0.7};
  const auto s = E::fit_gaussian(gaussian_samples(100000, mu, chol, rng));
  const Matrix truth = contra::multiply(chol, contra::transpose(chol));
  Matrix diff = s.cov;
  for (std::size_t i = 0; i < diff.size(); ++i) diff.data[i] -= truth.data[i];
  EXPECT_LT(contra::frobenius_norm(diff), 0.02 * contra::frobenius_norm(truth));
  EXPECT_NEAR(s.mean[0], mu[0], 0.02);
  EXPECT_NEAR(s.mean[1], mu[1], 0.02);
  EXPECT_EQ(s.cov(0, 1), s.cov(1, 0));
}

TEST(Frechet, ClosedForms) {
  EXPECT_NEAR(E::frechet_distance(stats1d(0, 1), stats1d(0, 1)), 0.0, 1e-9);
  EXPECT_NEAR(E::frechet_distance(stats1d(0, 1), stats1d(1, 1)), 1.0, 1e-9);
  EXPECT_NEAR(E::frechet_distance(stats1d(0, 1), stats1d(0, 4)), 1.0, 1e-9);
  std::mt19937_64 rng(1);
  const auto g = from_oracle(oracle::random_gauss2(rng));
  EXPECT_NEAR(E::frechet_distance(g, g), 0.0, 1e-9);
  EXPECT_THROW(E::frechet_distance(g, stats1d(0, 1)), contra::DimensionError);
}

TEST(Frechet, MatchesAnalytic2x2Oracle) {
  std::mt19937_64 rng(2718);
  for (int s = 0; s < 200; ++s) {
    const auto a = oracle::random_gauss2(rng);
    const auto b = oracle::random_gauss2(rng);
    EXPECT_NEAR(E::frechet_distance(from_oracle(a), from_oracle(b)), oracle::frechet_2d(a, b), 1e-8);
  }
}

TEST(Frechet, PsdSqrtMatchesAnalytic2x2Root) {
  std::mt19937_64 rng(5);
  for (int s = 0; s < 50; ++s) {
    const auto g = oracle::random_gauss2(rng);
    double root[2][2];
    oracle::sqrt_2x2(g.cov, root);
    const Matrix r = contra::psd_sqrt(from_oracle(g).cov);
    for (int i = 0; i < 2; ++i)
      for (int j = 0; j < 2; ++j) EXPECT_NEAR(r(i, j), root[i][j], 1e-10);
  }
}

TEST(Frechet, SymmetricAndMonotoneInMeanShift) {
  std::mt19937_64 rng(8);
  for (int s = 0; s < 20; ++s) {
    const auto a = from_oracle(oracle::random_gauss2(rng));
    const auto b = from_oracle(oracle::random_gauss2(rng));
    EXPECT_NEAR(E::frechet_distance(a, b), E::frechet_distance(b, a), 1e-9);
    double last = std::numeric_limits<double>::infinity();
    for (double step = 1.0; step >= 0.0; step -= 0.125) {
      auto moved = b;
      for (std::size_t k = 0; k < 2; ++k) moved.mean[k] = a.mean[k] + step * (b.mean[k] - a.mean[k]);
      const double d = E::frechet_distance(a, moved);
      EXPECT_LE(d, last + 1e-12);
      last = d;
    }
  }
}

TEST(Frechet, SampleOrderInvariant) {
  std::mt19937_64 rng(4);
  const Matrix a = gaussian_samples(300, {0, 0}, Matrix::from_rows({{1, 0}, {0.2, 0.5}}), rng);
  const Matrix b = gaussian_samples(300, {0.5, 0}, Matrix::from_rows({{0.7, 0}, {0.1, 0.9}}), rng);
  Matrix shuffled = a;
  std::vector<std::size_t> perm(a.rows);
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);
  for (std::size_t i = 0; i < a.rows; ++i)
    std::copy(a.row(perm[i]).begin(), a.row(perm[i]).end(), shuffled.row(i).begin());
  EXPECT_NEAR(E::frechet_distance(E::fit_gaussian(a), E::fit_gaussian(b)),
              E::frechet_distance(E::fit_gaussian(shuffled), E::fit_gaussian(b)), 1e-9);
}

TEST(ClassFrechet, IdentityShiftAndRelabeling) {
  const auto data = contra::data::make_gaussian_mixture(4, 100, 0.8, 0.1, 3);
  const auto& x = data.train.samples;
  const auto& y = data.train.labels;
  const auto same = E::class_conditional_frechet(x, y, x, y, 4);
  for (double v : same.per_class) EXPECT_NEAR(v, 0.0, 1e-9);
  EXPECT_NEAR(same.mean, 0.0, 1e-9);
  EXPECT_NEAR(same.pooled, 0.0, 1e-9);

  Matrix shifted = x;
  for (std::size_t i = 0; i < shifted.rows; ++i)
    if (y[i] == 2) shifted(i, 0) += 1.0;
  const auto one = E::class_conditional_frechet(x, y, shifted, y, 4);
  EXPECT_NEAR(one.per_class[2], 1.0, 1e-9);
  EXPECT_NEAR(one.per_class[0], 0.0, 1e-9);
  EXPECT_NEAR(one.mean, 0.25, 1e-9);

  const std::vector<std::size_t> relabel_map{3, 0, 1, 2};
  std::vector<std::size_t> y2(y.size());
  for (std::size_t i = 0; i < y.size(); ++i) y2[i] = relabel_map[y[i]];
  const auto relabeled = E::class_conditional_frechet(x, y2, shifted, y2, 4);
  EXPECT_NEAR(relabeled.mean, one.mean, 1e-12);
  EXPECT_NEAR(relabeled.per_class[relabel_map[2]], one.per_class[2], 1e-12);
}

TEST(ClassFrechet, MissingClassNamed) {
  const Matrix x = Matrix::from_rows({{0, 0}, {1, 0}, {0, 1}, {1, 1}});
  const std::vector<std::size_t> y{0, 0, 1, 1};
  const std::vector<std::size_t> fake_y{0, 0, 0, 0};
  try {
    E::class_conditional_frechet(x, y, x, fake_y, 2);
    FAIL();
  } catch (const contra::ContractError& e) {
    EXPECT_NE(std::string(e.what()).find("class 1"), std::string::npos) << e.what();
  }
}

TEST(Authenticity, ConstantCriticsAndTieRule) {
  const auto data = contra::data::make_gaussian_mixture(4, 20, 0.8, 0.1, 3);
  const Matrix fake(10, 2, 0.1);
  const std::vector<std::size_t> fy(10, 0);
  const auto pos = E::authenticity_accuracy(constant_critic(1.0), data.train, data.val, fake, fy);
  EXPECT_EQ(pos.acc_train, 1.0);
  EXPECT_EQ(pos.acc_val, 1.0);
  EXPECT_EQ(pos.acc_fake, 0.0);
  EXPECT_EQ(pos.gap(), 0.0);
  const auto zero = E::authenticity_accuracy(constant_critic(0.0), data.train, data.val, fake, fy);
  EXPECT_EQ(zero.acc_fake, 1.0);
  EXPECT_EQ(zero.acc_train, 0.0);
}

TEST(Authenticity, MedianCenteredRandomCriticIsNearChance) {
  std::mt19937_64 rng(12);
  M::DiscriminatorConfig cfg;
  cfg.mode = M::ConditioningMode::none;
  M::Discriminator d(cfg, rng);
  std::uniform_real_distribution<double> u(-1, 1);
  auto draw = [&](std::size_t n) {
    contra::data::LabeledDataset s;
    s.samples = Matrix(n, 2);
    for (double& v : s.samples.data) v = u(rng);
    s.labels.assign(n, 0);
    s.num_classes = 1;
    return s;
  };
  const auto pool = draw(20000);
  auto scores = d.score(pool.samples, pool.labels);
  std::nth_element(scores.begin(), scores.begin() + scores.size() / 2, scores.end());
  for (auto& p : d.parameters())
    if (p.name == "d.adv.bias") p.tensor.mutable_value()(0, 0) -= scores[scores.size() / 2];
  const auto train = draw(1000), val = draw(1000), fake = draw(1000);
  const auto acc = E::authenticity_accuracy(d, train, val, fake.samples, fake.labels);
  EXPECT_NEAR(acc.acc_train, 0.5, 0.1);
  EXPECT_NEAR(acc.acc_val, 0.5, 0.1);
  EXPECT_NEAR(acc.acc_fake, 0.5, 0.1);
}

TEST(SpectralTrend, KnownMatricesAndPowerIterationCrossCheck) {
  EXPECT_NEAR(contra::largest_singular_value(Matrix::identity(3)), 1.0, 1e-12);
  EXPECT_NEAR(contra::largest_singular_value(Matrix::from_rows({{3, 0}, {0, 1}})), 3.0, 1e-12);

  std::mt19937_64 rng(3);
  M::DiscriminatorConfig plain;
  plain.trunk = {2};
  plain.spectral = false;
  plain.mode = M::ConditioningMode::none;
  M::Discriminator d(plain, rng);
  for (auto& p : d.parameters())
    if (p.name == "d.trunk0.weight") p.tensor.mutable_value() = Matrix::from_rows({{3, 0}, {0, 1}});
  const auto t = E::spectral_trend(d);
  ASSERT_EQ(t.front().layer, "d.trunk0");
  EXPECT_NEAR(t.front().raw, 3.0, 1e-12);
  EXPECT_NEAR(t.front().effective, 3.0, 1e-12);

  M::DiscriminatorConfig sn;
  sn.mode = M::ConditioningMode::contra;
  M::Discriminator ds(sn, rng);
  for (auto& p : ds.parameters())
    if (p.name.ends_with(".weight"))
      for (double& v : p.tensor.mutable_value().data) v *= 2.5;
  ds.power_iterate(200);
  const auto trend = ds.layers();
  const auto sig = E::spectral_trend(ds);
  for (std::size_t i = 0; i < sig.size(); ++i) {
    EXPECT_NEAR(sig[i].raw, trend[i].second->spectral_state().sigma, 1e-4) << sig[i].layer;
    EXPECT_GT(sig[i].effective, 0.0);
    EXPECT_LE(sig[i].effective, 1.0 + 1e-4) << sig[i].layer;
  }
}

TEST(CollapseDetector, Examples) {
  const std::vector<E::HistoryRecord> gap{record(0.1, {1.0}), record(0.6, {1.0})};
  const auto f = E::collapse_detector(gap);
  ASSERT_TRUE(f.gap_index.has_value());
  EXPECT_EQ(*f.gap_index, 1U);
  EXPECT_FALSE(f.sigma_index.has_value());

  const std::vector<E::HistoryRecord> exact{record(0.5, {1.0}), record(0.2, {1.0})};
  EXPECT_FALSE(E::collapse_detector(exact).gap_index.has_value());

  const std::vector<E::HistoryRecord> jump{record(0.0, {1.0, 0.9}), record(0.0, {1.8, 0.9})};
  const auto j = E::collapse_detector(jump);
  ASSERT_TRUE(j.sigma_index.has_value());
  EXPECT_EQ(*j.sigma_index, 1U);

  const std::vector<E::HistoryRecord> steady(4, record(0.0, {1.0, 1.0}));
  EXPECT_FALSE(E::collapse_detector(steady).sigma_index.has_value());
  EXPECT_THROW(E::collapse_detector(std::span<const E::HistoryRecord>{}), contra::ContractError);
}

TEST(CollapseDetector, RawSigmaJumpCounts) {
  auto a = record(0.0, {1.0});
  auto b = record(0.0, {1.0});
  a.sigma_raw = {2.0};
  b.sigma_raw = {3.5};
  const std::vector<E::HistoryRecord> h{a, b};
  EXPECT_EQ(E::collapse_detector(h).sigma_index, std::optional<std::size_t>(1));
}

TEST(HistoryRecord, JsonSchema) {
  E::HistoryRecord r = record(0.1, {0.9});
  r.iteration = 250;
  const auto j = E::to_json(r);
  for (const char* key : {"iteration", "L_D", "L_G", "L_C_real", "L_C_fake", "frechet", "class_frechet",
                          "class_frechet_per_class", "acc_train", "acc_val", "acc_fake", "gap", "sigma", "sigma_raw"})
    EXPECT_TRUE(j.contains(key)) << key;
  EXPECT_FALSE(j.contains("wallclock"));
  r.wallclock = 1.5;
  EXPECT_TRUE(E::to_json(r).contains("wallclock"));
}
