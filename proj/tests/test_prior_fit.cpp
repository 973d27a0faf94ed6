#include "test_support.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <numeric>

#include <unistd.h>

using namespace impatient;
using namespace testing_support;

namespace {

TraceDataset::Arm arm_of(std::string id, std::string z, std::initializer_list<std::initializer_list<double>> rows) {
  const auto n = static_cast<Eigen::Index>(rows.size());
  const auto j = static_cast<Eigen::Index>(rows.begin()->size());
  Matrix m(n, j);
  Eigen::Index r = 0;
  for (const auto& row : rows) {
    Eigen::Index c = 0;
    for (double v : row) m(r, c++) = v;
    ++r;
  }
  return {std::move(id), std::move(z), m, Matrix()};
}

/// theta_a ~ N(mu, sigma), Y ~ N(theta_a, v), `arms` arms of `n` traces in
/// class "g".
TraceDataset gaussian_dataset(const Vector& mu, const Matrix& sigma, const Matrix& v, int arms, int n, Rng& rng) {
  TraceDataset d;
  d.j_outcomes = static_cast<int>(mu.size());
  const Belief prior{mu, sigma};
  const Matrix lv = Eigen::LLT<Matrix>(v).matrixL();
  Vector z(mu.size());
  for (int a = 0; a < arms; ++a) {
    const Vector theta = sample_belief(prior, rng);
    Matrix traces(n, mu.size());
    for (int u = 0; u < n; ++u) {
      fill_standard_normal(z, rng);
      traces.row(u) = (theta + lv * z).transpose();
    }
    d.arms.push_back({"a" + std::to_string(a), "g", traces, Matrix()});
  }
  return d;
}

double rel_frobenius(const Matrix& est, const Matrix& truth) { return (est - truth).norm() / truth.norm(); }

bool is_psd(const Matrix& m) {
  return Eigen::SelfAdjointEigenSolver<Matrix>(m).eigenvalues().minCoeff() >= -1e-12 && max_abs(m - m.transpose()) == 0.0;
}

}  // namespace

TEST(FitNoiseCov, TwoPointVariance) {
  TraceDataset d;
  d.j_outcomes = 1;
  d.arms.push_back(arm_of("a", "z", {{0}, {2}}));
  EXPECT_DOUBLE_EQ(fit_noise_cov(d, "z")(0, 0), 1.0);
}

TEST(FitNoiseCov, IdenticalTracesGiveZero) {
  TraceDataset d;
  d.j_outcomes = 2;
  d.arms.push_back(arm_of("a", "z", {{1, 2}, {1, 2}, {1, 2}}));
  EXPECT_EQ(max_abs(fit_noise_cov(d, "z")), 0.0);
}

TEST(FitNoiseCov, SingleTraceArmNamed) {
  TraceDataset d;
  d.j_outcomes = 1;
  d.arms.push_back(arm_of("ok", "z", {{0}, {1}}));
  d.arms.push_back(arm_of("lonely", "z", {{3}}));
  try {
    fit_noise_cov(d, "z");
    FAIL();
  } catch (const InsufficientData& e) {
    EXPECT_NE(std::string(e.what()).find("lonely"), std::string::npos);
  }
}

TEST(FitNoiseCov, MonteCarloRecovery) {
  Rng rng(1);
  Matrix v(3, 3);
  v << 2, 0.6, 0.2, 0.6, 1.5, 0.4, 0.2, 0.4, 1;
  const auto d = gaussian_dataset(Vector::Zero(3), Matrix::Identity(3, 3), v, 200, 500, rng);
  EXPECT_LT(rel_frobenius(fit_noise_cov(d, "g"), v), 0.05);
}

TEST(FitPriorMean, Examples) {
  TraceDataset d;
  d.j_outcomes = 2;
  d.arms.push_back(arm_of("a", "z", {{1, 2}}));
  d.arms.push_back(arm_of("b", "z", {{2, 3}, {4, 5}}));
  EXPECT_LT(max_abs(fit_prior_mean(d, "z") - (Vector(2) << 2, 3).finished()), 1e-15);
  TraceDataset one;
  one.j_outcomes = 2;
  one.arms.push_back(arm_of("a", "z", {{1, 5}, {3, 7}}));
  EXPECT_LT(max_abs(fit_prior_mean(one, "z") - (Vector(2) << 2, 6).finished()), 1e-15);
  EXPECT_THROW(fit_prior_mean(one, "missing"), InsufficientData);
}

TEST(FitPriorMean, CltBand) {
  Rng rng(2);
  const Vector mu = (Vector(3) << 1, -2, 0.5).finished();
  const Matrix sigma = Matrix::Identity(3, 3);
  const Matrix v = Matrix::Identity(3, 3);
  const int n = 20;
  const auto d = gaussian_dataset(mu, sigma, v, 500, n, rng);
  const Vector est = fit_prior_mean(d, "g");
  const double sd_ybar = std::sqrt(1.0 + 1.0 / n);
  for (int k = 0; k < 3; ++k) EXPECT_LT(std::abs(est(k) - mu(k)), 4 * sd_ybar / std::sqrt(500.0));
}

TEST(FitPriorCov, Examples) {
  TraceDataset same;
  same.j_outcomes = 1;
  same.arms.push_back(arm_of("a", "z", {{1}, {3}}));
  same.arms.push_back(arm_of("b", "z", {{2}}));
  EXPECT_EQ(max_abs(fit_prior_cov(same, "z", fit_prior_mean(same, "z"))), 0.0);

  TraceDataset two;
  two.j_outcomes = 1;
  two.arms.push_back(arm_of("a", "z", {{0}}));
  two.arms.push_back(arm_of("b", "z", {{2}}));
  EXPECT_DOUBLE_EQ(fit_prior_cov(two, "z", Vector::Constant(1, 1.0))(0, 0), 1.0);

  TraceDataset lone;
  lone.j_outcomes = 1;
  lone.arms.push_back(arm_of("a", "z", {{0}}));
  EXPECT_THROW(fit_prior_cov(lone, "z", Vector::Zero(1)), InsufficientData);
}

TEST(FitPriorCov, MonteCarloRecovery) {
  Rng rng(3);
  Matrix sigma(3, 3);
  sigma << 1, 0.5, 0.25, 0.5, 1, 0.5, 0.25, 0.5, 1;
  const auto d = gaussian_dataset(Vector::Zero(3), sigma, Matrix::Identity(3, 3), 500, 2000, rng);
  EXPECT_LT(rel_frobenius(fit_prior_cov(d, "g", fit_prior_mean(d, "g")), sigma), 0.15);
}

TEST(FittedCovariances, SymmetricPsd) {
  Rng rng(4);
  BinaryTraceParams p;
  p.num_arms = 30;
  p.traces_per_arm = 40;
  p.j_outcomes = 8;
  const auto d = gen_binary_traces(p, rng);
  const auto fit = fit_prior(d);
  EXPECT_EQ(fit.classes.size(), 4u);
  for (const auto& [z, c] : fit.classes) {
    EXPECT_TRUE(is_psd(c.v)) << z;
    EXPECT_TRUE(is_psd(c.sigma1)) << z;
    // Y1 is always 1, so both estimates are singular; the repaired form is usable.
    EXPECT_EQ(c.v(0, 0), 0.0);
  }
  EXPECT_NO_THROW(fit.to_prior_params());
}

TEST(MarginalNll, TruthBeatsShiftedMean) {
  Rng rng(5);
  Matrix sigma(2, 2);
  sigma << 1, 0.3, 0.3, 1;
  const Matrix v = 2.0 * Matrix::Identity(2, 2);
  const Vector mu = (Vector(2) << 0.5, -0.5).finished();
  const auto d = gaussian_dataset(mu, sigma, v, 100, 30, rng);
  EXPECT_LE(marginal_nll(d, "g", mu, sigma, v), marginal_nll(d, "g", mu + 10 * Vector::Ones(2), sigma, v));
}

TEST(MarginalNll, SingleArmAtItsMean) {
  TraceDataset d;
  d.j_outcomes = 2;
  d.arms.push_back(arm_of("a", "z", {{1, 2}, {3, 0}}));
  const Matrix sigma = Matrix::Identity(2, 2);
  const Matrix v = 4.0 * Matrix::Identity(2, 2);
  const double expected = std::log((sigma + v / 2.0).determinant());
  EXPECT_NEAR(marginal_nll(d, "z", (Vector(2) << 2, 1).finished(), sigma, v), expected, 1e-12);
}

TEST(MarginalNll, AdditiveOverArmCopies) {
  Rng rng(6);
  const auto d = gaussian_dataset(Vector::Zero(2), Matrix::Identity(2, 2), Matrix::Identity(2, 2), 10, 5, rng);
  auto doubled = d;
  for (const auto& a : d.arms) doubled.arms.push_back({a.id + "b", a.z, a.traces, Matrix()});
  const Vector mu = Vector::Constant(2, 0.2);
  const double single = marginal_nll(d, "g", mu, Matrix::Identity(2, 2), Matrix::Identity(2, 2));
  EXPECT_NEAR(marginal_nll(doubled, "g", mu, Matrix::Identity(2, 2), Matrix::Identity(2, 2)), 2 * single, 1e-9);
  EXPECT_THROW(marginal_nll(d, "g", mu, -Matrix::Identity(2, 2), Matrix::Identity(2, 2)), DefinitenessError);
}

TEST(MarginalNll, MeanEstimateIsStationaryForEqualCounts) {
  Rng rng(7);
  Matrix sigma(2, 2);
  sigma << 1, 0.4, 0.4, 2;
  const Matrix v = Matrix::Identity(2, 2);
  const auto d = gaussian_dataset(Vector::Zero(2), sigma, v, 50, 10, rng);
  const Vector mu = fit_prior_mean(d, "g");
  const double h = 1e-4;
  Vector grad(2);
  for (int k = 0; k < 2; ++k) {
    Vector up = mu, down = mu;
    up(k) += h;
    down(k) -= h;
    grad(k) = (marginal_nll(d, "g", up, sigma, v) - marginal_nll(d, "g", down, sigma, v)) / (2 * h);
  }
  EXPECT_LE(grad.norm(), 1e-6);
}

TEST(FitPrior, InvariantToOrder) {
  Rng rng(8);
  BinaryTraceParams p;
  p.num_arms = 12;
  p.traces_per_arm = 20;
  p.j_outcomes = 5;
  const auto d = gen_binary_traces(p, rng);
  auto shuffled = d;
  std::shuffle(shuffled.arms.begin(), shuffled.arms.end(), rng);
  for (auto& a : shuffled.arms) {
    std::vector<Eigen::Index> idx(static_cast<std::size_t>(a.traces.rows()));
    std::iota(idx.begin(), idx.end(), 0);
    std::shuffle(idx.begin(), idx.end(), rng);
    Matrix t(a.traces.rows(), a.traces.cols());
    for (std::size_t r = 0; r < idx.size(); ++r) t.row(static_cast<Eigen::Index>(r)) = a.traces.row(idx[r]);
    a.traces = t;
  }
  const auto f1 = fit_prior(d);
  const auto f2 = fit_prior(shuffled);
  for (const auto& [z, c] : f1.classes) {
    const auto& o = f2.classes.at(z);
    EXPECT_LT(max_abs(c.mu1 - o.mu1), 1e-12);
    EXPECT_LT(max_abs(c.sigma1 - o.sigma1), 1e-12);
    EXPECT_LT(max_abs(c.v - o.v), 1e-12);
  }
}

TEST(FitPrior, SingleArmClassFallsBackToPooled) {
  TraceDataset d;
  d.j_outcomes = 1;
  d.arms.push_back(arm_of("a", "x", {{0}, {1}}));
  d.arms.push_back(arm_of("b", "x", {{2}, {3}}));
  d.arms.push_back(arm_of("c", "y", {{4}, {5}}));
  const auto fit = fit_prior(d);
  ASSERT_EQ(fit.warnings.size(), 1u);
  EXPECT_NE(fit.warnings[0].find("'y'"), std::string::npos);
  // arm means 0.5, 2.5, 4.5: pooled mean 2.5, pooled variance 8/3
  EXPECT_NEAR(fit.classes.at("y").sigma1(0, 0), 8.0 / 3.0, 1e-12);
  EXPECT_EQ(fit.classes.at("y").num_arms, 1);
  EXPECT_EQ(fit.classes.at("x").num_traces, 4);
}

TEST(PriorBundle, RoundTrip) {
  Rng rng(9);
  BinaryTraceParams p;
  p.num_arms = 8;
  p.traces_per_arm = 10;
  p.j_outcomes = 4;
  p.num_classes = 2;
  const auto fit = fit_prior(gen_binary_traces(p, rng));
  const auto dir = std::filesystem::temp_directory_path() / ("impatient_bundle_" + std::to_string(::getpid()));
  write_prior_bundle(fit, dir);
  const auto back = read_prior_bundle(dir);
  std::filesystem::remove_all(dir);
  ASSERT_EQ(back.classes.size(), 2u);
  for (const auto& [z, c] : fit.classes) {
    const auto& o = back.classes.at(z);
    EXPECT_EQ(max_abs(c.mu1 - o.mu1), 0.0);
    EXPECT_EQ(max_abs(c.sigma1 - o.sigma1), 0.0);
    EXPECT_EQ(max_abs(c.v - o.v), 0.0);
  }
}
