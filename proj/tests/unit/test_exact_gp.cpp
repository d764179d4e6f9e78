#include <cmath>
#include <numbers>

#include <gtest/gtest.h>

#include "elliptic/autodiff.hpp"
#include "elliptic/data.hpp"
#include "elliptic/elliptical.hpp"
#include "elliptic/exact_gp.hpp"

using namespace elliptic;

namespace {

Eigen::MatrixXd random_matrix(int r, int c, std::uint64_t seed) {
  Rng rng(seed);
  Eigen::MatrixXd m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = standard_normal(rng);
  return m;
}

Eigen::MatrixXd noisy_gram(const ExactGP& gp, const Eigen::MatrixXd& x) {
  return gp.kernel.gram(x, x) + gp.noise_variance() * Eigen::MatrixXd::Identity(x.rows(), x.rows());
}

}  // namespace

TEST(ExactGP, SinglePointLogMarginal) {
  const ExactGP gp{Kernel::se_ard(1, 1.0, 2.0), std::log(0.5)};
  const Eigen::MatrixXd x = Eigen::MatrixXd::Constant(1, 1, 0.3);
  const Eigen::VectorXd y = Eigen::VectorXd::Constant(1, 1.2);
  const double v = 2.5;
  EXPECT_NEAR(log_marginal(gp, x, y).value, -0.5 * std::log(2.0 * std::numbers::pi * v) - 0.5 * 1.44 / v, 1e-12);
}

TEST(ExactGP, LogMarginalIsGaussianJointDensity) {
  const Eigen::MatrixXd x = random_matrix(9, 2, 1);
  const Eigen::VectorXd y = random_matrix(9, 1, 2).col(0);
  const ExactGP gp{Kernel::se_ard(2, 0.7, 1.3), std::log(0.2)};
  const auto dist = EllipticalDistribution::from_scale(Eigen::VectorXd::Zero(9), noisy_gram(gp, x), Dirac{1.0});
  EXPECT_NEAR(log_marginal(gp, x, y).value, joint_log_density(dist, y), 1e-9);
}

TEST(ExactGP, InterpolatesWithTinyNoise) {
  const Eigen::MatrixXd x = Eigen::VectorXd::LinSpaced(6, -2.0, 2.0);
  const Eigen::VectorXd y = x.col(0).array().sin();
  const ExactGP gp{Kernel::se_ard(1), std::log(1e-8)};
  const ExactPrediction p = posterior_predict(gp, x, y, x);
  EXPECT_LT((p.mean - y).cwiseAbs().maxCoeff(), 1e-4);
  EXPECT_LT(p.var.maxCoeff(), 1e-4);
}

TEST(ExactGP, PredictionAgreesWithConditioning) {
  const Eigen::MatrixXd x = random_matrix(7, 1, 3);
  const Eigen::VectorXd y = random_matrix(7, 1, 4).col(0);
  const Eigen::MatrixXd xs = random_matrix(3, 1, 5);
  const ExactGP gp{Kernel::se_ard(1, 0.9, 1.1), std::log(0.3)};
  Eigen::MatrixXd all(10, 1);
  all << x, xs;
  Eigen::MatrixXd joint = gp.kernel.gram(all, all);
  joint.topLeftCorner(7, 7) += gp.noise_variance() * Eigen::MatrixXd::Identity(7, 7);
  const auto dist = EllipticalDistribution::from_scale(Eigen::VectorXd::Zero(10), joint, Dirac{1.0});
  std::vector<Eigen::Index> observed(7);
  for (int i = 0; i < 7; ++i) observed[static_cast<std::size_t>(i)] = i;
  const ConditionalDistribution c = condition(dist, observed, y);
  const ExactPrediction p = posterior_predict(gp, x, y, xs);
  EXPECT_LT((p.mean - c.mu).cwiseAbs().maxCoeff(), 1e-10);
  EXPECT_LT((p.var - c.covariance().diagonal()).cwiseAbs().maxCoeff(), 1e-10);
}

TEST(ExactGP, FarFieldRevertsToPrior) {
  const Eigen::MatrixXd x = random_matrix(5, 1, 6);
  const Eigen::VectorXd y = random_matrix(5, 1, 7).col(0);
  const ExactGP gp{Kernel::se_ard(1, 0.5, 1.7), std::log(0.1)};
  const ExactPrediction p = posterior_predict(gp, x, y, Eigen::MatrixXd::Constant(1, 1, 100.0));
  EXPECT_NEAR(p.mean[0], 0.0, 1e-12);
  EXPECT_NEAR(p.var[0], 1.7, 1e-12);
}

TEST(ExactGP, VarianceIsBoundedByPrior) {
  const Eigen::MatrixXd x = random_matrix(20, 2, 8);
  const Eigen::VectorXd y = random_matrix(20, 1, 9).col(0);
  const ExactGP gp{Kernel::se_ard(2, 0.8, 1.4), std::log(0.05)};
  const Eigen::MatrixXd xs = random_matrix(50, 2, 10);
  const ExactPrediction p = posterior_predict(gp, x, y, xs);
  for (Eigen::Index i = 0; i < xs.rows(); ++i) {
    EXPECT_GE(p.var[i], 0.0);
    EXPECT_LE(p.var[i], 1.4 + 1e-12);
  }
}

TEST(ExactGP, LogMarginalGradientMatchesFiniteDifferences) {
  const Eigen::MatrixXd x = random_matrix(12, 2, 11);
  const Eigen::VectorXd y = random_matrix(12, 1, 12).col(0);
  for (const Kernel& k : {Kernel::se_ard(2, 0.7, 1.2), Kernel::sum({Kernel::se_ard(2), Kernel::linear(0.5, 0.1)})}) {
    ExactGP gp{k, std::log(0.3)};
    const LogMarginal lm = log_marginal(gp, x, y);
    const Eigen::VectorXd fd = ad::finite_difference(
        [&](const Eigen::VectorXd& theta) {
          ExactGP g = gp;
          g.set_params(theta);
          return log_marginal(g, x, y).value;
        },
        gp.params());
    EXPECT_LT((lm.grad - fd).norm() / fd.norm(), 1e-6);
  }
}

TEST(ExactGP, LargerNoiseFlattensThePosteriorMean) {
  const Eigen::MatrixXd x = random_matrix(15, 1, 13);
  const Eigen::VectorXd y = (2.0 * x.col(0)).array().sin();
  double previous = std::numeric_limits<double>::infinity();
  for (double s2 : {1e-4, 1e-2, 1.0, 100.0}) {
    const ExactGP gp{Kernel::se_ard(1), std::log(s2)};
    const double norm = posterior_predict(gp, x, y, x).mean.norm();
    EXPECT_LT(norm, previous);
    previous = norm;
  }
}

TEST(ExactGP, PredictiveNllMatchesClosedForm) {
  const Eigen::MatrixXd x = random_matrix(10, 1, 14);
  const Eigen::VectorXd y = random_matrix(10, 1, 15).col(0);
  const Eigen::MatrixXd xs = random_matrix(4, 1, 16);
  const Eigen::VectorXd ys = random_matrix(4, 1, 17).col(0);
  const ExactGP gp{Kernel::se_ard(1), std::log(0.2)};
  const ExactPrediction p = posterior_predict(gp, x, y, xs);
  double oracle = 0.0;
  for (int i = 0; i < 4; ++i) {
    const double v = p.var[i] + 0.2;
    oracle += 0.5 * (std::log(2.0 * std::numbers::pi * v) + (ys[i] - p.mean[i]) * (ys[i] - p.mean[i]) / v);
  }
  EXPECT_NEAR(exact_predictive_nll(gp, x, y, xs, ys), oracle / 4.0, 1e-10);
}

TEST(ExactGP, TrainingImprovesLogMarginal) {
  Dataset d = split(gen_noise_identification(NoiseVariant::Gauss, 80, 3), {0.75, 0.25, 0.0}, 3);
  standardize(d);
  const Eigen::MatrixXd xt = take_rows(d.X, d.train), xv = take_rows(d.X, d.val);
  const Eigen::VectorXd yt = take(d.y, d.train), yv = take(d.y, d.val);
  const ExactGP init{Kernel::se_ard(1), std::log(0.1)};
  TrainConfig cfg;
  cfg.epochs = 300;
  cfg.lr = 0.05;
  cfg.early_stopping = false;
  const ExactTrainResult r = train_exact(init, xt, yt, xv, yv, cfg);
  EXPECT_GT(log_marginal(r.model, xt, yt).value, log_marginal(init, xt, yt).value);
  ASSERT_EQ(r.trace.size(), 300U);
}
