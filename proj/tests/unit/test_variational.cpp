#include <algorithm>
#include <cmath>
#include <numbers>

#include <gtest/gtest.h>

#include "elliptic/data.hpp"
#include "elliptic/errors.hpp"
#include "elliptic/exact_gp.hpp"
#include "elliptic/models.hpp"
#include "elliptic/variational.hpp"

using namespace elliptic;

namespace {

Eigen::MatrixXd random_matrix(int r, int c, std::uint64_t seed) {
  Rng rng(seed);
  Eigen::MatrixXd m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = standard_normal(rng);
  return m;
}

void perturb(ModelSpec& spec, double scale, std::uint64_t seed) {
  Rng rng(seed);
  auto blocks = parameter_blocks(spec);
  for (auto& b : blocks) {
    for (Eigen::Index i = 0; i < b.value.size(); ++i) b.value[i] += scale * standard_normal(rng);
  }
  apply_parameter_blocks(spec, blocks);
}

Eigen::MatrixXd jittered(const ModelSpec& spec) {
  const GramMatrix g = gram_with_jitter(spec.kernel, spec.variational.Z, spec.jitter);
  return g.matrix() + g.jitter() * Eigen::MatrixXd::Identity(g.size(), g.size());
}

double log_normal(const Eigen::VectorXd& x, const Eigen::VectorXd& mu, const Eigen::MatrixXd& cov) {
  const Eigen::LLT<Eigen::MatrixXd> llt(cov);
  const Eigen::VectorXd a = llt.matrixL().solve(x - mu);
  const double logdet = 2.0 * Eigen::MatrixXd(llt.matrixL()).diagonal().array().log().sum();
  return -0.5 * (static_cast<double>(x.size()) * std::log(2.0 * std::numbers::pi) + logdet + a.squaredNorm());
}

}  // namespace

TEST(Variational, PriorIsRecoveredAtInitialization) {
  const Eigen::MatrixXd x = random_matrix(12, 2, 1);
  Rng rng(2);
  ModelOptions opt;
  opt.inducing = 8;
  const ModelSpec spec = make_model(ModelKind::SVGP, Kernel::se_ard(2, 0.8, 1.4), x, opt, rng);
  const Eigen::MatrixXd xs = random_matrix(100, 2, 3);
  const LatentMarginals lm = q_f_marginal(spec, xs);
  EXPECT_LT(lm.mu.cwiseAbs().maxCoeff(), 1e-10);
  EXPECT_LT((lm.var - spec.kernel.diag(xs)).cwiseAbs().maxCoeff(), 1e-8);
}

TEST(Variational, MeanAtInducingPointIsInducingMean) {
  const Eigen::MatrixXd x = random_matrix(6, 2, 4);
  Rng rng(5);
  ModelOptions opt;
  opt.inducing = 6;
  ModelSpec spec = make_model(ModelKind::SVGP, Kernel::se_ard(2), x, opt, rng);
  spec.variational.m = random_matrix(6, 1, 6).col(0);
  for (int j = 0; j < 6; ++j) {
    const auto [mu, var] = q_f_marginal(spec, Eigen::VectorXd(spec.variational.Z.row(j).transpose()));
    EXPECT_NEAR(mu, spec.variational.m[j], 1e-8);
  }
}

TEST(Variational, MarginalMatchesDenseInverse) {
  const Eigen::MatrixXd x = random_matrix(5, 2, 7);
  Rng rng(8);
  ModelOptions opt;
  opt.inducing = 5;
  ModelSpec spec = make_model(ModelKind::SVGP, Kernel::se_ard(2, 1.3), x, opt, rng);
  spec.variational.m = random_matrix(5, 1, 9).col(0);
  Eigen::MatrixXd l = random_matrix(5, 5, 10).triangularView<Eigen::Lower>();
  l.diagonal() = l.diagonal().cwiseAbs().array() + 0.5;
  spec.variational.S_chol = l;
  const Eigen::MatrixXd xs = random_matrix(4, 2, 11);
  const LatentMarginals lm = q_f_marginal(spec, xs);
  const Eigen::MatrixXd kinv = jittered(spec).inverse();
  const Eigen::MatrixXd ks = spec.kernel.gram(spec.variational.Z, xs);
  const Eigen::MatrixXd s = l * l.transpose();
  for (int i = 0; i < 4; ++i) {
    const Eigen::VectorXd k = ks.col(i);
    EXPECT_NEAR(lm.mu[i], k.dot(kinv * spec.variational.m), 1e-10);
    const double var = spec.kernel.diag(xs.row(i))[0] - k.dot(kinv * k) + k.dot(kinv * s * kinv * k);
    EXPECT_NEAR(lm.var[i], var, 1e-10);
  }
}

TEST(Variational, KlOfPriorIsZero) {
  const Eigen::MatrixXd x = random_matrix(10, 1, 12);
  for (ModelKind kind : {ModelKind::SVGP, ModelKind::EPEP}) {
    Rng rng(13);
    ModelOptions opt;
    opt.inducing = 10;
    const ModelSpec spec = make_model(kind, Kernel::se_ard(1), x, opt, rng);
    const KlValue kl = kl_term(spec, rng);
    EXPECT_NEAR(kl.gaussian, 0.0, 1e-8);
    EXPECT_LE(std::abs(kl.mixing), 3.0 * kl.mixing_se + 1e-12);
  }
}

TEST(Variational, GaussianKlMatchesClosedForm) {
  const Eigen::MatrixXd x = random_matrix(6, 2, 14);
  Rng rng(15);
  ModelOptions opt;
  opt.inducing = 6;
  ModelSpec spec = make_model(ModelKind::SVGP, Kernel::se_ard(2, 0.9), x, opt, rng);
  spec.variational.m = random_matrix(6, 1, 16).col(0);
  Eigen::MatrixXd l = random_matrix(6, 6, 17).triangularView<Eigen::Lower>();
  l *= 0.3;
  l.diagonal() = l.diagonal().cwiseAbs().array() + 0.2;
  spec.variational.S_chol = l;
  const Eigen::MatrixXd k = jittered(spec);
  const Eigen::MatrixXd s = l * l.transpose();
  const Eigen::MatrixXd kinv = k.inverse();
  const double oracle = 0.5 * ((kinv * s).trace() + spec.variational.m.dot(kinv * spec.variational.m) - 6.0 +
                               std::log(k.determinant()) - std::log(s.determinant()));
  const KlValue kl = kl_term(spec, rng);
  EXPECT_NEAR(kl.total(), oracle, 1e-10);
  EXPECT_EQ(kl.mixing, 0.0);
}

TEST(Variational, KlBetweenDistinctFlowsIsNonnegative) {
  const Eigen::MatrixXd x = random_matrix(8, 1, 18);
  Rng rng(19);
  ModelOptions opt;
  opt.inducing = 8;
  ModelSpec spec = make_model(ModelKind::EPEP, Kernel::se_ard(1), x, opt, rng);
  perturb(spec, 0.5, 20);
  const KlValue kl = kl_term(spec, rng, 4096);
  EXPECT_GE(kl.mixing, -3.0 * kl.mixing_se);
  EXPECT_GT(kl.gaussian, 0.0);
}

TEST(Variational, SelfKlCentersOnZero) {
  const Eigen::MatrixXd x = random_matrix(5, 1, 21);
  Rng rng(22);
  ModelOptions opt;
  opt.inducing = 5;
  ModelSpec spec = make_model(ModelKind::EPEP, Kernel::se_ard(1), x, opt, rng);
  perturb(spec, 0.4, 23);
  spec.prior_mixing = spec.variational.posterior_mixing;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng r(100 + seed);
    const KlValue kl = kl_term(spec, r, 512);
    EXPECT_LT(std::abs(kl.mixing), 3.0 * kl.mixing_se + 1e-12);
  }
}

TEST(Variational, ElboAtAnalyticOptimumEqualsLogMarginal) {
  Dataset d = gen_noise_identification(NoiseVariant::Gauss, 50, 3);
  standardize(d);
  const ExactGP gp{Kernel::se_ard(1, 0.7, 0.9), std::log(0.05)};
  Rng rng(24);
  ModelOptions opt;
  opt.inducing = 50;
  ModelSpec spec = make_model(ModelKind::SVGP, gp.kernel, d.X, opt, rng);
  spec.variational.Z = d.X;
  spec.likelihood = GaussianLik{gp.log_noise};
  const double s2 = gp.noise_variance();
  const Eigen::MatrixXd k = jittered(spec);
  const Eigen::MatrixXd eye = Eigen::MatrixXd::Identity(50, 50);
  Eigen::MatrixXd sig = k - k * (k + s2 * eye).llt().solve(k);
  sig = 0.5 * (sig + sig.transpose());
  spec.variational.m = sig * d.y / s2;
  spec.variational.S_chol = Eigen::LLT<Eigen::MatrixXd>(sig).matrixL();
  const double value = elbo(spec, d.X, d.y, 50.0, 1, rng).value;
  EXPECT_NEAR(value, log_marginal(gp, d.X, d.y).value, 1e-6 * 50);
}

TEST(Variational, ElboWithoutKlIsExpectedLogLikelihood) {
  const Eigen::MatrixXd x = random_matrix(7, 1, 25);
  const Eigen::VectorXd y = random_matrix(7, 1, 26).col(0);
  Rng rng(27);
  ModelOptions opt;
  opt.inducing = 7;
  const ModelSpec spec = make_model(ModelKind::SVGP, Kernel::se_ard(1), x, opt, rng);
  const ElboValue v = elbo(spec, x, y, 7.0, 4, rng);
  EXPECT_NEAR(v.kl_gaussian, 0.0, 1e-8);
  EXPECT_EQ(v.kl_mixing, 0.0);
  EXPECT_NEAR(v.value, v.expected_loglik, 1e-8);
  // Gaussian expected log-likelihood in closed form.
  const LatentMarginals lm = q_f_marginal(spec, x);
  const double s2 = 0.1;
  double oracle = 0.0;
  for (int i = 0; i < 7; ++i) {
    oracle += -0.5 * std::log(2.0 * std::numbers::pi * s2) - 0.5 * ((y[i] - lm.mu[i]) * (y[i] - lm.mu[i]) + lm.var[i]) / s2;
  }
  EXPECT_NEAR(v.expected_loglik, oracle, 1e-8);
}

TEST(Variational, ElboBoundsImportanceSampledEvidence) {
  // Ten points, Z = X, Gaussian prior on u and elliptical noise: the evidence
  // is estimated by importance sampling with q(u) as proposal.
  const Eigen::MatrixXd x = Eigen::VectorXd::LinSpaced(10, -2.0, 2.0);
  Eigen::VectorXd y = (3.0 * x.col(0)).array().sin() * 0.5;
  y += 0.3 * random_matrix(10, 1, 28).col(0);
  Rng rng(29);
  ModelOptions opt;
  opt.inducing = 10;
  ModelSpec spec = make_model(ModelKind::EPGP, Kernel::se_ard(1), x, opt, rng);
  spec.variational.Z = x;
  TrainConfig cfg;
  cfg.epochs = 300;
  cfg.early_stopping = false;
  spec = train(spec, x, y, Eigen::MatrixXd(0, 1), Eigen::VectorXd(0), cfg, rng).model;

  const ElboValue bound = elbo(spec, x, y, 10.0, 512, rng);
  const Eigen::MatrixXd k = jittered(spec);
  const Eigen::MatrixXd lq = spec.variational.S_chol;
  const Eigen::MatrixXd s = lq * lq.transpose();
  const NoiseNodes nodes = noise_nodes(noise_mixing_at(spec.likelihood, Eigen::VectorXd::Zero(1)));
  const int n = 200000;
  std::vector<double> logw(n);
  for (int t = 0; t < n; ++t) {
    Eigen::VectorXd eps(10);
    for (int i = 0; i < 10; ++i) eps[i] = standard_normal(rng);
    const Eigen::VectorXd u = spec.variational.m + lq * eps;
    double ll = 0.0;
    for (int i = 0; i < 10; ++i) ll += noise_log_lik(nodes, y[i] - u[i]);
    logw[t] = ll + log_normal(u, Eigen::VectorXd::Zero(10), k) - log_normal(u, spec.variational.m, s);
  }
  const double mx = *std::max_element(logw.begin(), logw.end());
  double mean = 0.0, sq = 0.0;
  for (double v : logw) {
    const double w = std::exp(v - mx);
    mean += w;
    sq += w * w;
  }
  mean /= n;
  const double se_w = std::sqrt((sq / n - mean * mean) / n);
  const double log_evidence = mx + std::log(mean);
  const double se = se_w / mean;
  EXPECT_LE(bound.value, log_evidence + 3.0 * se);
}

TEST(Variational, TrainingIsDeterministicPerSeed) {
  Dataset d = split(gen_noise_identification(NoiseVariant::Student4, 60, 5), {0.6, 0.2, 0.2}, 1);
  standardize(d);
  const Eigen::MatrixXd xt = take_rows(d.X, d.train), xv = take_rows(d.X, d.val);
  const Eigen::VectorXd yt = take(d.y, d.train), yv = take(d.y, d.val);
  auto run = [&] {
    Rng rng(30);
    ModelOptions opt;
    const ModelSpec spec = make_model(ModelKind::EPEP, Kernel::se_ard(1), xt, opt, rng);
    TrainConfig cfg;
    cfg.epochs = 40;
    return train(spec, xt, yt, xv, yv, cfg, rng);
  };
  const TrainResult a = run(), b = run();
  ASSERT_EQ(a.trace.size(), b.trace.size());
  for (std::size_t i = 0; i < a.trace.size(); ++i) {
    EXPECT_EQ(a.trace[i].elbo, b.trace[i].elbo);
    EXPECT_EQ(a.trace[i].val_nll, b.trace[i].val_nll);
  }
  EXPECT_EQ(a.best_epoch, b.best_epoch);
}

TEST(Variational, EarlyStoppingNeedsValidationData) {
  const Eigen::MatrixXd x = random_matrix(5, 1, 31);
  const Eigen::VectorXd y = random_matrix(5, 1, 32).col(0);
  Rng rng(33);
  const ModelSpec spec = make_model(ModelKind::SVGP, Kernel::se_ard(1), x, {}, rng);
  TrainConfig cfg;
  cfg.epochs = 5;
  EXPECT_THROW(train(spec, x, y, Eigen::MatrixXd(0, 1), Eigen::VectorXd(0), cfg, rng), ConfigError);
}

TEST(Variational, UntrainedPredictionIsFlagged) {
  const Eigen::MatrixXd x = random_matrix(5, 1, 34);
  Rng rng(35);
  const ModelSpec spec = make_model(ModelKind::SVGP, Kernel::se_ard(1), x, {}, rng);
  EXPECT_THROW(predict(spec, x), ConfigError);
}

class PredictiveTest : public ::testing::Test {
 protected:
  void SetUp() override {
    x_ = random_matrix(8, 1, 36);
    Rng rng(37);
    ModelOptions opt;
    opt.inducing = 8;
    spec_ = make_model(ModelKind::EPEP, Kernel::se_ard(1), x_, opt, rng);
    perturb(spec_, 0.3, 38);
    spec_.trained = true;
  }
  Eigen::MatrixXd x_;
  ModelSpec spec_;
};

TEST_F(PredictiveTest, DiracIntervalIsGaussian) {
  ModelSpec s = spec_;
  s.variational.posterior_mixing = Dirac{1.0};
  s.prior_mixing = Dirac{1.0};
  const PredictiveDistribution p = predict(s, x_);
  for (Eigen::Index i = 0; i < p.size(); ++i) EXPECT_NEAR(p.latent_halfwidth(i), 1.959964 * std::sqrt(p.var_f[i]), 1e-5);
}

TEST_F(PredictiveTest, HeavierMixingWidensIntervals) {
  ModelSpec gauss = spec_;
  gauss.variational.posterior_mixing = Dirac{1.0};
  gauss.prior_mixing = Dirac{1.0};
  const PredictiveDistribution pg = predict(gauss, x_);
  // A flow mixing with unit median and spread around it.
  ModelSpec heavy = spec_;
  auto& flow = std::get<FlowMixing>(heavy.variational.posterior_mixing).flow;
  flow = SplineFlowParams::identity(5, Squash::scaled_sigmoid(2.0));
  const PredictiveDistribution ph = predict(heavy, x_);
  for (Eigen::Index i = 0; i < pg.size(); ++i) EXPECT_GT(ph.latent_halfwidth(i), pg.latent_halfwidth(i));
}

TEST_F(PredictiveTest, DensityMatchesMonteCarlo) {
  const int n_xi = 4096;
  const PredictiveDistribution p = predict(spec_, x_, n_xi);
  const double y = p.mu_f[2] + 0.4;
  const double analytic = std::exp(p.log_density(2, y));
  Rng rng(39);
  const auto xi = sample_mix(spec_.variational.posterior_mixing, 1000000, rng);
  const auto omega = sample_mix(noise_mixing_at(spec_.likelihood, x_.row(2).transpose()), 1000000, rng);
  double m = 0.0, sq = 0.0;
  for (std::size_t t = 0; t < xi.size(); ++t) {
    const double var = p.var_f[2] * xi[t] + omega[t];
    const double d = std::exp(-0.5 * (std::log(2.0 * std::numbers::pi * var) + (y - p.mu_f[2]) * (y - p.mu_f[2]) / var));
    m += d;
    sq += d * d;
  }
  const double n = static_cast<double>(xi.size());
  m /= n;
  EXPECT_NEAR(analytic, m, 3.0 * std::sqrt((sq / n - m * m) / n));
}

TEST_F(PredictiveTest, NllIsPermutationInvariant) {
  const Eigen::VectorXd y = random_matrix(8, 1, 40).col(0);
  std::vector<Eigen::Index> perm = {3, 7, 0, 5, 1, 6, 2, 4};
  const double a = predictive_nll(spec_, x_, y);
  const double b = predictive_nll(spec_, take_rows(x_, perm), take(y, perm));
  EXPECT_NEAR(a, b, 1e-12);
}

TEST(Variational, GaussianPredictiveNllMatchesClosedForm) {
  const Eigen::MatrixXd x = random_matrix(6, 1, 41);
  Rng rng(42);
  ModelOptions opt;
  opt.inducing = 6;
  ModelSpec spec = make_model(ModelKind::SVGP, Kernel::se_ard(1), x, opt, rng);
  perturb(spec, 0.2, 43);
  spec.trained = true;
  const Eigen::MatrixXd xs = random_matrix(5, 1, 44);
  const Eigen::VectorXd ys = random_matrix(5, 1, 45).col(0);
  const LatentMarginals lm = q_f_marginal(spec, xs);
  const double s2 = std::exp(std::get<GaussianLik>(spec.likelihood).log_variance);
  double oracle = 0.0;
  for (int i = 0; i < 5; ++i) {
    const double v = lm.var[i] + s2;
    oracle += 0.5 * (std::log(2.0 * std::numbers::pi * v) + (ys[i] - lm.mu[i]) * (ys[i] - lm.mu[i]) / v);
  }
  EXPECT_NEAR(predictive_nll(spec, xs, ys), oracle / 5.0, 1e-6);
}

TEST(Variational, PerfectPredictionGivesLargeFiniteNegativeNll) {
  const Eigen::MatrixXd x = Eigen::VectorXd::LinSpaced(5, -1.0, 1.0);
  Rng rng(46);
  ModelOptions opt;
  opt.inducing = 5;
  ModelSpec spec = make_model(ModelKind::SVGP, Kernel::se_ard(1), x, opt, rng);
  spec.variational.m = Eigen::VectorXd::LinSpaced(5, 0.0, 1.0);
  spec.variational.S_chol = 1e-6 * Eigen::MatrixXd::Identity(5, 5);
  spec.likelihood = GaussianLik{std::log(1e-10)};
  spec.trained = true;
  const double nll = predictive_nll(spec, x, spec.variational.m);
  EXPECT_TRUE(std::isfinite(nll));
  EXPECT_LT(nll, -5.0);
}

TEST(Variational, ParameterBlocksRoundTrip) {
  const Eigen::MatrixXd x = random_matrix(6, 2, 47);
  Rng rng(48);
  ModelOptions opt;
  opt.hidden = {4};
  opt.train_inducing = true;
  for (ModelKind kind : {ModelKind::SVGP, ModelKind::EPGP, ModelKind::EPEP, ModelKind::HetGP, ModelKind::HetEP}) {
    ModelSpec spec = make_model(kind, Kernel::se_ard(2), x, opt, rng);
    perturb(spec, 0.1, 49);
    const auto blocks = parameter_blocks(spec);
    ModelSpec copy = spec;
    apply_parameter_blocks(copy, blocks);
    const auto again = parameter_blocks(copy);
    ASSERT_EQ(blocks.size(), again.size());
    for (std::size_t i = 0; i < blocks.size(); ++i) {
      EXPECT_EQ(blocks[i].name, again[i].name);
      EXPECT_LT((blocks[i].value - again[i].value).cwiseAbs().maxCoeff(), 1e-12);
    }
  }
}

TEST(Variational, ElboGradientMatchesFiniteDifferences) {
  const Eigen::MatrixXd x = random_matrix(10, 2, 50);
  Eigen::VectorXd y = random_matrix(10, 1, 51).col(0);
  ModelOptions opt;
  opt.inducing = 6;
  opt.hidden = {8, 8};
  opt.train_inducing = true;
  for (ModelKind kind : {ModelKind::SVGP, ModelKind::EPGP, ModelKind::EPEP, ModelKind::HetGP, ModelKind::HetEP}) {
    Rng rng(52);
    ModelSpec spec = make_model(kind, Kernel::se_ard(2), x, opt, rng);
    perturb(spec, 0.1, 53);
    const ElboNoise noise = draw_elbo_noise(10, 4, rng, 64);
    const ElboGradient g = elbo_gradient(spec, x, y, 10.0, noise);
    for (std::size_t bi = 0; bi < g.blocks.size(); ++bi) {
      const Eigen::VectorXd fd = ad::finite_difference(
          [&](const Eigen::VectorXd& theta) {
            auto bl = parameter_blocks(spec);
            bl[bi].value = theta;
            ModelSpec s = spec;
            apply_parameter_blocks(s, bl);
            return elbo(s, x, y, 10.0, noise).value;
          },
          g.blocks[bi].value, 1e-5);
      EXPECT_LT((g.blocks[bi].grad - fd).norm() / std::max(fd.norm(), 1e-8), 1e-4)
          << to_string(kind) << " block " << g.blocks[bi].name;
    }
  }
}

TEST(Variational, StudentNoiseIsIdentifiedByTraining) {
  Dataset d = split(gen_noise_identification(NoiseVariant::Student4, 200, 11), {0.8, 0.2, 0.0}, 11);
  standardize(d);
  const Eigen::MatrixXd xt = take_rows(d.X, d.train), xv = take_rows(d.X, d.val);
  const Eigen::VectorXd yt = take(d.y, d.train), yv = take(d.y, d.val);
  Rng rng = split_rng(11, 1);
  const ModelSpec spec = make_model(ModelKind::EPGP, Kernel::se_ard(1), xt, {}, rng);
  TrainConfig cfg;
  const TrainResult r = train(spec, xt, yt, xv, yv, cfg, rng);
  Rng srng(12);
  auto fitted = sample_mix(noise_mixing_at(r.model.likelihood, Eigen::VectorXd::Zero(1)), 10000, srng);
  auto truth = sample_mix(ScaleInvChiSquare{4.0, kNoiseScale}, 10000, srng);
  const double y_var = d.stats.y_std * d.stats.y_std;
  for (double& w : fitted) w *= y_var;
  std::sort(fitted.begin(), fitted.end());
  std::sort(truth.begin(), truth.end());
  double w2 = 0.0;
  for (std::size_t i = 0; i < fitted.size(); ++i) w2 += (fitted[i] - truth[i]) * (fitted[i] - truth[i]);
  EXPECT_LT(std::sqrt(w2 / static_cast<double>(fitted.size())), 1.0);
}
