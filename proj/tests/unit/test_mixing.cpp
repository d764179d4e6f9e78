#include <cmath>
#include <numbers>
#include <variant>

#include <gtest/gtest.h>

#include "elliptic/errors.hpp"
#include "elliptic/mixing.hpp"

using namespace elliptic;

namespace {

double sics_log_density(double nu, double tau2, double w) {
  return 0.5 * nu * std::log(0.5 * nu * tau2) - std::lgamma(0.5 * nu) - (1.0 + 0.5 * nu) * std::log(w) -
         0.5 * nu * tau2 / w;
}

FlowMixing random_flow(std::uint64_t seed) {
  FlowMixing f{SplineFlowParams::identity(9, Squash::softplus())};
  Rng rng(seed);
  for (Eigen::Index i = 0; i < f.flow.raw.size(); ++i) f.flow.raw[i] = 0.8 * standard_normal(rng);
  return f;
}

// Trapezoid integral of exp(log_density_mix) over a log-spaced grid on (0, hi).
double mass(const MixingDistribution& d, double hi) {
  const int n = 200001;
  const double a = std::log(1e-8), b = std::log(hi);
  double acc = 0.0, prev = 0.0;
  for (int i = 0; i < n; ++i) {
    const double t = a + (b - a) * i / (n - 1);
    const double w = std::exp(t);
    const double f = std::exp(std::get<double>(log_density_mix(d, w))) * w;
    if (i > 0) acc += 0.5 * (f + prev) * (b - a) / (n - 1);
    prev = f;
  }
  return acc;
}

}  // namespace

TEST(Mixing, DiracSamplesAreConstant) {
  Rng rng(1);
  for (double v : sample_mix(Dirac{0.04}, 100, rng)) EXPECT_EQ(v, 0.04);
}

TEST(Mixing, DiracMeanAndDensityMarker) {
  Rng rng(2);
  EXPECT_EQ(mean_mix(Dirac{2.5}, 10, rng), 2.5);
  EXPECT_FALSE(has_density(Dirac{1.0}));
  EXPECT_TRUE(std::holds_alternative<PointMass>(log_density_mix(Dirac{1.0}, 1.0)));
}

TEST(Mixing, ScaleInvChiSquareSampleMean) {
  Rng rng(3);
  const auto s = sample_mix(ScaleInvChiSquare{5.0, 1.0}, 100000, rng);
  double mean = 0.0;
  for (double v : s) mean += v;
  mean /= static_cast<double>(s.size());
  EXPECT_NEAR(mean, 5.0 / 3.0, 0.02 * 5.0 / 3.0);
}

TEST(Mixing, ScaleInvChiSquareDensityAtOne) {
  const double lp = std::get<double>(log_density_mix(ScaleInvChiSquare{4.0, 1.0}, 1.0));
  EXPECT_NEAR(lp, std::log(4.0 * std::exp(-2.0)), 1e-12);
  EXPECT_NEAR(lp, -0.613706, 1e-6);
  for (double w : {0.1, 0.5, 2.0, 7.0}) {
    EXPECT_NEAR(std::get<double>(log_density_mix(ScaleInvChiSquare{3.0, 0.5}, w)), sics_log_density(3.0, 0.5, w),
                1e-12);
  }
}

TEST(Mixing, NonPositiveArgumentThrows) {
  EXPECT_THROW(log_density_mix(ScaleInvChiSquare{4.0, 1.0}, -1.0), DomainError);
  EXPECT_THROW(log_density_mix(random_flow(1), 0.0), DomainError);
}

TEST(Mixing, InvalidParametersThrow) {
  EXPECT_THROW(validate(Dirac{0.0}), DomainError);
  EXPECT_THROW(validate(ScaleInvChiSquare{-1.0, 1.0}), DomainError);
  FlowMixing unsquashed{SplineFlowParams::identity(9, Squash::none())};
  EXPECT_THROW(validate(unsquashed), DomainError);
}

TEST(Mixing, ScaleInvChiSquareMean) {
  Rng rng(4);
  EXPECT_DOUBLE_EQ(mean_mix(ScaleInvChiSquare{4.0, 1.0}, 0, rng), 2.0);
  EXPECT_TRUE(std::isinf(mean_mix(ScaleInvChiSquare{2.0, 1.0}, 0, rng)));
}

TEST(Mixing, FlowSamplesArePositive) {
  Rng rng(5);
  for (double v : sample_mix(random_flow(2), 10000, rng)) EXPECT_GT(v, 0.0);
}

TEST(Mixing, FlowMeanIsRepeatablePerSeed) {
  const auto f = random_flow(3);
  Rng a(6), b(6);
  EXPECT_EQ(mean_mix(f, 1000, a), mean_mix(f, 1000, b));
}

TEST(Mixing, FlowMeanAgreesWithLargeSample) {
  const auto f = random_flow(4);
  Rng rng(7);
  const auto s = sample_mix(f, 1000000, rng);
  double mean = 0.0, sq = 0.0;
  for (double v : s) {
    mean += v;
    sq += v * v;
  }
  const double n = static_cast<double>(s.size());
  mean /= n;
  const double se = std::sqrt((sq / n - mean * mean) / n);
  EXPECT_NEAR(expect(f, [](double w) { return w; }), mean, 3.0 * se);
}

TEST(Mixing, DensitiesIntegrateToOne) {
  EXPECT_NEAR(mass(ScaleInvChiSquare{4.0, 1.0}, 1e6), 1.0, 1e-3);
  EXPECT_NEAR(mass(ScaleInvChiSquare{6.0, 0.3}, 1e6), 1.0, 1e-3);
  EXPECT_NEAR(mass(random_flow(5), 1e3), 1.0, 1e-3);
}

TEST(Mixing, SampleMeanConvergesToMean) {
  for (const MixingDistribution& d : {MixingDistribution{ScaleInvChiSquare{8.0, 0.5}}, MixingDistribution{random_flow(6)}}) {
    Rng rng(8);
    const auto s = sample_mix(d, 200000, rng);
    double mean = 0.0, sq = 0.0;
    for (double v : s) {
      mean += v;
      sq += v * v;
    }
    const double n = static_cast<double>(s.size());
    mean /= n;
    const double se = std::sqrt((sq / n - mean * mean) / n);
    Rng r2(9);
    const double m = std::holds_alternative<FlowMixing>(d) ? expect(d, [](double w) { return w; }) : mean_mix(d, 0, r2);
    EXPECT_NEAR(mean, m, 3.0 * se);
  }
}

TEST(Mixing, BaseTransformPushesQuantiles) {
  const ScaleInvChiSquare d{4.0, 1.0};
  // Median of nu tau2 / chi2_nu is nu tau2 / median(chi2_nu); median(chi2_4) = 3.356694...
  EXPECT_NEAR(base_transform(d, 0.0), 4.0 / 3.3566939800333211, 1e-9);
}

TEST(Mixing, StudentTMixtureMatchesClosedForm) {
  // p(e) for a N(0, w) scale mixture with w ~ ScaleInvChiSquare(nu, 1) is Student-t_nu.
  const double nu = 4.0;
  const double c = std::lgamma(0.5 * (nu + 1)) - std::lgamma(0.5 * nu) - 0.5 * std::log(nu * std::numbers::pi);
  for (double e : {-6.0, -1.0, 0.0, 0.5, 3.0}) {
    const double t = c - 0.5 * (nu + 1) * std::log1p(e * e / nu);
    EXPECT_NEAR(scale_mixture_log_kernel(ScaleInvChiSquare{nu, 1.0}, 1, e * e), t, 1e-12);
    EXPECT_NEAR(std::exp(scale_mixture_log_kernel(ScaleInvChiSquare{nu, 1.0}, 1, e * e, BaseQuadrature::standard(), true)),
                std::exp(t), 1e-4);
  }
}
