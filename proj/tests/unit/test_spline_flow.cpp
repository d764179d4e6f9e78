#include <algorithm>
#include <cmath>
#include <numbers>

#include <gtest/gtest.h>

#include "elliptic/errors.hpp"
#include "elliptic/spline_flow.hpp"

using namespace elliptic;

namespace {

SplineFlowParams random_params(int bins, Squash squash, std::uint64_t seed, double scale = 1.0) {
  SplineFlowParams p = SplineFlowParams::identity(bins, squash);
  Rng rng(seed);
  for (Eigen::Index i = 0; i < p.raw.size(); ++i) p.raw[i] = scale * standard_normal(rng);
  return p;
}

// Integral of exp(log_prob) over the flow image by the trapezoid rule on a
// fine grid in base space, mapped through forward().
double total_mass(const SplineFlowParams& p) {
  const SplineFlow f(p);
  const int n = 40001;
  const double lo = -9.0, hi = 9.0;
  double acc = 0.0;
  double prev_x = f.forward(lo).value;
  double prev_d = std::exp(f.log_prob(prev_x));
  for (int i = 1; i < n; ++i) {
    const double x = f.forward(lo + (hi - lo) * i / (n - 1)).value;
    const double d = std::exp(f.log_prob(x));
    acc += 0.5 * (d + prev_d) * (x - prev_x);
    prev_x = x;
    prev_d = d;
  }
  return acc;
}

}  // namespace

TEST(SplineFlow, ParameterCountForNineBins) { EXPECT_EQ(SplineFlowParams::param_count(9), 26); }

TEST(SplineFlow, IdentityForward) {
  const auto p = SplineFlowParams::identity(9, Squash::none());
  const FlowValue v = forward(0.3, p);
  EXPECT_NEAR(v.value, 0.3, 1e-14);
  EXPECT_NEAR(v.logdet, 0.0, 1e-14);
}

TEST(SplineFlow, IdentitySoftplusForwardAtZero) {
  const auto p = SplineFlowParams::identity(9, Squash::softplus());
  const FlowValue v = forward(0.0, p);
  EXPECT_NEAR(v.value, std::log(2.0), 1e-14);
  EXPECT_NEAR(v.logdet, std::log(0.5), 1e-14);
}

TEST(SplineFlow, IdentityInverse) {
  const auto p = SplineFlowParams::identity(9, Squash::none());
  const FlowValue v = inverse(0.7, p);
  EXPECT_NEAR(v.value, 0.7, 1e-14);
  EXPECT_NEAR(v.logdet, 0.0, 1e-14);
}

TEST(SplineFlow, IdentityLogProbIsStandardNormal) {
  const auto p = SplineFlowParams::identity(9, Squash::none());
  EXPECT_NEAR(log_prob(0.0, p), -0.5 * std::log(2.0 * std::numbers::pi), 1e-14);
  EXPECT_NEAR(log_prob(0.0, p), -0.918939, 1e-6);
}

TEST(SplineFlow, SoftplusInverseOutsideImageThrows) {
  const auto p = SplineFlowParams::identity(9, Squash::softplus());
  EXPECT_THROW(inverse(-1.0, p), DomainError);
}

TEST(SplineFlow, SigmoidInverseAboveMaximumThrows) {
  const auto p = SplineFlowParams::identity(5, Squash::scaled_sigmoid(3.0));
  EXPECT_THROW(inverse(3.5, p), DomainError);
}

TEST(SplineFlow, MalformedParametersThrow) {
  auto p = SplineFlowParams::identity(9, Squash::none());
  p.raw.resize(10);
  EXPECT_THROW(p.validate(), DomainError);
  auto q = SplineFlowParams::identity(9, Squash::none());
  q.raw[0] = std::numeric_limits<double>::infinity();
  EXPECT_THROW(SplineFlow{q}, DomainError);
}

TEST(SplineFlow, LogdetMatchesFiniteDifference) {
  for (Squash sq : {Squash::none(), Squash::softplus(), Squash::scaled_sigmoid(3.0)}) {
    const auto p = random_params(9, sq, 1);
    const SplineFlow f(p);
    for (double z : {-5.5, -2.0, -0.3, 0.0, 0.8, 2.7, 5.9, 7.0}) {
      const double h = 1e-6;
      const double fd = (f.forward(z + h).value - f.forward(z - h).value) / (2 * h);
      EXPECT_NEAR(f.forward(z).logdet, std::log(fd), 1e-6) << "z=" << z;
    }
  }
}

TEST(SplineFlow, RoundTripOnRandomPoints) {
  Rng rng(2);
  std::uniform_real_distribution<double> u(-5.0, 5.0);
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const SplineFlow f(random_params(9, Squash::none(), seed, 2.0));
    double worst = 0.0;
    for (int i = 0; i < 1000; ++i) {
      const double z = u(rng);
      worst = std::max(worst, std::abs(z - f.inverse(f.forward(z).value).value));
    }
    EXPECT_LT(worst, 1e-9);
  }
}

TEST(SplineFlow, ForwardAndInverseLogdetsCancel) {
  const SplineFlow f(random_params(9, Squash::softplus(), 3, 1.5));
  for (int i = 0; i <= 100; ++i) {
    const double z = -7.0 + 14.0 * i / 100.0;
    const FlowValue fw = f.forward(z);
    EXPECT_NEAR(fw.logdet + f.inverse(fw.value).logdet, 0.0, 1e-9);
  }
}

TEST(SplineFlow, ForwardIsStrictlyMonotone) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const SplineFlow f(random_params(9, Squash::none(), 10 + seed, 2.0));
    double prev = -std::numeric_limits<double>::infinity();
    for (int i = 0; i < 1000; ++i) {
      const double x = f.forward(-8.0 + 16.0 * i / 999.0).value;
      EXPECT_GT(x, prev);
      prev = x;
    }
  }
}

TEST(SplineFlow, DensityIntegratesToOne) {
  for (Squash sq : {Squash::none(), Squash::softplus(), Squash::scaled_sigmoid(3.0)}) {
    EXPECT_NEAR(total_mass(random_params(9, sq, 4)), 1.0, 1e-3);
  }
}

TEST(SplineFlow, SoftplusLogProbNearZeroIsFinite) {
  const auto p = SplineFlowParams::identity(9, Squash::softplus());
  const double x = 1e-8;
  const double lp = log_prob(x, p);
  EXPECT_TRUE(std::isfinite(lp));
  // In the identity tail z = log(expm1(x)) and dx/dz = sigmoid(z).
  const double z = std::log(std::expm1(x));
  const double expect = -0.5 * (std::log(2.0 * std::numbers::pi) + z * z) - std::log(1.0 / (1.0 + std::exp(-z)));
  EXPECT_NEAR(lp, expect, 1e-8 * std::abs(expect));
}

TEST(SplineFlow, IdentitySamplesHaveZeroMean) {
  const auto p = SplineFlowParams::identity(9, Squash::none());
  Rng rng(5);
  const auto s = sample(p, 100000, rng);
  double mean = 0.0;
  for (double v : s) mean += v;
  mean /= static_cast<double>(s.size());
  EXPECT_LT(std::abs(mean), 3.0 / std::sqrt(1e5));
}

TEST(SplineFlow, SamplesMatchQuadratureCdf) {
  const auto p = random_params(9, Squash::none(), 6);
  const SplineFlow f(p);
  Rng rng(7);
  auto s = f.sample(100000, rng);
  std::sort(s.begin(), s.end());
  // CDF at x by trapezoid integration of exp(log_prob) from the far left tail.
  const int grid = 4001;
  std::vector<double> xs(grid), cdf(grid);
  const double lo = f.forward(-8.0).value, hi = f.forward(8.0).value;
  double acc = 0.0;
  for (int i = 0; i < grid; ++i) {
    xs[i] = lo + (hi - lo) * i / (grid - 1);
    if (i > 0) acc += 0.5 * (std::exp(f.log_prob(xs[i])) + std::exp(f.log_prob(xs[i - 1]))) * (xs[i] - xs[i - 1]);
    cdf[i] = acc;
  }
  double ks = 0.0;
  const double n = static_cast<double>(s.size());
  for (int i = 0; i < grid; ++i) {
    const double emp = static_cast<double>(std::upper_bound(s.begin(), s.end(), xs[i]) - s.begin()) / n;
    ks = std::max(ks, std::abs(emp - cdf[i]));
  }
  EXPECT_LT(ks, 0.01);
}

TEST(SplineFlow, SamplingIsDeterministicPerSeed) {
  const auto p = random_params(9, Squash::softplus(), 8);
  Rng a(9), b(9);
  EXPECT_EQ(sample(p, 50, a), sample(p, 50, b));
}

TEST(SplineFlow, SoftplusSamplesArePositive) {
  const auto p = random_params(9, Squash::softplus(), 10, 2.0);
  Rng rng(11);
  for (double v : sample(p, 20000, rng)) EXPECT_GT(v, 0.0);
}

TEST(SplineFlow, LogProbGradientMatchesFiniteDifferences) {
  for (Squash sq : {Squash::none(), Squash::softplus(), Squash::scaled_sigmoid(3.0)}) {
    const auto p = random_params(9, sq, 12);
    for (double x : {0.2, 0.9, 1.7}) {
      const ad::Gradient g = log_prob_gradient(x, p);
      EXPECT_NEAR(g.value, log_prob(x, p), 1e-12);
      const Eigen::VectorXd fd = ad::finite_difference(
          [&](const Eigen::VectorXd& theta) {
            SplineFlowParams q = p;
            q.raw = theta;
            return log_prob(x, q);
          },
          p.raw, 1e-5);
      EXPECT_LT((g.grad - fd).norm() / std::max(fd.norm(), 1e-8), 1e-4);
    }
  }
}
