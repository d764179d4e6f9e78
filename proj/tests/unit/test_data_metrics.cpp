#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include <gtest/gtest.h>

#include "elliptic/data.hpp"
#include "elliptic/errors.hpp"
#include "elliptic/metrics.hpp"
#include "elliptic/random.hpp"

using namespace elliptic;
namespace fs = std::filesystem;

namespace {

class TempDir {
 public:
  TempDir() : path_(fs::temp_directory_path() / ("elliptic_data_" + std::to_string(counter_++))) {
    fs::create_directories(path_);
  }
  ~TempDir() { fs::remove_all(path_); }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  [[nodiscard]] fs::path file(const std::string& name) const { return path_ / name; }

 private:
  inline static int counter_ = 0;
  fs::path path_;
};

fs::path write_text(const TempDir& dir, const std::string& name, const std::string& text) {
  const fs::path p = dir.file(name);
  std::ofstream(p) << text;
  return p;
}

}  // namespace

TEST(Csv, ReadsToyFile) {
  TempDir dir;
  const auto p = write_text(dir, "toy.csv", "a,y,b\n1,2,3\n4,5,6\n");
  const Dataset d = load_csv(p.string(), "y");
  ASSERT_EQ(d.size(), 2);
  ASSERT_EQ(d.dim(), 2);
  EXPECT_EQ(d.feature_names, (std::vector<std::string>{"a", "b"}));
  EXPECT_EQ(d.X(1, 1), 6.0);
  EXPECT_EQ(d.y[0], 2.0);
}

TEST(Csv, SelectsFeaturesAndLogTarget) {
  TempDir dir;
  const auto p = write_text(dir, "toy.csv", "a,y,b\n1,1,3\n4,100,6\n");
  CsvOptions opt;
  opt.features = {"b"};
  opt.log_target = true;
  const Dataset d = load_csv(p.string(), "y", opt);
  ASSERT_EQ(d.dim(), 1);
  EXPECT_EQ(d.X(0, 0), 3.0);
  EXPECT_EQ(d.y[1], 100.0);
  EXPECT_TRUE(d.stats.log_target);
  Dataset s = d;
  standardize(s);
  // log y = {0, log 100}: mean log(10), sample sd log(100) / sqrt(2).
  EXPECT_NEAR(s.y[1], 1.0 / std::sqrt(2.0), 1e-12);
  EXPECT_NEAR(s.stats.inverse_y(s.y)[1], 100.0, 1e-10);
}

TEST(Csv, MalformedRowsAreReportedByLine) {
  TempDir dir;
  const auto p = write_text(dir, "bad.csv", "x,y\n1,2\n3,abc\n5,6\n7\n");
  try {
    (void)load_csv(p.string(), "y");
    FAIL() << "expected ConfigError";
  } catch (const ConfigError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find('3'), std::string::npos);
    EXPECT_NE(msg.find('5'), std::string::npos);
  }
}

TEST(Csv, MissingTargetThrows) {
  TempDir dir;
  const auto p = write_text(dir, "toy.csv", "a,b\n1,2\n");
  EXPECT_THROW((void)load_csv(p.string(), "y"), ConfigError);
  EXPECT_THROW((void)load_csv(dir.file("absent.csv").string(), "y"), ConfigError);
}

TEST(Csv, TargetOnlyFileNeedsOptIn) {
  TempDir dir;
  const auto p = write_text(dir, "r.csv", "r\n0.5\n-1.5\n");
  EXPECT_THROW((void)load_csv(p.string(), "r"), ConfigError);
  CsvOptions opt;
  opt.require_features = false;
  EXPECT_EQ(load_csv(p.string(), "r", opt).y.size(), 2);
}

TEST(Csv, RoundTripIsExact) {
  TempDir dir;
  const Dataset d = gen_noise_identification(NoiseVariant::Cauchy, 30, 4);
  const auto p = dir.file("rt.csv");
  write_csv(p.string(), d);
  const Dataset back = load_csv(p.string(), d.target_name);
  EXPECT_EQ(back.X, d.X);
  EXPECT_EQ(back.y, d.y);
  ASSERT_TRUE(back.latent.has_value());
  EXPECT_EQ(*back.latent, *d.latent);
}

TEST(Split, SizesPartitionAndDeterminism) {
  const Dataset d = gen_noise_identification(NoiseVariant::Gauss, 101, 1);
  const Dataset a = split(d, {0.6, 0.2, 0.2}, 5);
  const Dataset b = split(d, {0.6, 0.2, 0.2}, 5);
  const Dataset c = split(d, {0.6, 0.2, 0.2}, 6);
  EXPECT_EQ(a.train.size() + a.val.size() + a.test.size(), 101U);
  EXPECT_NEAR(static_cast<double>(a.train.size()), 60.6, 1.0);
  EXPECT_NEAR(static_cast<double>(a.val.size()), 20.2, 1.0);
  std::set<Eigen::Index> all(a.train.begin(), a.train.end());
  all.insert(a.val.begin(), a.val.end());
  all.insert(a.test.begin(), a.test.end());
  EXPECT_EQ(all.size(), 101U);
  EXPECT_EQ(a.train, b.train);
  EXPECT_EQ(a.test, b.test);
  EXPECT_NE(a.train, c.train);
  EXPECT_THROW((void)split(d, {0.5, 0.2, 0.2}, 1), ConfigError);
}

TEST(Standardize, TrainingRowsHaveZeroMeanUnitVariance) {
  Dataset d = split(gen_heteroscedastic(200, 2), {0.7, 0.3, 0.0}, 2);
  standardize(d);
  const Eigen::MatrixXd xt = take_rows(d.X, d.train);
  const Eigen::VectorXd yt = take(d.y, d.train);
  const double n = static_cast<double>(yt.size());
  EXPECT_NEAR(xt.col(0).mean(), 0.0, 1e-12);
  EXPECT_NEAR(yt.mean(), 0.0, 1e-12);
  EXPECT_NEAR((yt.array() - yt.mean()).square().sum() / (n - 1.0), 1.0, 1e-12);
  EXPECT_NEAR(std::sqrt((xt.col(0).array() - xt.col(0).mean()).square().sum() / (n - 1.0)), 1.0, 1e-12);
  const Eigen::VectorXd back = d.stats.inverse_y(d.stats.transform_y(Eigen::VectorXd::LinSpaced(5, -3, 3)));
  EXPECT_LT((back - Eigen::VectorXd::LinSpaced(5, -3, 3)).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Standardize, LabelsAreLeftUntouched) {
  Dataset d = split(gen_two_clusters(100, 0.05, 3), {0.8, 0.2, 0.0}, 3);
  const Eigen::VectorXd y = d.y;
  standardize(d, TargetScaling::None);
  EXPECT_EQ(d.y, y);
}

TEST(Generators, NoiseIdentification) {
  const Dataset g = gen_noise_identification(NoiseVariant::Gauss, 5000, 7);
  ASSERT_TRUE(g.latent.has_value());
  EXPECT_GE(g.X.minCoeff(), -2.0);
  EXPECT_LE(g.X.maxCoeff(), 2.0);
  const Eigen::VectorXd f = (3.0 * g.X.col(0)).array().sin() / 2.0;
  EXPECT_LT((*g.latent - f).cwiseAbs().maxCoeff(), 1e-12);
  const Eigen::VectorXd r = g.y - f;
  EXPECT_NEAR(r.squaredNorm() / 5000.0, kNoiseScale, 0.004);
  // Student-4 residual variance is tau2 * nu / (nu - 2).
  const Dataset s = gen_noise_identification(NoiseVariant::Student4, 20000, 8);
  const Eigen::VectorXd rs = s.y - *s.latent;
  EXPECT_NEAR(rs.squaredNorm() / 20000.0, 2.0 * kNoiseScale, 0.02);
  EXPECT_EQ(gen_noise_identification(NoiseVariant::Cauchy, 10, 9).y,
            gen_noise_identification(NoiseVariant::Cauchy, 10, 9).y);
}

TEST(Generators, HeteroscedasticAndClusters) {
  const Dataset h = gen_heteroscedastic(500, 1);
  EXPECT_GE(h.X.minCoeff(), 0.0);
  EXPECT_LE(h.X.maxCoeff(), 4.0);
  for (double x : {0.0, 1.0, 2.0, 4.0}) {
    EXPECT_GE(hetero_dof(x), kHeteroMinDof);
    EXPECT_GT(hetero_scale(x), 0.0);
  }
  const Dataset c = gen_two_clusters(400, 0.0, 2);
  EXPECT_EQ(c.dim(), 2);
  for (Eigen::Index i = 0; i < c.size(); ++i) EXPECT_TRUE(c.y[i] == 0.0 || c.y[i] == 1.0);
  const double frac = c.y.mean();
  EXPECT_GT(frac, 0.4);
  EXPECT_LT(frac, 0.6);
}

TEST(Metrics, MseCases) {
  EXPECT_EQ(mse(Eigen::Vector3d(1, 2, 3), Eigen::Vector3d(1, 2, 3)), 0.0);
  EXPECT_NEAR(mse(Eigen::Vector2d(0, 0), Eigen::Vector2d(1, 3)), 5.0, 1e-15);
}

TEST(Metrics, AucCases) {
  const Eigen::Vector4d labels(0, 0, 1, 1);
  EXPECT_EQ(auc(Eigen::Vector4d(0.1, 0.2, 0.8, 0.9), labels), 1.0);
  EXPECT_EQ(auc(Eigen::Vector4d(0.9, 0.8, 0.2, 0.1), labels), 0.0);
  EXPECT_EQ(auc(Eigen::Vector4d(0.5, 0.5, 0.5, 0.5), labels), 0.5);
  EXPECT_EQ(auc(Eigen::Vector4d(0.1, 0.6, 0.4, 0.9), labels), 0.75);
  EXPECT_THROW((void)auc(Eigen::Vector2d(0.1, 0.2), Eigen::Vector2d(1, 1)), Error);
}

TEST(Metrics, AucIsInvariantToMonotoneTransforms) {
  Rng rng(3);
  Eigen::VectorXd s(60), l(60);
  for (int i = 0; i < 60; ++i) {
    s[i] = standard_normal(rng);
    l[i] = (s[i] + standard_normal(rng) > 0.0) ? 1.0 : 0.0;
  }
  const Eigen::VectorXd t = s.array().exp() * 3.0 + 1.0;
  EXPECT_EQ(auc(s, l), auc(t, l));
}

TEST(Metrics, Accuracy) {
  EXPECT_EQ(accuracy(Eigen::Vector4d(0.2, 0.7, 0.9, 0.4), Eigen::Vector4d(0, 1, 0, 0)), 0.75);
}
