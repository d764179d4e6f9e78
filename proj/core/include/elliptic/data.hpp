#pragma once

// Datasets, CSV ingestion, splits, standardization and synthetic generators.

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace elliptic {

/// Affine maps applied to features and target, fitted on the training split.
struct Standardizer {
  Eigen::RowVectorXd x_mean;
  Eigen::RowVectorXd x_std;
  double y_mean = 0.0;
  double y_std = 1.0;
  bool log_target = false;  // y is log-transformed before the affine map

  [[nodiscard]] bool empty() const { return x_mean.size() == 0; }
  [[nodiscard]] Eigen::MatrixXd transform_x(const Eigen::MatrixXd& x) const;
  [[nodiscard]] Eigen::MatrixXd inverse_x(const Eigen::MatrixXd& x) const;
  [[nodiscard]] Eigen::VectorXd transform_y(const Eigen::VectorXd& y) const;
  [[nodiscard]] Eigen::VectorXd inverse_y(const Eigen::VectorXd& y) const;
};

struct Dataset {
  Eigen::MatrixXd X;
  Eigen::VectorXd y;
  std::vector<std::string> feature_names;
  std::string target_name = "y";
  std::optional<Eigen::VectorXd> latent;  // noise-free function values from a generator
  std::vector<Eigen::Index> train;
  std::vector<Eigen::Index> val;
  std::vector<Eigen::Index> test;
  Standardizer stats;
  bool standardized = false;

  [[nodiscard]] Eigen::Index size() const { return X.rows(); }
  [[nodiscard]] Eigen::Index dim() const { return X.cols(); }
  [[nodiscard]] bool has_split() const { return !train.empty() || !val.empty() || !test.empty(); }
};

/// Column holding noise-free function values in generated data.
inline constexpr const char* kLatentColumn = "f_true";

struct CsvOptions {
  bool log_target = false;
  std::vector<std::string> features;  // empty: every column except the target and the latent column
  bool require_target = true;         // when false a missing target column leaves y empty
  bool require_features = true;       // when false a file holding only the target is accepted
};

/// Reads a headed, comma-separated numeric file. `target` names the target
/// column. Throws ConfigError listing the 1-based line numbers of malformed
/// rows, or naming missing columns.
Dataset load_csv(const std::string& path, const std::string& target, const CsvOptions& options = {});

/// Writes features, the target and, when present, the latent column.
void write_csv(const std::string& path, const Dataset& data);

/// Shuffled partition by fractions (train, val, test); the fractions must sum to 1.
Dataset split(Dataset data, std::array<double, 3> fractions, std::uint64_t seed);

enum class TargetScaling {
  Standard,  // mean and sample standard deviation
  None,      // target left untouched (class labels)
};

/// Fits the standardizer on the training split (all rows when unsplit) and
/// applies it to every row. Features always use mean and standard deviation.
void standardize(Dataset& data, TargetScaling target = TargetScaling::Standard);

/// Rows of X / entries of y at the given indices.
Eigen::MatrixXd take_rows(const Eigen::MatrixXd& x, std::span<const Eigen::Index> idx);
Eigen::VectorXd take(const Eigen::VectorXd& y, std::span<const Eigen::Index> idx);

enum class NoiseVariant { Gauss, Student4, Cauchy };

NoiseVariant parse_noise_variant(const std::string& name);
const char* to_string(NoiseVariant v);

inline constexpr double kNoiseScale = 0.04;
inline constexpr double kHeteroMinDof = 0.6;

/// x ~ U(-2, 2), f = sin(3x) / 2, y = f + sqrt(w) z with w a point mass at
/// 0.04 (gauss) or scaled inverse chi-square with nu = 4 / nu = 1 and scale 0.04.
Dataset gen_noise_identification(NoiseVariant variant, int n, std::uint64_t seed);

/// Degrees of freedom and scale of the heteroscedastic Student-t noise at x.
double hetero_dof(double x);
double hetero_scale(double x);

/// x ~ U(0, 4), f = sin(5x) + x, y = f + hetero_scale(x) t_{hetero_dof(x)}.
Dataset gen_heteroscedastic(int n, std::uint64_t seed);

/// Two Gaussian clusters in 2-D with labels 0/1, a fraction `flip` of labels flipped.
Dataset gen_two_clusters(int n, double flip, std::uint64_t seed);

}  // namespace elliptic
