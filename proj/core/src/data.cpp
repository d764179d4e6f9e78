#include "elliptic/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numbers>
#include <numeric>
#include <random>
#include <sstream>

#include "elliptic/errors.hpp"
#include "elliptic/random.hpp"

namespace elliptic {

namespace {

std::vector<std::string> split_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  std::istringstream in(line);
  while (std::getline(in, cell, ',')) cells.push_back(cell);
  if (!line.empty() && line.back() == ',') cells.emplace_back();
  return cells;
}

std::string trim(std::string s) {
  const auto first = s.find_first_not_of(" \t\r\"");
  if (first == std::string::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\"");
  return s.substr(first, last - first + 1);
}

bool parse_double(const std::string& s, double& out) {
  const std::string t = trim(s);
  if (t.empty()) return false;
  const auto* end = t.data() + t.size();
  const auto res = std::from_chars(t.data(), end, out);
  return res.ec == std::errc() && res.ptr == end && std::isfinite(out);
}

}  // namespace

Eigen::MatrixXd Standardizer::transform_x(const Eigen::MatrixXd& x) const {
  if (empty()) return x;
  if (x.cols() != x_mean.size()) throw DimensionError("standardizer: feature count mismatch");
  return (x.rowwise() - x_mean).array().rowwise() / x_std.array();
}

Eigen::MatrixXd Standardizer::inverse_x(const Eigen::MatrixXd& x) const {
  if (empty()) return x;
  if (x.cols() != x_mean.size()) throw DimensionError("standardizer: feature count mismatch");
  return (x.array().rowwise() * x_std.array()).matrix().rowwise() + x_mean;
}

Eigen::VectorXd Standardizer::transform_y(const Eigen::VectorXd& y) const {
  Eigen::VectorXd v = y;
  if (log_target) {
    if ((v.array() <= 0.0).any()) throw DomainError("standardizer: log target requires positive values");
    v = v.array().log();
  }
  return (v.array() - y_mean) / y_std;
}

Eigen::VectorXd Standardizer::inverse_y(const Eigen::VectorXd& y) const {
  Eigen::VectorXd v = (y.array() * y_std + y_mean).matrix();
  if (log_target) v = v.array().exp();
  return v;
}

Dataset load_csv(const std::string& path, const std::string& target, const CsvOptions& options) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open '" + path + "'");
  std::string line;
  if (!std::getline(in, line) || trim(line).empty()) throw ConfigError("'" + path + "' is empty");
  std::vector<std::string> header = split_line(line);
  for (auto& h : header) h = trim(h);
  const auto column = [&](const std::string& name) -> std::optional<std::size_t> {
    const auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) return std::nullopt;
    return static_cast<std::size_t>(it - header.begin());
  };
  const auto tcol = column(target);
  if (!tcol && options.require_target) {
    throw ConfigError("target column '" + target + "' not found in '" + path + "'");
  }
  const auto lcol = column(kLatentColumn);
  std::vector<std::size_t> fcols;
  if (options.features.empty()) {
    for (std::size_t c = 0; c < header.size(); ++c) {
      if (c != tcol && c != lcol) fcols.push_back(c);
    }
  } else {
    for (const auto& f : options.features) {
      const auto c = column(f);
      if (!c) throw ConfigError("feature column '" + f + "' not found in '" + path + "'");
      fcols.push_back(*c);
    }
  }
  if (fcols.empty() && options.require_features) throw ConfigError("'" + path + "' has no feature columns");

  std::vector<std::vector<double>> rows;
  std::vector<std::size_t> bad;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    const auto cells = split_line(line);
    std::vector<double> vals(cells.size());
    bool ok = cells.size() == header.size();
    for (std::size_t c = 0; ok && c < cells.size(); ++c) ok = parse_double(cells[c], vals[c]);
    if (!ok) {
      bad.push_back(lineno);
      continue;
    }
    rows.push_back(std::move(vals));
  }
  if (!bad.empty()) {
    std::ostringstream msg;
    msg << "'" << path << "': malformed rows at line";
    msg << (bad.size() > 1 ? "s " : " ");
    for (std::size_t i = 0; i < bad.size(); ++i) msg << (i ? ", " : "") << bad[i];
    throw ConfigError(msg.str());
  }
  if (rows.empty()) throw ConfigError("'" + path + "' has no data rows");

  Dataset d;
  const auto n = static_cast<Eigen::Index>(rows.size());
  d.X.resize(n, static_cast<Eigen::Index>(fcols.size()));
  d.target_name = target;
  for (auto c : fcols) d.feature_names.push_back(header[c]);
  if (tcol) d.y.resize(n);
  if (lcol) d.latent = Eigen::VectorXd(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& r = rows[static_cast<std::size_t>(i)];
    for (std::size_t k = 0; k < fcols.size(); ++k) d.X(i, static_cast<Eigen::Index>(k)) = r[fcols[k]];
    if (tcol) d.y[i] = r[*tcol];
    if (lcol) (*d.latent)[i] = r[*lcol];
  }
  d.stats.log_target = options.log_target;
  return d;
}

void write_csv(const std::string& path, const Dataset& data) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write '" + path + "'");
  out.precision(17);
  for (Eigen::Index c = 0; c < data.X.cols(); ++c) {
    const auto uc = static_cast<std::size_t>(c);
    out << (uc < data.feature_names.size() ? data.feature_names[uc] : "x" + std::to_string(c)) << ',';
  }
  out << data.target_name;
  if (data.latent) out << ',' << kLatentColumn;
  out << '\n';
  for (Eigen::Index i = 0; i < data.X.rows(); ++i) {
    for (Eigen::Index c = 0; c < data.X.cols(); ++c) out << data.X(i, c) << ',';
    out << data.y[i];
    if (data.latent) out << ',' << (*data.latent)[i];
    out << '\n';
  }
  if (!out) throw ConfigError("failed writing '" + path + "'");
}

Dataset split(Dataset data, std::array<double, 3> fractions, std::uint64_t seed) {
  for (double f : fractions) {
    if (!(f >= 0.0)) throw ConfigError("split: fractions must be nonnegative");
  }
  if (std::abs(fractions[0] + fractions[1] + fractions[2] - 1.0) > 1e-9) {
    throw ConfigError("split: fractions must sum to 1");
  }
  const Eigen::Index n = data.size();
  std::vector<Eigen::Index> idx(static_cast<std::size_t>(n));
  std::iota(idx.begin(), idx.end(), Eigen::Index{0});
  Rng rng(seed);
  std::shuffle(idx.begin(), idx.end(), rng);
  const auto n_train = static_cast<std::size_t>(std::llround(fractions[0] * static_cast<double>(n)));
  const auto n_val = std::min(idx.size() - n_train,
                              static_cast<std::size_t>(std::llround(fractions[1] * static_cast<double>(n))));
  data.train.assign(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_train));
  data.val.assign(idx.begin() + static_cast<std::ptrdiff_t>(n_train),
                  idx.begin() + static_cast<std::ptrdiff_t>(n_train + n_val));
  data.test.assign(idx.begin() + static_cast<std::ptrdiff_t>(n_train + n_val), idx.end());
  return data;
}

Eigen::MatrixXd take_rows(const Eigen::MatrixXd& x, std::span<const Eigen::Index> idx) {
  Eigen::MatrixXd out(static_cast<Eigen::Index>(idx.size()), x.cols());
  for (std::size_t i = 0; i < idx.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = x.row(idx[i]);
  return out;
}

Eigen::VectorXd take(const Eigen::VectorXd& y, std::span<const Eigen::Index> idx) {
  Eigen::VectorXd out(static_cast<Eigen::Index>(idx.size()));
  for (std::size_t i = 0; i < idx.size(); ++i) out[static_cast<Eigen::Index>(i)] = y[idx[i]];
  return out;
}

void standardize(Dataset& data, TargetScaling target) {
  if (data.standardized) throw ConfigError("standardize: dataset is already standardized");
  std::vector<Eigen::Index> fit_idx = data.train;
  if (fit_idx.empty()) {
    fit_idx.resize(static_cast<std::size_t>(data.size()));
    std::iota(fit_idx.begin(), fit_idx.end(), Eigen::Index{0});
  }
  if (fit_idx.size() < 2) throw DimensionError("standardize: at least two training rows are required");
  const Eigen::MatrixXd xt = take_rows(data.X, fit_idx);
  Eigen::VectorXd yt = take(data.y, fit_idx);
  Standardizer& s = data.stats;
  if (target == TargetScaling::None) s.log_target = false;
  if (s.log_target) {
    if ((yt.array() <= 0.0).any()) throw DomainError("standardize: log target requires positive values");
    yt = yt.array().log();
  }
  const auto n = static_cast<double>(fit_idx.size());
  s.x_mean = xt.colwise().mean();
  s.x_std = ((xt.rowwise() - s.x_mean).array().square().colwise().sum() / (n - 1.0)).sqrt();
  for (Eigen::Index c = 0; c < s.x_std.size(); ++c) {
    if (!(s.x_std[c] > 0.0)) s.x_std[c] = 1.0;
  }
  switch (target) {
    case TargetScaling::Standard:
      s.y_mean = yt.mean();
      s.y_std = std::sqrt((yt.array() - s.y_mean).square().sum() / (n - 1.0));
      break;
    case TargetScaling::None:
      s.y_mean = 0.0;
      s.y_std = 1.0;
      break;
  }
  if (!(s.y_std > 0.0)) s.y_std = 1.0;
  data.X = s.transform_x(data.X);
  data.y = s.transform_y(data.y);
  if (data.latent) {
    Standardizer lin = s;
    lin.log_target = false;
    if (!s.log_target) data.latent = lin.transform_y(*data.latent);
  }
  data.standardized = true;
}

NoiseVariant parse_noise_variant(const std::string& name) {
  if (name == "gauss") return NoiseVariant::Gauss;
  if (name == "student4") return NoiseVariant::Student4;
  if (name == "cauchy") return NoiseVariant::Cauchy;
  throw ConfigError("unknown noise variant '" + name + "' (expected gauss, student4 or cauchy)");
}

const char* to_string(NoiseVariant v) {
  switch (v) {
    case NoiseVariant::Gauss:
      return "gauss";
    case NoiseVariant::Student4:
      return "student4";
    case NoiseVariant::Cauchy:
      return "cauchy";
  }
  return "?";
}

Dataset gen_noise_identification(NoiseVariant variant, int n, std::uint64_t seed) {
  if (n < 1) throw ConfigError("generator: N must be positive");
  Rng rng(seed);
  std::uniform_real_distribution<double> ux(-2.0, 2.0);
  const double nu = variant == NoiseVariant::Student4 ? 4.0 : 1.0;
  std::chi_squared_distribution<double> chi2(nu);
  Dataset d;
  d.X.resize(n, 1);
  d.y.resize(n);
  Eigen::VectorXd f(n);
  d.feature_names = {"x"};
  for (int i = 0; i < n; ++i) {
    const double x = ux(rng);
    const double w = variant == NoiseVariant::Gauss ? kNoiseScale : nu * kNoiseScale / chi2(rng);
    d.X(i, 0) = x;
    f[i] = 0.5 * std::sin(3.0 * x);
    d.y[i] = f[i] + std::sqrt(w) * standard_normal(rng);
  }
  d.latent = std::move(f);
  return d;
}

double hetero_dof(double x) { return std::max(kHeteroMinDof, 25.0 - 11.0 * std::pow(std::abs(x + 1.0), 0.9)); }

double hetero_scale(double x) { return 0.5 * std::pow(std::abs(x + 1.0), 1.6) + 0.001; }

Dataset gen_heteroscedastic(int n, std::uint64_t seed) {
  if (n < 1) throw ConfigError("generator: N must be positive");
  Rng rng(seed);
  std::uniform_real_distribution<double> ux(0.0, 4.0);
  Dataset d;
  d.X.resize(n, 1);
  d.y.resize(n);
  Eigen::VectorXd f(n);
  d.feature_names = {"x"};
  for (int i = 0; i < n; ++i) {
    const double x = ux(rng);
    std::student_t_distribution<double> t(hetero_dof(x));
    d.X(i, 0) = x;
    f[i] = std::sin(5.0 * x) + x;
    d.y[i] = f[i] + hetero_scale(x) * t(rng);
  }
  d.latent = std::move(f);
  return d;
}

Dataset gen_two_clusters(int n, double flip, std::uint64_t seed) {
  if (n < 2) throw ConfigError("generator: N must be at least 2");
  if (!(flip >= 0.0 && flip <= 1.0)) throw ConfigError("generator: flip fraction must lie in [0, 1]");
  Rng rng(seed);
  std::bernoulli_distribution coin(0.5);
  std::bernoulli_distribution flipper(flip);
  Dataset d;
  d.X.resize(n, 2);
  d.y.resize(n);
  d.feature_names = {"x1", "x2"};
  d.target_name = "label";
  for (int i = 0; i < n; ++i) {
    const bool label = coin(rng);
    const double cx = label ? 1.0 : -1.0;
    d.X(i, 0) = cx + standard_normal(rng);
    d.X(i, 1) = 0.5 * cx + standard_normal(rng);
    d.y[i] = (label != flipper(rng)) ? 1.0 : 0.0;
  }
  return d;
}

}  // namespace elliptic
