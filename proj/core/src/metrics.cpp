#include "elliptic/metrics.hpp"

#include <algorithm>
#include <numeric>
#include <string>
#include <vector>

#include "elliptic/errors.hpp"

namespace elliptic {

namespace {

void check_lengths(const Eigen::VectorXd& a, const Eigen::VectorXd& b, const char* what) {
  if (a.size() != b.size()) throw DimensionError(std::string(what) + ": length mismatch");
  if (a.size() == 0) throw DimensionError(std::string(what) + ": empty input");
}

}  // namespace

double mse(const Eigen::VectorXd& pred, const Eigen::VectorXd& y) {
  check_lengths(pred, y, "mse");
  return (pred - y).squaredNorm() / static_cast<double>(y.size());
}

double auc(const Eigen::VectorXd& scores, const Eigen::VectorXd& labels) {
  check_lengths(scores, labels, "auc");
  const auto n = static_cast<std::size_t>(scores.size());
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return scores[static_cast<Eigen::Index>(a)] < scores[static_cast<Eigen::Index>(b)];
  });
  // average ranks over ties
  std::vector<double> rank(n);
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j + 1 < n && scores[static_cast<Eigen::Index>(order[j + 1])] == scores[static_cast<Eigen::Index>(order[i])]) {
      ++j;
    }
    const double r = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) rank[order[k]] = r;
    i = j + 1;
  }
  double pos = 0.0;
  double rank_sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double l = labels[static_cast<Eigen::Index>(i)];
    if (l != 0.0 && l != 1.0) throw DomainError("auc: labels must be 0 or 1");
    if (l == 1.0) {
      pos += 1.0;
      rank_sum += rank[i];
    }
  }
  const double neg = static_cast<double>(n) - pos;
  if (pos == 0.0 || neg == 0.0) throw DomainError("auc: undefined when only one class is present");
  return (rank_sum - pos * (pos + 1.0) / 2.0) / (pos * neg);
}

double accuracy(const Eigen::VectorXd& prob, const Eigen::VectorXd& labels) {
  check_lengths(prob, labels, "accuracy");
  double hits = 0.0;
  for (Eigen::Index i = 0; i < prob.size(); ++i) {
    if ((prob[i] >= 0.5 ? 1.0 : 0.0) == labels[i]) hits += 1.0;
  }
  return hits / static_cast<double>(prob.size());
}

}  // namespace elliptic
