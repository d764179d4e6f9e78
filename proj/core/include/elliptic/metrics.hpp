#pragma once

#include <span>

#include <Eigen/Dense>

namespace elliptic {

double mse(const Eigen::VectorXd& pred, const Eigen::VectorXd& y);

/// Area under the ROC curve as the Mann-Whitney rank statistic; tied scores
/// receive half credit. Labels are 0/1; throws when only one class is present.
double auc(const Eigen::VectorXd& scores, const Eigen::VectorXd& labels);

/// Fraction of labels matched by thresholding probabilities at 1/2.
double accuracy(const Eigen::VectorXd& prob, const Eigen::VectorXd& labels);

}  // namespace elliptic
