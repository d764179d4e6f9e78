#include "elliptic/kernels.hpp"

#include <cmath>
#include <limits>
#include <numbers>
#include <string>

#include "elliptic/errors.hpp"

namespace elliptic {

namespace {

template <class... Ts>
struct Overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
Overloaded(Ts...) -> Overloaded<Ts...>;

void check_dims(const Kernel& k, const Eigen::MatrixXd& x1, const Eigen::MatrixXd& x2) {
  if (x1.cols() != x2.cols()) {
    throw DimensionError("kernel: input column counts differ (" + std::to_string(x1.cols()) +
                         " vs " + std::to_string(x2.cols()) + ")");
  }
  const int d = k.input_dim();
  if (d >= 0 && x1.cols() != d) {
    throw DimensionError("kernel: expected " + std::to_string(d) + " input columns, got " +
                         std::to_string(x1.cols()));
  }
}

// Each kernel family implements these pieces; the Kernel methods dispatch.

Eigen::MatrixXd se_gram(const SEArd& k, const Eigen::MatrixXd& x1, const Eigen::MatrixXd& x2) {
  const Eigen::VectorXd inv_l2 = (-2.0 * k.log_lengthscales.array()).exp();
  const double var = std::exp(k.log_variance);
  Eigen::MatrixXd out(x1.rows(), x2.rows());
  for (Eigen::Index j = 0; j < x2.rows(); ++j) {
    for (Eigen::Index i = 0; i < x1.rows(); ++i) {
      double r2 = 0.0;
      for (Eigen::Index d = 0; d < x1.cols(); ++d) {
        const double diff = x1(i, d) - x2(j, d);
        r2 += diff * diff * inv_l2[d];
      }
      out(i, j) = var * std::exp(-0.5 * r2);
    }
  }
  return out;
}

double periodic_value(const PeriodicKernel& k, const Eigen::Ref<const Eigen::RowVectorXd>& a,
                      const Eigen::Ref<const Eigen::RowVectorXd>& b) {
  const double p = std::exp(k.log_period);
  const double l2 = std::exp(2.0 * k.log_lengthscale);
  double s = 0.0;
  for (Eigen::Index d = 0; d < a.size(); ++d) {
    const double sn = std::sin(std::numbers::pi * (a[d] - b[d]) / p);
    s += sn * sn;
  }
  return std::exp(k.log_variance - 2.0 * s / l2);
}

}  // namespace

Kernel Kernel::se_ard(int dims, double lengthscale, double variance) {
  SEArd k;
  k.log_lengthscales = Eigen::VectorXd::Constant(dims, std::log(lengthscale));
  k.log_variance = std::log(variance);
  return Kernel{k};
}

Kernel Kernel::periodic(double lengthscale, double period, double variance) {
  return Kernel{PeriodicKernel{std::log(lengthscale), std::log(period), std::log(variance)}};
}

Kernel Kernel::linear(double variance, double offset) {
  return Kernel{LinearKernel{std::log(variance), offset}};
}

Kernel Kernel::sum(std::vector<Kernel> children) {
  if (children.empty()) throw ConfigError("kernel: a sum needs at least one child");
  return Kernel{SumKernel{std::move(children)}};
}

int Kernel::num_params() const {
  return std::visit(Overloaded{
                        [](const SEArd& k) { return static_cast<int>(k.log_lengthscales.size()) + 1; },
                        [](const PeriodicKernel&) { return 3; },
                        [](const LinearKernel&) { return 2; },
                        [](const SumKernel& k) {
                          int n = 0;
                          for (const auto& c : k.children) n += c.num_params();
                          return n;
                        },
                    },
                    spec);
}

Eigen::VectorXd Kernel::params() const {
  Eigen::VectorXd out(num_params());
  std::visit(Overloaded{
                 [&](const SEArd& k) {
                   out.head(k.log_lengthscales.size()) = k.log_lengthscales;
                   out[k.log_lengthscales.size()] = k.log_variance;
                 },
                 [&](const PeriodicKernel& k) { out << k.log_lengthscale, k.log_period, k.log_variance; },
                 [&](const LinearKernel& k) { out << k.log_variance, k.offset; },
                 [&](const SumKernel& k) {
                   Eigen::Index pos = 0;
                   for (const auto& c : k.children) {
                     const auto n = c.num_params();
                     out.segment(pos, n) = c.params();
                     pos += n;
                   }
                 },
             },
             spec);
  return out;
}

void Kernel::set_params(const Eigen::VectorXd& theta) {
  if (theta.size() != num_params()) {
    throw DimensionError("kernel: expected " + std::to_string(num_params()) + " parameters, got " +
                         std::to_string(theta.size()));
  }
  std::visit(Overloaded{
                 [&](SEArd& k) {
                   k.log_lengthscales = theta.head(k.log_lengthscales.size());
                   k.log_variance = theta[k.log_lengthscales.size()];
                 },
                 [&](PeriodicKernel& k) {
                   k.log_lengthscale = theta[0];
                   k.log_period = theta[1];
                   k.log_variance = theta[2];
                 },
                 [&](LinearKernel& k) {
                   k.log_variance = theta[0];
                   k.offset = theta[1];
                 },
                 [&](SumKernel& k) {
                   Eigen::Index pos = 0;
                   for (auto& c : k.children) {
                     const auto n = c.num_params();
                     c.set_params(theta.segment(pos, n));
                     pos += n;
                   }
                 },
             },
             spec);
}

int Kernel::input_dim() const {
  return std::visit(Overloaded{
                        [](const SEArd& k) { return static_cast<int>(k.log_lengthscales.size()); },
                        [](const PeriodicKernel&) { return -1; },
                        [](const LinearKernel&) { return -1; },
                        [](const SumKernel& k) {
                          int d = -1;
                          for (const auto& c : k.children) {
                            const int cd = c.input_dim();
                            if (cd >= 0) d = cd;
                          }
                          return d;
                        },
                    },
                    spec);
}

void Kernel::validate() const {
  if (const auto* s = std::get_if<SumKernel>(&spec)) {
    if (s->children.empty()) throw ConfigError("kernel: a sum needs at least one child");
    int d = -1;
    for (const auto& c : s->children) {
      c.validate();
      const int cd = c.input_dim();
      if (cd >= 0 && d >= 0 && cd != d) throw DimensionError("kernel: sum children disagree on dimension");
      if (cd >= 0) d = cd;
    }
    return;
  }
  if (!params().allFinite()) throw DomainError("kernel: non-finite parameter");
}

Eigen::MatrixXd Kernel::gram(const Eigen::MatrixXd& x1, const Eigen::MatrixXd& x2) const {
  check_dims(*this, x1, x2);
  validate();
  return std::visit(Overloaded{
                        [&](const SEArd& k) -> Eigen::MatrixXd { return se_gram(k, x1, x2); },
                        [&](const PeriodicKernel& k) -> Eigen::MatrixXd {
                          Eigen::MatrixXd out(x1.rows(), x2.rows());
                          for (Eigen::Index i = 0; i < x1.rows(); ++i)
                            for (Eigen::Index j = 0; j < x2.rows(); ++j)
                              out(i, j) = periodic_value(k, x1.row(i), x2.row(j));
                          return out;
                        },
                        [&](const LinearKernel& k) -> Eigen::MatrixXd {
                          const Eigen::MatrixXd a = x1.array() - k.offset;
                          const Eigen::MatrixXd b = x2.array() - k.offset;
                          return std::exp(k.log_variance) * a * b.transpose();
                        },
                        [&](const SumKernel& k) -> Eigen::MatrixXd {
                          Eigen::MatrixXd out = Eigen::MatrixXd::Zero(x1.rows(), x2.rows());
                          for (const auto& c : k.children) out += c.gram(x1, x2);
                          return out;
                        },
                    },
                    spec);
}

Eigen::VectorXd Kernel::diag(const Eigen::MatrixXd& x) const {
  check_dims(*this, x, x);
  validate();
  return std::visit(Overloaded{
                        [&](const SEArd& k) -> Eigen::VectorXd {
                          return Eigen::VectorXd::Constant(x.rows(), std::exp(k.log_variance));
                        },
                        [&](const PeriodicKernel& k) -> Eigen::VectorXd {
                          return Eigen::VectorXd::Constant(x.rows(), std::exp(k.log_variance));
                        },
                        [&](const LinearKernel& k) -> Eigen::VectorXd {
                          return std::exp(k.log_variance) * (x.array() - k.offset).square().rowwise().sum();
                        },
                        [&](const SumKernel& k) -> Eigen::VectorXd {
                          Eigen::VectorXd out = Eigen::VectorXd::Zero(x.rows());
                          for (const auto& c : k.children) out += c.diag(x);
                          return out;
                        },
                    },
                    spec);
}

Eigen::VectorXd Kernel::grad_params(const Eigen::MatrixXd& x1, const Eigen::MatrixXd& x2,
                                    const Eigen::MatrixXd& g) const {
  check_dims(*this, x1, x2);
  if (g.rows() != x1.rows() || g.cols() != x2.rows()) throw DimensionError("kernel: adjoint shape");
  return std::visit(
      Overloaded{
          [&](const SEArd& k) -> Eigen::VectorXd {
            const Eigen::Index dims = x1.cols();
            Eigen::VectorXd out = Eigen::VectorXd::Zero(dims + 1);
            const Eigen::MatrixXd kv = se_gram(k, x1, x2);
            const Eigen::MatrixXd gk = g.cwiseProduct(kv);
            out[dims] = gk.sum();
            for (Eigen::Index d = 0; d < dims; ++d) {
              const double inv_l2 = std::exp(-2.0 * k.log_lengthscales[d]);
              double acc = 0.0;
              for (Eigen::Index j = 0; j < x2.rows(); ++j) {
                for (Eigen::Index i = 0; i < x1.rows(); ++i) {
                  const double diff = x1(i, d) - x2(j, d);
                  acc += gk(i, j) * diff * diff;
                }
              }
              out[d] = acc * inv_l2;
            }
            return out;
          },
          [&](const PeriodicKernel& k) -> Eigen::VectorXd {
            Eigen::VectorXd out = Eigen::VectorXd::Zero(3);
            const double p = std::exp(k.log_period);
            const double l2 = std::exp(2.0 * k.log_lengthscale);
            for (Eigen::Index i = 0; i < x1.rows(); ++i) {
              for (Eigen::Index j = 0; j < x2.rows(); ++j) {
                double s = 0.0;
                double t = 0.0;
                for (Eigen::Index d = 0; d < x1.cols(); ++d) {
                  const double r = std::numbers::pi * (x1(i, d) - x2(j, d)) / p;
                  const double sn = std::sin(r);
                  s += sn * sn;
                  t += std::sin(2.0 * r) * r;
                }
                const double kv = std::exp(k.log_variance - 2.0 * s / l2);
                const double gk = g(i, j) * kv;
                out[0] += gk * 4.0 * s / l2;
                out[1] += gk * 2.0 * t / l2;
                out[2] += gk;
              }
            }
            return out;
          },
          [&](const LinearKernel& k) -> Eigen::VectorXd {
            Eigen::VectorXd out = Eigen::VectorXd::Zero(2);
            const double var = std::exp(k.log_variance);
            const Eigen::MatrixXd a = x1.array() - k.offset;
            const Eigen::MatrixXd b = x2.array() - k.offset;
            out[0] = var * (g.cwiseProduct(a * b.transpose())).sum();
            // d/dc sum_d (a_d)(b_d) = -sum_d (a_d + b_d)
            const Eigen::VectorXd asum = a.rowwise().sum();
            const Eigen::VectorXd bsum = b.rowwise().sum();
            out[1] = -var * (g.colwise().sum().transpose().dot(bsum) + g.rowwise().sum().dot(asum));
            return out;
          },
          [&](const SumKernel& k) -> Eigen::VectorXd {
            Eigen::VectorXd out(num_params());
            Eigen::Index pos = 0;
            for (const auto& c : k.children) {
              const auto n = c.num_params();
              out.segment(pos, n) = c.grad_params(x1, x2, g);
              pos += n;
            }
            return out;
          },
      },
      spec);
}

Eigen::VectorXd Kernel::grad_params_diag(const Eigen::MatrixXd& x, const Eigen::VectorXd& g) const {
  check_dims(*this, x, x);
  if (g.size() != x.rows()) throw DimensionError("kernel: adjoint shape");
  return std::visit(Overloaded{
                        [&](const SEArd& k) -> Eigen::VectorXd {
                          Eigen::VectorXd out = Eigen::VectorXd::Zero(k.log_lengthscales.size() + 1);
                          out[k.log_lengthscales.size()] = std::exp(k.log_variance) * g.sum();
                          return out;
                        },
                        [&](const PeriodicKernel& k) -> Eigen::VectorXd {
                          Eigen::VectorXd out = Eigen::VectorXd::Zero(3);
                          out[2] = std::exp(k.log_variance) * g.sum();
                          return out;
                        },
                        [&](const LinearKernel& k) -> Eigen::VectorXd {
                          Eigen::VectorXd out(2);
                          const double var = std::exp(k.log_variance);
                          const Eigen::MatrixXd a = x.array() - k.offset;
                          out[0] = var * g.dot(a.array().square().rowwise().sum().matrix());
                          out[1] = -2.0 * var * g.dot(a.rowwise().sum());
                          return out;
                        },
                        [&](const SumKernel& k) -> Eigen::VectorXd {
                          Eigen::VectorXd out(num_params());
                          Eigen::Index pos = 0;
                          for (const auto& c : k.children) {
                            const auto n = c.num_params();
                            out.segment(pos, n) = c.grad_params_diag(x, g);
                            pos += n;
                          }
                          return out;
                        },
                    },
                    spec);
}

Eigen::MatrixXd Kernel::grad_x1(const Eigen::MatrixXd& x1, const Eigen::MatrixXd& x2,
                                const Eigen::MatrixXd& g) const {
  check_dims(*this, x1, x2);
  if (g.rows() != x1.rows() || g.cols() != x2.rows()) throw DimensionError("kernel: adjoint shape");
  return std::visit(
      Overloaded{
          [&](const SEArd& k) -> Eigen::MatrixXd {
            Eigen::MatrixXd out = Eigen::MatrixXd::Zero(x1.rows(), x1.cols());
            const Eigen::MatrixXd gk = g.cwiseProduct(se_gram(k, x1, x2));
            for (Eigen::Index d = 0; d < x1.cols(); ++d) {
              const double inv_l2 = std::exp(-2.0 * k.log_lengthscales[d]);
              for (Eigen::Index i = 0; i < x1.rows(); ++i) {
                double acc = 0.0;
                for (Eigen::Index j = 0; j < x2.rows(); ++j) acc += gk(i, j) * (x1(i, d) - x2(j, d));
                out(i, d) = -acc * inv_l2;
              }
            }
            return out;
          },
          [&](const PeriodicKernel& k) -> Eigen::MatrixXd {
            Eigen::MatrixXd out = Eigen::MatrixXd::Zero(x1.rows(), x1.cols());
            const double p = std::exp(k.log_period);
            const double l2 = std::exp(2.0 * k.log_lengthscale);
            for (Eigen::Index i = 0; i < x1.rows(); ++i) {
              for (Eigen::Index j = 0; j < x2.rows(); ++j) {
                const double gk = g(i, j) * periodic_value(k, x1.row(i), x2.row(j));
                for (Eigen::Index d = 0; d < x1.cols(); ++d) {
                  const double r = std::numbers::pi * (x1(i, d) - x2(j, d)) / p;
                  out(i, d) += gk * (-2.0 / l2) * std::sin(2.0 * r) * std::numbers::pi / p;
                }
              }
            }
            return out;
          },
          [&](const LinearKernel& k) -> Eigen::MatrixXd {
            const Eigen::MatrixXd b = x2.array() - k.offset;
            return std::exp(k.log_variance) * g * b;
          },
          [&](const SumKernel& k) -> Eigen::MatrixXd {
            Eigen::MatrixXd out = Eigen::MatrixXd::Zero(x1.rows(), x1.cols());
            for (const auto& c : k.children) out += c.grad_x1(x1, x2, g);
            return out;
          },
      },
      spec);
}

Eigen::MatrixXd gram(const Kernel& kernel, const Eigen::MatrixXd& x1, const Eigen::MatrixXd& x2) {
  return kernel.gram(x1, x2);
}

Eigen::MatrixXd GramMatrix::solve(const Eigen::MatrixXd& b) const {
  const auto l = chol_.triangularView<Eigen::Lower>();
  return l.transpose().solve(l.solve(b));
}

Eigen::VectorXd GramMatrix::solve(const Eigen::VectorXd& b) const {
  const auto l = chol_.triangularView<Eigen::Lower>();
  return l.transpose().solve(l.solve(b));
}

Eigen::MatrixXd GramMatrix::solve_lower(const Eigen::MatrixXd& b) const {
  return chol_.triangularView<Eigen::Lower>().solve(b);
}

Eigen::MatrixXd GramMatrix::inverse() const {
  return solve(Eigen::MatrixXd::Identity(size(), size()).eval());
}

double GramMatrix::logdet() const { return 2.0 * chol_.diagonal().array().log().sum(); }

GramMatrix factorize_with_jitter(Eigen::MatrixXd k, const JitterSchedule& schedule) {
  if (!k.allFinite()) throw DomainError("gram: non-finite entries");
  const Eigen::Index n = k.rows();
  if (n == 0) return GramMatrix(std::move(k), 0.0, Eigen::MatrixXd());
  const double scale = std::max(k.diagonal().mean(), std::numeric_limits<double>::min());
  std::vector<double> levels;
  if (schedule.try_zero) levels.push_back(0.0);
  for (double j = schedule.initial; j <= schedule.max * (1.0 + 1e-12); j *= schedule.factor) {
    levels.push_back(j);
  }
  for (double level : levels) {
    Eigen::MatrixXd a = k;
    a.diagonal().array() += level * scale;
    Eigen::LLT<Eigen::MatrixXd> llt(a);
    if (llt.info() != Eigen::Success) continue;
    Eigen::MatrixXd l = llt.matrixL();
    const double min_pivot = l.diagonal().minCoeff();
    if (!(min_pivot > 0.0) || !l.allFinite()) continue;
    if (level == 0.0 && min_pivot * min_pivot < 0.5 * schedule.initial * scale) continue;
    return GramMatrix(std::move(k), level * scale, std::move(l));
  }
  throw DegenerateKernelError("gram: Cholesky factorization failed at the maximum jitter level");
}

GramMatrix gram_with_jitter(const Kernel& kernel, const Eigen::MatrixXd& x,
                            const JitterSchedule& schedule) {
  if (!x.allFinite()) throw DomainError("gram: non-finite inputs");
  return factorize_with_jitter(kernel.gram(x, x), schedule);
}

}  // namespace elliptic
