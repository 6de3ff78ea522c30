#pragma once

#include <Eigen/Dense>

#include <cmath>

namespace fei {

struct AdamParams {
  double lr = 0.05;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Bias-corrected Adam that minimizes; callers ascending an objective pass
/// the negated gradient.
class Adam {
 public:
  Adam(Eigen::Index size, AdamParams params)
      : params_(params), m_(Eigen::VectorXd::Zero(size)), v_(Eigen::VectorXd::Zero(size)) {}

  template <typename Derived>
  void step(Eigen::Ref<Eigen::VectorXd> x, const Eigen::MatrixBase<Derived>& grad) {
    ++t_;
    m_ = params_.beta1 * m_ + (1.0 - params_.beta1) * grad;
    v_ = params_.beta2 * v_ + (1.0 - params_.beta2) * grad.cwiseAbs2();
    const double c1 = 1.0 - std::pow(params_.beta1, t_);
    const double c2 = 1.0 - std::pow(params_.beta2, t_);
    x.array() -= params_.lr * (m_.array() / c1) / ((v_.array() / c2).sqrt() + params_.eps);
  }

  int iterations() const { return t_; }

 private:
  AdamParams params_;
  Eigen::VectorXd m_;
  Eigen::VectorXd v_;
  int t_ = 0;
};

}  // namespace fei
