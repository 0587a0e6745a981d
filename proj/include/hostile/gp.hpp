#pragma once

// Gaussian-process regression over the unit-encoded search space, used as
// the surrogate of the Bayesian-optimization strategy.

#include <cmath>
#include <limits>
#include <optional>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Dense>

namespace hostile {

class GaussianProcess {
 public:
  struct Prediction {
    double mean = 0.0;
    double sd = 0.0;
  };

  // Fits with an isotropic Matern-5/2 kernel on standardized targets. Length
  // scale and noise level are picked from a small grid by log marginal
  // likelihood. Returns false when the targets are constant or every
  // factorization failed; the model is then unusable.
  bool fit(const std::vector<std::vector<double>>& xs, const std::vector<double>& ys) {
    const auto n = static_cast<Eigen::Index>(xs.size());
    if (n < 2 || xs.size() != ys.size()) return false;
    const auto d = static_cast<Eigen::Index>(xs.front().size());
    x_.resize(n, d);
    for (Eigen::Index i = 0; i < n; ++i)
      for (Eigen::Index k = 0; k < d; ++k) x_(i, k) = xs[static_cast<std::size_t>(i)][static_cast<std::size_t>(k)];

    y_mean_ = 0.0;
    for (double y : ys) y_mean_ += y;
    y_mean_ /= static_cast<double>(n);
    double var = 0.0;
    for (double y : ys) var += (y - y_mean_) * (y - y_mean_);
    y_scale_ = std::sqrt(var / static_cast<double>(n));
    if (!(y_scale_ > 1e-12 * std::max(1.0, std::abs(y_mean_)))) return false;

    Eigen::VectorXd y(n);
    for (Eigen::Index i = 0; i < n; ++i) y(i) = (ys[static_cast<std::size_t>(i)] - y_mean_) / y_scale_;

    Eigen::MatrixXd dist(n, n);
    for (Eigen::Index i = 0; i < n; ++i)
      for (Eigen::Index j = 0; j < n; ++j) dist(i, j) = (x_.row(i) - x_.row(j)).norm();

    double best_ll = -std::numeric_limits<double>::infinity();
    fitted_ = false;
    for (double ls : {0.05, 0.1, 0.2, 0.35, 0.6, 1.0, 2.0}) {
      for (double noise : {1e-6, 1e-3, 1e-2, 1e-1}) {
        Eigen::MatrixXd k = dist.unaryExpr([ls](double r) { return matern52(r / ls); });
        k.diagonal().array() += noise;
        Eigen::LLT<Eigen::MatrixXd> llt(k);
        if (llt.info() != Eigen::Success) continue;
        Eigen::VectorXd alpha = llt.solve(y);
        const Eigen::MatrixXd l = llt.matrixL();
        const double ll = -0.5 * y.dot(alpha) - l.diagonal().array().log().sum();
        if (ll > best_ll) {
          best_ll = ll;
          length_scale_ = ls;
          llt_ = std::move(llt);
          alpha_ = std::move(alpha);
          fitted_ = true;
        }
      }
    }
    return fitted_;
  }

  Prediction predict(const std::vector<double>& x) const {
    const auto n = x_.rows();
    Eigen::VectorXd kx(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      double s = 0.0;
      for (Eigen::Index k = 0; k < x_.cols(); ++k) {
        const double diff = x_(i, k) - x[static_cast<std::size_t>(k)];
        s += diff * diff;
      }
      kx(i) = matern52(std::sqrt(s) / length_scale_);
    }
    const double mean = kx.dot(alpha_);
    const Eigen::VectorXd v = llt_.matrixL().solve(kx);
    const double var = std::max(1.0 - v.squaredNorm(), 0.0);
    return {y_mean_ + y_scale_ * mean, y_scale_ * std::sqrt(var)};
  }

  double length_scale() const { return length_scale_; }

  static double matern52(double r) {
    const double s = std::sqrt(5.0) * r;
    return (1.0 + s + s * s / 3.0) * std::exp(-s);
  }

 private:
  Eigen::MatrixXd x_;
  Eigen::LLT<Eigen::MatrixXd> llt_;
  Eigen::VectorXd alpha_;
  double y_mean_ = 0.0;
  double y_scale_ = 1.0;
  double length_scale_ = 0.2;
  bool fitted_ = false;
};

// Expected improvement over `best` for maximization.
inline double expected_improvement(const GaussianProcess::Prediction& p, double best, double xi) {
  const double gain = p.mean - best - xi;
  if (p.sd <= 1e-12) return std::max(gain, 0.0);
  const double z = gain / p.sd;
  const double cdf = 0.5 * std::erfc(-z / std::sqrt(2.0));
  const double pdf = std::exp(-0.5 * z * z) / std::sqrt(2.0 * M_PI);
  return gain * cdf + p.sd * pdf;
}

}  // namespace hostile
