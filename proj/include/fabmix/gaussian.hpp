#pragma once

#include <cmath>
#include <string>

#include <Eigen/Cholesky>
#include <Eigen/Core>

#include "fabmix/errors.hpp"

namespace fabmix {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

inline constexpr double kLog2Pi = 1.8378770664093454835606594728112;

// log(sum(exp(v))) without overflow. Returns -inf for an all -inf input.
template <typename Derived>
double log_sum_exp(const Eigen::DenseBase<Derived>& v) {
  const double m = v.maxCoeff();
  if (!std::isfinite(m)) return m;
  return m + std::log((v.derived().array() - m).exp().sum());
}

// Symmetric positive-definite covariance with a cached Cholesky factor.
// Only constructible through repair_covariance(), which enforces the
// symmetry and factorization invariants.
class CovarianceMatrix {
 public:
  CovarianceMatrix() = default;

  Eigen::Index dim() const { return entries_.rows(); }
  const Matrix& entries() const { return entries_; }
  // Lower-triangular factor L with L * L^T == entries().
  const Matrix& chol() const { return chol_; }
  double log_det() const { return log_det_; }
  // Ridge added to the symmetrized input during repair.
  double jitter() const { return jitter_; }

  // Squared Mahalanobis distance of `centered` via a triangular solve.
  double mahalanobis2(const Vector& centered) const {
    return chol_.triangularView<Eigen::Lower>().solve(centered).squaredNorm();
  }

 private:
  friend CovarianceMatrix repair_covariance(const Matrix& raw);

  Matrix entries_;
  Matrix chol_;
  double log_det_ = 0.0;
  double jitter_ = 0.0;
};

namespace detail {

// LLT that also rejects numerically-zero pivots. Eigen's LLT only fails on
// non-positive pivots, which lets rank-deficient inputs through on rounding.
inline bool try_factor(const Matrix& a, Matrix& chol) {
  Eigen::LLT<Matrix> llt(a);
  if (llt.info() != Eigen::Success) return false;
  chol = llt.matrixL();
  const double max_diag = a.diagonal().maxCoeff();
  const auto pivots = chol.diagonal().array().square();
  if (!(max_diag > 0.0) || !pivots.allFinite()) return false;
  return pivots.minCoeff() > 1e-12 * max_diag;
}

}  // namespace detail

// Symmetrize `raw` and add the smallest ridge from {0, 1e-9 t, 1e-6 t, 1e-3 t}
// (t = trace / D) that yields a Cholesky factorization.
inline CovarianceMatrix repair_covariance(const Matrix& raw) {
  if (raw.rows() != raw.cols() || raw.rows() == 0) {
    throw DimensionError("covariance must be square and non-empty, got " +
                         std::to_string(raw.rows()) + "x" + std::to_string(raw.cols()));
  }
  const Matrix sym = (raw + raw.transpose()) * 0.5;
  const double t = sym.trace() / static_cast<double>(sym.rows());
  CovarianceMatrix out;
  if (sym.allFinite()) {
    for (double rung : {0.0, 1e-9, 1e-6, 1e-3}) {
      const double lambda = rung * t;
      if (rung > 0.0 && !(lambda > 0.0)) break;
      Matrix candidate = sym;
      if (lambda > 0.0) candidate.diagonal().array() += lambda;
      if (detail::try_factor(candidate, out.chol_)) {
        out.entries_ = std::move(candidate);
        out.log_det_ = 2.0 * out.chol_.diagonal().array().log().sum();
        out.jitter_ = lambda;
        return out;
      }
    }
  }
  throw SingularCovariance("covariance is not positive definite after jitter ladder (trace/D = " +
                           std::to_string(t) + ")");
}

struct GaussianComponent {
  double weight = 1.0;
  Vector mean;
  CovarianceMatrix cov;

  Eigen::Index dim() const { return mean.size(); }
};

// log N(x | mean, cov), evaluated through the cached factor.
inline double log_pdf(const Eigen::Ref<const Vector>& x, const GaussianComponent& comp) {
  const auto d = comp.mean.size();
  if (x.size() != d || comp.cov.dim() != d) {
    throw DimensionError("log_pdf: point has dimension " + std::to_string(x.size()) +
                         ", component has " + std::to_string(d));
  }
  const Vector centered = x - comp.mean;
  return -0.5 * (static_cast<double>(d) * kLog2Pi + comp.cov.log_det() +
                 comp.cov.mahalanobis2(centered));
}

}  // namespace fabmix
