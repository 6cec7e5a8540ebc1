#pragma once

// Reference implementations for tests. Deliberately naive: dense inverses,
// linear-domain densities, explicit loops. Nothing here calls the library's
// numerics except to read plain fields.

#include <cmath>
#include <numbers>
#include <vector>

#include <Eigen/Dense>

#include "fabmix/mixture.hpp"

namespace oracle {

using fabmix::Dataset;
using fabmix::Matrix;
using fabmix::MixtureModel;
using fabmix::RowMatrix;
using fabmix::Vector;

inline double log_pdf(const Vector& x, const Vector& mu, const Matrix& cov) {
  const double d = static_cast<double>(x.size());
  const Vector diff = x - mu;
  const double quad = diff.dot(cov.inverse() * diff);
  return -0.5 * (d * std::log(2.0 * std::numbers::pi) + std::log(cov.determinant()) + quad);
}

inline double pdf(const Vector& x, const Vector& mu, const Matrix& cov) {
  return std::exp(log_pdf(x, mu, cov));
}

inline double component_log_pdf(const MixtureModel& m, Eigen::Index k, const Vector& x) {
  const auto& c = m.components[static_cast<std::size_t>(k)];
  return log_pdf(x, c.mean, c.cov.entries());
}

// Responsibilities computed in the linear domain.
inline Vector responsibilities(const MixtureModel& m, const Vector& x) {
  Vector r(m.size());
  for (Eigen::Index k = 0; k < m.size(); ++k) {
    const auto& c = m.components[static_cast<std::size_t>(k)];
    r[k] = c.weight * pdf(x, c.mean, c.cov.entries());
  }
  return r / r.sum();
}

inline double log_likelihood(const MixtureModel& m, const Dataset& data) {
  double ll = 0.0;
  for (Eigen::Index i = 0; i < data.n(); ++i) {
    double p = 0.0;
    for (Eigen::Index k = 0; k < m.size(); ++k) {
      const auto& c = m.components[static_cast<std::size_t>(k)];
      p += c.weight * pdf(data.row(i), c.mean, c.cov.entries());
    }
    ll += std::log(p);
  }
  return ll;
}

struct Params {
  std::vector<double> weight;
  std::vector<Vector> mean;
  std::vector<Matrix> cov;
};

// Weighted moments by explicit accumulation.
inline Params m_step(const Dataset& data, const RowMatrix& gamma) {
  Params p;
  const auto n = data.n();
  const auto d = data.dim();
  for (Eigen::Index k = 0; k < gamma.cols(); ++k) {
    double nk = 0.0;
    Vector mu = Vector::Zero(d);
    for (Eigen::Index i = 0; i < n; ++i) {
      nk += gamma(i, k);
      mu += gamma(i, k) * data.points.row(i).transpose();
    }
    mu /= nk;
    Matrix cov = Matrix::Zero(d, d);
    for (Eigen::Index i = 0; i < n; ++i) {
      const Vector diff = data.points.row(i).transpose() - mu;
      cov += gamma(i, k) * diff * diff.transpose();
    }
    p.weight.push_back(nk / static_cast<double>(n));
    p.mean.push_back(mu);
    p.cov.push_back(cov / nk);
  }
  return p;
}

// Bound enumerated term by term.
inline double fic(const MixtureModel& m, const Dataset& data, const RowMatrix& q, double dc) {
  double j = 0.0;
  for (Eigen::Index i = 0; i < data.n(); ++i) {
    for (Eigen::Index c = 0; c < m.size(); ++c) {
      const double qc = q(i, c);
      if (qc == 0.0) continue;
      j += qc * std::log(m.components[static_cast<std::size_t>(c)].weight);
      j += qc * component_log_pdf(m, c, data.row(i));
      j -= qc * std::log(qc);
    }
  }
  for (Eigen::Index c = 0; c < m.size(); ++c) {
    double nc = 0.0;
    for (Eigen::Index i = 0; i < data.n(); ++i) nc += q(i, c);
    j -= dc / 2.0 * std::log(nc);
  }
  j -= (static_cast<double>(m.size()) - 1.0) / 2.0 * std::log(static_cast<double>(data.n()));
  return j;
}

// One-component bound: log-likelihood minus (D + D(D+1)/2)/2 log N.
inline double single_component_fic(double loglik, int dim, int n) {
  const double params = dim + dim * (dim + 1) / 2.0;
  return loglik - params / 2.0 * std::log(static_cast<double>(n));
}

}  // namespace oracle
