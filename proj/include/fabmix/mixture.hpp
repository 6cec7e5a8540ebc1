#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <memory>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "fabmix/errors.hpp"
#include "fabmix/gaussian.hpp"
#include "fabmix/random.hpp"
#include "fabmix/trace.hpp"

namespace fabmix {

// Smallest soft count a component may carry before divisions by it are
// considered meaningless.
inline double count_floor(Eigen::Index dim) {
  return std::max(1e-8, static_cast<double>(dim) * 1e-6);
}

struct Dataset {
  RowMatrix points;  // N x D

  Dataset() = default;
  explicit Dataset(RowMatrix p) : points(std::move(p)) {
    if (points.rows() < 1 || points.cols() < 1) throw DimensionError("dataset must be non-empty");
    if (!points.allFinite()) throw Error("dataset contains non-finite values");
  }

  Eigen::Index n() const { return points.rows(); }
  Eigen::Index dim() const { return points.cols(); }
  auto row(Eigen::Index i) const { return points.row(i).transpose(); }
};

struct MixtureModel {
  std::vector<GaussianComponent> components;
  Vector soft_counts;  // N_k
  Eigen::Index dim = 0;

  Eigen::Index size() const { return static_cast<Eigen::Index>(components.size()); }

  Vector weights() const {
    Vector w(size());
    for (Eigen::Index k = 0; k < size(); ++k) w[k] = components[k].weight;
    return w;
  }
};

struct ResponsibilityTable {
  RowMatrix gamma;            // N x C
  std::vector<char> visited;  // per datum

  ResponsibilityTable() = default;
  ResponsibilityTable(Eigen::Index n, Eigen::Index c)
      : gamma(RowMatrix::Zero(n, c)), visited(static_cast<std::size_t>(n), 0) {}

  Eigen::Index n() const { return gamma.rows(); }
  Eigen::Index n_components() const { return gamma.cols(); }
  bool all_visited() const {
    return std::all_of(visited.begin(), visited.end(), [](char v) { return v != 0; });
  }
  Vector column_sums() const { return gamma.colwise().sum().transpose(); }
};

inline void check_dims(const MixtureModel& model, const Dataset& data, const char* where) {
  if (model.dim != data.dim()) {
    throw DimensionError(std::string(where) + ": model dimension " + std::to_string(model.dim) +
                         " != data dimension " + std::to_string(data.dim()));
  }
}

// log(pi_k) + log N(x | mu_k, Sigma_k) for every component.
inline Vector component_log_joint(const MixtureModel& model, const Eigen::Ref<const Vector>& x) {
  Vector out(model.size());
  for (Eigen::Index k = 0; k < model.size(); ++k) {
    const auto& c = model.components[k];
    out[k] = std::log(c.weight) + log_pdf(x, c);
  }
  return out;
}

// Normalize log-weights into a probability row.
inline Vector normalize_log_row(const Vector& log_w) {
  const double lse = log_sum_exp(log_w);
  return (log_w.array() - lse).exp().matrix();
}

inline Vector responsibility_row(const MixtureModel& model, const Eigen::Ref<const Vector>& x) {
  return normalize_log_row(component_log_joint(model, x));
}

// Posterior responsibilities for every datum under the current parameters.
inline ResponsibilityTable batch_e_step(const MixtureModel& model, const Dataset& data) {
  check_dims(model, data, "batch_e_step");
  ResponsibilityTable table(data.n(), model.size());
  for (Eigen::Index i = 0; i < data.n(); ++i) {
    table.gamma.row(i) = responsibility_row(model, data.row(i)).transpose();
    table.visited[static_cast<std::size_t>(i)] = 1;
  }
  return table;
}

// Weighted mean/covariance of the data under one responsibility column.
inline GaussianComponent weighted_component(const Dataset& data,
                                            const Eigen::Ref<const Vector>& weights, double count,
                                            double total) {
  GaussianComponent comp;
  comp.weight = count / total;
  comp.mean = data.points.transpose() * weights / count;
  const RowMatrix centered = data.points.rowwise() - comp.mean.transpose();
  const Matrix scatter = centered.transpose() * (centered.array().colwise() * weights.array()).matrix();
  comp.cov = repair_covariance(scatter / count);
  return comp;
}

// Closed-form Gaussian-mixture M-step over a full responsibility table.
inline MixtureModel batch_m_step(const Dataset& data, const ResponsibilityTable& resp) {
  if (resp.n() != data.n()) throw DimensionError("batch_m_step: table rows != data rows");
  if (!resp.all_visited()) throw Error("batch_m_step: responsibility table has unvisited rows");
  const double floor = count_floor(data.dim());
  const double total = static_cast<double>(data.n());
  MixtureModel model;
  model.dim = data.dim();
  model.soft_counts = resp.column_sums();
  model.components.reserve(static_cast<std::size_t>(resp.n_components()));
  for (Eigen::Index k = 0; k < resp.n_components(); ++k) {
    const double nk = model.soft_counts[k];
    if (!(nk >= floor)) throw DegenerateComponent(static_cast<std::size_t>(k), nk, "batch_m_step");
    model.components.push_back(weighted_component(data, resp.gamma.col(k), nk, total));
  }
  return model;
}

inline double log_likelihood(const MixtureModel& model, const Dataset& data) {
  check_dims(model, data, "log_likelihood");
  double ll = 0.0;
  for (Eigen::Index i = 0; i < data.n(); ++i) ll += log_sum_exp(component_log_joint(model, data.row(i)));
  return ll;
}

// Population covariance of the whole dataset.
inline Matrix global_covariance(const Dataset& data) {
  const Vector mean = data.points.colwise().mean().transpose();
  const RowMatrix centered = data.points.rowwise() - mean.transpose();
  return (centered.transpose() * centered) / static_cast<double>(data.n());
}

// Means at `n_components` distinct data points chosen by `seed`, every
// covariance set to the global covariance, uniform weights.
inline MixtureModel initialize_from_data(const Dataset& data, Eigen::Index n_components,
                                         std::uint64_t seed) {
  if (n_components < 1) throw Error("initialize_from_data: need at least one component");
  if (n_components > data.n()) {
    throw Error("initialize_from_data: more components (" + std::to_string(n_components) +
                ") than data points (" + std::to_string(data.n()) + ")");
  }
  Rng rng(seed);
  std::vector<Eigen::Index> idx(static_cast<std::size_t>(data.n()));
  std::iota(idx.begin(), idx.end(), Eigen::Index{0});
  // Partial Fisher-Yates: the first n_components entries are the picks.
  for (Eigen::Index i = 0; i < n_components; ++i) {
    const auto j = i + static_cast<Eigen::Index>(rng.uniform_index(
                           static_cast<std::uint64_t>(data.n() - i)));
    std::swap(idx[static_cast<std::size_t>(i)], idx[static_cast<std::size_t>(j)]);
  }
  const CovarianceMatrix cov = repair_covariance(global_covariance(data));
  MixtureModel model;
  model.dim = data.dim();
  model.soft_counts =
      Vector::Constant(n_components, static_cast<double>(data.n()) / static_cast<double>(n_components));
  for (Eigen::Index k = 0; k < n_components; ++k) {
    model.components.push_back(
        {1.0 / static_cast<double>(n_components), data.row(idx[static_cast<std::size_t>(k)]), cov});
  }
  return model;
}

struct LearnerState;

struct FitResult {
  MixtureModel model;
  FicTrace trace;
  bool converged = false;
  // Learner-specific diagnostics; zero where not applicable.
  int count_clamps = 0;
  int auto_resyncs = 0;
  int prune_events = 0;
  // Online FAB: largest end-of-sweep relative gap between the running and
  // the recomputed FIC, measured before any resync.
  double max_fic_drift = 0.0;
  // Online learners only: full state for exact resume.
  std::shared_ptr<const LearnerState> state;
};

inline std::string at_iteration(int t) { return "iteration " + std::to_string(t); }

// Full-batch EM. Row 0 of the trace evaluates `init`; row t follows the t-th
// E/M pass. Stops when the relative log-likelihood change drops below tol.
inline FitResult fit_batch_em(const Dataset& data, const MixtureModel& init, double tol,
                              int max_iters) {
  if (max_iters < 1) throw Error("fit_batch_em: max_iters must be >= 1");
  check_dims(init, data, "fit_batch_em");
  Stopwatch clock;
  FitResult result;
  result.model = init;
  const double ll0 = log_likelihood(init, data);
  result.trace.append(ll0, ll0, static_cast<int>(init.size()), clock.elapsed_ms());
  for (int t = 1; t <= max_iters; ++t) {
    try {
      const ResponsibilityTable resp = batch_e_step(result.model, data);
      result.model = batch_m_step(data, resp);
    } catch (const DegenerateComponent& e) {
      throw DegenerateComponent(e.component(), e.count(), at_iteration(t));
    }
    const double ll = log_likelihood(result.model, data);
    result.trace.append(ll, ll, static_cast<int>(result.model.size()), clock.elapsed_ms());
    if (result.trace.last_relative_change() < tol) {
      result.converged = true;
      break;
    }
  }
  return result;
}

}  // namespace fabmix
