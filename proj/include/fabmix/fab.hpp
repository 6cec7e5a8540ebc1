#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "fabmix/errors.hpp"
#include "fabmix/incremental_em.hpp"
#include "fabmix/mixture.hpp"
#include "fabmix/trace.hpp"

namespace fabmix {

// Free parameters of one full-covariance Gaussian: mean plus covariance.
inline double gaussian_parameter_count(Eigen::Index dim) {
  const auto d = static_cast<double>(dim);
  return d + d * (d + 1.0) / 2.0;
}

struct FabConfig {
  // Per-component parameter count in the shrinkage penalty. Setting it to 0
  // turns FAB into plain EM.
  double d_component = 0.0;
  // Components with N_c / N below this are removed.
  double prune_threshold = 0.01;
  int inner_v_iters = 3;
  double tol = 1e-6;
  int max_iters = 500;
  // Used only by the online learner.
  CovarianceMode mode = CovarianceMode::exact_stats;

  static FabConfig for_dim(Eigen::Index dim) {
    FabConfig cfg;
    cfg.d_component = gaussian_parameter_count(dim);
    return cfg;
  }

  void validate(Eigen::Index initial_components) const {
    if (!(d_component >= 0.0)) throw Error("FabConfig: d_component must be >= 0");
    if (inner_v_iters < 1) throw Error("FabConfig: inner_v_iters must be >= 1");
    if (max_iters < 1) throw Error("FabConfig: max_iters must be >= 1");
    if (!(prune_threshold >= 0.0) ||
        (initial_components > 1 &&
         !(prune_threshold < 1.0 / static_cast<double>(initial_components)))) {
      throw Error("FabConfig: prune threshold " + std::to_string(prune_threshold) +
                  " must lie in [0, 1/C_init)");
    }
  }
};

// Shrinkage added to the log-weights: -D_c / (2 * N_c), with N_c floored.
inline Vector shrinkage_log_factor(const Vector& counts, double d_component, Eigen::Index dim) {
  const double floor = count_floor(dim);
  return counts.unaryExpr([&](double n) { return -d_component / (2.0 * std::max(n, floor)); });
}

// q row proportional to pi_c N(x | mu_c, Sigma_c) exp(-D_c / (2 N_c)).
inline Vector shrunk_responsibility_row(const MixtureModel& model, const Eigen::Ref<const Vector>& x,
                                        const Vector& shrink) {
  return normalize_log_row(component_log_joint(model, x) + shrink);
}

// Sum over c of q_c * (log pi_c + log N(x | c)) minus sum of q_c log q_c,
// with 0 log 0 := 0.
inline double datum_fic_term(const MixtureModel& model, const Eigen::Ref<const Vector>& x,
                             const Eigen::Ref<const Vector>& q) {
  double acc = 0.0;
  for (Eigen::Index c = 0; c < model.size(); ++c) {
    const double qc = q[c];
    if (qc <= 0.0) continue;
    const auto& comp = model.components[static_cast<std::size_t>(c)];
    acc += qc * (std::log(comp.weight) + log_pdf(x, comp) - std::log(qc));
  }
  return acc;
}

// Penalty part of the bound, from live counts.
inline double fic_penalty(const Vector& counts, double d_component, Eigen::Index n_total) {
  double pen = 0.0;
  for (Eigen::Index c = 0; c < counts.size(); ++c) {
    if (!(counts[c] > 0.0)) throw DegenerateComponent(static_cast<std::size_t>(c), counts[c], "FIC penalty");
    pen += 0.5 * d_component * std::log(counts[c]);
  }
  pen += 0.5 * static_cast<double>(counts.size() - 1) * std::log(static_cast<double>(n_total));
  return pen;
}

// FIC lower bound
//   J = sum_n sum_c q_nc [log pi_c + log N(x_n | mu_c, Sigma_c) - log q_nc]
//       - sum_c (D_c / 2) log(sum_n q_nc) - ((C - 1) / 2) log N.
inline double fic_lower_bound(const MixtureModel& model, const Dataset& data,
                              const ResponsibilityTable& resp, const FabConfig& cfg) {
  check_dims(model, data, "fic_lower_bound");
  if (resp.n() != data.n() || resp.n_components() != model.size()) {
    throw DimensionError("fic_lower_bound: responsibility table does not match model/data");
  }
  if (!resp.all_visited()) throw Error("fic_lower_bound: responsibility table has unvisited rows");
  double data_term = 0.0;
  for (Eigen::Index i = 0; i < data.n(); ++i) {
    data_term += datum_fic_term(model, data.row(i), resp.gamma.row(i).transpose());
  }
  return data_term - fic_penalty(resp.column_sums(), cfg.d_component, data.n());
}

// V-step: inner fixed-point iterations of the shrunk responsibilities, each
// pass using the column sums of the previous pass (initially of `resp`).
inline ResponsibilityTable fab_v_step(const MixtureModel& model, const Dataset& data,
                                      const ResponsibilityTable& resp, const FabConfig& cfg) {
  check_dims(model, data, "fab_v_step");
  if (resp.n_components() != model.size()) throw DimensionError("fab_v_step: table/model mismatch");
  RowMatrix log_joint(data.n(), model.size());
  for (Eigen::Index i = 0; i < data.n(); ++i) {
    log_joint.row(i) = component_log_joint(model, data.row(i)).transpose();
  }
  ResponsibilityTable out(data.n(), model.size());
  Vector counts = resp.column_sums();
  for (int it = 0; it < cfg.inner_v_iters; ++it) {
    const Vector shrink = shrinkage_log_factor(counts, cfg.d_component, data.dim());
    for (Eigen::Index i = 0; i < data.n(); ++i) {
      out.gamma.row(i) = normalize_log_row(log_joint.row(i).transpose() + shrink).transpose();
    }
    counts = out.column_sums();
  }
  std::fill(out.visited.begin(), out.visited.end(), 1);
  return out;
}

struct PruneResult {
  MixtureModel model;
  ResponsibilityTable table;
  std::vector<Eigen::Index> pruned;
};

// Drop components whose share sum_n q_nc / N is below the threshold. Weights
// and q rows are renormalized over the survivors; the last component is
// never removed. Soft counts are reset to the new column sums.
inline PruneResult prune_components(const MixtureModel& model, const ResponsibilityTable& resp,
                                    const FabConfig& cfg) {
  const Vector counts = resp.column_sums();
  const double total = static_cast<double>(resp.n());
  std::vector<Eigen::Index> keep;
  PruneResult out;
  for (Eigen::Index c = 0; c < model.size(); ++c) {
    if (counts[c] / total < cfg.prune_threshold) {
      out.pruned.push_back(c);
    } else {
      keep.push_back(c);
    }
  }
  if (keep.empty()) {
    Eigen::Index best = 0;
    counts.maxCoeff(&best);
    keep.push_back(best);
    out.pruned.erase(std::find(out.pruned.begin(), out.pruned.end(), best));
  }
  if (out.pruned.empty()) return {model, resp, {}};

  const auto kept = static_cast<Eigen::Index>(keep.size());
  out.model.dim = model.dim;
  out.table = ResponsibilityTable(resp.n(), kept);
  out.table.visited = resp.visited;
  double weight_sum = 0.0;
  for (Eigen::Index j = 0; j < kept; ++j) {
    out.model.components.push_back(model.components[static_cast<std::size_t>(keep[j])]);
    out.table.gamma.col(j) = resp.gamma.col(keep[j]);
    weight_sum += out.model.components.back().weight;
  }
  for (auto& comp : out.model.components) comp.weight /= weight_sum;
  for (Eigen::Index i = 0; i < resp.n(); ++i) {
    const double s = out.table.gamma.row(i).sum();
    if (s > 0.0) {
      out.table.gamma.row(i) /= s;
    } else {
      out.table.gamma.row(i).setConstant(1.0 / static_cast<double>(kept));
    }
  }
  out.model.soft_counts = out.table.column_sums();
  return out;
}

// Batch FAB: V-step, pruning, M-step, bound evaluation per iteration. Trace
// row 0 scores `init` under its plain E-step responsibilities.
inline FitResult fit_fab_batch(const Dataset& data, const MixtureModel& init, const FabConfig& cfg) {
  check_dims(init, data, "fit_fab_batch");
  cfg.validate(init.size());
  Stopwatch clock;
  FitResult result;
  result.model = init;
  ResponsibilityTable q = batch_e_step(init, data);
  result.trace.append(fic_lower_bound(init, data, q, cfg), log_likelihood(init, data),
                      static_cast<int>(init.size()), clock.elapsed_ms());
  for (int t = 1; t <= cfg.max_iters; ++t) {
    try {
      q = fab_v_step(result.model, data, q, cfg);
      PruneResult pr = prune_components(result.model, q, cfg);
      if (!pr.pruned.empty()) ++result.prune_events;
      q = std::move(pr.table);
      result.model = batch_m_step(data, q);
    } catch (const DegenerateComponent& e) {
      throw DegenerateComponent(e.component(), e.count(), at_iteration(t));
    }
    result.trace.append(fic_lower_bound(result.model, data, q, cfg), log_likelihood(result.model, data),
                        static_cast<int>(result.model.size()), clock.elapsed_ms());
    if (result.trace.last_relative_change() < cfg.tol) {
      result.converged = true;
      break;
    }
  }
  return result;
}

}  // namespace fabmix
