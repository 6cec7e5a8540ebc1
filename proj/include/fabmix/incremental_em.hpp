#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <memory>
#include <numeric>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Core>

#include "fabmix/errors.hpp"
#include "fabmix/gaussian.hpp"
#include "fabmix/mixture.hpp"
#include "fabmix/random.hpp"
#include "fabmix/trace.hpp"

namespace fabmix {

// How the per-datum update refreshes a component covariance.
enum class CovarianceMode {
  // Damped rank-one update applied verbatim:
  //   Sigma <- (1 - r) * (Sigma + r * (x - mu_old)(x - mu_old)^T),  r = s / N_new
  paper_faithful,
  // Exact running sums of gamma, gamma*x and gamma*x*x^T.
  exact_stats,
};

inline std::string_view to_string(CovarianceMode mode) {
  return mode == CovarianceMode::paper_faithful ? "paper-faithful" : "exact-stats";
}

inline CovarianceMode parse_covariance_mode(std::string_view s) {
  if (s == "paper-faithful" || s == "paper_faithful") return CovarianceMode::paper_faithful;
  if (s == "exact-stats" || s == "exact_stats") return CovarianceMode::exact_stats;
  throw Error("unknown covariance mode '" + std::string(s) + "'");
}

// Change of one datum's responsibility row.
struct ChangeRecord {
  Eigen::Index datum = 0;
  Vector delta;      // s_nk = new - old, sums to zero
  Vector new_gamma;  // row after the refresh
};

// Zeroth, first and second responsibility-weighted moments per component.
struct SufficientStats {
  Vector s0;               // C
  Matrix s1;               // C x D
  std::vector<Matrix> s2;  // C slices of D x D

  static SufficientStats from_table(const Dataset& data, const ResponsibilityTable& table) {
    SufficientStats st;
    const auto c = table.n_components();
    st.s0 = table.column_sums();
    st.s1 = table.gamma.transpose() * data.points;
    st.s2.reserve(static_cast<std::size_t>(c));
    for (Eigen::Index k = 0; k < c; ++k) {
      const RowMatrix weighted = data.points.array().colwise() * table.gamma.col(k).array();
      Matrix m = data.points.transpose() * weighted;
      st.s2.push_back((m + m.transpose()) * 0.5);
    }
    return st;
  }

  Eigen::Index n_components() const { return s0.size(); }

  void add(Eigen::Index k, double weight, const Eigen::Ref<const Vector>& x) {
    s0[k] += weight;
    s1.row(k) += weight * x.transpose();
    s2[static_cast<std::size_t>(k)].noalias() += weight * x * x.transpose();
  }

  Vector mean(Eigen::Index k) const { return s1.row(k).transpose() / s0[k]; }

  Matrix covariance(Eigen::Index k) const {
    const Vector mu = mean(k);
    return s2[static_cast<std::size_t>(k)] / s0[k] - mu * mu.transpose();
  }
};

// Refresh one datum's responsibilities at fixed parameters and report the change.
inline ChangeRecord e_incremental_step(const MixtureModel& model, Eigen::Index datum,
                                       const Eigen::Ref<const Vector>& x,
                                       const Eigen::Ref<const Vector>& old_gamma) {
  if (old_gamma.size() != model.size()) {
    throw DimensionError("e_incremental_step: old row has " + std::to_string(old_gamma.size()) +
                         " entries, model has " + std::to_string(model.size()) + " components");
  }
  ChangeRecord rec;
  rec.datum = datum;
  rec.new_gamma = responsibility_row(model, x);
  rec.delta = rec.new_gamma - old_gamma;
  return rec;
}

struct CountUpdate {
  Vector counts;
  bool clamped = false;
};

// N_k <- N_k + s_nk, clamped at `floor`.
inline CountUpdate update_soft_counts(const Vector& counts, const Vector& delta, double floor) {
  if (counts.size() != delta.size()) throw DimensionError("update_soft_counts: size mismatch");
  CountUpdate out{counts + delta, false};
  for (Eigen::Index k = 0; k < out.counts.size(); ++k) {
    if (out.counts[k] < floor) {
      out.counts[k] = floor;
      out.clamped = true;
    }
  }
  return out;
}

// Component indices whose parameters were left untouched because their
// updated count sits at the count floor.
using DegenerateList = std::vector<Eigen::Index>;

inline double positive_weight(double w) {
  return std::max(w, std::numeric_limits<double>::min());
}

// Per-datum parameter update. `model.soft_counts` must already hold the
// updated counts. `stats` is kept current in both modes; only exact_stats
// derives parameters from it.
inline DegenerateList incremental_m_step(MixtureModel& model, const Eigen::Ref<const Vector>& x,
                                         const ChangeRecord& record, Eigen::Index n_total,
                                         CovarianceMode mode, SufficientStats& stats) {
  if (record.delta.size() != model.size()) throw DimensionError("incremental_m_step: size mismatch");
  if (x.size() != model.dim) throw DimensionError("incremental_m_step: point dimension mismatch");
  const double total = static_cast<double>(n_total);
  const double floor = count_floor(model.dim);
  DegenerateList degenerate;
  for (Eigen::Index k = 0; k < model.size(); ++k) {
    const double s = record.delta[k];
    if (s == 0.0) continue;
    auto& comp = model.components[static_cast<std::size_t>(k)];
    const double nk = model.soft_counts[k];
    stats.add(k, s, x);
    if (mode == CovarianceMode::exact_stats) {
      comp.weight = positive_weight(stats.s0[k] / total);
      if (!(stats.s0[k] > floor) || nk <= floor) {
        degenerate.push_back(k);
        continue;
      }
      comp.mean = stats.mean(k);
      comp.cov = repair_covariance(stats.covariance(k));
    } else {
      comp.weight = positive_weight(comp.weight + s / total);
      if (nk <= floor) {
        degenerate.push_back(k);
        continue;
      }
      const double r = s / nk;
      const Vector diff = x - comp.mean;
      comp.mean += r * diff;
      comp.cov = repair_covariance((1.0 - r) * (comp.cov.entries() + r * diff * diff.transpose()));
    }
  }
  return degenerate;
}

namespace detail {

// Re-throw a per-datum failure with its (sweep, datum) location attached.
template <typename Fn>
void located(int sweep, Eigen::Index datum, Fn&& fn) {
  const auto where = [&] {
    return " at sweep " + std::to_string(sweep) + ", datum " + std::to_string(datum);
  };
  try {
    fn();
  } catch (const DegenerateComponent& e) {
    throw DegenerateComponent(e.component(), e.count(), where().substr(4));
  } catch (const SingularCovariance& e) {
    throw SingularCovariance(e.what() + where());
  } catch (const DimensionError& e) {
    throw DimensionError(e.what() + where());
  }
}

inline std::vector<Eigen::Index> shuffled_order(Eigen::Index n, Rng& rng) {
  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  shuffle(order, rng);
  return order;
}

}  // namespace detail

// Everything an online learner needs to resume exactly where it stopped.
struct LearnerState {
  MixtureModel model;
  ResponsibilityTable table;
  SufficientStats stats;
  Rng::State order_rng{};
  int sweeps = 0;
  // Online FAB only: cached per-datum entropies of the FIC accumulator.
  std::optional<double> fic_entropy_total;
  std::vector<double> fic_entropies;
};

inline void check_state(const LearnerState& st, const Dataset& data, const char* where) {
  check_dims(st.model, data, where);
  if (st.table.n() != data.n() || st.table.n_components() != st.model.size() ||
      st.stats.n_components() != st.model.size()) {
    throw DimensionError(std::string(where) + ": learner state does not match the dataset");
  }
}

// Incremental EM learner over a fixed dataset. Construction runs the
// initialization pass (one batch E-step and M-step) so every datum has a
// cached responsibility row before the first incremental update.
class IncrementalEm {
 public:
  IncrementalEm(const Dataset& data, const MixtureModel& init, CovarianceMode mode,
                std::uint64_t order_seed)
      : data_(&data), mode_(mode), order_rng_(order_seed) {
    check_dims(init, data, "IncrementalEm");
    table_ = batch_e_step(init, data);
    model_ = batch_m_step(data, table_);
    stats_ = SufficientStats::from_table(data, table_);
  }

  IncrementalEm(const Dataset& data, LearnerState state, CovarianceMode mode)
      : data_(&data), mode_(mode), order_rng_(Rng::from_state(state.order_rng)) {
    check_state(state, data, "IncrementalEm");
    model_ = std::move(state.model);
    table_ = std::move(state.table);
    stats_ = std::move(state.stats);
    sweeps_ = state.sweeps;
  }

  LearnerState state() const {
    return {model_, table_, stats_, order_rng_.state(), sweeps_, std::nullopt, {}};
  }

  // One per-datum update: E-refresh, count update, parameter update.
  ChangeRecord step(Eigen::Index i) {
    const auto x = data_->row(i);
    ChangeRecord rec = e_incremental_step(model_, i, x, table_.gamma.row(i).transpose());
    CountUpdate cu = update_soft_counts(model_.soft_counts, rec.delta, count_floor(model_.dim));
    if (cu.clamped) ++count_clamps_;
    model_.soft_counts = std::move(cu.counts);
    incremental_m_step(model_, x, rec, data_->n(), mode_, stats_);
    table_.gamma.row(i) = rec.new_gamma.transpose();
    return rec;
  }

  // One pass over all data in a freshly shuffled order.
  void sweep() {
    ++sweeps_;
    for (Eigen::Index i : detail::shuffled_order(data_->n(), order_rng_)) {
      detail::located(sweeps_, i, [&] { step(i); });
    }
  }

  const MixtureModel& model() const { return model_; }
  const ResponsibilityTable& table() const { return table_; }
  const SufficientStats& stats() const { return stats_; }
  const Dataset& data() const { return *data_; }
  CovarianceMode mode() const { return mode_; }
  int count_clamps() const { return count_clamps_; }
  int sweeps() const { return sweeps_; }

 private:
  const Dataset* data_;
  CovarianceMode mode_;
  Rng order_rng_;
  MixtureModel model_;
  ResponsibilityTable table_;
  SufficientStats stats_;
  int count_clamps_ = 0;
  int sweeps_ = 0;
};

// Online EM driver. Trace row 0 evaluates `init`, row 1 the initialization
// pass, and each later row one full sweep. `max_sweeps` bounds the number of
// rows after row 0.
inline FitResult fit_incremental_em(const Dataset& data, const MixtureModel& init,
                                    CovarianceMode mode, double tol, int max_sweeps,
                                    std::uint64_t order_seed) {
  if (max_sweeps < 1) throw Error("fit_incremental_em: max_sweeps must be >= 1");
  Stopwatch clock;
  FitResult result;
  const double ll0 = log_likelihood(init, data);
  result.trace.append(ll0, ll0, static_cast<int>(init.size()), clock.elapsed_ms());

  IncrementalEm learner(data, init, mode, order_seed);
  const auto record = [&] {
    const double ll = log_likelihood(learner.model(), data);
    result.trace.append(ll, ll, static_cast<int>(learner.model().size()), clock.elapsed_ms());
    return result.trace.last_relative_change() < tol;
  };
  bool done = record();
  for (int t = 2; t <= max_sweeps && !done; ++t) {
    learner.sweep();
    done = record();
  }
  result.converged = done;
  result.model = learner.model();
  result.count_clamps = learner.count_clamps();
  result.state = std::make_shared<const LearnerState>(learner.state());
  return result;
}

}  // namespace fabmix
