#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "fabmix/errors.hpp"
#include "fabmix/fab.hpp"
#include "fabmix/incremental_em.hpp"
#include "fabmix/mixture.hpp"
#include "fabmix/random.hpp"
#include "fabmix/trace.hpp"

namespace fabmix {

// Relative gap between the running FIC and a full recomputation above which
// the accumulator is rebuilt.
inline constexpr double kFicDriftTolerance = 1e-4;

// sum_n q_nc [log pi_c + log N(x_n | mu_c, Sigma_c)] over all data, from the
// q-weighted moments alone:
//   s0 log pi - s0/2 (D log 2 pi + log|Sigma|) - 1/2 tr(Sigma^-1 M),
//   M = s2 - mu s1^T - s1 mu^T + s0 mu mu^T.
// Valid for any (pi, mu, Sigma), not only the moment-matched ones.
inline double complete_data_term(const MixtureModel& model, const SufficientStats& stats) {
  if (stats.n_components() != model.size()) throw DimensionError("complete_data_term: size mismatch");
  const auto d = static_cast<double>(model.dim);
  double acc = 0.0;
  for (Eigen::Index c = 0; c < model.size(); ++c) {
    const auto& comp = model.components[static_cast<std::size_t>(c)];
    const double s0 = stats.s0[c];
    const Vector s1 = stats.s1.row(c).transpose();
    const Vector& mu = comp.mean;
    const Matrix scatter = stats.s2[static_cast<std::size_t>(c)] - mu * s1.transpose() -
                           s1 * mu.transpose() + s0 * mu * mu.transpose();
    const auto lower = comp.cov.chol().triangularView<Eigen::Lower>();
    const Matrix half = lower.solve(scatter);
    const double quad = lower.transpose().solve(half).trace();
    acc += s0 * std::log(comp.weight) - 0.5 * s0 * (d * kLog2Pi + comp.cov.log_det()) - 0.5 * quad;
  }
  return acc;
}

// -sum_c q_c log q_c with 0 log 0 := 0.
inline double row_entropy(const Eigen::Ref<const Vector>& q) {
  double h = 0.0;
  for (Eigen::Index c = 0; c < q.size(); ++c) {
    if (q[c] > 0.0) h -= q[c] * std::log(q[c]);
  }
  return h;
}

// Running FIC. The complete-data part is read off the running q-weighted
// moments at the current parameters; the entropy part is cached per datum,
// so a revisit replaces that datum's previous contribution instead of adding
// to it. Penalties are recomputed from live counts on every read.
class OnlineFicAccumulator {
 public:
  OnlineFicAccumulator() = default;

  // Recompute every cached entropy from the table.
  void sync(const ResponsibilityTable& table) {
    entropies_.assign(static_cast<std::size_t>(table.n()), 0.0);
    entropy_total_ = 0.0;
    for (Eigen::Index i = 0; i < table.n(); ++i) {
      const double h = row_entropy(table.gamma.row(i).transpose());
      entropies_[static_cast<std::size_t>(i)] = h;
      entropy_total_ += h;
    }
  }

  // Replace datum i's entropy contribution.
  void replace(Eigen::Index i, const Eigen::Ref<const Vector>& new_q) {
    auto& slot = entropies_.at(static_cast<std::size_t>(i));
    const double h = row_entropy(new_q);
    entropy_total_ += h - slot;
    slot = h;
  }

  double data_term(const MixtureModel& model, const SufficientStats& stats) const {
    return complete_data_term(model, stats) + entropy_total_;
  }

  double value(const MixtureModel& model, const SufficientStats& stats, double d_component,
               Eigen::Index n_total) const {
    return data_term(model, stats) - fic_penalty(model.soft_counts, d_component, n_total);
  }

  double entropy_total() const { return entropy_total_; }
  const std::vector<double>& entropies() const { return entropies_; }

  void restore(double entropy_total, std::vector<double> entropies) {
    entropy_total_ = entropy_total;
    entropies_ = std::move(entropies);
  }

 private:
  double entropy_total_ = 0.0;
  std::vector<double> entropies_;
};

// V_online: shrunk responsibilities for one datum at the live counts, and
// their change against the cached row.
inline ChangeRecord v_online_step(const MixtureModel& model, Eigen::Index datum,
                                  const Eigen::Ref<const Vector>& x,
                                  const Eigen::Ref<const Vector>& old_q, const FabConfig& cfg) {
  if (old_q.size() != model.size()) throw DimensionError("v_online_step: row/model size mismatch");
  ChangeRecord rec;
  rec.datum = datum;
  rec.new_gamma = shrunk_responsibility_row(
      model, x, shrinkage_log_factor(model.soft_counts, cfg.d_component, model.dim));
  rec.delta = rec.new_gamma - old_q;
  return rec;
}

// M_online: the incremental parameter update driven by s_nc.
inline DegenerateList m_online_step(MixtureModel& model, const Eigen::Ref<const Vector>& x,
                                    const ChangeRecord& record, Eigen::Index n_total,
                                    CovarianceMode mode, SufficientStats& stats) {
  return incremental_m_step(model, x, record, n_total, mode, stats);
}

// Fold one processed datum into the running FIC and return the new value.
// `model` and `stats` must already reflect this datum's update.
inline double fic_online_accumulate(OnlineFicAccumulator& acc, const MixtureModel& model,
                                    const SufficientStats& stats, const ChangeRecord& record,
                                    Eigen::Index n_total, const FabConfig& cfg) {
  acc.replace(record.datum, record.new_gamma);
  return acc.value(model, stats, cfg.d_component, n_total);
}

// Online FAB learner over a fixed dataset. Construction runs one batch FAB
// iteration (V-step, pruning, M-step) and synchronizes the accumulator.
class OnlineFab {
 public:
  OnlineFab(const Dataset& data, const MixtureModel& init, const FabConfig& cfg,
            std::uint64_t order_seed)
      : data_(&data), cfg_(cfg), order_rng_(order_seed) {
    check_dims(init, data, "OnlineFab");
    cfg_.validate(init.size());
    const ResponsibilityTable q0 = batch_e_step(init, data);
    PruneResult pr = prune_components(init, fab_v_step(init, data, q0, cfg_), cfg_);
    if (!pr.pruned.empty()) ++prune_events_;
    table_ = std::move(pr.table);
    model_ = batch_m_step(data, table_);
    stats_ = SufficientStats::from_table(data, table_);
    acc_.sync(table_);
  }

  // Resume; recomputes the accumulator when the state carries none.
  OnlineFab(const Dataset& data, LearnerState state, const FabConfig& cfg)
      : data_(&data), cfg_(cfg), order_rng_(Rng::from_state(state.order_rng)) {
    check_state(state, data, "OnlineFab");
    model_ = std::move(state.model);
    table_ = std::move(state.table);
    stats_ = std::move(state.stats);
    sweeps_ = state.sweeps;
    if (state.fic_entropy_total &&
        static_cast<Eigen::Index>(state.fic_entropies.size()) == data.n()) {
      acc_.restore(*state.fic_entropy_total, std::move(state.fic_entropies));
    } else {
      acc_.sync(table_);
    }
  }

  LearnerState state() const {
    return {model_, table_, stats_, order_rng_.state(), sweeps_, acc_.entropy_total(), acc_.entropies()};
  }

  ChangeRecord step(Eigen::Index i) {
    const auto x = data_->row(i);
    ChangeRecord rec = v_online_step(model_, i, x, table_.gamma.row(i).transpose(), cfg_);
    CountUpdate cu = update_soft_counts(model_.soft_counts, rec.delta, count_floor(model_.dim));
    if (cu.clamped) ++count_clamps_;
    model_.soft_counts = std::move(cu.counts);
    m_online_step(model_, x, rec, data_->n(), cfg_.mode, stats_);
    table_.gamma.row(i) = rec.new_gamma.transpose();
    acc_.replace(i, rec.new_gamma);
    return rec;
  }

  // One shuffled pass, then the end-of-sweep pruning check and drift check.
  void sweep() {
    ++sweeps_;
    for (Eigen::Index i : detail::shuffled_order(data_->n(), order_rng_)) {
      detail::located(sweeps_, i, [&] { step(i); });
    }
    detail::located(sweeps_, -1, [&] {
      prune_if_needed();
      check_drift();
    });
  }

  double fic() const { return acc_.value(model_, stats_, cfg_.d_component, data_->n()); }
  // Bound recomputed from scratch at the current state.
  double recomputed_fic() const { return fic_lower_bound(model_, *data_, table_, cfg_); }
  double last_drift() const { return last_drift_; }

  const MixtureModel& model() const { return model_; }
  const ResponsibilityTable& table() const { return table_; }
  const SufficientStats& stats() const { return stats_; }
  const OnlineFicAccumulator& accumulator() const { return acc_; }
  const FabConfig& config() const { return cfg_; }
  int count_clamps() const { return count_clamps_; }
  int auto_resyncs() const { return auto_resyncs_; }
  int prune_events() const { return prune_events_; }
  int sweeps() const { return sweeps_; }

 private:
  void prune_if_needed() {
    PruneResult pr = prune_components(model_, table_, cfg_);
    if (pr.pruned.empty()) return;
    ++prune_events_;
    table_ = std::move(pr.table);
    if (cfg_.mode == CovarianceMode::exact_stats) {
      model_ = batch_m_step(*data_, table_);
    } else {
      model_ = std::move(pr.model);
    }
    stats_ = SufficientStats::from_table(*data_, table_);
    acc_.sync(table_);
  }

  void check_drift() {
    const double exact = recomputed_fic();
    last_drift_ = std::abs(fic() - exact) / std::abs(exact);
    if (last_drift_ >= kFicDriftTolerance) {
      ++auto_resyncs_;
      acc_.sync(table_);
    }
  }

  const Dataset* data_;
  FabConfig cfg_;
  Rng order_rng_;
  MixtureModel model_;
  ResponsibilityTable table_;
  SufficientStats stats_;
  OnlineFicAccumulator acc_;
  int count_clamps_ = 0;
  int auto_resyncs_ = 0;
  int prune_events_ = 0;
  int sweeps_ = 0;
  double last_drift_ = 0.0;
};

// Online FAB driver. Trace rows follow fit_incremental_em: row 0 scores
// `init`, row 1 the initialization pass, each later row one sweep.
inline FitResult fit_fab_online(const Dataset& data, const MixtureModel& init, const FabConfig& cfg,
                                std::uint64_t order_seed) {
  check_dims(init, data, "fit_fab_online");
  cfg.validate(init.size());
  Stopwatch clock;
  FitResult result;
  {
    const ResponsibilityTable q0 = batch_e_step(init, data);
    result.trace.append(fic_lower_bound(init, data, q0, cfg), log_likelihood(init, data),
                        static_cast<int>(init.size()), clock.elapsed_ms());
  }
  OnlineFab learner(data, init, cfg, order_seed);
  const auto record = [&] {
    result.trace.append(learner.fic(), log_likelihood(learner.model(), data),
                        static_cast<int>(learner.model().size()), clock.elapsed_ms());
    return result.trace.last_relative_change() < cfg.tol;
  };
  bool done = record();
  for (int t = 2; t <= cfg.max_iters && !done; ++t) {
    learner.sweep();
    result.max_fic_drift = std::max(result.max_fic_drift, learner.last_drift());
    done = record();
  }
  result.converged = done;
  result.model = learner.model();
  result.count_clamps = learner.count_clamps();
  result.auto_resyncs = learner.auto_resyncs();
  result.prune_events = learner.prune_events();
  result.state = std::make_shared<const LearnerState>(learner.state());
  return result;
}

}  // namespace fabmix
