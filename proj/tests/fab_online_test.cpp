#include <cmath>

#include <gtest/gtest.h>

#include "fabmix/fab_online.hpp"
#include "fixtures.hpp"
#include "oracles.hpp"

using namespace fabmix;

TEST(VOnlineStep, ZeroParameterCountMatchesIncrementalEStep) {
  Rng rng(1);
  const Dataset data = fixtures::random_dataset(rng, 20, 2);
  const MixtureModel m = fixtures::random_model(rng, 4, 2, 20);
  FabConfig cfg;
  cfg.d_component = 0.0;
  const Vector old = Vector::Constant(4, 0.25);
  const auto a = v_online_step(m, 3, data.row(3), old, cfg);
  const auto b = e_incremental_step(m, 3, data.row(3), old);
  EXPECT_TRUE(a.new_gamma.isApprox(b.new_gamma, 1e-15));
  EXPECT_NEAR(a.delta.sum(), 0.0, 1e-15);
}

TEST(VOnlineStep, MatchesSingleRowShrunkOracle) {
  const auto ld = fixtures::desk_data(1, 200);
  GeneratorSpec spec;
  spec.dim = 2;
  spec.n = 200;
  spec.seed = 1;
  const MixtureModel truth = sample_ground_truth(spec);
  const FabConfig cfg = FabConfig::for_dim(2);
  const Vector x = ld.data.row(17);
  const auto rec = v_online_step(truth, 17, x, Vector::Constant(4, 0.25), cfg);
  Vector r(4);
  for (int c = 0; c < 4; ++c) {
    const auto& comp = truth.components[c];
    r[c] = comp.weight * oracle::pdf(x, comp.mean, comp.cov.entries()) *
           std::exp(-cfg.d_component / (2.0 * truth.soft_counts[c]));
  }
  r /= r.sum();
  EXPECT_LT((rec.new_gamma - r).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(OnlineFicAccumulator, SyncedValueEqualsBatchBound) {
  const auto ld = fixtures::desk_data(2, 500);
  OnlineFab fab(ld.data, initialize_from_data(ld.data, 6, 3), FabConfig::for_dim(2), 5);
  const double exact = fab.recomputed_fic();
  EXPECT_LT(std::abs(fab.fic() - exact) / std::abs(exact), 1e-10);
}

TEST(OnlineFicAccumulator, ReplacingWithSameRowIsIdempotent) {
  const auto ld = fixtures::desk_data(2, 300);
  OnlineFab fab(ld.data, initialize_from_data(ld.data, 4, 3), FabConfig::for_dim(2), 5);
  OnlineFicAccumulator acc = fab.accumulator();
  const Vector row = fab.table().gamma.row(10).transpose();
  acc.replace(10, row);
  const double first = acc.value(fab.model(), fab.stats(), fab.config().d_component, 300);
  acc.replace(10, row);
  const double second = acc.value(fab.model(), fab.stats(), fab.config().d_component, 300);
  EXPECT_LT(std::abs(second - first), 1e-12);
}

TEST(OnlineFab, SingleComponentStreamIsLlMinusPenalty) {
  Rng rng(14);
  const Dataset data = fixtures::random_dataset(rng, 120, 3);
  const FabConfig cfg = FabConfig::for_dim(3);
  OnlineFab fab(data, initialize_from_data(data, 1, 1), cfg, 2);
  for (Eigen::Index i = 0; i < data.n(); ++i) {
    fab.step(i);
    const double expect = oracle::single_component_fic(oracle::log_likelihood(fab.model(), data), 3, 120);
    ASSERT_NEAR(fab.fic(), expect, 1e-8 * std::abs(expect)) << "datum " << i;
  }
}

TEST(OnlineFab, ExactStatsTracksBatchMStepOverLiveTable) {
  const auto ld = fixtures::desk_data(3, 150);
  FabConfig cfg = FabConfig::for_dim(2);
  cfg.prune_threshold = 0.0;
  OnlineFab fab(ld.data, initialize_from_data(ld.data, 4, 2), cfg, 8);
  for (Eigen::Index i = 0; i < ld.data.n(); ++i) {
    fab.step((i * 11) % ld.data.n());
    const auto ref = oracle::m_step(ld.data, fab.table().gamma);
    for (int k = 0; k < fab.model().size(); ++k) {
      const auto& c = fab.model().components[k];
      ASSERT_NEAR(c.weight, ref.weight[k], 1e-9);
      ASSERT_LT((c.mean - ref.mean[k]).cwiseAbs().maxCoeff(), 1e-6);
      ASSERT_LT((c.cov.entries() - ref.cov[k]).cwiseAbs().maxCoeff(), 1e-6);
    }
  }
}

TEST(OnlineFab, WeightsStayNormalizedOverLongStreams) {
  for (auto mode : {CovarianceMode::exact_stats, CovarianceMode::paper_faithful}) {
    const auto ld = fixtures::desk_data(4, 250);
    FabConfig cfg = FabConfig::for_dim(2);
    cfg.mode = mode;
    OnlineFab fab(ld.data, initialize_from_data(ld.data, 5, 2), cfg, 1);
    Rng pick(77);
    for (int step = 0; step < 1000; ++step) {
      fab.step(static_cast<Eigen::Index>(pick.uniform_index(250)));
      ASSERT_NEAR(fab.model().weights().sum(), 1.0, 1e-9);
      ASSERT_NEAR(fab.model().soft_counts.sum(), 250.0, 1e-6);
    }
  }
}

TEST(FitFabOnline, WithoutPenaltyOrPruningFollowsIncrementalEm) {
  const auto ld = fixtures::desk_data(5, 300);
  const MixtureModel init = initialize_from_data(ld.data, 4, 6);
  FabConfig cfg;
  cfg.d_component = 0.0;
  cfg.prune_threshold = 0.0;
  cfg.tol = 0.0;
  cfg.max_iters = 8;
  const FitResult fab = fit_fab_online(ld.data, init, cfg, 11);
  const FitResult em = fit_incremental_em(ld.data, init, CovarianceMode::exact_stats, 0.0, 8, 11);
  ASSERT_EQ(fab.trace.size(), em.trace.size());
  for (std::size_t t = 0; t < em.trace.size(); ++t) {
    EXPECT_NEAR(fab.trace.rows[t].loglik, em.trace.rows[t].loglik, 1e-9 * std::abs(em.trace.rows[t].loglik));
  }
}

TEST(FitFabOnline, InitPassEqualsFirstBatchIteration) {
  const auto ld = fixtures::desk_data(6, 800);
  const MixtureModel init = initialize_from_data(ld.data, 8, 2);
  FabConfig cfg = FabConfig::for_dim(2);
  cfg.max_iters = 1;
  const FitResult batch = fit_fab_batch(ld.data, init, cfg);
  const FitResult online = fit_fab_online(ld.data, init, cfg, 3);
  ASSERT_EQ(online.trace.size(), 2u);
  EXPECT_EQ(online.trace.rows[0].fic, batch.trace.rows[0].fic);
  EXPECT_NEAR(online.trace.rows[1].fic, batch.trace.rows[1].fic, 1e-9 * std::abs(batch.trace.rows[1].fic));
  EXPECT_EQ(online.trace.rows[1].n_components, batch.trace.rows[1].n_components);
}

TEST(FitFabOnline, DriftStaysBelowToleranceAndComponentsNeverGrow) {
  const auto ld = fixtures::desk_data(8, 1000);
  FabConfig cfg = FabConfig::for_dim(2);
  OnlineFab fab(ld.data, initialize_from_data(ld.data, 8, 1), cfg, 4);
  Eigen::Index prev = fab.model().size();
  for (int s = 0; s < 15; ++s) {
    fab.sweep();
    EXPECT_LT(fab.last_drift(), kFicDriftTolerance);
    EXPECT_LE(fab.model().size(), prev);
    prev = fab.model().size();
    for (Eigen::Index i = 0; i < ld.data.n(); ++i) ASSERT_NEAR(fab.table().gamma.row(i).sum(), 1.0, 1e-9);
  }
  EXPECT_EQ(fab.auto_resyncs(), 0);
}

TEST(OnlineFab, ResumeFromStateIsExact) {
  const auto ld = fixtures::desk_data(9, 400);
  OnlineFab a(ld.data, initialize_from_data(ld.data, 6, 1), FabConfig::for_dim(2), 21);
  a.sweep();
  OnlineFab b(ld.data, a.state(), FabConfig::for_dim(2));
  for (int s = 0; s < 2; ++s) {
    a.sweep();
    b.sweep();
  }
  EXPECT_EQ(a.fic(), b.fic());
  EXPECT_TRUE(a.table().gamma == b.table().gamma);
}
