#include <cmath>

#include <gtest/gtest.h>

#include "fabmix/incremental_em.hpp"
#include "fixtures.hpp"
#include "oracles.hpp"

using namespace fabmix;

TEST(EIncrementalStep, DeltaSumsToZeroAndRowMatchesOracle) {
  Rng rng(1);
  const Dataset data = fixtures::random_dataset(rng, 20, 2);
  const MixtureModel m = fixtures::random_model(rng, 3, 2, 20);
  const Vector old = Vector::Constant(3, 1.0 / 3.0);
  const auto rec = e_incremental_step(m, 4, data.row(4), old);
  EXPECT_NEAR(rec.delta.sum(), 0.0, 1e-15);
  EXPECT_TRUE(rec.new_gamma.isApprox(oracle::responsibilities(m, data.row(4)), 1e-10));
  EXPECT_EQ(rec.datum, 4);
}

TEST(EIncrementalStep, SizeMismatchThrows) {
  Rng rng(1);
  const MixtureModel m = fixtures::random_model(rng, 3, 2, 20);
  EXPECT_THROW(e_incremental_step(m, 0, Vector::Zero(2), Vector::Zero(2)), DimensionError);
}

TEST(UpdateSoftCounts, ClampsAtFloor) {
  Vector c(2), d(2);
  c << 1.0, 2.0;
  d << -2.0, 2.0;
  const auto u = update_soft_counts(c, d, 1e-6);
  EXPECT_TRUE(u.clamped);
  EXPECT_EQ(u.counts[0], 1e-6);
  EXPECT_EQ(u.counts[1], 4.0);
}

TEST(IncrementalMStep, ZeroDeltaLeavesModelUnchanged) {
  for (auto mode : {CovarianceMode::exact_stats, CovarianceMode::paper_faithful}) {
    Rng rng(6);
    const Dataset data = fixtures::random_dataset(rng, 30, 2);
    IncrementalEm em(data, initialize_from_data(data, 3, 5), mode, 1);
    MixtureModel m = em.model();
    SufficientStats st = em.stats();
    ChangeRecord rec{0, Vector::Zero(3), em.table().gamma.row(0).transpose()};
    incremental_m_step(m, data.row(0), rec, data.n(), mode, st);
    for (int k = 0; k < 3; ++k) {
      EXPECT_EQ(m.components[k].weight, em.model().components[k].weight);
      EXPECT_TRUE(m.components[k].mean == em.model().components[k].mean);
      EXPECT_TRUE(m.components[k].cov.entries() == em.model().components[k].cov.entries());
    }
  }
}

TEST(IncrementalMStep, PaperFaithfulSingleStepMatchesHandComputation) {
  // One component gains s = 0.25 of a datum at x; N_k after update is 5.
  MixtureModel m;
  m.dim = 1;
  m.components = {{0.5, Vector::Constant(1, 1.0), repair_covariance(Matrix::Constant(1, 1, 2.0))},
                  {0.5, Vector::Constant(1, -1.0), repair_covariance(Matrix::Constant(1, 1, 1.0))}};
  m.soft_counts = Vector(2);
  m.soft_counts << 5.0, 5.0;
  SufficientStats st{Vector::Constant(2, 5.0), Matrix::Zero(2, 1), {Matrix::Zero(1, 1), Matrix::Zero(1, 1)}};
  ChangeRecord rec;
  rec.delta = Vector(2);
  rec.delta << 0.25, -0.25;
  rec.new_gamma = Vector::Constant(2, 0.5);
  const Vector x = Vector::Constant(1, 3.0);
  incremental_m_step(m, x, rec, 10, CovarianceMode::paper_faithful, st);
  // r = 0.05, mean 1 + 0.05 * 2, var 0.95 * (2 + 0.05 * 4)
  EXPECT_DOUBLE_EQ(m.components[0].weight, 0.525);
  EXPECT_DOUBLE_EQ(m.components[0].mean[0], 1.1);
  EXPECT_NEAR(m.components[0].cov.entries()(0, 0), 0.95 * 2.2, 1e-15);
  // r = -0.05, mean -1 - 0.05 * 4, var 1.05 * (1 - 0.05 * 16)
  EXPECT_DOUBLE_EQ(m.components[1].weight, 0.475);
  EXPECT_NEAR(m.components[1].mean[0], -1.2, 1e-15);
  EXPECT_NEAR(m.components[1].cov.entries()(0, 0), 1.05 * 0.2, 1e-15);
}

TEST(IncrementalEm, ExactStatsTracksBatchMStepEveryStep) {
  Rng rng(17);
  const Dataset data = fixtures::random_dataset(rng, 90, 2);
  IncrementalEm em(data, initialize_from_data(data, 3, 2), CovarianceMode::exact_stats, 9);
  for (int sweep = 0; sweep < 2; ++sweep) {
    for (Eigen::Index i = 0; i < data.n(); ++i) {
      em.step((i * 7) % data.n());
      const auto ref = oracle::m_step(data, em.table().gamma);
      for (int k = 0; k < 3; ++k) {
        const auto& c = em.model().components[k];
        ASSERT_NEAR(c.weight, ref.weight[k], 1e-9);
        ASSERT_TRUE((c.mean - ref.mean[k]).cwiseAbs().maxCoeff() < 1e-6);
        ASSERT_TRUE((c.cov.entries() - ref.cov[k]).cwiseAbs().maxCoeff() < 1e-6);
      }
    }
  }
}

TEST(IncrementalEm, InvariantsHoldInBothModes) {
  for (auto mode : {CovarianceMode::exact_stats, CovarianceMode::paper_faithful}) {
    const auto ld = fixtures::desk_data(4, 300);
    IncrementalEm em(ld.data, initialize_from_data(ld.data, 5, 3), mode, 4);
    for (int s = 0; s < 3; ++s) {
      em.sweep();
      EXPECT_NEAR(em.model().weights().sum(), 1.0, 1e-9);
      EXPECT_NEAR(em.model().soft_counts.sum(), 300.0, 1e-6);
      EXPECT_TRUE(em.model().soft_counts.isApprox(em.table().column_sums(), 1e-9));
      for (Eigen::Index i = 0; i < 300; ++i) EXPECT_NEAR(em.table().gamma.row(i).sum(), 1.0, 1e-9);
    }
  }
}

TEST(FitIncrementalEm, FirstRowsMatchBatchEmAndLlRises) {
  const auto ld = fixtures::desk_data(5, 400);
  const MixtureModel init = initialize_from_data(ld.data, 4, 1);
  const FitResult online = fit_incremental_em(ld.data, init, CovarianceMode::exact_stats, 1e-8, 200, 3);
  const FitResult batch = fit_batch_em(ld.data, init, 1e-8, 1);
  ASSERT_GE(online.trace.size(), 2u);
  EXPECT_EQ(online.trace.rows[0].fic, batch.trace.rows[0].fic);
  EXPECT_EQ(online.trace.rows[1].fic, batch.trace.rows[1].fic);
  EXPECT_GT(online.trace.back().loglik, online.trace.rows[1].loglik);
  EXPECT_TRUE(online.converged);
  ASSERT_TRUE(online.state);
  EXPECT_EQ(online.state->sweeps, static_cast<int>(online.trace.size()) - 2);
}

TEST(IncrementalEm, ResumeFromStateIsExact) {
  const auto ld = fixtures::desk_data(6, 200);
  const MixtureModel init = initialize_from_data(ld.data, 3, 1);
  IncrementalEm a(ld.data, init, CovarianceMode::exact_stats, 42);
  a.sweep();
  IncrementalEm b(ld.data, a.state(), CovarianceMode::exact_stats);
  a.sweep();
  b.sweep();
  for (int k = 0; k < 3; ++k) {
    EXPECT_EQ(a.model().components[k].weight, b.model().components[k].weight);
    EXPECT_TRUE(a.model().components[k].cov.entries() == b.model().components[k].cov.entries());
  }
  EXPECT_TRUE(a.table().gamma == b.table().gamma);
}

TEST(CovarianceModeNames, RoundTrip) {
  EXPECT_EQ(parse_covariance_mode("paper-faithful"), CovarianceMode::paper_faithful);
  EXPECT_EQ(parse_covariance_mode("exact_stats"), CovarianceMode::exact_stats);
  EXPECT_EQ(to_string(CovarianceMode::exact_stats), "exact-stats");
  EXPECT_THROW(parse_covariance_mode("fast"), Error);
}

TEST(CovarianceModes, SameRecordGivesSameWeightsAndMeans) {
  Rng rng(23);
  const Dataset data = fixtures::random_dataset(rng, 80, 3);
  IncrementalEm em(data, initialize_from_data(data, 4, 1), CovarianceMode::exact_stats, 2);
  for (int trial = 0; trial < 40; ++trial) {
    const auto i = static_cast<Eigen::Index>(rng.uniform_index(80));
    MixtureModel exact = em.model();
    MixtureModel paper = em.model();
    SufficientStats se = em.stats();
    SufficientStats sp = em.stats();
    const ChangeRecord rec = e_incremental_step(em.model(), i, data.row(i), em.table().gamma.row(i).transpose());
    const Vector counts = update_soft_counts(em.model().soft_counts, rec.delta, count_floor(3)).counts;
    exact.soft_counts = paper.soft_counts = counts;
    incremental_m_step(exact, data.row(i), rec, 80, CovarianceMode::exact_stats, se);
    incremental_m_step(paper, data.row(i), rec, 80, CovarianceMode::paper_faithful, sp);
    for (int k = 0; k < 4; ++k) {
      EXPECT_NEAR(exact.components[k].weight, paper.components[k].weight, 1e-9);
      EXPECT_LT((exact.components[k].mean - paper.components[k].mean).cwiseAbs().maxCoeff(), 1e-9);
    }
    em.step(i);
  }
}

TEST(CovarianceModes, BothConvergeToSimilarLikelihood) {
  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    const auto ld = fixtures::desk_data(seed, 1000);
    const MixtureModel init = initialize_from_data(ld.data, 4, derive_seed(seed, 2));
    const FitResult a = fit_incremental_em(ld.data, init, CovarianceMode::exact_stats, 1e-7, 300, 5);
    const FitResult b = fit_incremental_em(ld.data, init, CovarianceMode::paper_faithful, 1e-7, 300, 5);
    const double la = a.trace.back().loglik, lb = b.trace.back().loglik;
    EXPECT_LT(std::abs(la - lb) / std::abs(la), 0.02) << "seed " << seed;
  }
}
