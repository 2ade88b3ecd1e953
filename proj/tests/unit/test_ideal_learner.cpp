#include <cmath>

#include <gtest/gtest.h>

#include "hmmac/env_hmm.hpp"
#include "hmmac/errors.hpp"
#include "hmmac/ideal_learner.hpp"

using namespace hmmac;

namespace {

TaskParams make(double p1, double p2, double r1, double r2) {
  TaskParams t;
  t.p1 = p1;
  t.p2 = p2;
  t.r1 = r1;
  t.r2 = r2;
  return t;
}

std::vector<std::uint8_t> alternating(std::size_t n, std::uint8_t first = 0) {
  std::vector<std::uint8_t> v(n);
  for (std::size_t i = 0; i < n; ++i) v[i] = (first + i) % 2;
  return v;
}

}  // namespace

TEST(IlInit, UniformWeightsAndSymmetricPrior) {
  IdealLearner f({1000, 0.25, 0.5}, 3);
  EXPECT_NEAR(f.ess(), 1000.0, 1e-9);
  EXPECT_NEAR(f.weight_sum(), 1.0, 1e-12);
  for (std::size_t i = 0; i < 10; ++i) {
    EXPECT_DOUBLE_EQ(f.switch_mean(i, 0), 0.5);
    EXPECT_DOUBLE_EQ(f.emission_mean(i, 1), 0.5);
  }
  EXPECT_DOUBLE_EQ(f.predict(), 0.5);
}

TEST(IlInit, Deterministic) {
  IdealLearner a({500, 0.25, 0.5}, 77), b({500, 0.25, 0.5}, 77);
  for (std::size_t i = 0; i < 500; ++i) EXPECT_EQ(a.particles()[i].state, b.particles()[i].state);
}

TEST(IlInit, RejectsBadConfig) {
  EXPECT_THROW(IdealLearner({1, 0.25, 0.5}, 1), ArgumentError);
  EXPECT_THROW(IdealLearner({10, 0.0, 0.5}, 1), DomainError);
}

TEST(IlUpdate, WeightAndEssInvariants) {
  IdealLearner f({300, 0.25, 0.5}, 9);
  const auto traj = sample_trajectory(make(0.1, 0.3, 0.9, 0.2), 60, 4);
  for (auto o : traj.observations) {
    f.update(o);
    EXPECT_NEAR(f.weight_sum(), 1.0, 1e-9);
    EXPECT_GE(f.ess(), 1.0);
    EXPECT_LE(f.ess(), 300.0 + 1e-9);
    EXPECT_GT(f.predict(), 0.0);
    EXPECT_LT(f.predict(), 1.0);
  }
}

TEST(IlPredict, ConstantOnesStream) {
  IdealLearner f({2000, 0.25, 0.5}, 1);
  std::vector<std::uint8_t> ones(30, 1);
  for (auto o : ones) f.update(o);
  const double oracle = exact_predictive(21, ones);
  EXPECT_GT(oracle, 0.9);
  EXPECT_GT(f.predict(), 0.9);
  EXPECT_NEAR(f.predict(), oracle, 0.02);
}

TEST(IlPredict, LocksOntoAlternation) {
  IdealLearner f({2000, 0.25, 0.5}, 2);
  const auto seq = alternating(20);
  for (auto o : seq) f.update(o);
  // next bit is 0
  EXPECT_LT(f.predict(), 0.1);
  EXPECT_NEAR(f.predict(), exact_predictive(21, seq), 0.03);
}

TEST(IlPredict, EmissionFlipIdentity) {
  const auto traj = sample_trajectory(make(0.2, 0.4, 0.8, 0.3), 50, 12);
  IdealLearner a({500, 0.25, 0.5}, 31), b({500, 0.25, 0.5}, 31);
  for (auto o : traj.observations) {
    EXPECT_NEAR(a.predict(), 1.0 - b.predict(), 1e-12);
    a.update(o);
    b.update(1 - o);
  }
  EXPECT_EQ(a.resample_count(), b.resample_count());
}

TEST(IlAct, FrequencyMatchesPredictive) {
  IdealLearner f({100, 0.25, 0.5}, 1);
  Rng rng(15);
  int ones = 0;
  for (int i = 0; i < 10000; ++i) ones += f.act(rng);
  EXPECT_NEAR(ones / 10000.0, 0.5, 0.01);

  IdealLearner g({500, 0.25, 0.5}, 1);
  for (int i = 0; i < 40; ++i) g.update(1);
  Rng rng2(6);
  int ones2 = 0;
  for (int i = 0; i < 10000; ++i) ones2 += g.act(rng2);
  EXPECT_NEAR(ones2 / 10000.0, g.predict(), 0.01);
}

TEST(IlAccuracy, FairCoinIsHalf) {
  const auto est = il_accuracy(make(0.3, 0.6, 0.5, 0.5), 50, 400, 8, {300, 0.25, 0.5});
  EXPECT_NEAR(est.mean, 0.5, 2.5 * est.se);
}

TEST(IlAccuracy, DeterministicAlternation) {
  const auto est = il_accuracy(make(1, 1, 0, 1), 50, 100, 8, {1000, 0.25, 0.5});
  EXPECT_GT(est.mean, 0.85);
}

TEST(IlAccuracy, ConstantStreamApproachesOne) {
  const auto short_run = il_accuracy(make(0, 0, 1, 1), 20, 50, 1, {300, 0.25, 0.5});
  const auto long_run = il_accuracy(make(0, 0, 1, 1), 200, 50, 1, {300, 0.25, 0.5});
  EXPECT_GT(long_run.mean, short_run.mean);
  EXPECT_GT(long_run.mean, 0.97);
}

TEST(IlAccuracy, StateSwapInvariant) {
  const auto m = make(0.05, 0.3, 0.9, 0.15);
  const FilterConfig cfg{300, 0.25, 0.5};
  const auto a = il_accuracy(m, 50, 600, 101, cfg);
  const auto b = il_accuracy(apply_symmetry(Symmetry::kStateSwap, m), 50, 600, 201, cfg);
  EXPECT_NEAR(a.mean, b.mean, 2.0 * std::hypot(a.se, b.se));
}

TEST(ExactPredictive, Examples) {
  EXPECT_NEAR(exact_predictive(15, std::vector<std::uint8_t>{}), 0.5, 1e-12);
  const auto alt = alternating(8);
  EXPECT_GT(1.0 - exact_predictive(21, alt), 0.8);
}

TEST(ExactPredictive, GridRefinementIsSelfConsistent) {
  const auto traj = sample_trajectory(make(0.15, 0.3, 0.85, 0.2), 30, 5);
  const ExactBayesOracle coarse(21), fine(42);
  const auto a = coarse.predictive_path(traj.observations);
  const auto b = fine.predictive_path(traj.observations);
  for (std::size_t t = 0; t < a.size(); ++t) EXPECT_NEAR(a[t], b[t], 0.01) << "t=" << t;
}

TEST(ExactPredictive, PriorMassSumsToOne) {
  const ExactBayesOracle o(21);
  double total = 0;
  for (double m : o.axis_masses()) total += m;
  EXPECT_NEAR(total, 1.0, 1e-12);
  // alpha < 1 puts the most mass on the edge cells
  EXPECT_GT(o.axis_masses()[0], o.axis_masses()[10]);
}

TEST(ExactPredictive, Guards) {
  EXPECT_THROW(ExactBayesOracle(52), ResourceLimitError);
  std::vector<std::uint8_t> too_long(61, 1);
  EXPECT_THROW(exact_predictive(5, too_long), ArgumentError);
}

TEST(ExactPredictive, FilterTracksOracle) {
  // Reduced-size version of the acceptance check: 5 environments, N = 2000.
  Rng rng(100);
  double total = 0;
  const ExactBayesOracle oracle(21);
  for (int e = 0; e < 5; ++e) {
    const auto m = make(rng.uniform(), rng.uniform(), rng.uniform(), rng.uniform());
    const auto traj = sample_trajectory(m, 50, 1000 + e);
    const auto path = oracle.predictive_path(traj.observations);
    IdealLearner f({2000, 0.25, 0.5}, 2000 + e);
    double dev = 0;
    for (std::size_t t = 0; t < 50; ++t) {
      dev += std::abs(f.predict() - path[t]);
      f.update(traj.observations[t]);
    }
    total += dev / 50;
  }
  EXPECT_LT(total / 5, 0.02);
}
