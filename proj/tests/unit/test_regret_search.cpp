#include <gtest/gtest.h>

#include <cmath>

#include "hmmac/errors.hpp"
#include "hmmac/regret_search.hpp"

using namespace hmmac;

namespace {

RolloutSettings small_filter() {
  RolloutSettings s;
  s.filter.n_particles = 300;
  return s;
}

// Predicts a repeat of the previous outcome with probability ~0.95.
GruWeights persistence_network() {
  auto w = GruWeights::zeros();
  w.block(GruBlock::kBiasUpdate)[0] = 20.0;
  w.block(GruBlock::kInputCandidate)[1] = 4.0;
  w.block(GruBlock::kBiasCandidate)[0] = -2.0;
  w.block(GruBlock::kReadout)[0] = 3.0;
  return w;
}

}  // namespace

TEST(RegretSearch, FairCoinRegretIsNoise) {
  const TaskParams fair{0.3, 0.6, 0.5, 0.5};
  for (std::uint64_t seed : {1u, 2u}) {
    for (const auto& w : {GruWeights::zeros(), GruWeights::random(seed + 10)}) {
      const auto est = estimate_regret(w, fair, 400, seed, small_filter());
      EXPECT_LT(std::abs(est.regret), 2.0 * est.regret_se + 1e-12);
      EXPECT_DOUBLE_EQ(est.regret, est.j_il.mean - est.j_pi.mean);
    }
  }
}

TEST(RegretSearch, AlternationAgainstZeroNetwork) {
  const TaskParams alt{1.0, 1.0, 0.0, 1.0};
  const auto est = estimate_regret(GruWeights::zeros(), alt, 500, 3, small_filter());
  EXPECT_GT(est.regret, 0.3);
  EXPECT_GE(est.j_il.se, 0.0);
  EXPECT_GE(est.j_pi.se, 0.0);
}

TEST(RegretSearch, IdealTermMatchesIlAccuracy) {
  const TaskParams task{0.2, 0.1, 0.3, 0.9};
  const auto s = small_filter();
  const auto est = estimate_regret(GruWeights::random(4), task, 50, 77, s);
  const auto il = il_accuracy(task, s.horizon, 50, 77, s.filter);
  EXPECT_EQ(est.j_il.mean, il.mean);
  const auto pi = evaluate_accuracy(GruWeights::random(4), task, s.horizon, 50, 77);
  EXPECT_EQ(est.j_pi.mean, pi.mean);
}

TEST(RegretSearch, CommonRandomNumbersReduceVariance) {
  Rng rng(12);
  const auto w = persistence_network();
  double paired = 0.0, independent = 0.0;
  for (int i = 0; i < 10; ++i) {
    const TaskParams task{rng.uniform(), rng.uniform(), rng.uniform(), rng.uniform()};
    const auto est = estimate_regret(w, task, 100, 100 + i, small_filter());
    paired += est.regret_se * est.regret_se;
    independent += est.j_il.se * est.j_il.se + est.j_pi.se * est.j_pi.se;
  }
  EXPECT_LE(paired, independent);
}

TEST(RegretSearch, SearchIsDeterministicAndNoWorseThanScan) {
  SearchConfig cfg;
  cfg.n_scan_points = 16;
  cfg.n_rollouts_scan = 40;
  cfg.n_refine_candidates = 2;
  cfg.n_rollouts_refine = 60;
  cfg.refine_iterations = 4;
  cfg.n_rollouts_final = 200;
  cfg.seed = 9;
  const auto w = GruWeights::zeros();
  const auto a = maximize_regret(w, cfg, small_filter());
  const auto b = maximize_regret(w, cfg, small_filter());
  EXPECT_EQ(a.task, b.task);
  EXPECT_EQ(a.estimate.regret, b.estimate.regret);
  ASSERT_EQ(a.report.scanned.size(), 16u);
  ASSERT_LE(a.report.refinements.size(), 2u);
  double best_scan = -1.0, best_se = 0.0;
  for (const auto& p : a.report.scanned) {
    if (p.regret > best_scan) {
      best_scan = p.regret;
      best_se = p.regret_se;
    }
    for (double v : p.task.as_vector()) {
      EXPECT_GE(v, 0.0);
      EXPECT_LE(v, 1.0);
    }
  }
  EXPECT_GE(a.estimate.regret, best_scan - 2.0 * std::hypot(best_se, a.estimate.regret_se));
  const nlohmann::json j = a.report;
  EXPECT_TRUE(j.contains("scanned"));
  EXPECT_TRUE(j.contains("refinements"));
  EXPECT_EQ(j["selection"]["task"], nlohmann::json(a.task));
}

TEST(RegretSearch, DedupeCollapsesOrbitEquivalentStarts) {
  SearchConfig cfg;
  cfg.n_scan_points = 32;
  cfg.n_rollouts_scan = 20;
  cfg.n_refine_candidates = 4;
  cfg.n_rollouts_refine = 20;
  cfg.refine_iterations = 0;
  cfg.n_rollouts_final = 20;
  cfg.dedupe_distance = 0.6;
  const auto res = maximize_regret(GruWeights::random(2), cfg, small_filter());
  const auto& r = res.report.refinements;
  for (std::size_t i = 0; i < r.size(); ++i)
    for (std::size_t k = i + 1; k < r.size(); ++k) EXPECT_GE(sym_distance(r[i].start, r[k].start), 0.6);
}

TEST(RegretSearch, LandscapeShapeAndGuard) {
  RolloutSettings s;
  s.filter.n_particles = 100;
  s.horizon = 20;
  const auto rows = regret_landscape(GruWeights::zeros(), 3, 20, 1, s);
  ASSERT_EQ(rows.size(), 81u);
  for (const auto& row : rows) {
    EXPECT_DOUBLE_EQ(row.ambiguity, ambiguity(row.task));
    if (row.task.r1 == 0.5 && row.task.r2 == 0.5) {
      EXPECT_LT(std::abs(row.regret), 2.0 * row.regret_se + 0.02);
    }
  }
  EXPECT_THROW(regret_landscape(GruWeights::zeros(), 12, 10, 1), ResourceLimitError);
}

TEST(RegretSearch, ConfigValidation) {
  SearchConfig cfg;
  cfg.n_rollouts_scan = 0;
  EXPECT_THROW(cfg.validate(), ConfigError);
  SearchConfig ok;
  const nlohmann::json j = ok;
  EXPECT_EQ(nlohmann::json(j.get<SearchConfig>()), j);
}
