#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "hmmac/agents.hpp"
#include "hmmac/analysis.hpp"
#include "hmmac/errors.hpp"

using namespace hmmac;

namespace {

GruWeights constant_bias(double p) {
  auto w = GruWeights::zeros();
  w.block(GruBlock::kReadoutBias)[0] = std::log(p / (1.0 - p));
  return w;
}

Dataset single_session(const std::vector<std::uint8_t>& actions, const std::vector<std::uint8_t>& outcomes,
                       const std::string& id = "s") {
  SessionRecord s;
  s.session_id = id;
  for (std::size_t t = 0; t < actions.size(); ++t) {
    s.trials.push_back({static_cast<int>(t + 1), actions[t], outcomes[t], actions[t] == outcomes[t], std::nullopt});
  }
  Dataset d;
  d.sessions.push_back(s);
  return d;
}

// Logit is an exact linear function of the Q features.
class LinearPolicy final : public LogitPolicy {
 public:
  LinearPolicy(QFeatureConfig cfg, std::vector<double> beta) : cfg_(cfg), beta_(std::move(beta)), tracker_(cfg) {}
  void reset() override { tracker_ = QFeatureTracker(cfg_); }
  double logit() const override {
    const auto f = tracker_.features();
    double z = beta_[0];
    for (std::size_t k = 0; k < f.size(); ++k) z += beta_[k + 1] * f[k];
    return z;
  }
  void observe(std::uint8_t, std::uint8_t o) override { tracker_.observe(o); }

 private:
  QFeatureConfig cfg_;
  std::vector<double> beta_;
  QFeatureTracker tracker_;
};

}  // namespace

TEST(Deficit, PoolMinimumAttainsZero) {
  const auto a = constant_bias(0.8);
  const auto b = constant_bias(0.5);
  TaskParams task{0.1, 0.1, 0.8, 0.8};
  AgentSpec biased{.kind = AgentKind::kNoisyIdeal, .particles = 50, .lapse = 1.0};
  auto data = simulate_sessions(PopulationSpec::single(biased), task, 20, 30, 3);
  // Replace actions with draws from model a so a generates the data.
  Rng rng(4);
  for (auto& s : data.sessions)
    for (auto& t : s.trials) {
      t.action = rng.bernoulli(0.8) ? 1 : 0;
      t.correct = t.action == t.outcome;
    }
  const std::vector<const GruWeights*> pool{&a, &b};
  EXPECT_DOUBLE_EQ(fit_deficit(a, data, pool), 0.0);
  const auto eps = data.episodes();
  EXPECT_NEAR(fit_deficit(b, data, pool), dataset_nll(b, eps) - dataset_nll(a, eps), 1e-15);
  const auto a2 = a;
  const std::vector<const GruWeights*> twins{&a, &a2};
  EXPECT_DOUBLE_EQ(fit_deficit(a, data, twins), 0.0);
  EXPECT_DOUBLE_EQ(fit_deficit(a2, data, twins), 0.0);
  EXPECT_THROW(fit_deficit(a, data, std::vector<const GruWeights*>{}), ArgumentError);
}

TEST(Deficit, WorstCaseIsMonotoneMax) {
  const auto a = constant_bias(0.8);
  const auto b = constant_bias(0.3);
  const auto d1 = single_session({1, 1, 1, 0}, {1, 0, 1, 1});
  const auto d2 = single_session({0, 0, 0, 0}, {1, 0, 1, 1});
  const std::vector<const GruWeights*> pool{&a, &b};
  const std::vector<const Dataset*> one{&d1};
  const std::vector<const Dataset*> two{&d1, &d2};
  EXPECT_DOUBLE_EQ(worst_case_deficit(a, one, pool), fit_deficit(a, d1, pool));
  EXPECT_GE(worst_case_deficit(a, two, pool), worst_case_deficit(a, one, pool));

  const std::vector<const Dataset*> ds{&d1, &d2};
  NllMatrix m({"a", "b"}, pool, {"d1", "d2"}, ds);
  for (std::size_t d = 0; d < 2; ++d) {
    EXPECT_DOUBLE_EQ(std::min(m.deficit(0, d), m.deficit(1, d)), 0.0);
    EXPECT_NEAR(m.deficit(0, d), fit_deficit(a, *ds[d], pool), 1e-15);
  }
  const std::vector<std::size_t> all{0, 1};
  EXPECT_DOUBLE_EQ(m.worst_case(1, all), worst_case_deficit(b, two, pool));
  EXPECT_NE(m.to_csv().find("model_id,dataset_id,mean_nll,deficit"), std::string::npos);
}

TEST(Trajectories, ModelAndEmpirical) {
  const std::vector<std::uint8_t> obs{1, 0, 1, 1, 0, 0, 1};
  for (double p : model_trajectory(GruWeights::zeros(), obs, 5, 1)) EXPECT_DOUBLE_EQ(p, 0.5);
  for (double p : model_trajectory(constant_bias(0.9), obs, 5, 1)) EXPECT_NEAR(p, 0.9, 1e-12);

  const auto one = single_session({1, 0, 0, 1, 1, 1, 0}, obs);
  const auto traj = empirical_trajectory(one);
  for (std::size_t t = 0; t < obs.size(); ++t) EXPECT_EQ(traj[t], one.sessions[0].trials[t].action);

  auto both = single_session(std::vector<std::uint8_t>(7, 1), obs);
  both.sessions.push_back(single_session(std::vector<std::uint8_t>(7, 0), obs).sessions[0]);
  for (double f : empirical_trajectory(both)) EXPECT_DOUBLE_EQ(f, 0.5);

  auto mixed = both;
  mixed.sessions[1].trials[2].outcome ^= 1;
  EXPECT_THROW(empirical_trajectory(mixed), ArgumentError);
}

TEST(Trajectories, L1Distance) {
  const std::vector<double> ones(10, 1.0), zeros(10, 0.0), half(10, 0.5);
  std::vector<double> alt(10);
  for (int t = 0; t < 10; ++t) alt[t] = t % 2;
  EXPECT_DOUBLE_EQ(l1_trajectory_distance(ones, ones), 0.0);
  EXPECT_DOUBLE_EQ(l1_trajectory_distance(ones, zeros), 1.0);
  EXPECT_DOUBLE_EQ(l1_trajectory_distance(half, alt), 0.5);
  EXPECT_THROW(l1_trajectory_distance(ones, std::vector<double>(3)), ArgumentError);
  Rng rng(5);
  for (int i = 0; i < 200; ++i) {
    std::vector<double> p(8), q(8), r(8);
    for (int t = 0; t < 8; ++t) {
      p[t] = rng.uniform();
      q[t] = rng.uniform();
      r[t] = rng.uniform();
    }
    EXPECT_DOUBLE_EQ(l1_trajectory_distance(p, q), l1_trajectory_distance(q, p));
    EXPECT_LE(l1_trajectory_distance(p, r), l1_trajectory_distance(p, q) + l1_trajectory_distance(q, r) + 1e-15);
  }
}

TEST(QFeatures, GeometricSolutionOnConstantStream) {
  QFeatureConfig cfg{.n = 1, .recency = 0.8, .window = 0, .interactions = false};
  QFeatureTracker tracker(cfg);
  for (int t = 1; t <= 40; ++t) {
    tracker.observe(1);
    const auto f = tracker.features();
    EXPECT_NEAR(f[1], 1.0 - std::pow(0.8, t), 1e-12);
    EXPECT_EQ(f[0], 0.0);
  }
}

TEST(QFeatures, AlternationBigramsAndTelescoping) {
  QFeatureConfig cfg{.n = 2, .recency = 0.7, .window = 0, .interactions = false};
  std::vector<std::uint8_t> alt;
  for (int t = 0; t < 30; ++t) alt.push_back(t % 2);
  const auto f = ngram_q_features(alt, cfg);
  EXPECT_EQ(f[0], 0.0);
  EXPECT_EQ(f[3], 0.0);
  EXPECT_GT(f[1] + f[2], 0.99);

  Rng rng(7);
  for (int n = 1; n <= 3; ++n) {
    QFeatureConfig c{.n = n, .recency = 0.9, .window = 0, .interactions = false};
    QFeatureTracker tr(c);
    for (int t = 1; t <= 50; ++t) {
      tr.observe(rng.bernoulli(0.4) ? 1 : 0);
      const auto q = tr.features();
      const double sum = std::accumulate(q.begin(), q.end(), 0.0);
      const double expected = t >= n ? 1.0 - std::pow(0.9, t - n + 1) : 0.0;
      EXPECT_NEAR(sum, expected, 1e-12);
    }
  }
}

TEST(QFeatures, LayoutWithExtras) {
  QFeatureConfig cfg{.n = 1, .recency = 0.5, .run_length = true, .window = 2, .interactions = true};
  EXPECT_EQ(cfg.size(), 2u + 1u + 2u + 2u);
  const std::vector<std::uint8_t> h{0, 1, 1};
  const auto f = ngram_q_features(h, cfg);
  EXPECT_DOUBLE_EQ(f[2], 2.0);  // run length
  EXPECT_DOUBLE_EQ(f[3], 1.0);  // last outcome
  EXPECT_DOUBLE_EQ(f[4], 1.0);  // one before
  EXPECT_DOUBLE_EQ(f[5], f[0]);
  EXPECT_DOUBLE_EQ(f[6], f[1]);
}

TEST(Distill, RealizableModelGivesUnitR2) {
  QFeatureConfig cfg{.n = 2, .recency = 0.8, .window = 1, .interactions = true};
  std::vector<double> beta(cfg.size() + 1);
  Rng rng(11);
  for (double& b : beta) b = 2.0 * rng.uniform() - 1.0;
  LinearPolicy policy(cfg, beta);
  const std::vector<TaskParams> tasks{{0.1, 0.2, 0.2, 0.9}, {0.9, 0.9, 0.1, 0.8}, {0.5, 0.5, 0.5, 0.5}};
  const auto probe = probe_corpus(tasks, 200, 30, 12);
  const auto r = distill_glm(policy, cfg, probe, 13);
  EXPECT_NEAR(r.r2, 1.0, 1e-9);
  EXPECT_GT(r.n_test_rows, 0u);
}

TEST(Distill, CollinearColumnsAreDropped) {
  // Two unigram Qs plus interactions on a constant stream are collinear.
  QFeatureConfig cfg{.n = 1, .recency = 0.8, .window = 1, .interactions = true};
  const std::vector<std::vector<std::uint8_t>> probe(20, std::vector<std::uint8_t>(20, 1));
  const auto r = distill_glm(constant_bias(0.7), cfg, probe, 1);
  EXPECT_FALSE(r.dropped.empty());
  EXPECT_NEAR(r.r2, 1.0, 1e-9);
}

TEST(Clustering, SequenceStatistics) {
  const std::vector<std::uint8_t> s{0, 1, 0, 1, 0, 1, 0, 1, 0, 1, 0, 1, 0, 1, 0};
  EXPECT_DOUBLE_EQ(alts_fraction(s), 1.0);
  EXPECT_DOUBLE_EQ(ones_fraction(s), 7.0 / 15.0);
  EXPECT_THROW(cluster_sequences(GruWeights::zeros(), 21), ResourceLimitError);
}

TEST(Clustering, GaussianMixtureSeparatesBlobsDeterministically) {
  Rng rng(2);
  std::vector<std::vector<double>> pts;
  for (int i = 0; i < 300; ++i) pts.push_back({rng.normal() - 4.0, rng.normal()});
  for (int i = 0; i < 200; ++i) pts.push_back({rng.normal() + 4.0, 0.5 * rng.normal()});
  const auto a = fit_gaussian_mixture(pts, 2, 9, {.restarts = 3});
  const auto b = fit_gaussian_mixture(pts, 2, 9, {.restarts = 3});
  EXPECT_EQ(a.labels, b.labels);
  EXPECT_EQ(a.log_likelihood, b.log_likelihood);
  for (std::size_t i = 1; i < a.trace.size(); ++i) EXPECT_GE(a.trace[i], a.trace[i - 1] - 1e-9 * std::abs(a.trace[i]));
  int agree = 0;
  for (int i = 0; i < 500; ++i) agree += a.labels[i] == a.labels[0] ? (i < 300) : (i >= 300);
  EXPECT_GE(agree, 495);
}

TEST(Clustering, MixtureOptionsRoundTripAndTighterToleranceNeverLowersLikelihood) {
  GmmOptions o{.restarts = 2, .max_iterations = 400, .tolerance = 1e-9, .init = GmmInit::kPoints};
  const auto back = nlohmann::json(o).get<GmmOptions>();
  EXPECT_EQ(back.restarts, 2);
  EXPECT_EQ(back.max_iterations, 400);
  EXPECT_EQ(back.init, GmmInit::kPoints);
  EXPECT_THROW(nlohmann::json({{"init", "spectral"}}).get<GmmOptions>(), ConfigError);

  Rng rng(5);
  std::vector<std::vector<double>> pts;
  for (int i = 0; i < 400; ++i) {
    const double u = rng.normal();
    pts.push_back({u, 0.8 * u + (rng.uniform() < 0.5 ? -0.5 : 0.5) + 0.05 * rng.normal()});
  }
  GmmOptions loose{.restarts = 1, .max_iterations = 100, .tolerance = 1e-3};
  GmmOptions tight{.restarts = 1, .max_iterations = 5000, .tolerance = 1e-12};
  EXPECT_GE(fit_gaussian_mixture(pts, 2, 4, tight).log_likelihood,
            fit_gaussian_mixture(pts, 2, 4, loose).log_likelihood - 1e-9);
}

TEST(Clustering, FullEnumerationShape) {
  auto w = GruWeights::random(3);
  const auto r = cluster_sequences(w, 15, 2, 1, {.restarts = 2});
  EXPECT_EQ(r.n_sequences, 32768u);
  std::size_t total = 0;
  for (const auto& c : r.clusters) total += c.size;
  EXPECT_EQ(total, 32768u);
}

TEST(EnvMap, BackgroundDensityAndRows) {
  const std::vector<TaskParams> inputs{{0.1, 0.1, 0.1, 0.9}, {0.5, 0.5, 0.5, 0.5}};
  EnvMapOptions opt;
  opt.n_rollouts = 10;
  opt.rollouts.filter.n_particles = 50;
  const auto zero = GruWeights::zeros();
  const auto rows = env_map(inputs, &zero, 3, opt);
  ASSERT_EQ(rows.size(), 2u + 10000u);
  EXPECT_TRUE(rows[0].regret.has_value());
  int ambiguous = 0;
  for (std::size_t i = 2; i < rows.size(); ++i) ambiguous += rows[i].ambiguity > 0.5;
  EXPECT_NEAR(ambiguous / 10000.0, 0.75, 0.015);
  EXPECT_NE(env_map_csv(rows).find("source,p1"), std::string::npos);
}
