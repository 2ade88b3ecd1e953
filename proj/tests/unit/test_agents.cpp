#include <gtest/gtest.h>

#include <cmath>
#include <map>

#include "hmmac/agents.hpp"
#include "hmmac/errors.hpp"

using namespace hmmac;

namespace {

using History = std::vector<std::pair<std::uint8_t, std::uint8_t>>;

double feed(const AgentSpec& spec, const std::vector<std::uint8_t>& outcomes) {
  Agent agent(spec);
  Rng rng(1);
  for (auto o : outcomes) agent.observe(agent.act(rng), o);
  return agent.probability_one();
}

}  // namespace

TEST(Agents, WinStayIsDeterministicAtOne) {
  AgentSpec wsls{.kind = AgentKind::kWinStayLoseShift, .stay_prob = 1.0, .shift_prob = 1.0};
  History h{{0, 1}, {1, 1}};
  for (std::uint64_t s = 0; s < 20; ++s) EXPECT_EQ(agent_act(wsls, h, s), 1);
  History lost{{1, 0}};
  for (std::uint64_t s = 0; s < 20; ++s) EXPECT_EQ(agent_act(wsls, lost, s), 0);
  EXPECT_DOUBLE_EQ(Agent(wsls).probability_one(), 0.5);
}

TEST(Agents, RecencyMatcherOnOnes) {
  AgentSpec m{.kind = AgentKind::kRecencyMatcher, .recency = 0.9, .temperature = 0.05};
  EXPECT_GT(feed(m, std::vector<std::uint8_t>(20, 1)), 0.95);
}

TEST(Agents, BigramFollowsAlternation) {
  AgentSpec b{.kind = AgentKind::kBigramQ, .recency = 0.8, .temperature = 0.05};
  std::vector<std::uint8_t> alt;
  for (int t = 0; t < 10; ++t) alt.push_back(t % 2);
  // Last outcome is 1, so the alternating continuation is 0.
  EXPECT_LT(feed(b, alt), 0.05);
  alt.push_back(0);
  EXPECT_GT(feed(b, alt), 0.95);
}

TEST(Agents, ProbabilitiesStayInteriorWithPositiveTemperature) {
  const auto pop = PopulationSpec::default_mixed();
  Rng rng(3);
  for (int i = 0; i < 50; ++i) {
    Agent a(draw_agent(pop, rng));
    for (int t = 0; t < 50; ++t) {
      const double p = a.probability_one();
      ASSERT_GE(p, 0.0);
      ASSERT_LE(p, 1.0);
      a.observe(static_cast<std::uint8_t>(t % 3 == 0), static_cast<std::uint8_t>(rng.bernoulli(0.6)));
    }
  }
  AgentSpec m{.kind = AgentKind::kRecencyMatcher, .recency = 0.5, .temperature = 0.5};
  const double p = feed(m, std::vector<std::uint8_t>(50, 1));
  EXPECT_GT(p, 0.0);
  EXPECT_LT(p, 1.0);
}

TEST(Agents, SimulateShapeAndDeterminism) {
  const auto pop = PopulationSpec::default_mixed();
  TaskParams task{0.1, 0.2, 0.3, 0.8};
  const auto a = simulate_sessions(pop, task, 30, 50, 99, {"D1", 0});
  const auto b = simulate_sessions(pop, task, 30, 50, 99, {"D1", 0});
  ASSERT_EQ(a.sessions.size(), 30u);
  for (const auto& s : a.sessions) {
    EXPECT_EQ(s.trials.size(), 50u);
    EXPECT_NO_THROW(s.validate());
  }
  EXPECT_EQ(a.fingerprint(), b.fingerprint());
  EXPECT_EQ(nlohmann::json(a.sessions).dump(), nlohmann::json(b.sessions).dump());
  EXPECT_THROW(simulate_sessions(pop, task, 0, 50, 1), ArgumentError);
}

TEST(Agents, MixtureWeightsMatchSampling) {
  const auto pop = PopulationSpec::default_mixed();
  std::map<AgentKind, int> counts;
  Rng rng(8);
  const int n = 4000;
  for (int i = 0; i < n; ++i) ++counts[draw_agent(pop, rng).kind];
  for (const auto& c : pop.components) {
    const double se = std::sqrt(c.weight * (1 - c.weight) / n);
    EXPECT_NEAR(counts[c.agent.kind] / double(n), c.weight, 3 * se);
  }
}

TEST(Agents, NoisyIdealMatchesIdealAccuracy) {
  AgentSpec ideal{.kind = AgentKind::kNoisyIdeal, .particles = 1000, .lapse = 0.0};
  TaskParams task{0.1, 0.1, 0.2, 0.9};
  const auto d = simulate_sessions(PopulationSpec::single(ideal), task, 400, 50, 21);
  const auto il = il_accuracy(task, 50, 2000, 22);
  double sum = 0, sq = 0;
  for (const auto& s : d.sessions) {
    const double acc = s.accuracy();
    sum += acc;
    sq += acc * acc;
  }
  const double n = d.sessions.size();
  const double mean = sum / n;
  const double se = std::sqrt((sq / n - mean * mean) / n);
  EXPECT_LT(std::abs(mean - il.mean), 2 * std::hypot(se, il.se));
}

TEST(Agents, BigramBeatsMatcherOnAlternation) {
  TaskParams alt{1.0, 1.0, 0.0, 1.0};
  AgentSpec b{.kind = AgentKind::kBigramQ, .recency = 0.8, .temperature = 0.05};
  AgentSpec m{.kind = AgentKind::kRecencyMatcher, .recency = 0.8, .temperature = 0.05};
  const auto db = simulate_sessions(PopulationSpec::single(b), alt, 50, 50, 5);
  const auto dm = simulate_sessions(PopulationSpec::single(m), alt, 50, 50, 5);
  EXPECT_GT(db.mean_accuracy() - dm.mean_accuracy(), 0.3);
}

TEST(Agents, PopulationJsonRoundTrip) {
  const auto pop = PopulationSpec::default_mixed();
  const nlohmann::json j = pop;
  const auto back = j.get<PopulationSpec>();
  EXPECT_EQ(nlohmann::json(back).dump(), j.dump());
  nlohmann::json bad = j;
  bad["components"][0]["weight"] = 0.9;
  EXPECT_THROW(bad.get<PopulationSpec>(), ConfigError);
}
