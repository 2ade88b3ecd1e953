#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "hmmac/env_hmm.hpp"
#include "hmmac/ideal_learner.hpp"
#include "hmmac/records.hpp"
#include "hmmac/rng.hpp"

namespace hmmac {

enum class AgentKind { kWinStayLoseShift, kRecencyMatcher, kBigramQ, kNoisyIdeal };

std::string to_string(AgentKind kind);
AgentKind agent_kind_from_string(const std::string& name);

// Synthetic participant. Only the fields relevant to `kind` are used:
//   win_stay_lose_shift: stay_prob, shift_prob
//   recency_matcher, bigram_q: recency (lambda in (0,1)), temperature
//   noisy_ideal: particles, lapse
struct AgentSpec {
  AgentKind kind = AgentKind::kRecencyMatcher;
  double stay_prob = 0.9;
  double shift_prob = 0.9;
  double recency = 0.8;
  double temperature = 0.15;
  int particles = 200;
  double lapse = 0.1;
  std::uint64_t seed = 0;

  void validate() const;
  nlohmann::json parameters() const;  // kind-specific fields only
};

void to_json(nlohmann::json& j, const AgentSpec& a);
void from_json(const nlohmann::json& j, AgentSpec& a);

// Stateful agent: probability_one() is the current choice probability,
// observe() feeds back the trial's action and outcome.
class Agent {
 public:
  explicit Agent(const AgentSpec& spec);

  double probability_one() const { return p_one_; }
  std::uint8_t act(Rng& rng) const { return rng.uniform() < p_one_ ? 1 : 0; }
  void observe(std::uint8_t action, std::uint8_t outcome);

 private:
  void refresh();
  double sigmoid_choice(double advantage) const;

  AgentSpec spec_;
  std::optional<std::uint8_t> last_action_;
  std::optional<std::uint8_t> last_outcome_;
  double frequency_ = 0.5;
  std::array<double, 4> bigram_{};  // index 2*prev + next
  std::optional<IdealLearner> filter_;
  double p_one_ = 0.5;
};

// Choice at the end of `history` ((action, outcome) pairs), drawn with `seed`.
std::uint8_t agent_act(const AgentSpec& spec,
                       std::span<const std::pair<std::uint8_t, std::uint8_t>> history,
                       std::uint64_t seed);

// Per-session parameter jitter: probabilities and lapse shift by U(-p, p),
// recency by U(-r, r), temperature scales by exp(U(-t, t)); results clamped
// into their domains.
struct JitterSpec {
  double probability = 0.05;
  double recency = 0.05;
  double log_temperature = 0.2;
};

struct PopulationComponent {
  double weight = 1.0;
  AgentSpec agent;
};

struct PopulationSpec {
  std::vector<PopulationComponent> components;
  JitterSpec jitter;

  void validate() const;

  // Frequency-based, bigram-based and near-normative agents.
  static PopulationSpec default_mixed();
  // Frequency matchers only.
  static PopulationSpec frequency_based();
  static PopulationSpec single(const AgentSpec& agent, bool jitter = false);
};

void to_json(nlohmann::json& j, const PopulationSpec& p);
void from_json(const nlohmann::json& j, PopulationSpec& p);

// Draws one agent from the mixture, with jitter.
AgentSpec draw_agent(const PopulationSpec& pop, Rng& rng);

struct SimulationTags {
  std::string corpus_tag = "sim";
  int iteration_index = 0;
};

// One closed-loop session of `agent` against a fresh trajectory of `params`.
SessionRecord simulate_session(const AgentSpec& agent, const TaskParams& params, int horizon,
                               std::uint64_t session_seed, const std::string& session_id,
                               const SimulationTags& tags = {});

// Session i uses derive_seed(seed, i) for agent draw, trajectory and actions.
// `tasks` supplies one environment per session.
Dataset simulate_sessions(const PopulationSpec& pop, std::span<const TaskParams> tasks, int horizon,
                          std::uint64_t seed, const SimulationTags& tags = {});
Dataset simulate_sessions(const PopulationSpec& pop, const TaskParams& params, int n_sessions,
                          int horizon, std::uint64_t seed, const SimulationTags& tags = {});

}  // namespace hmmac
