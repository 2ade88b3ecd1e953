#include "hmmac/agents.hpp"

#include <algorithm>
#include <cmath>

#include "hmmac/errors.hpp"

namespace hmmac {

std::string to_string(AgentKind kind) {
  switch (kind) {
    case AgentKind::kWinStayLoseShift: return "win_stay_lose_shift";
    case AgentKind::kRecencyMatcher: return "recency_matcher";
    case AgentKind::kBigramQ: return "bigram_q";
    case AgentKind::kNoisyIdeal: return "noisy_ideal";
  }
  return "unknown";
}

AgentKind agent_kind_from_string(const std::string& name) {
  if (name == "win_stay_lose_shift" || name == "wsls") return AgentKind::kWinStayLoseShift;
  if (name == "recency_matcher") return AgentKind::kRecencyMatcher;
  if (name == "bigram_q") return AgentKind::kBigramQ;
  if (name == "noisy_ideal") return AgentKind::kNoisyIdeal;
  throw ConfigError("unknown agent kind '" + name + "'");
}

void AgentSpec::validate() const {
  auto prob = [](double v) { return v >= 0.0 && v <= 1.0; };
  switch (kind) {
    case AgentKind::kWinStayLoseShift:
      if (!prob(stay_prob) || !prob(shift_prob)) throw DomainError("WSLS probabilities must lie in [0,1]");
      break;
    case AgentKind::kRecencyMatcher:
    case AgentKind::kBigramQ:
      if (!(recency > 0.0 && recency < 1.0)) throw DomainError("recency must lie in (0,1)");
      if (!(temperature > 0.0)) throw DomainError("temperature must be > 0");
      break;
    case AgentKind::kNoisyIdeal:
      if (particles < 2) throw DomainError("noisy_ideal needs >= 2 particles");
      if (!prob(lapse)) throw DomainError("lapse must lie in [0,1]");
      break;
  }
}

nlohmann::json AgentSpec::parameters() const {
  switch (kind) {
    case AgentKind::kWinStayLoseShift: return {{"stay_prob", stay_prob}, {"shift_prob", shift_prob}};
    case AgentKind::kRecencyMatcher:
    case AgentKind::kBigramQ: return {{"recency", recency}, {"temperature", temperature}};
    case AgentKind::kNoisyIdeal: return {{"particles", particles}, {"lapse", lapse}};
  }
  return nlohmann::json::object();
}

void to_json(nlohmann::json& j, const AgentSpec& a) {
  j = a.parameters();
  j["kind"] = to_string(a.kind);
}

void from_json(const nlohmann::json& j, AgentSpec& a) {
  a.kind = agent_kind_from_string(j.at("kind").get<std::string>());
  a.stay_prob = j.value("stay_prob", a.stay_prob);
  a.shift_prob = j.value("shift_prob", a.shift_prob);
  a.recency = j.value("recency", a.recency);
  a.temperature = j.value("temperature", a.temperature);
  a.particles = j.value("particles", a.particles);
  a.lapse = j.value("lapse", a.lapse);
  a.seed = j.value("seed", a.seed);
}

Agent::Agent(const AgentSpec& spec) : spec_(spec) {
  spec_.validate();
  if (spec_.kind == AgentKind::kNoisyIdeal) {
    filter_.emplace(FilterConfig{spec_.particles, 0.25, 0.5}, derive_seed(spec_.seed, 0x1dea1));
  }
  refresh();
}

void Agent::observe(std::uint8_t action, std::uint8_t outcome) {
  switch (spec_.kind) {
    case AgentKind::kRecencyMatcher:
      frequency_ = spec_.recency * frequency_ + (1.0 - spec_.recency) * outcome;
      break;
    case AgentKind::kBigramQ:
      if (last_outcome_) {
        const int hit = 2 * *last_outcome_ + outcome;
        for (int g = 0; g < 4; ++g) {
          bigram_[g] = spec_.recency * bigram_[g] + (1.0 - spec_.recency) * (g == hit ? 1.0 : 0.0);
        }
      }
      break;
    case AgentKind::kNoisyIdeal:
      filter_->update(outcome);
      break;
    case AgentKind::kWinStayLoseShift:
      break;
  }
  last_action_ = action;
  last_outcome_ = outcome;
  refresh();
}

void Agent::refresh() {
  switch (spec_.kind) {
    case AgentKind::kWinStayLoseShift: {
      if (!last_action_) {
        p_one_ = 0.5;
        break;
      }
      const bool won = *last_action_ == *last_outcome_;
      const double keep = won ? spec_.stay_prob : 1.0 - spec_.shift_prob;
      p_one_ = *last_action_ ? keep : 1.0 - keep;
      break;
    }
    case AgentKind::kRecencyMatcher:
      p_one_ = sigmoid_choice(2.0 * frequency_ - 1.0);
      break;
    case AgentKind::kBigramQ: {
      double conditional = 0.5;
      if (last_outcome_) {
        const double to_zero = bigram_[2 * *last_outcome_];
        const double to_one = bigram_[2 * *last_outcome_ + 1];
        if (to_zero + to_one > 0.0) conditional = to_one / (to_zero + to_one);
      }
      p_one_ = sigmoid_choice(2.0 * conditional - 1.0);
      break;
    }
    case AgentKind::kNoisyIdeal:
      p_one_ = (1.0 - spec_.lapse) * filter_->predict() + 0.5 * spec_.lapse;
      break;
  }
}

double Agent::sigmoid_choice(double advantage) const {
  return 1.0 / (1.0 + std::exp(-advantage / spec_.temperature));
}

std::uint8_t agent_act(const AgentSpec& spec,
                       std::span<const std::pair<std::uint8_t, std::uint8_t>> history,
                       std::uint64_t seed) {
  Agent agent(spec);
  for (const auto& [a, o] : history) agent.observe(a, o);
  Rng rng(seed);
  return agent.act(rng);
}

void PopulationSpec::validate() const {
  if (components.empty()) throw ConfigError("population has no components");
  double total = 0.0;
  for (const auto& c : components) {
    if (!(c.weight >= 0.0)) throw ConfigError("population weights must be nonnegative");
    c.agent.validate();
    total += c.weight;
  }
  if (std::abs(total - 1.0) > 1e-12) throw ConfigError("population weights must sum to 1");
}

PopulationSpec PopulationSpec::default_mixed() {
  PopulationSpec p;
  AgentSpec bigram{.kind = AgentKind::kBigramQ, .recency = 0.9, .temperature = 0.15};
  AgentSpec matcher{.kind = AgentKind::kRecencyMatcher, .recency = 0.9, .temperature = 0.15};
  AgentSpec ideal{.kind = AgentKind::kNoisyIdeal, .particles = 200, .lapse = 0.1};
  p.components = {{0.6, bigram}, {0.2, matcher}, {0.2, ideal}};
  return p;
}

PopulationSpec PopulationSpec::frequency_based() {
  PopulationSpec p;
  p.components = {{1.0, AgentSpec{.kind = AgentKind::kRecencyMatcher, .recency = 0.8, .temperature = 0.15}}};
  return p;
}

PopulationSpec PopulationSpec::single(const AgentSpec& agent, bool jitter) {
  PopulationSpec p;
  p.components = {{1.0, agent}};
  if (!jitter) p.jitter = JitterSpec{0.0, 0.0, 0.0};
  return p;
}

void to_json(nlohmann::json& j, const PopulationSpec& p) {
  nlohmann::json comps = nlohmann::json::array();
  for (const auto& c : p.components) {
    nlohmann::json row = c.agent;
    row["weight"] = c.weight;
    comps.push_back(std::move(row));
  }
  j = nlohmann::json{{"components", std::move(comps)},
                     {"jitter",
                      {{"probability", p.jitter.probability},
                       {"recency", p.jitter.recency},
                       {"log_temperature", p.jitter.log_temperature}}}};
}

void from_json(const nlohmann::json& j, PopulationSpec& p) {
  p.components.clear();
  for (const auto& row : j.at("components")) {
    PopulationComponent c;
    c.agent = row.get<AgentSpec>();
    c.weight = row.at("weight").get<double>();
    p.components.push_back(c);
  }
  if (j.contains("jitter")) {
    const auto& jj = j.at("jitter");
    p.jitter.probability = jj.value("probability", p.jitter.probability);
    p.jitter.recency = jj.value("recency", p.jitter.recency);
    p.jitter.log_temperature = jj.value("log_temperature", p.jitter.log_temperature);
  }
  p.validate();
}

AgentSpec draw_agent(const PopulationSpec& pop, Rng& rng) {
  const double u = rng.uniform();
  double cumulative = 0.0;
  std::size_t pick = pop.components.size() - 1;
  for (std::size_t i = 0; i < pop.components.size(); ++i) {
    cumulative += pop.components[i].weight;
    if (u < cumulative) {
      pick = i;
      break;
    }
  }
  AgentSpec a = pop.components[pick].agent;
  const JitterSpec& j = pop.jitter;
  auto shift = [&](double v, double width, double lo, double hi) {
    const double d = (2.0 * rng.uniform() - 1.0) * width;
    return std::clamp(v + d, lo, hi);
  };
  // Fixed draw order regardless of kind keeps streams aligned across populations.
  a.stay_prob = shift(a.stay_prob, j.probability, 0.0, 1.0);
  a.shift_prob = shift(a.shift_prob, j.probability, 0.0, 1.0);
  a.recency = shift(a.recency, j.recency, 0.01, 0.99);
  a.temperature *= std::exp((2.0 * rng.uniform() - 1.0) * j.log_temperature);
  a.lapse = shift(a.lapse, j.probability, 0.0, 1.0);
  a.seed = rng.next();
  return a;
}

SessionRecord simulate_session(const AgentSpec& agent, const TaskParams& params, int horizon,
                               std::uint64_t session_seed, const std::string& session_id,
                               const SimulationTags& tags) {
  const Trajectory traj = sample_trajectory(params, horizon, derive_seed(session_seed, 1));
  Agent a(agent);
  Rng rng(derive_seed(session_seed, 2));
  SessionRecord rec;
  rec.session_id = session_id;
  rec.agent.kind = to_string(agent.kind);
  rec.agent.params = agent.parameters();
  rec.agent.params_hash = hash_hex(rec.agent.params.dump());
  rec.task = params;
  rec.seed = session_seed;
  rec.corpus_tag = tags.corpus_tag;
  rec.iteration_index = tags.iteration_index;
  rec.trials.reserve(static_cast<std::size_t>(horizon));
  for (int t = 0; t < horizon; ++t) {
    const std::uint8_t action = a.act(rng);
    const std::uint8_t outcome = traj.observations[t];
    rec.trials.push_back(Trial{t + 1, action, outcome, action == outcome, std::nullopt});
    a.observe(action, outcome);
  }
  return rec;
}

Dataset simulate_sessions(const PopulationSpec& pop, std::span<const TaskParams> tasks, int horizon,
                          std::uint64_t seed, const SimulationTags& tags) {
  pop.validate();
  if (tasks.empty()) throw ArgumentError("simulate_sessions: n_sessions must be >= 1");
  Dataset d;
  d.id = tags.corpus_tag;
  d.corpus_tag = tags.corpus_tag;
  d.sessions.reserve(tasks.size());
  for (std::size_t i = 0; i < tasks.size(); ++i) {
    const std::uint64_t session_seed = derive_seed(seed, i);
    Rng draw(derive_seed(session_seed, 0));
    const AgentSpec agent = draw_agent(pop, draw);
    d.sessions.push_back(simulate_session(agent, tasks[i], horizon, session_seed,
                                          tags.corpus_tag + "-" + std::to_string(i), tags));
  }
  return d;
}

Dataset simulate_sessions(const PopulationSpec& pop, const TaskParams& params, int n_sessions,
                          int horizon, std::uint64_t seed, const SimulationTags& tags) {
  if (n_sessions < 1) throw ArgumentError("simulate_sessions: n_sessions must be >= 1");
  const std::vector<TaskParams> tasks(static_cast<std::size_t>(n_sessions), params);
  return simulate_sessions(pop, tasks, horizon, seed, tags);
}

}  // namespace hmmac
