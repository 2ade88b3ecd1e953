#include "hmmac/env_hmm.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "hmmac/errors.hpp"
#include "hmmac/rng.hpp"

namespace hmmac {

namespace {

void check_probability(double v, const char* name) {
  if (!(v >= 0.0 && v <= 1.0)) {
    throw DomainError(std::string("TaskParams.") + name + " = " + std::to_string(v) +
                      " is outside [0,1]");
  }
}

}  // namespace

void TaskParams::validate() const {
  check_probability(p1, "p1");
  check_probability(p2, "p2");
  check_probability(r1, "r1");
  check_probability(r2, "r2");
  check_probability(mu[0], "mu[0]");
  check_probability(mu[1], "mu[1]");
  if (std::abs(mu[0] + mu[1] - 1.0) > 1e-12) {
    throw DomainError("TaskParams.mu does not sum to 1");
  }
}

TaskParams TaskParams::from_vector(const std::array<double, 4>& v) {
  TaskParams t;
  t.p1 = v[0];
  t.p2 = v[1];
  t.r1 = v[2];
  t.r2 = v[3];
  return t;
}

void to_json(nlohmann::json& j, const TaskParams& t) {
  j = nlohmann::json{{"p1", t.p1}, {"p2", t.p2}, {"r1", t.r1}, {"r2", t.r2},
                     {"mu", {t.mu[0], t.mu[1]}}};
}

void from_json(const nlohmann::json& j, TaskParams& t) {
  t.p1 = j.at("p1").get<double>();
  t.p2 = j.at("p2").get<double>();
  t.r1 = j.at("r1").get<double>();
  t.r2 = j.at("r2").get<double>();
  if (j.contains("mu")) {
    t.mu = {j.at("mu").at(0).get<double>(), j.at("mu").at(1).get<double>()};
  } else {
    t.mu = {0.5, 0.5};
  }
}

Trajectory sample_trajectory(const TaskParams& params, int horizon, std::uint64_t seed) {
  params.validate();
  if (horizon < 1) throw ArgumentError("sample_trajectory: horizon must be >= 1");
  Trajectory traj;
  traj.seed = seed;
  traj.states.resize(static_cast<std::size_t>(horizon));
  traj.observations.resize(static_cast<std::size_t>(horizon));
  Rng rng(seed);
  const double switch_p[2] = {params.p1, params.p2};
  const double emit_p[2] = {params.r1, params.r2};
  int s = rng.uniform() < params.mu[0] ? 0 : 1;
  for (int t = 0; t < horizon; ++t) {
    if (t > 0 && rng.uniform() < switch_p[s]) s = 1 - s;
    traj.states[t] = static_cast<std::uint8_t>(s + 1);
    traj.observations[t] = rng.uniform() < emit_p[s] ? 1 : 0;
  }
  return traj;
}

std::array<double, 2> stationary_distribution(const TaskParams& params) {
  const double total = params.p1 + params.p2;
  if (total <= 0.0) {
    throw DegenerateChainError("stationary_distribution: p1 = p2 = 0 has no unique stationary law");
  }
  return {params.p2 / total, params.p1 / total};
}

double mixing_time(const TaskParams& params) {
  const double lambda = std::abs(1.0 - params.p1 - params.p2);
  if (lambda == 0.0) return 0.0;
  if (lambda >= 1.0) return std::numeric_limits<double>::infinity();
  return -1.0 / std::log(lambda);
}

double ambiguity(const TaskParams& params) { return 1.0 - std::abs(params.r1 - params.r2); }

double alternation_rate(const TaskParams& params) {
  std::array<double, 2> pi = params.mu;
  if (params.p1 + params.p2 > 0.0) pi = stationary_distribution(params);
  const double emit1[2] = {params.r1, params.r2};
  const double sw[2] = {params.p1, params.p2};
  double alt = 0.0;
  for (int s = 0; s < 2; ++s) {
    for (int n = 0; n < 2; ++n) {
      const double trans = (n == s) ? 1.0 - sw[s] : sw[s];
      // P(o_t != o_{t+1} | s, n) = e_s(1) e_n(0) + e_s(0) e_n(1)
      const double differ = emit1[s] * (1.0 - emit1[n]) + (1.0 - emit1[s]) * emit1[n];
      alt += pi[s] * trans * differ;
    }
  }
  return alt;
}

TaskParams apply_symmetry(Symmetry g, const TaskParams& params) {
  TaskParams out = params;
  if (g == Symmetry::kStateSwap || g == Symmetry::kBoth) {
    std::swap(out.p1, out.p2);
    std::swap(out.r1, out.r2);
    std::swap(out.mu[0], out.mu[1]);
  }
  if (g == Symmetry::kEmissionFlip || g == Symmetry::kBoth) {
    out.r1 = 1.0 - out.r1;
    out.r2 = 1.0 - out.r2;
  }
  return out;
}

std::vector<TaskParams> symmetry_orbit(const TaskParams& params) {
  std::vector<TaskParams> orbit;
  for (Symmetry g : kSymmetryGroup) {
    TaskParams image = apply_symmetry(g, params);
    if (std::find(orbit.begin(), orbit.end(), image) == orbit.end()) orbit.push_back(image);
  }
  return orbit;
}

double sym_distance(const TaskParams& a, const TaskParams& b) {
  const auto va = a.as_vector();
  double best = std::numeric_limits<double>::infinity();
  for (Symmetry g : kSymmetryGroup) {
    const auto vb = apply_symmetry(g, b).as_vector();
    double sq = 0.0;
    for (std::size_t i = 0; i < 4; ++i) sq += (va[i] - vb[i]) * (va[i] - vb[i]);
    best = std::min(best, std::sqrt(sq));
  }
  return best;
}

double log_likelihood(const TaskParams& params, std::span<const std::uint8_t> observations) {
  params.validate();
  if (observations.empty()) throw ArgumentError("log_likelihood: empty observation sequence");
  const double emit1[2] = {params.r1, params.r2};
  const double sw[2] = {params.p1, params.p2};
  auto emission = [&](int s, std::uint8_t o) { return o ? emit1[s] : 1.0 - emit1[s]; };

  double alpha[2] = {params.mu[0], params.mu[1]};
  double log_total = 0.0;
  for (std::size_t t = 0; t < observations.size(); ++t) {
    if (t > 0) {
      const double a0 = alpha[0] * (1.0 - sw[0]) + alpha[1] * sw[1];
      const double a1 = alpha[0] * sw[0] + alpha[1] * (1.0 - sw[1]);
      alpha[0] = a0;
      alpha[1] = a1;
    }
    alpha[0] *= emission(0, observations[t]);
    alpha[1] *= emission(1, observations[t]);
    const double norm = alpha[0] + alpha[1];
    if (norm <= 0.0) return -std::numeric_limits<double>::infinity();
    log_total += std::log(norm);
    alpha[0] /= norm;
    alpha[1] /= norm;
  }
  return log_total;
}

}  // namespace hmmac
