#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <vector>

#include <nlohmann/json.hpp>

namespace hmmac {

// A point in the task space: two-state HMM with switch probabilities p1, p2,
// emission probabilities r1 = P(o=1|s=1), r2 = P(o=1|s=2) and initial
// distribution mu.
struct TaskParams {
  double p1 = 0.5;
  double p2 = 0.5;
  double r1 = 0.5;
  double r2 = 0.5;
  std::array<double, 2> mu{0.5, 0.5};

  // Throws DomainError if any field is outside [0,1] or mu does not sum to 1.
  void validate() const;

  std::array<double, 4> as_vector() const { return {p1, p2, r1, r2}; }
  static TaskParams from_vector(const std::array<double, 4>& v);

  friend bool operator==(const TaskParams&, const TaskParams&) = default;
};

void to_json(nlohmann::json& j, const TaskParams& t);
void from_json(const nlohmann::json& j, TaskParams& t);

// Latent states are stored as 1/2, observations as 0/1. States are kept for
// diagnostics only; agents never see them.
struct Trajectory {
  std::vector<std::uint8_t> states;
  std::vector<std::uint8_t> observations;
  std::uint64_t seed = 0;

  std::size_t horizon() const { return observations.size(); }
};

// Every step consumes exactly two uniforms (transition, emission) plus one for
// the initial state, so nearby parameters share randomness under a common seed.
Trajectory sample_trajectory(const TaskParams& params, int horizon, std::uint64_t seed);

std::array<double, 2> stationary_distribution(const TaskParams& params);

// Relaxation time -1/ln|1-p1-p2|; 0 when the second eigenvalue vanishes and
// +inf when it has modulus one.
double mixing_time(const TaskParams& params);

double ambiguity(const TaskParams& params);

// Long-run probability that consecutive observations differ. For the
// degenerate chain p1 = p2 = 0 the initial distribution is used.
double alternation_rate(const TaskParams& params);

enum class Symmetry { kIdentity, kStateSwap, kEmissionFlip, kBoth };
inline constexpr std::array<Symmetry, 4> kSymmetryGroup{
    Symmetry::kIdentity, Symmetry::kStateSwap, Symmetry::kEmissionFlip, Symmetry::kBoth};

TaskParams apply_symmetry(Symmetry g, const TaskParams& params);

// Distinct images of params under the order-4 group.
std::vector<TaskParams> symmetry_orbit(const TaskParams& params);

double sym_distance(const TaskParams& a, const TaskParams& b);

// Exact log P(observations | params) by the scaled forward recursion.
// Returns -inf for sequences with probability zero.
double log_likelihood(const TaskParams& params, std::span<const std::uint8_t> observations);

}  // namespace hmmac
