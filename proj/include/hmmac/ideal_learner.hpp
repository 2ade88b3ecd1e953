#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <vector>

#include "hmmac/env_hmm.hpp"
#include "hmmac/rng.hpp"

namespace hmmac {

struct FilterConfig {
  int n_particles = 1000;
  double prior_alpha = 0.25;
  // Resample when ESS < resample_fraction * N.
  double resample_fraction = 0.5;
};

void to_json(nlohmann::json& j, const FilterConfig& c);
void from_json(const nlohmann::json& j, FilterConfig& c);

// One hypothesis about the latent state path. Conditional on the path the four
// HMM parameters have conjugate Beta posteriors. Observed transition and
// emission counts are stored per state (0 = state 1, 1 = state 2); the Beta
// pseudo-counts are these plus the prior strength alpha.
struct Particle {
  std::uint8_t state = 0;
  std::array<std::uint16_t, 2> stay{};
  std::array<std::uint16_t, 2> leave{};
  std::array<std::uint16_t, 2> emit_one{};
  std::array<std::uint16_t, 2> emit_zero{};
  double weight = 0.0;  // normalised
};

// Rao-Blackwellised particle filter over two-state HMMs with unknown
// transition and emission parameters. The filter knows mu = (0.5, 0.5).
class IdealLearner {
 public:
  IdealLearner(const FilterConfig& config, std::uint64_t seed);

  // Pr(o_t = 1 | o_1..o_{t-1}); strictly inside (0,1).
  double predict() const { return predictive_; }

  // Optimal-proposal update with systematic resampling when the ESS drops
  // below the configured fraction of N.
  void update(std::uint8_t observation);

  // Beta posterior means of particle `i`.
  double switch_mean(std::size_t i, int state) const;
  double emission_mean(std::size_t i, int state) const;

  // Bernoulli(predict()) draw.
  std::uint8_t act(Rng& rng) const { return rng.uniform() < predict() ? 1 : 0; }

  double ess() const { return ess_; }
  double weight_sum() const;
  int step() const { return step_; }
  int resample_count() const { return resamples_; }
  const FilterConfig& config() const { return config_; }
  std::uint64_t seed() const { return seed_; }
  std::span<const Particle> particles() const { return particles_; }

 private:
  void resample();
  void grow_reciprocals(std::size_t n);
  double particle_predictive(const Particle& p) const;
  double recompute_predictive() const;

  FilterConfig config_;
  std::uint64_t seed_;
  Rng rng_;
  std::vector<Particle> particles_;
  std::vector<Particle> scratch_;
  // reciprocal_[n] = 1 / (2 alpha + n): posterior-mean denominators.
  std::vector<double> reciprocal_;
  int step_ = 0;
  int resamples_ = 0;
  double predictive_ = 0.5;
  double ess_ = 0.0;
};

struct AccuracyEstimate {
  double mean = 0.0;
  double se = 0.0;
};

void to_json(nlohmann::json& j, const AccuracyEstimate& a);
void from_json(const nlohmann::json& j, AccuracyEstimate& a);

// Per-rollout seeds: trajectory = derive_seed(seed, r, kTrajectoryStream), etc.
inline constexpr std::uint64_t kTrajectoryStream = 0;
inline constexpr std::uint64_t kFilterStream = 1;
inline constexpr std::uint64_t kIdealActionStream = 2;
inline constexpr std::uint64_t kPolicyActionStream = 3;

// Fraction of trials the ideal learner predicts correctly on one trajectory.
double il_rollout_accuracy(const Trajectory& traj, const FilterConfig& config,
                           std::uint64_t filter_seed, std::uint64_t action_seed);

AccuracyEstimate il_accuracy(const TaskParams& params, int horizon, int n_rollouts,
                             std::uint64_t seed, const FilterConfig& config = {});

// Exact Bayesian predictive under a discretised Beta(alpha, alpha) prior on
// (p1, p2, r1, r2). Each axis is cut into `resolution` equal cells; a cell is
// represented by its prior conditional mean and weighted by its prior mass.
class ExactBayesOracle {
 public:
  static constexpr int kMaxResolution = 51;
  static constexpr std::size_t kMaxHistory = 60;

  ExactBayesOracle(int resolution, double prior_alpha = 0.25);

  // predictives[t] = Pr(o_{t+1} = 1 | o_1..o_t) for t = 0..history.size().
  std::vector<double> predictive_path(std::span<const std::uint8_t> history) const;

  int resolution() const { return resolution_; }
  std::span<const double> axis_values() const { return values_; }
  std::span<const double> axis_masses() const { return masses_; }

 private:
  int resolution_;
  double alpha_;
  std::vector<double> values_;
  std::vector<double> masses_;
};

double exact_predictive(int grid_resolution, std::span<const std::uint8_t> history,
                        double prior_alpha = 0.25);

}  // namespace hmmac
