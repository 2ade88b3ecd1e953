#include "hmmac/ideal_learner.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <boost/math/special_functions/beta.hpp>

#include "hmmac/errors.hpp"

namespace hmmac {

void to_json(nlohmann::json& j, const FilterConfig& c) {
  j = nlohmann::json{{"n_particles", c.n_particles},
                     {"prior_alpha", c.prior_alpha},
                     {"resample_fraction", c.resample_fraction}};
}

void from_json(const nlohmann::json& j, FilterConfig& c) {
  c.n_particles = j.value("n_particles", c.n_particles);
  c.prior_alpha = j.value("prior_alpha", c.prior_alpha);
  c.resample_fraction = j.value("resample_fraction", c.resample_fraction);
}

void to_json(nlohmann::json& j, const AccuracyEstimate& a) {
  j = nlohmann::json{{"mean", a.mean}, {"se", a.se}};
}

void from_json(const nlohmann::json& j, AccuracyEstimate& a) {
  a.mean = j.at("mean").get<double>();
  a.se = j.at("se").get<double>();
}

IdealLearner::IdealLearner(const FilterConfig& config, std::uint64_t seed)
    : config_(config), seed_(seed), rng_(seed) {
  if (config.n_particles < 2) throw ArgumentError("IdealLearner: n_particles must be >= 2");
  if (!(config.prior_alpha > 0.0)) throw DomainError("IdealLearner: prior_alpha must be > 0");
  const double w = 1.0 / config.n_particles;
  particles_.resize(static_cast<std::size_t>(config.n_particles));
  for (auto& p : particles_) {
    p.state = rng_.uniform() < 0.5 ? 0 : 1;
    p.weight = w;
  }
  scratch_.resize(particles_.size());
  grow_reciprocals(64);
  ess_ = static_cast<double>(particles_.size());
  predictive_ = recompute_predictive();
}

void IdealLearner::grow_reciprocals(std::size_t n) {
  const double base = 2.0 * config_.prior_alpha;
  for (std::size_t k = reciprocal_.size(); k < n; ++k) {
    reciprocal_.push_back(1.0 / (base + static_cast<double>(k)));
  }
}

double IdealLearner::switch_mean(std::size_t i, int state) const {
  const auto& p = particles_.at(i);
  return (config_.prior_alpha + p.leave[state]) * reciprocal_[p.stay[state] + p.leave[state]];
}

double IdealLearner::emission_mean(std::size_t i, int state) const {
  const auto& p = particles_.at(i);
  return (config_.prior_alpha + p.emit_one[state]) *
         reciprocal_[p.emit_one[state] + p.emit_zero[state]];
}

// Contribution of one particle to Pr(next o = 1), before weighting.
double IdealLearner::particle_predictive(const Particle& p) const {
  const double a = config_.prior_alpha;
  const double m0 = (a + p.emit_one[0]) * reciprocal_[p.emit_one[0] + p.emit_zero[0]];
  const double m1 = (a + p.emit_one[1]) * reciprocal_[p.emit_one[1] + p.emit_zero[1]];
  if (step_ == 0) return p.state == 0 ? m0 : m1;
  const int s = p.state;
  const double stay = (a + p.stay[s]) * reciprocal_[p.stay[s] + p.leave[s]];
  const double to0 = s == 0 ? stay : 1.0 - stay;
  return to0 * m0 + (1.0 - to0) * m1;
}

double IdealLearner::recompute_predictive() const {
  double total = 0.0;
  for (const auto& p : particles_) total += p.weight * particle_predictive(p);
  return total;
}

void IdealLearner::update(std::uint8_t observation) {
  if (step_ >= 65000) throw ResourceLimitError("IdealLearner: horizon exceeds count capacity");
  grow_reciprocals(static_cast<std::size_t>(step_) + 2);
  const double a = config_.prior_alpha;
  const bool one = observation != 0;
  const double* recip = reciprocal_.data();
  double norm = 0.0;
  double norm_sq = 0.0;
  double next_pred = 0.0;
  for (auto& p : particles_) {
    // P(o | state k) = (alpha + count_o) / (2 alpha + count_1 + count_0); the
    // flip-symmetric form keeps a bit-flipped stream's arithmetic identical.
    const double l0 = (a + (one ? p.emit_one[0] : p.emit_zero[0])) * recip[p.emit_one[0] + p.emit_zero[0]];
    const double l1 = (a + (one ? p.emit_one[1] : p.emit_zero[1])) * recip[p.emit_one[1] + p.emit_zero[1]];
    int next;
    if (step_ == 0) {
      next = p.state;
      p.weight *= next == 0 ? l0 : l1;
    } else {
      const int s = p.state;
      const double stay = (a + p.stay[s]) * recip[p.stay[s] + p.leave[s]];
      const double to0 = s == 0 ? stay : 1.0 - stay;
      const double j0 = to0 * l0;
      const double evidence = j0 + (1.0 - to0) * l1;
      next = static_cast<int>(rng_.uniform() * evidence >= j0);
      p.weight *= evidence;
      p.stay[s] += static_cast<std::uint16_t>(next == s);
      p.leave[s] += static_cast<std::uint16_t>(next != s);
    }
    p.emit_one[next] += static_cast<std::uint16_t>(one);
    p.emit_zero[next] += static_cast<std::uint16_t>(!one);
    p.state = static_cast<std::uint8_t>(next);
    norm += p.weight;
    norm_sq += p.weight * p.weight;
  }
  ++step_;
  const double inv = 1.0 / norm;
  for (auto& p : particles_) {
    p.weight *= inv;
    next_pred += p.weight * particle_predictive(p);
  }
  ess_ = norm * norm / norm_sq;
  predictive_ = next_pred;
  if (ess_ < config_.resample_fraction * static_cast<double>(particles_.size())) {
    resample();
    ess_ = static_cast<double>(particles_.size());
    predictive_ = recompute_predictive();
  }
}

double IdealLearner::weight_sum() const {
  double s = 0.0;
  for (const auto& p : particles_) s += p.weight;
  return s;
}

void IdealLearner::resample() {
  const std::size_t n = particles_.size();
  const double step = 1.0 / static_cast<double>(n);
  double pointer = rng_.uniform() * step;
  double cumulative = particles_[0].weight;
  std::size_t src = 0;
  for (std::size_t i = 0; i < n; ++i) {
    while (pointer > cumulative && src + 1 < n) {
      ++src;
      cumulative += particles_[src].weight;
    }
    scratch_[i] = particles_[src];
    scratch_[i].weight = step;
    pointer += step;
  }
  particles_.swap(scratch_);
  ++resamples_;
}

double il_rollout_accuracy(const Trajectory& traj, const FilterConfig& config,
                           std::uint64_t filter_seed, std::uint64_t action_seed) {
  IdealLearner filter(config, filter_seed);
  Rng actions(action_seed);
  int correct = 0;
  for (std::uint8_t o : traj.observations) {
    if (filter.act(actions) == o) ++correct;
    filter.update(o);
  }
  return static_cast<double>(correct) / static_cast<double>(traj.horizon());
}

AccuracyEstimate il_accuracy(const TaskParams& params, int horizon, int n_rollouts,
                             std::uint64_t seed, const FilterConfig& config) {
  if (n_rollouts < 2) throw ArgumentError("il_accuracy: n_rollouts must be >= 2");
  double sum = 0.0;
  double sum_sq = 0.0;
  for (int r = 0; r < n_rollouts; ++r) {
    const auto traj = sample_trajectory(params, horizon, derive_seed(seed, r, kTrajectoryStream));
    const double acc = il_rollout_accuracy(traj, config, derive_seed(seed, r, kFilterStream),
                                           derive_seed(seed, r, kIdealActionStream));
    sum += acc;
    sum_sq += acc * acc;
  }
  const double n = n_rollouts;
  const double mean = sum / n;
  const double var = std::max(0.0, (sum_sq - n * mean * mean) / (n - 1.0));
  return {mean, std::sqrt(var / n)};
}

ExactBayesOracle::ExactBayesOracle(int resolution, double prior_alpha)
    : resolution_(resolution), alpha_(prior_alpha) {
  if (resolution < 1) throw ArgumentError("ExactBayesOracle: resolution must be >= 1");
  if (resolution > kMaxResolution) {
    throw ResourceLimitError("ExactBayesOracle: resolution " + std::to_string(resolution) +
                             " exceeds " + std::to_string(kMaxResolution));
  }
  if (!(prior_alpha > 0.0)) throw DomainError("ExactBayesOracle: prior_alpha must be > 0");
  using boost::math::ibeta;
  // E[x 1{x in cell}] for Beta(a,a) is (1/2) * (I_b(a+1,a) - I_a(a+1,a)).
  for (int i = 0; i < resolution; ++i) {
    const double lo = static_cast<double>(i) / resolution;
    const double hi = static_cast<double>(i + 1) / resolution;
    const double mass = ibeta(alpha_, alpha_, hi) - ibeta(alpha_, alpha_, lo);
    const double first = 0.5 * (ibeta(alpha_ + 1.0, alpha_, hi) - ibeta(alpha_ + 1.0, alpha_, lo));
    masses_.push_back(mass);
    values_.push_back(mass > 0.0 ? std::clamp(first / mass, lo, hi) : 0.5 * (lo + hi));
  }
}

std::vector<double> ExactBayesOracle::predictive_path(std::span<const std::uint8_t> history) const {
  if (history.size() > kMaxHistory) {
    throw ArgumentError("ExactBayesOracle: history longer than " + std::to_string(kMaxHistory));
  }
  const std::size_t g = static_cast<std::size_t>(resolution_);
  const std::size_t points = g * g * g * g;
  // Joint forward messages (state 1, state 2) times prior mass, per grid point.
  std::vector<double> f0(points), f1(points);
  {
    std::size_t idx = 0;
    for (std::size_t a = 0; a < g; ++a)
      for (std::size_t b = 0; b < g; ++b)
        for (std::size_t c = 0; c < g; ++c)
          for (std::size_t d = 0; d < g; ++d, ++idx) {
            const double prior = masses_[a] * masses_[b] * masses_[c] * masses_[d];
            f0[idx] = 0.5 * prior;
            f1[idx] = 0.5 * prior;
          }
  }
  std::vector<double> out;
  out.reserve(history.size() + 1);
  for (std::size_t t = 0; t <= history.size(); ++t) {
    const bool has_obs = t < history.size();
    const bool one = has_obs && history[t] != 0;
    double num = 0.0;
    double den = 0.0;
    double next_total = 0.0;
    std::size_t idx = 0;
    for (std::size_t a = 0; a < g; ++a) {
      const double p1 = values_[a];
      for (std::size_t b = 0; b < g; ++b) {
        const double p2 = values_[b];
        for (std::size_t c = 0; c < g; ++c) {
          const double r1 = values_[c];
          for (std::size_t d = 0; d < g; ++d, ++idx) {
            const double r2 = values_[d];
            double b0 = f0[idx];
            double b1 = f1[idx];
            if (t > 0) {
              const double n0 = b0 * (1.0 - p1) + b1 * p2;
              const double n1 = b0 * p1 + b1 * (1.0 - p2);
              b0 = n0;
              b1 = n1;
            }
            num += b0 * r1 + b1 * r2;
            den += b0 + b1;
            if (has_obs) {
              f0[idx] = b0 * (one ? r1 : 1.0 - r1);
              f1[idx] = b1 * (one ? r2 : 1.0 - r2);
              next_total += f0[idx] + f1[idx];
            }
          }
        }
      }
    }
    out.push_back(num / den);
    if (has_obs) {
      if (!(next_total > 0.0)) throw ArgumentError("ExactBayesOracle: history has zero probability");
      const double inv = 1.0 / next_total;
      for (std::size_t i = 0; i < points; ++i) {
        f0[i] *= inv;
        f1[i] *= inv;
      }
    }
  }
  return out;
}

double exact_predictive(int grid_resolution, std::span<const std::uint8_t> history,
                        double prior_alpha) {
  if (history.size() > ExactBayesOracle::kMaxHistory) {
    throw ArgumentError("exact_predictive: history longer than 60");
  }
  const ExactBayesOracle oracle(grid_resolution, prior_alpha);
  return oracle.predictive_path(history).back();
}

}  // namespace hmmac
