#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "hmmac/env_hmm.hpp"
#include "hmmac/gru_policy.hpp"
#include "hmmac/ideal_learner.hpp"

namespace hmmac {

struct RegretEstimate {
  TaskParams task;
  AccuracyEstimate j_il;
  AccuracyEstimate j_pi;
  double regret = 0.0;
  // Standard error of the paired per-rollout differences.
  double regret_se = 0.0;
  int n_rollouts = 0;
  std::uint64_t seed = 0;
};

void to_json(nlohmann::json& j, const RegretEstimate& r);
void from_json(const nlohmann::json& j, RegretEstimate& r);

struct RolloutSettings {
  int horizon = 50;
  FilterConfig filter;
};

// Ideal learner and policy are scored on the same trajectories (common random
// numbers); their action draws come from separate streams.
RegretEstimate estimate_regret(const GruWeights& weights, const TaskParams& params, int n_rollouts,
                               std::uint64_t seed, const RolloutSettings& settings = {});

struct SearchConfig {
  int n_scan_points = 256;
  int n_rollouts_scan = 200;
  int n_refine_candidates = 8;
  int n_rollouts_refine = 1000;
  int refine_iterations = 30;
  int n_rollouts_final = 5000;
  double dedupe_distance = 0.15;
  double initial_step = 0.125;
  double min_step = 1.0 / 64.0;
  std::uint64_t seed = 0;

  void validate() const;
};

void to_json(nlohmann::json& j, const SearchConfig& c);
void from_json(const nlohmann::json& j, SearchConfig& c);

struct ScanPoint {
  TaskParams task;
  double regret = 0.0;
  double regret_se = 0.0;
};

struct RefineStep {
  int round = 0;
  double step = 0.0;
  TaskParams task;
  double regret = 0.0;
  bool moved = false;
};

struct RefineTrace {
  TaskParams start;
  TaskParams best;
  double best_regret = 0.0;
  int evaluations = 0;
  std::vector<RefineStep> steps;
};

struct SearchReport {
  SearchConfig config;
  std::uint64_t scan_seed = 0;
  std::uint64_t refine_seed = 0;
  std::uint64_t final_seed = 0;
  std::vector<ScanPoint> scanned;
  std::vector<RefineTrace> refinements;
  RegretEstimate selection;
};

void to_json(nlohmann::json& j, const SearchReport& r);

struct SearchResult {
  TaskParams task;
  RegretEstimate estimate;
  SearchReport report;
};

SearchResult maximize_regret(const GruWeights& weights, const SearchConfig& config,
                             const RolloutSettings& settings = {});

struct LandscapeRow {
  TaskParams task;
  double regret = 0.0;
  double regret_se = 0.0;
  double mixing_time = 0.0;
  double ambiguity = 0.0;
};

// Full grid_per_axis^4 grid with axis values k/(g-1); at most 11 per axis.
std::vector<LandscapeRow> regret_landscape(const GruWeights& weights, int grid_per_axis,
                                           int n_rollouts, std::uint64_t seed,
                                           const RolloutSettings& settings = {});

}  // namespace hmmac
