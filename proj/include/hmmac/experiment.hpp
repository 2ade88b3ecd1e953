#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "hmmac/ac_loop.hpp"
#include "hmmac/analysis.hpp"

namespace hmmac {

struct DeficitCurves {
  std::vector<int> prefixes;
  std::vector<double> ac;                        // worst-case deficit per prefix
  std::map<std::string, std::vector<double>> random;
  std::vector<double> random_mean;
};

struct ExperimentSummary {
  std::uint64_t root_seed = 0;
  DeficitCurves deficits;
  ConvergenceReport convergence;
  std::map<int, DistillResult> distill_seed;   // keyed by gram length
  std::map<int, DistillResult> distill_final;
  ClusterReport cluster_seed;
  ClusterReport cluster_final;
  double median_ambiguity_selected = 0.0;
  double median_ambiguity_background = 0.0;
  double seconds = 0.0;
};

void to_json(nlohmann::json& j, const ExperimentSummary& s);

// Worst-case deficits over held-out datasets for the AC prefix models and the
// random-corpus prefix models, using every fitted model as the pool.
DeficitCurves deficit_curves(const AcLoop& loop, const RandomCorpora& random, std::string* nll_csv = nullptr);

// Environment groups for the distillation probe: the seed-phase family counts
// as one group, each selected environment as another.
std::vector<std::vector<std::uint8_t>> experiment_probe(const AcLoop& loop, int n_sequences, int length,
                                                        std::uint64_t seed);

// Runs every analysis on a finished loop and random corpora; writes CSV tables
// and manifest.json into dir/analysis.
ExperimentSummary analyze_experiment(const AcLoop& loop, const RandomCorpora& random);

// Seed phase, all AC iterations, random corpora and analysis, resuming any
// finished stages found in `dir`.
ExperimentSummary run_experiment(const ExperimentConfig& config, const std::filesystem::path& dir,
                                 ParticipantSource& source);

}  // namespace hmmac
