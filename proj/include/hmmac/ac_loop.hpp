#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "hmmac/agents.hpp"
#include "hmmac/analysis.hpp"
#include "hmmac/gru_policy.hpp"
#include "hmmac/ideal_learner.hpp"
#include "hmmac/records.hpp"
#include "hmmac/regret_search.hpp"

namespace hmmac {

struct ParticipantConfig {
  std::string mode = "synthetic";  // or "queue"
  std::string plan_path;           // queue mode: pending-environment plan
  std::string data_dir;            // queue mode: where the service writes datasets
  double timeout_seconds = 7 * 24 * 3600.0;
  int poll_milliseconds = 1000;
};

struct ConvergenceThresholds {
  double regret_gap = 0.02;
  double distance = 0.1;
};

struct AnalysisSettings {
  int probe_sequences = 2000;
  int probe_length = 50;
  QFeatureConfig features;
  int cluster_length = 15;
  int cluster_k = 2;
  GmmOptions cluster_mixture;
  int env_map_background = 10000;
  int trajectory_rollouts = 200;
};

struct ExperimentConfig {
  std::string preset = "desk";
  int horizon = 50;
  int n_seed_sessions = 30;
  int sessions_per_env = 30;
  int ac_iterations = 5;
  int n_random_envs = 8;
  int n_random_subsets = 5;
  int random_subset_size = 5;
  int hidden = 7;
  bool warm_start = true;
  int il_observed_rollouts = 5000;
  FilterConfig filter;
  FitConfig fit;
  SearchConfig search;
  PopulationSpec population = PopulationSpec::default_mixed();
  ParticipantConfig participants;
  ConvergenceThresholds convergence;
  AnalysisSettings analysis;
  std::uint64_t root_seed = 1;

  void validate() const;
  RolloutSettings rollouts() const { return {horizon, filter}; }

  // 30 sessions per environment, 5 AC iterations, 8 random environments, K = 5.
  static ExperimentConfig desk();
  // 100 sessions per environment, K = 10: 14 environments and 66 models.
  static ExperimentConfig full();
  // Desk shape with reduced search and filter budgets for repeated runs.
  static ExperimentConfig quick();
  static ExperimentConfig preset_named(const std::string& name);
};

void to_json(nlohmann::json& j, const ExperimentConfig& c);
// Keys absent from `j` keep the values of the preset named in j["preset"].
void from_json(const nlohmann::json& j, ExperimentConfig& c);
ExperimentConfig load_config(const std::filesystem::path& path);

// ---- participant sources -----------------------------------------------

struct CollectionRequest {
  std::vector<TaskParams> tasks;  // one per session
  int horizon = 50;
  std::uint64_t seed = 0;
  std::string corpus_tag;
  int iteration_index = 0;
};

class ParticipantSource {
 public:
  virtual ~ParticipantSource() = default;
  // Throws CollectionError when the source cannot deliver.
  virtual Dataset collect(const CollectionRequest& request) = 0;
};

class SyntheticSource final : public ParticipantSource {
 public:
  explicit SyntheticSource(PopulationSpec population) : population_(std::move(population)) {}
  Dataset collect(const CollectionRequest& request) override;

 private:
  PopulationSpec population_;
};

// Pending-environment plan shared with the session service. The loop is the
// only writer of the plan; the service records assignments and writes one
// dataset file per corpus tag.
struct PlanSlot {
  std::string slot_id;
  std::string corpus_tag;
  int iteration_index = 0;
  TaskParams task;
  std::uint64_t seed = 0;
  int horizon = 50;
};

void to_json(nlohmann::json& j, const PlanSlot& s);
void from_json(const nlohmann::json& j, PlanSlot& s);

std::vector<PlanSlot> read_plan(const std::filesystem::path& path);
void write_plan(const std::filesystem::path& path, const std::vector<PlanSlot>& slots);
std::filesystem::path dataset_path_for(const std::filesystem::path& data_dir, const std::string& corpus_tag);

class QueueSource final : public ParticipantSource {
 public:
  explicit QueueSource(ParticipantConfig config) : config_(std::move(config)) {}
  Dataset collect(const CollectionRequest& request) override;

 private:
  ParticipantConfig config_;
};

std::unique_ptr<ParticipantSource> make_source(const ExperimentConfig& config);

// ---- loop ---------------------------------------------------------------

struct AcIterationRecord {
  int iteration = 0;  // index g of the environment M_g this iteration selected (2, 3, ...)
  TaskParams selected;
  RegretEstimate predicted;
  AccuracyEstimate il_observed;
  double dataset_accuracy = 0.0;
  double observed_regret = 0.0;
  RegretEstimate postdicted;
  double min_sym_distance = 0.0;
  std::string model_checkpoint;  // refit model, relative to the loop directory
  std::string dataset;           // relative to the loop directory
  std::string search_report;
  std::string corpus_fingerprint;
  std::string filter_config_hash;
};

void to_json(nlohmann::json& j, const AcIterationRecord& r);
void from_json(const nlohmann::json& j, AcIterationRecord& r);

struct ModelEntry {
  std::string id;
  int prefix = 0;
  std::string checkpoint;
  std::string corpus_fingerprint;
  double train_nll = 0.0;
  double validation_nll = 0.0;
  int epochs = 0;
};

void to_json(nlohmann::json& j, const ModelEntry& m);
void from_json(const nlohmann::json& j, ModelEntry& m);

struct DatasetEntry {
  std::string tag;
  std::string path;
  std::string fingerprint;
  std::vector<TaskParams> tasks;  // distinct environments in the dataset
};

void to_json(nlohmann::json& j, const DatasetEntry& d);
void from_json(const nlohmann::json& j, DatasetEntry& d);

struct LoopState {
  ExperimentConfig config;
  std::vector<DatasetEntry> datasets;  // D1, then one per AC iteration
  std::vector<ModelEntry> models;      // prefix 1, 2, ...
  std::vector<AcIterationRecord> records;
};

void to_json(nlohmann::json& j, const LoopState& s);
void from_json(const nlohmann::json& j, LoopState& s);

// Seed phase: each session gets its own r ~ U[0,1] with r1 = r2 = r; p1, p2 are
// drawn and stored but do not affect observations.
std::vector<TaskParams> seed_phase_tasks(int n_sessions, std::uint64_t seed);
Dataset run_seed_phase(const ExperimentConfig& config, ParticipantSource& source, std::uint64_t seed);

// Seeds a prefix fit from the corpus fingerprint so identical corpora give
// identical fits.
std::uint64_t fit_seed_for(std::uint64_t root_seed, const std::string& corpus_fingerprint);
GruWeights initial_weights(const ExperimentConfig& config);

class AcLoop {
 public:
  // Fresh loop in `dir`; nothing is run yet.
  AcLoop(ExperimentConfig config, std::filesystem::path dir);
  // Resume from dir/state.json.
  static AcLoop resume(const std::filesystem::path& dir);
  static bool exists(const std::filesystem::path& dir);

  // Collects D1 and fits the prefix-1 model. No-op when already done.
  void run_seed_phase(ParticipantSource& source);
  // One select / collect / refit step. State is saved only on success.
  AcIterationRecord run_iteration(ParticipantSource& source);
  void run(int iterations, ParticipantSource& source);

  const LoopState& state() const { return state_; }
  const std::filesystem::path& dir() const { return dir_; }
  bool seeded() const { return !state_.models.empty(); }
  int iterations_done() const { return static_cast<int>(state_.records.size()); }

  GruWeights model(int prefix) const;
  Dataset dataset(std::size_t index) const;
  // D1 plus every selected environment.
  std::vector<TaskParams> experiment_tasks() const;

  void save() const;

 private:
  std::filesystem::path dir_;
  LoopState state_;
};

// ---- random comparison corpora -------------------------------------------

struct RandomCorpus {
  std::string id;                 // "R1", ...
  std::vector<int> members;       // indices into the random environments, in prefix order
  std::vector<ModelEntry> models; // prefix 1..subset_size+1
};

struct RandomCorpora {
  std::vector<TaskParams> envs;
  std::vector<DatasetEntry> datasets;
  std::vector<RandomCorpus> corpora;
};

void to_json(nlohmann::json& j, const RandomCorpora& r);
void from_json(const nlohmann::json& j, RandomCorpora& r);

// K distinct size-s subsets of {0..n-1}, each in random order.
std::vector<std::vector<int>> draw_distinct_subsets(int n, int subset_size, int k, std::uint64_t seed);

// Collects one dataset per random environment and fits prefix models for each
// corpus D1 + subset. Results land in dir/random/ and dir/random/corpora.json.
RandomCorpora build_random_corpora(const AcLoop& loop, ParticipantSource& source);
std::optional<RandomCorpora> load_random_corpora(const std::filesystem::path& dir);

// ---- reporting ------------------------------------------------------------

struct ConvergenceRow {
  int iteration = 0;
  double predicted = 0.0;
  double observed = 0.0;
  double postdicted = 0.0;
  double min_sym_distance = 0.0;
};

struct ConvergenceReport {
  std::vector<ConvergenceRow> rows;
  bool converged = false;
  std::optional<int> converged_at;
};

void to_json(nlohmann::json& j, const ConvergenceReport& r);
ConvergenceReport convergence_report(const std::vector<AcIterationRecord>& records,
                                     const ConvergenceThresholds& thresholds = {});
std::string convergence_csv(const ConvergenceReport& report);

struct CorpusPlanEntry {
  std::string corpus;
  std::vector<std::string> prefix_datasets;  // dataset tags, D1 first
};

struct ReplicationPlan {
  int n_environments = 0;
  int n_models = 0;          // one per (corpus, prefix)
  int n_distinct_fits = 0;   // prefix-1 model shared by every corpus
  std::vector<std::vector<int>> subsets;
  std::vector<CorpusPlanEntry> corpora;
};

void to_json(nlohmann::json& j, const ReplicationPlan& p);
ReplicationPlan plan_replication(const ExperimentConfig& config);

}  // namespace hmmac
