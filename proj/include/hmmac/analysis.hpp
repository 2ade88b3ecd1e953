#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "hmmac/env_hmm.hpp"
#include "hmmac/gru_policy.hpp"
#include "hmmac/records.hpp"
#include "hmmac/regret_search.hpp"

namespace hmmac {

// ---- fit deficit ---------------------------------------------------------

double fit_deficit(const GruWeights& model, const Dataset& dataset,
                   std::span<const GruWeights* const> pool);
double worst_case_deficit(const GruWeights& model, std::span<const Dataset* const> datasets,
                          std::span<const GruWeights* const> pool);

// Mean NLL of every model on every dataset, computed once.
class NllMatrix {
 public:
  NllMatrix(std::vector<std::string> model_ids, std::span<const GruWeights* const> models,
            std::vector<std::string> dataset_ids, std::span<const Dataset* const> datasets);

  double nll(std::size_t model, std::size_t dataset) const { return nll_[model * n_datasets_ + dataset]; }
  double best(std::size_t dataset) const;
  double deficit(std::size_t model, std::size_t dataset) const { return nll(model, dataset) - best(dataset); }
  // Max deficit over the given dataset indices.
  double worst_case(std::size_t model, std::span<const std::size_t> datasets) const;

  const std::vector<std::string>& model_ids() const { return model_ids_; }
  const std::vector<std::string>& dataset_ids() const { return dataset_ids_; }
  std::size_t model_index(const std::string& id) const;
  std::size_t dataset_index(const std::string& id) const;

  // Rows (model_id, dataset_id, mean_nll, deficit).
  std::string to_csv() const;

 private:
  std::vector<std::string> model_ids_;
  std::vector<std::string> dataset_ids_;
  std::size_t n_datasets_;
  std::vector<double> nll_;
};

// ---- trajectories --------------------------------------------------------

// Mean pi(a_t = 1) per step with observations clamped to `observations` and
// actions sampled from the model.
std::vector<double> model_trajectory(const GruWeights& weights,
                                     std::span<const std::uint8_t> observations, int n_rollouts,
                                     std::uint64_t seed);
std::vector<double> empirical_trajectory(const Dataset& dataset);
double l1_trajectory_distance(std::span<const double> p, std::span<const double> q);

// ---- n-gram Q features and distillation ---------------------------------

struct QFeatureConfig {
  int n = 1;
  double recency = 0.9;
  bool run_length = false;
  int window = 1;
  bool interactions = true;

  void validate() const;
  std::size_t size() const;
};

void to_json(nlohmann::json& j, const QFeatureConfig& c);
void from_json(const nlohmann::json& j, QFeatureConfig& c);

// Streaming recursion. Layout: Q over the 2^n grams (gram g read as a binary
// number, oldest bit first), then run length, then the last `window` outcomes
// (most recent first), then Q_g * last outcome.
class QFeatureTracker {
 public:
  explicit QFeatureTracker(const QFeatureConfig& config);
  void observe(std::uint8_t outcome);
  std::vector<double> features() const;
  void write(std::span<double> out) const;

 private:
  QFeatureConfig config_;
  std::vector<double> q_;
  std::vector<std::uint8_t> recent_;  // most recent first
  int run_ = 0;
};

std::vector<double> ngram_q_features(std::span<const std::uint8_t> history, const QFeatureConfig& config);

// Something that emits a logit per step and consumes (action, outcome).
class LogitPolicy {
 public:
  virtual ~LogitPolicy() = default;
  virtual void reset() = 0;
  virtual double logit() const = 0;
  virtual void observe(std::uint8_t action, std::uint8_t outcome) = 0;
};

class GruLogitPolicy final : public LogitPolicy {
 public:
  explicit GruLogitPolicy(const GruWeights& weights) : weights_(weights) { reset(); }
  void reset() override { runner_.emplace(weights_); }
  double logit() const override { return runner_->logit(); }
  void observe(std::uint8_t a, std::uint8_t o) override { runner_->observe(a, o); }

 private:
  const GruWeights& weights_;
  std::optional<GruRunner> runner_;
};

struct DistillResult {
  QFeatureConfig config;
  std::vector<double> coefficients;  // intercept first; dropped columns hold 0
  std::vector<std::size_t> dropped;  // feature indices removed as collinear
  double r2 = 0.0;                   // held-out
  std::size_t n_train_rows = 0;
  std::size_t n_test_rows = 0;
};

void to_json(nlohmann::json& j, const DistillResult& r);

// OLS of the policy logit on Q features, closed loop over the probe corpus;
// R^2 on a held-out 20% of sequences.
DistillResult distill_glm(LogitPolicy& policy, const QFeatureConfig& config,
                          std::span<const std::vector<std::uint8_t>> probe, std::uint64_t seed);
DistillResult distill_glm(const GruWeights& weights, const QFeatureConfig& config,
                          std::span<const std::vector<std::uint8_t>> probe, std::uint64_t seed);

// Best held-out R^2 over the recency grid.
inline constexpr std::array<double, 5> kRecencyGrid{0.5, 0.7, 0.8, 0.9, 0.95};
DistillResult distill_glm_best(const GruWeights& weights, QFeatureConfig config,
                               std::span<const std::vector<std::uint8_t>> probe, std::uint64_t seed);

// Observation sequences drawn from a uniform mixture over `tasks`.
std::vector<std::vector<std::uint8_t>> probe_corpus(std::span<const TaskParams> tasks, int n_sequences,
                                                    int length, std::uint64_t seed);

// ---- sequence clustering -------------------------------------------------

struct GaussianMixture {
  std::vector<double> weights;
  std::vector<std::vector<double>> means;
  std::vector<std::vector<double>> covariances;  // row-major d x d
  double log_likelihood = 0.0;
  std::vector<double> trace;  // log-likelihood after each EM iteration of the kept restart
  std::vector<int> labels;
};

// kKMeans: k-means++ centres refined by Lloyd iterations, then the mixture
// is initialised from the hard partition. kPoints: k-means++ centres with the
// pooled covariance and equal weights.
enum class GmmInit { kKMeans, kPoints };

// EM stops once the mean per-point log-likelihood changes by less than
// `tolerance` between iterations.
struct GmmOptions {
  int restarts = 5;
  int max_iterations = 1000;
  double tolerance = 1e-10;
  GmmInit init = GmmInit::kPoints;

  void validate() const;
};

void to_json(nlohmann::json& j, const GmmOptions& o);
void from_json(const nlohmann::json& j, GmmOptions& o);

// Full-covariance EM; the restart with the highest log-likelihood is kept.
GaussianMixture fit_gaussian_mixture(const std::vector<std::vector<double>>& points, int k,
                                     std::uint64_t seed, const GmmOptions& options = {});

struct ClusterSummary {
  std::size_t size = 0;
  double mean_ones = 0.0;
  double mean_alts = 0.0;
  std::array<double, 2> mean_logits{};
};

struct ClusterReport {
  int length = 0;
  std::size_t n_sequences = 0;
  std::vector<ClusterSummary> clusters;
  double ones_gap = 0.0;  // max pairwise difference of cluster means
  double alts_gap = 0.0;
  double log_likelihood = 0.0;
};

void to_json(nlohmann::json& j, const ClusterReport& r);

double ones_fraction(std::span<const std::uint8_t> seq);
double alts_fraction(std::span<const std::uint8_t> seq);

// All 2^length sequences, greedy closed-loop actions, logits after the last
// two observations, k-component Gaussian mixture.
ClusterReport cluster_sequences(const GruWeights& weights, int length = 15, int k = 2,
                                std::uint64_t seed = 0, const GmmOptions& options = {});

// ---- task-space map ------------------------------------------------------

struct EnvMapRow {
  std::string source;  // "input" or "background"
  TaskParams task;
  double mixing_time = 0.0;
  double ambiguity = 0.0;
  std::optional<double> regret;
};

struct EnvMapOptions {
  int background = 10000;
  int n_rollouts = 200;
  RolloutSettings rollouts;
};

std::vector<EnvMapRow> env_map(std::span<const TaskParams> params, const GruWeights* model,
                               std::uint64_t seed, const EnvMapOptions& options = {});
std::string env_map_csv(std::span<const EnvMapRow> rows);

}  // namespace hmmac
