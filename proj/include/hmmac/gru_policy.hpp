#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "hmmac/env_hmm.hpp"
#include "hmmac/ideal_learner.hpp"
#include "hmmac/records.hpp"
#include "hmmac/rng.hpp"

namespace hmmac {

inline constexpr int kInputDim = 2;
inline constexpr int kDefaultHidden = 7;

// Parameter blocks of the recurrent policy, in storage order. Input matrices
// are hidden x 2 and recurrent matrices hidden x hidden, both row-major.
enum class GruBlock {
  kInputUpdate,
  kInputReset,
  kInputCandidate,
  kRecurrentUpdate,
  kRecurrentReset,
  kRecurrentCandidate,
  kBiasUpdate,
  kBiasReset,
  kBiasCandidate,
  kReadout,
  kReadoutBias,
  kInitialHidden,
};
inline constexpr int kGruBlockCount = 12;

// All parameters of the single-layer gated recurrent policy, stored flat.
// hidden = 7 gives 225 parameters.
class GruWeights {
 public:
  explicit GruWeights(int hidden = kDefaultHidden);

  static GruWeights zeros(int hidden = kDefaultHidden) { return GruWeights(hidden); }
  // Entries uniform in [-1/sqrt(hidden), 1/sqrt(hidden)], initial hidden state 0.
  static GruWeights random(std::uint64_t seed, int hidden = kDefaultHidden);

  static std::size_t parameter_count(int hidden);
  static std::size_t block_offset(int hidden, GruBlock block);
  static std::size_t block_size(int hidden, GruBlock block);

  int hidden() const { return hidden_; }
  std::size_t size() const { return theta_.size(); }

  std::span<double> block(GruBlock b);
  std::span<const double> block(GruBlock b) const;
  std::span<double> flat() { return theta_; }
  std::span<const double> flat() const { return theta_; }

  double& readout_bias() { return theta_[block_offset(hidden_, GruBlock::kReadoutBias)]; }
  double readout_bias() const { return theta_[block_offset(hidden_, GruBlock::kReadoutBias)]; }

  bool all_finite() const;

  friend bool operator==(const GruWeights&, const GruWeights&) = default;

 private:
  int hidden_;
  std::vector<double> theta_;
};

// Checkpoint format: {"dims":{"input":2,"hidden":H}, one row-major nested
// array per matrix, vectors as arrays, "metadata": {...}}.
nlohmann::json weights_to_json(const GruWeights& w,
                               const nlohmann::json& metadata = nlohmann::json::object());
GruWeights weights_from_json(const nlohmann::json& j);
void save_checkpoint(const std::string& path, const GruWeights& w,
                     const nlohmann::json& metadata = nlohmann::json::object());
GruWeights load_checkpoint(const std::string& path);

struct GruStepResult {
  std::vector<double> hidden;
  double logit = 0.0;
};

// z' = GRU(z, x); logit = w.z' + b.
GruStepResult gru_step(const GruWeights& weights, std::span<const double> hidden,
                       std::array<double, 2> input);

// (a_{t-1}, o_{t-1}); (0,0) at the first trial.
std::array<double, 2> encode_input(std::optional<std::uint8_t> prev_action,
                                   std::optional<std::uint8_t> prev_outcome);

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// Streams the policy through one episode. logit() is the current trial's
// logit; observe() feeds the trial's action and outcome.
class GruRunner {
 public:
  explicit GruRunner(const GruWeights& weights);

  double logit() const { return logit_; }
  double probability() const { return sigmoid(logit_); }
  // Greedy choice; logit exactly 0 chooses 1.
  std::uint8_t greedy_action() const { return logit_ >= 0.0 ? 1 : 0; }
  std::uint8_t sample_action(Rng& rng) const { return rng.uniform() < probability() ? 1 : 0; }
  std::span<const double> hidden() const { return h_; }

  void observe(std::uint8_t action, std::uint8_t outcome);

 private:
  void advance(double x0, double x1);

  const GruWeights& w_;
  std::vector<double> h_;
  std::vector<double> scratch_;
  double logit_ = 0.0;
};

// Mean per-trial negative log-likelihood of the recorded actions under
// teacher forcing.
double session_nll(const GruWeights& weights, const Episode& episode);
double session_nll(const GruWeights& weights, const SessionRecord& session);
// Mean over sessions of session_nll.
double dataset_nll(const GruWeights& weights, std::span<const Episode> episodes);

// Exact gradient of dataset_nll by backpropagation through time.
GruWeights nll_gradient(const GruWeights& weights, std::span<const Episode> episodes);
GruWeights nll_gradient(const GruWeights& weights, const Dataset& dataset);

struct FitConfig {
  double learning_rate = 5e-3;
  int max_epochs = 2000;
  int batch_size = 32;
  double clip_norm = 5.0;
  int patience = 50;
  double l2 = 1e-4;  // penalty 0.5 * l2 * |theta|^2
  double validation_fraction = 0.1;
  std::uint64_t seed = 0;

  void validate() const;
};

void to_json(nlohmann::json& j, const FitConfig& c);
void from_json(const nlohmann::json& j, FitConfig& c);

struct FitResult {
  GruWeights weights;
  double train_nll = 0.0;
  double validation_nll = 0.0;
  int epochs_run = 0;
  int best_epoch = 0;
  std::size_t n_train = 0;
  std::size_t n_validation = 0;
};

// Adam with global-norm clipping and early stopping on a held-out session
// split; returns the best-validation weights. Throws FitError on a
// non-finite loss.
FitResult fit(const GruWeights& init, std::span<const Episode> episodes, const FitConfig& config);
FitResult fit(const GruWeights& init, const Dataset& dataset, const FitConfig& config);

// Closed-loop accuracy on one trajectory; actions sampled from the policy.
double policy_rollout_accuracy(const GruWeights& weights, const Trajectory& traj,
                               std::uint64_t action_seed);

AccuracyEstimate evaluate_accuracy(const GruWeights& weights, const TaskParams& params,
                                   int horizon, int n_rollouts, std::uint64_t seed);

}  // namespace hmmac
