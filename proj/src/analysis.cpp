#include "hmmac/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

#include <Eigen/Dense>

#include "hmmac/errors.hpp"

namespace hmmac {

double fit_deficit(const GruWeights& model, const Dataset& dataset,
                   std::span<const GruWeights* const> pool) {
  if (pool.empty()) throw ArgumentError("fit_deficit: empty model pool");
  const auto episodes = dataset.episodes();
  const double own = dataset_nll(model, episodes);
  double best = own;
  for (const GruWeights* m : pool) best = std::min(best, m == &model ? own : dataset_nll(*m, episodes));
  return own - best;
}

double worst_case_deficit(const GruWeights& model, std::span<const Dataset* const> datasets,
                          std::span<const GruWeights* const> pool) {
  if (datasets.empty()) throw ArgumentError("worst_case_deficit: no datasets");
  double worst = 0.0;
  for (const Dataset* d : datasets) worst = std::max(worst, fit_deficit(model, *d, pool));
  return worst;
}

NllMatrix::NllMatrix(std::vector<std::string> model_ids, std::span<const GruWeights* const> models,
                     std::vector<std::string> dataset_ids, std::span<const Dataset* const> datasets)
    : model_ids_(std::move(model_ids)), dataset_ids_(std::move(dataset_ids)), n_datasets_(datasets.size()) {
  if (models.empty()) throw ArgumentError("NllMatrix: empty model pool");
  if (model_ids_.size() != models.size() || dataset_ids_.size() != datasets.size()) {
    throw ArgumentError("NllMatrix: id count mismatch");
  }
  nll_.resize(models.size() * n_datasets_);
  for (std::size_t d = 0; d < n_datasets_; ++d) {
    const auto episodes = datasets[d]->episodes();
    for (std::size_t m = 0; m < models.size(); ++m) nll_[m * n_datasets_ + d] = dataset_nll(*models[m], episodes);
  }
}

double NllMatrix::best(std::size_t dataset) const {
  double b = std::numeric_limits<double>::infinity();
  for (std::size_t m = 0; m < model_ids_.size(); ++m) b = std::min(b, nll(m, dataset));
  return b;
}

double NllMatrix::worst_case(std::size_t model, std::span<const std::size_t> datasets) const {
  if (datasets.empty()) throw ArgumentError("worst_case: no datasets");
  double w = 0.0;
  for (std::size_t d : datasets) w = std::max(w, deficit(model, d));
  return w;
}

std::size_t NllMatrix::model_index(const std::string& id) const {
  const auto it = std::find(model_ids_.begin(), model_ids_.end(), id);
  if (it == model_ids_.end()) throw ArgumentError("unknown model id " + id);
  return static_cast<std::size_t>(it - model_ids_.begin());
}

std::size_t NllMatrix::dataset_index(const std::string& id) const {
  const auto it = std::find(dataset_ids_.begin(), dataset_ids_.end(), id);
  if (it == dataset_ids_.end()) throw ArgumentError("unknown dataset id " + id);
  return static_cast<std::size_t>(it - dataset_ids_.begin());
}

std::string NllMatrix::to_csv() const {
  std::ostringstream out;
  out.precision(10);
  out << "model_id,dataset_id,mean_nll,deficit\n";
  for (std::size_t m = 0; m < model_ids_.size(); ++m)
    for (std::size_t d = 0; d < n_datasets_; ++d)
      out << model_ids_[m] << ',' << dataset_ids_[d] << ',' << nll(m, d) << ',' << deficit(m, d) << '\n';
  return out.str();
}

std::vector<double> model_trajectory(const GruWeights& weights,
                                     std::span<const std::uint8_t> observations, int n_rollouts,
                                     std::uint64_t seed) {
  if (observations.empty()) throw ArgumentError("model_trajectory: empty sequence");
  if (n_rollouts < 1) throw ArgumentError("model_trajectory: n_rollouts must be >= 1");
  std::vector<double> mean(observations.size(), 0.0);
  for (int r = 0; r < n_rollouts; ++r) {
    GruRunner runner(weights);
    Rng rng(derive_seed(seed, r));
    for (std::size_t t = 0; t < observations.size(); ++t) {
      mean[t] += runner.probability();
      runner.observe(runner.sample_action(rng), observations[t]);
    }
  }
  for (double& m : mean) m /= n_rollouts;
  return mean;
}

std::vector<double> empirical_trajectory(const Dataset& dataset) {
  if (dataset.sessions.empty()) throw ArgumentError("empirical_trajectory: empty dataset");
  const auto& first = dataset.sessions.front().trials;
  std::vector<double> frac(first.size(), 0.0);
  for (const auto& s : dataset.sessions) {
    if (s.trials.size() != first.size()) throw ArgumentError("empirical_trajectory: mixed horizons");
    for (std::size_t t = 0; t < first.size(); ++t) {
      if (s.trials[t].outcome != first[t].outcome) {
        throw ArgumentError("empirical_trajectory: sessions have different observation sequences");
      }
      frac[t] += s.trials[t].action;
    }
  }
  for (double& f : frac) f /= static_cast<double>(dataset.sessions.size());
  return frac;
}

double l1_trajectory_distance(std::span<const double> p, std::span<const double> q) {
  if (p.size() != q.size()) throw ArgumentError("l1_trajectory_distance: length mismatch");
  if (p.empty()) return 0.0;
  double s = 0.0;
  for (std::size_t t = 0; t < p.size(); ++t) s += std::abs(p[t] - q[t]);
  return s / static_cast<double>(p.size());
}

void QFeatureConfig::validate() const {
  if (n < 1 || n > 3) throw ConfigError("QFeatureConfig: n must be 1, 2 or 3");
  if (!(recency > 0.0 && recency < 1.0)) throw ConfigError("QFeatureConfig: recency must lie in (0,1)");
  if (window < 0) throw ConfigError("QFeatureConfig: window must be >= 0");
}

std::size_t QFeatureConfig::size() const {
  const std::size_t grams = std::size_t{1} << n;
  return grams + (run_length ? 1 : 0) + static_cast<std::size_t>(window) + (interactions ? grams : 0);
}

void to_json(nlohmann::json& j, const QFeatureConfig& c) {
  j = nlohmann::json{{"n", c.n}, {"recency", c.recency}, {"run_length", c.run_length},
                     {"window", c.window}, {"interactions", c.interactions}};
}

void from_json(const nlohmann::json& j, QFeatureConfig& c) {
  c.n = j.value("n", c.n);
  c.recency = j.value("recency", c.recency);
  c.run_length = j.value("run_length", c.run_length);
  c.window = j.value("window", c.window);
  c.interactions = j.value("interactions", c.interactions);
  c.validate();
}

QFeatureTracker::QFeatureTracker(const QFeatureConfig& config)
    : config_(config), q_(std::size_t{1} << config.n, 0.0) {
  config_.validate();
}

void QFeatureTracker::observe(std::uint8_t outcome) {
  run_ = (!recent_.empty() && recent_.front() == outcome) ? run_ + 1 : 1;
  recent_.insert(recent_.begin(), outcome);
  const std::size_t keep = static_cast<std::size_t>(std::max(config_.n, config_.window));
  if (recent_.size() > keep) recent_.resize(keep);
  if (recent_.size() < static_cast<std::size_t>(config_.n)) return;
  std::size_t hit = 0;
  for (int i = config_.n - 1; i >= 0; --i) hit = (hit << 1) | recent_[static_cast<std::size_t>(i)];
  const double lambda = config_.recency;
  for (std::size_t g = 0; g < q_.size(); ++g) q_[g] = lambda * q_[g] + (g == hit ? 1.0 - lambda : 0.0);
}

void QFeatureTracker::write(std::span<double> out) const {
  std::size_t k = 0;
  for (double q : q_) out[k++] = q;
  if (config_.run_length) out[k++] = run_;
  for (int i = 0; i < config_.window; ++i) {
    out[k++] = static_cast<std::size_t>(i) < recent_.size() ? recent_[static_cast<std::size_t>(i)] : 0.0;
  }
  if (config_.interactions) {
    const double last = recent_.empty() ? 0.0 : recent_.front();
    for (double q : q_) out[k++] = q * last;
  }
}

std::vector<double> QFeatureTracker::features() const {
  std::vector<double> f(config_.size());
  write(f);
  return f;
}

std::vector<double> ngram_q_features(std::span<const std::uint8_t> history, const QFeatureConfig& config) {
  QFeatureTracker tracker(config);
  for (auto o : history) tracker.observe(o);
  return tracker.features();
}

void to_json(nlohmann::json& j, const DistillResult& r) {
  j = nlohmann::json{{"config", r.config},       {"coefficients", r.coefficients},
                     {"dropped", r.dropped},     {"r2", r.r2},
                     {"n_train_rows", r.n_train_rows}, {"n_test_rows", r.n_test_rows}};
}

DistillResult distill_glm(LogitPolicy& policy, const QFeatureConfig& config,
                          std::span<const std::vector<std::uint8_t>> probe, std::uint64_t seed) {
  config.validate();
  if (probe.empty()) throw ArgumentError("distill_glm: empty probe corpus");
  const std::size_t p = config.size() + 1;

  std::vector<std::size_t> order(probe.size());
  std::iota(order.begin(), order.end(), 0);
  Rng split(derive_seed(seed, 0xd157));
  for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[split.below(i)]);
  std::size_t n_test = probe.size() >= 2 ? std::max<std::size_t>(1, probe.size() / 5) : 0;
  std::vector<bool> is_test(probe.size(), false);
  for (std::size_t i = 0; i < n_test; ++i) is_test[order[i]] = true;

  std::size_t train_rows = 0, test_rows = 0;
  for (std::size_t s = 0; s < probe.size(); ++s) (is_test[s] ? test_rows : train_rows) += probe[s].size();
  if (train_rows == 0) throw ArgumentError("distill_glm: no training rows");
  Eigen::MatrixXd xtr(train_rows, p), xte(test_rows, p);
  Eigen::VectorXd ytr(train_rows), yte(test_rows);

  std::vector<double> f(config.size());
  std::size_t itr = 0, ite = 0;
  for (std::size_t s = 0; s < probe.size(); ++s) {
    policy.reset();
    QFeatureTracker tracker(config);
    Rng actions(derive_seed(seed, s));
    for (std::uint8_t o : probe[s]) {
      tracker.write(f);
      const double logit = policy.logit();
      Eigen::MatrixXd& x = is_test[s] ? xte : xtr;
      Eigen::VectorXd& y = is_test[s] ? yte : ytr;
      std::size_t& row = is_test[s] ? ite : itr;
      x(row, 0) = 1.0;
      for (std::size_t k = 0; k < f.size(); ++k) x(row, k + 1) = f[k];
      y(row) = logit;
      ++row;
      const std::uint8_t a = actions.uniform() < 1.0 / (1.0 + std::exp(-logit)) ? 1 : 0;
      policy.observe(a, o);
      tracker.observe(o);
    }
  }

  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(xtr);
  const Eigen::VectorXd beta = qr.solve(ytr);
  DistillResult out;
  out.config = config;
  out.coefficients.assign(beta.data(), beta.data() + beta.size());
  const auto rank = static_cast<std::size_t>(qr.rank());
  for (std::size_t i = rank; i < p; ++i) {
    const auto col = static_cast<std::size_t>(qr.colsPermutation().indices()(static_cast<Eigen::Index>(i)));
    out.coefficients[col] = 0.0;
    if (col > 0) out.dropped.push_back(col - 1);
  }
  std::sort(out.dropped.begin(), out.dropped.end());
  out.n_train_rows = train_rows;
  out.n_test_rows = test_rows;

  const Eigen::MatrixXd& x = test_rows > 0 ? xte : xtr;
  const Eigen::VectorXd& y = test_rows > 0 ? yte : ytr;
  const Eigen::VectorXd b = Eigen::Map<const Eigen::VectorXd>(out.coefficients.data(), static_cast<Eigen::Index>(p));
  const double sse = (y - x * b).squaredNorm();
  const double sst = (y.array() - y.mean()).square().sum();
  // A constant target has no variance to explain; score by exactness.
  const double scale = static_cast<double>(y.size()) * std::max(1.0, y.mean() * y.mean());
  out.r2 = sst > 1e-20 * scale ? 1.0 - sse / sst : (sse < 1e-12 * scale ? 1.0 : 0.0);
  return out;
}

DistillResult distill_glm(const GruWeights& weights, const QFeatureConfig& config,
                          std::span<const std::vector<std::uint8_t>> probe, std::uint64_t seed) {
  GruLogitPolicy policy(weights);
  return distill_glm(policy, config, probe, seed);
}

DistillResult distill_glm_best(const GruWeights& weights, QFeatureConfig config,
                               std::span<const std::vector<std::uint8_t>> probe, std::uint64_t seed) {
  std::optional<DistillResult> best;
  for (double lambda : kRecencyGrid) {
    config.recency = lambda;
    auto r = distill_glm(weights, config, probe, seed);
    if (!best || r.r2 > best->r2) best = std::move(r);
  }
  return *best;
}

std::vector<std::vector<std::uint8_t>> probe_corpus(std::span<const TaskParams> tasks, int n_sequences,
                                                    int length, std::uint64_t seed) {
  if (tasks.empty()) throw ArgumentError("probe_corpus: no environments");
  Rng pick(seed);
  std::vector<std::vector<std::uint8_t>> out;
  out.reserve(static_cast<std::size_t>(n_sequences));
  for (int i = 0; i < n_sequences; ++i) {
    const auto& task = tasks[pick.below(tasks.size())];
    out.push_back(sample_trajectory(task, length, derive_seed(seed, i)).observations);
  }
  return out;
}

namespace {

struct EmRun {
  GaussianMixture model;
  Eigen::MatrixXd resp;
};

std::vector<Eigen::VectorXd> seed_points(const Eigen::MatrixXd& x, int k, Rng& rng) {
  const auto n = x.rows();
  std::vector<Eigen::VectorXd> mu;
  mu.push_back(x.row(static_cast<Eigen::Index>(rng.below(static_cast<std::uint64_t>(n)))).transpose());
  Eigen::VectorXd d2(n);
  while (static_cast<int>(mu.size()) < k) {
    double total = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      double best = std::numeric_limits<double>::infinity();
      for (const auto& m : mu) best = std::min(best, (x.row(i).transpose() - m).squaredNorm());
      d2(i) = best;
      total += best;
    }
    Eigen::Index pick = static_cast<Eigen::Index>(rng.below(static_cast<std::uint64_t>(n)));
    if (total > 0.0) {
      double u = rng.uniform() * total;
      for (Eigen::Index i = 0; i < n; ++i) {
        u -= d2(i);
        if (u <= 0.0) {
          pick = i;
          break;
        }
      }
    }
    mu.push_back(x.row(pick).transpose());
  }
  return mu;
}

// Lloyd iterations from the given centres; returns hard labels.
std::vector<int> lloyd(const Eigen::MatrixXd& x, std::vector<Eigen::VectorXd> mu) {
  const auto n = x.rows();
  const auto k = static_cast<int>(mu.size());
  std::vector<int> label(static_cast<std::size_t>(n), -1);
  for (int iter = 0; iter < 300; ++iter) {
    bool changed = false;
    for (Eigen::Index i = 0; i < n; ++i) {
      int arg = 0;
      double best = std::numeric_limits<double>::infinity();
      for (int c = 0; c < k; ++c) {
        const double dist = (x.row(i).transpose() - mu[static_cast<std::size_t>(c)]).squaredNorm();
        if (dist < best) {
          best = dist;
          arg = c;
        }
      }
      if (label[static_cast<std::size_t>(i)] != arg) changed = true;
      label[static_cast<std::size_t>(i)] = arg;
    }
    if (!changed) break;
    for (int c = 0; c < k; ++c) {
      Eigen::VectorXd sum = Eigen::VectorXd::Zero(x.cols());
      int count = 0;
      for (Eigen::Index i = 0; i < n; ++i)
        if (label[static_cast<std::size_t>(i)] == c) {
          sum += x.row(i).transpose();
          ++count;
        }
      if (count > 0) mu[static_cast<std::size_t>(c)] = sum / count;
    }
  }
  return label;
}

EmRun run_em(const Eigen::MatrixXd& x, int k, Rng& rng, const GmmOptions& options) {
  const auto n = x.rows();
  const auto d = x.cols();
  constexpr double kRidge = 1e-6;
  const double log_2pi = std::log(2.0 * 3.14159265358979323846);

  std::vector<Eigen::VectorXd> mu = seed_points(x, k, rng);
  std::vector<Eigen::MatrixXd> cov;
  std::vector<double> w(static_cast<std::size_t>(k), 1.0 / k);
  const Eigen::RowVectorXd centre = x.colwise().mean();
  const Eigen::MatrixXd centred = x.rowwise() - centre;
  Eigen::MatrixXd overall = centred.transpose() * centred / static_cast<double>(n);
  overall += kRidge * Eigen::MatrixXd::Identity(d, d);
  for (int c = 0; c < k; ++c) cov.push_back(overall);

  if (options.init == GmmInit::kKMeans) {
    const auto label = lloyd(x, mu);
    for (int c = 0; c < k; ++c) {
      const auto cs = static_cast<std::size_t>(c);
      std::vector<Eigen::Index> members;
      for (Eigen::Index i = 0; i < n; ++i)
        if (label[static_cast<std::size_t>(i)] == c) members.push_back(i);
      if (members.size() < 2) continue;
      Eigen::MatrixXd block(static_cast<Eigen::Index>(members.size()), d);
      for (std::size_t m = 0; m < members.size(); ++m) block.row(static_cast<Eigen::Index>(m)) = x.row(members[m]);
      mu[cs] = block.colwise().mean().transpose();
      const Eigen::MatrixXd diff = block.rowwise() - mu[cs].transpose();
      cov[cs] = diff.transpose() * diff / static_cast<double>(members.size()) + kRidge * Eigen::MatrixXd::Identity(d, d);
      w[cs] = static_cast<double>(members.size()) / static_cast<double>(n);
    }
  }

  Eigen::MatrixXd logp(n, k), resp(n, k);
  GaussianMixture gm;
  double prev = -std::numeric_limits<double>::infinity();
  for (int iter = 0; iter < options.max_iterations; ++iter) {
    for (int c = 0; c < k; ++c) {
      Eigen::LLT<Eigen::MatrixXd> llt(cov[static_cast<std::size_t>(c)]);
      const Eigen::MatrixXd L = llt.matrixL();
      const double log_det = 2.0 * L.diagonal().array().log().sum();
      const double base = std::log(std::max(w[static_cast<std::size_t>(c)], 1e-300)) -
                          0.5 * (static_cast<double>(d) * log_2pi + log_det);
      const Eigen::MatrixXd diff = (x.rowwise() - mu[static_cast<std::size_t>(c)].transpose()).transpose();
      const Eigen::MatrixXd z = L.triangularView<Eigen::Lower>().solve(diff);
      logp.col(c) = (base - 0.5 * z.colwise().squaredNorm().array()).matrix().transpose();
    }
    double ll = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      const double m = logp.row(i).maxCoeff();
      const double lse = m + std::log((logp.row(i).array() - m).exp().sum());
      resp.row(i) = (logp.row(i).array() - lse).exp();
      ll += lse;
    }
    gm.trace.push_back(ll);
    if (iter > 0 && std::abs(ll - prev) / static_cast<double>(n) < options.tolerance) break;
    prev = ll;
    for (int c = 0; c < k; ++c) {
      const double nk = resp.col(c).sum();
      const auto cs = static_cast<std::size_t>(c);
      if (nk < 1e-12) continue;
      w[cs] = nk / static_cast<double>(n);
      mu[cs] = (x.transpose() * resp.col(c)) / nk;
      const Eigen::MatrixXd diff = x.rowwise() - mu[cs].transpose();
      cov[cs] = (diff.transpose() * resp.col(c).asDiagonal() * diff) / nk + kRidge * Eigen::MatrixXd::Identity(d, d);
    }
  }
  gm.log_likelihood = gm.trace.back();
  gm.weights = w;
  for (int c = 0; c < k; ++c) {
    const auto cs = static_cast<std::size_t>(c);
    gm.means.emplace_back(mu[cs].data(), mu[cs].data() + d);
    std::vector<double> flat(static_cast<std::size_t>(d * d));
    for (Eigen::Index r = 0; r < d; ++r)
      for (Eigen::Index q = 0; q < d; ++q) flat[static_cast<std::size_t>(r * d + q)] = cov[cs](r, q);
    gm.covariances.push_back(std::move(flat));
  }
  gm.labels.resize(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) {
    Eigen::Index arg;
    resp.row(i).maxCoeff(&arg);
    gm.labels[static_cast<std::size_t>(i)] = static_cast<int>(arg);
  }
  return {std::move(gm), std::move(resp)};
}

}  // namespace

void GmmOptions::validate() const {
  if (restarts < 1) throw ArgumentError("GmmOptions: restarts must be >= 1");
  if (max_iterations < 1) throw ArgumentError("GmmOptions: max_iterations must be >= 1");
  if (!(tolerance >= 0.0)) throw ArgumentError("GmmOptions: tolerance must be >= 0");
}

void to_json(nlohmann::json& j, const GmmOptions& o) {
  j = nlohmann::json{{"restarts", o.restarts},
                     {"max_iterations", o.max_iterations},
                     {"tolerance", o.tolerance},
                     {"init", o.init == GmmInit::kKMeans ? "kmeans" : "points"}};
}

void from_json(const nlohmann::json& j, GmmOptions& o) {
  o = GmmOptions{};
  o.restarts = j.value("restarts", o.restarts);
  o.max_iterations = j.value("max_iterations", o.max_iterations);
  o.tolerance = j.value("tolerance", o.tolerance);
  const auto init = j.value("init", std::string(o.init == GmmInit::kKMeans ? "kmeans" : "points"));
  if (init == "kmeans") o.init = GmmInit::kKMeans;
  else if (init == "points") o.init = GmmInit::kPoints;
  else throw ConfigError("GmmOptions: unknown init '" + init + "'");
  o.validate();
}

GaussianMixture fit_gaussian_mixture(const std::vector<std::vector<double>>& points, int k,
                                     std::uint64_t seed, const GmmOptions& options) {
  if (k < 1) throw ArgumentError("fit_gaussian_mixture: k must be >= 1");
  if (points.size() < static_cast<std::size_t>(k)) throw ArgumentError("fit_gaussian_mixture: fewer points than components");
  options.validate();
  const auto d = static_cast<Eigen::Index>(points.front().size());
  Eigen::MatrixXd x(static_cast<Eigen::Index>(points.size()), d);
  for (std::size_t i = 0; i < points.size(); ++i) {
    if (static_cast<Eigen::Index>(points[i].size()) != d) throw ArgumentError("fit_gaussian_mixture: ragged points");
    for (Eigen::Index j = 0; j < d; ++j) x(static_cast<Eigen::Index>(i), j) = points[i][static_cast<std::size_t>(j)];
  }
  std::optional<GaussianMixture> best;
  for (int r = 0; r < options.restarts; ++r) {
    Rng rng(derive_seed(seed, r));
    auto run = run_em(x, k, rng, options);
    if (!best || run.model.log_likelihood > best->log_likelihood) best = std::move(run.model);
  }
  return *best;
}

void to_json(nlohmann::json& j, const ClusterReport& r) {
  nlohmann::json clusters = nlohmann::json::array();
  for (const auto& c : r.clusters) {
    clusters.push_back({{"size", c.size}, {"mean_ones", c.mean_ones}, {"mean_alts", c.mean_alts},
                        {"mean_logits", c.mean_logits}});
  }
  j = nlohmann::json{{"length", r.length},       {"n_sequences", r.n_sequences},
                     {"clusters", clusters},     {"ones_gap", r.ones_gap},
                     {"alts_gap", r.alts_gap},   {"log_likelihood", r.log_likelihood}};
}

double ones_fraction(std::span<const std::uint8_t> seq) {
  if (seq.empty()) return 0.0;
  return static_cast<double>(std::count(seq.begin(), seq.end(), std::uint8_t{1})) / static_cast<double>(seq.size());
}

double alts_fraction(std::span<const std::uint8_t> seq) {
  if (seq.size() < 2) return 0.0;
  int alts = 0;
  for (std::size_t t = 1; t < seq.size(); ++t) alts += seq[t] != seq[t - 1] ? 1 : 0;
  return static_cast<double>(alts) / static_cast<double>(seq.size() - 1);
}

ClusterReport cluster_sequences(const GruWeights& weights, int length, int k, std::uint64_t seed,
                                const GmmOptions& options) {
  if (length > 20) throw ResourceLimitError("cluster_sequences: length " + std::to_string(length) + " exceeds 20");
  if (length < 2) throw ArgumentError("cluster_sequences: length must be >= 2");
  const std::size_t n = std::size_t{1} << length;
  std::vector<std::vector<double>> logits(n, std::vector<double>(2));
  std::vector<double> ones(n), alts(n);
  std::vector<std::uint8_t> seq(static_cast<std::size_t>(length));
  for (std::size_t s = 0; s < n; ++s) {
    for (int t = 0; t < length; ++t) seq[static_cast<std::size_t>(t)] = (s >> (length - 1 - t)) & 1u;
    GruRunner runner(weights);
    for (int t = 0; t < length; ++t) {
      runner.observe(runner.greedy_action(), seq[static_cast<std::size_t>(t)]);
      if (t >= length - 2) logits[s][static_cast<std::size_t>(t - (length - 2))] = runner.logit();
    }
    ones[s] = ones_fraction(seq);
    alts[s] = alts_fraction(seq);
  }
  const auto gm = fit_gaussian_mixture(logits, k, seed, options);
  ClusterReport report;
  report.length = length;
  report.n_sequences = n;
  report.log_likelihood = gm.log_likelihood;
  report.clusters.resize(static_cast<std::size_t>(k));
  for (std::size_t s = 0; s < n; ++s) {
    auto& c = report.clusters[static_cast<std::size_t>(gm.labels[s])];
    ++c.size;
    c.mean_ones += ones[s];
    c.mean_alts += alts[s];
    c.mean_logits[0] += logits[s][0];
    c.mean_logits[1] += logits[s][1];
  }
  for (auto& c : report.clusters) {
    if (c.size == 0) continue;
    const double m = static_cast<double>(c.size);
    c.mean_ones /= m;
    c.mean_alts /= m;
    c.mean_logits[0] /= m;
    c.mean_logits[1] /= m;
  }
  for (std::size_t a = 0; a < report.clusters.size(); ++a)
    for (std::size_t b = a + 1; b < report.clusters.size(); ++b) {
      const auto& ca = report.clusters[a];
      const auto& cb = report.clusters[b];
      if (ca.size == 0 || cb.size == 0) continue;
      report.ones_gap = std::max(report.ones_gap, std::abs(ca.mean_ones - cb.mean_ones));
      report.alts_gap = std::max(report.alts_gap, std::abs(ca.mean_alts - cb.mean_alts));
    }
  return report;
}

std::vector<EnvMapRow> env_map(std::span<const TaskParams> params, const GruWeights* model,
                               std::uint64_t seed, const EnvMapOptions& options) {
  std::vector<EnvMapRow> rows;
  rows.reserve(params.size() + static_cast<std::size_t>(std::max(0, options.background)));
  for (std::size_t i = 0; i < params.size(); ++i) {
    EnvMapRow row{"input", params[i], mixing_time(params[i]), ambiguity(params[i]), std::nullopt};
    if (model) row.regret = estimate_regret(*model, params[i], options.n_rollouts, derive_seed(seed, i), options.rollouts).regret;
    rows.push_back(row);
  }
  Rng rng(derive_seed(seed, 0xb6));
  for (int i = 0; i < options.background; ++i) {
    const TaskParams t{rng.uniform(), rng.uniform(), rng.uniform(), rng.uniform()};
    rows.push_back({"background", t, mixing_time(t), ambiguity(t), std::nullopt});
  }
  return rows;
}

std::string env_map_csv(std::span<const EnvMapRow> rows) {
  std::ostringstream out;
  out.precision(10);
  out << "source,p1,p2,r1,r2,mixing_time,ambiguity,regret\n";
  for (const auto& r : rows) {
    out << r.source << ',' << r.task.p1 << ',' << r.task.p2 << ',' << r.task.r1 << ',' << r.task.r2 << ','
        << r.mixing_time << ',' << r.ambiguity << ',';
    if (r.regret) out << *r.regret;
    out << '\n';
  }
  return out.str();
}

}  // namespace hmmac
