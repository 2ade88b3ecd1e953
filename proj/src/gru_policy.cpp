#include "hmmac/gru_policy.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>

#include "hmmac/errors.hpp"

namespace hmmac {

namespace {

struct Layout {
  std::size_t wu, wr, wc, uu, ur, uc, bu, br, bc, w, b, h0, total;

  explicit Layout(int hidden) {
    const std::size_t h = static_cast<std::size_t>(hidden);
    wu = 0;
    wr = wu + h * kInputDim;
    wc = wr + h * kInputDim;
    uu = wc + h * kInputDim;
    ur = uu + h * h;
    uc = ur + h * h;
    bu = uc + h * h;
    br = bu + h;
    bc = br + h;
    w = bc + h;
    b = w + h;
    h0 = b + 1;
    total = h0 + h;
  }
};

// Activations of one forward step, kept for backpropagation.
struct StepCache {
  double x0, x1;
  std::vector<double> h_prev, u, r, c, rh, h;
  double logit;

  explicit StepCache(int hidden)
      : x0(0), x1(0), h_prev(hidden), u(hidden), r(hidden), c(hidden), rh(hidden), h(hidden),
        logit(0) {}
};

// One gated-recurrent update. `out` receives h'; gates optional (may be null).
void forward_step(const double* th, const Layout& L, int H, const double* h, double x0, double x1,
                  double* u, double* r, double* c, double* rh, double* out) {
  for (int i = 0; i < H; ++i) {
    double au = th[L.bu + i] + th[L.wu + 2 * i] * x0 + th[L.wu + 2 * i + 1] * x1;
    double ar = th[L.br + i] + th[L.wr + 2 * i] * x0 + th[L.wr + 2 * i + 1] * x1;
    const double* uu = th + L.uu + static_cast<std::size_t>(i) * H;
    const double* ur = th + L.ur + static_cast<std::size_t>(i) * H;
    for (int k = 0; k < H; ++k) {
      au += uu[k] * h[k];
      ar += ur[k] * h[k];
    }
    u[i] = sigmoid(au);
    r[i] = sigmoid(ar);
  }
  for (int k = 0; k < H; ++k) rh[k] = r[k] * h[k];
  for (int i = 0; i < H; ++i) {
    double ac = th[L.bc + i] + th[L.wc + 2 * i] * x0 + th[L.wc + 2 * i + 1] * x1;
    const double* uc = th + L.uc + static_cast<std::size_t>(i) * H;
    for (int k = 0; k < H; ++k) ac += uc[k] * rh[k];
    c[i] = std::tanh(ac);
  }
  for (int i = 0; i < H; ++i) out[i] = (1.0 - u[i]) * h[i] + u[i] * c[i];
}

double readout(const double* th, const Layout& L, int H, const double* h) {
  double l = th[L.b];
  for (int i = 0; i < H; ++i) l += th[L.w + i] * h[i];
  return l;
}

// -log sigma(l) for a = 1, -log(1 - sigma(l)) for a = 0, computed stably.
double neg_log_prob(double logit, std::uint8_t action) {
  const double z = action ? logit : -logit;
  return z > 0 ? std::log1p(std::exp(-z)) : -z + std::log1p(std::exp(z));
}

// Adds scale * d(session_nll)/d(theta) into grad; returns session_nll.
double accumulate_episode_gradient(const GruWeights& weights, const Episode& ep, double scale,
                                   std::span<double> grad, std::vector<StepCache>& caches) {
  const int H = weights.hidden();
  const Layout L(H);
  const double* th = weights.flat().data();
  const std::size_t T = ep.length();
  if (T == 0) throw ArgumentError("session has no trials");
  while (caches.size() < T) caches.emplace_back(H);

  double loss = 0.0;
  const double* h = th + L.h0;
  for (std::size_t t = 0; t < T; ++t) {
    StepCache& c = caches[t];
    c.x0 = t == 0 ? 0.0 : ep.actions[t - 1];
    c.x1 = t == 0 ? 0.0 : ep.outcomes[t - 1];
    std::copy(h, h + H, c.h_prev.begin());
    forward_step(th, L, H, c.h_prev.data(), c.x0, c.x1, c.u.data(), c.r.data(), c.c.data(),
                 c.rh.data(), c.h.data());
    c.logit = readout(th, L, H, c.h.data());
    loss += neg_log_prob(c.logit, ep.actions[t]);
    h = c.h.data();
  }
  const double inv_t = 1.0 / static_cast<double>(T);

  double* g = grad.data();
  std::vector<double> dh(H, 0.0), dh_prev(H), da_u(H), da_r(H), da_c(H), drh(H);
  for (std::size_t tt = T; tt-- > 0;) {
    const StepCache& c = caches[tt];
    const double dlogit = scale * inv_t * (sigmoid(c.logit) - ep.actions[tt]);
    g[L.b] += dlogit;
    for (int i = 0; i < H; ++i) {
      g[L.w + i] += dlogit * c.h[i];
      dh[i] += dlogit * th[L.w + i];
    }
    for (int i = 0; i < H; ++i) {
      const double dc = dh[i] * c.u[i];
      const double du = dh[i] * (c.c[i] - c.h_prev[i]);
      dh_prev[i] = dh[i] * (1.0 - c.u[i]);
      da_c[i] = dc * (1.0 - c.c[i] * c.c[i]);
      da_u[i] = du * c.u[i] * (1.0 - c.u[i]);
    }
    std::fill(drh.begin(), drh.end(), 0.0);
    for (int i = 0; i < H; ++i) {
      g[L.wc + 2 * i] += da_c[i] * c.x0;
      g[L.wc + 2 * i + 1] += da_c[i] * c.x1;
      g[L.bc + i] += da_c[i];
      double* guc = g + L.uc + static_cast<std::size_t>(i) * H;
      const double* uc = th + L.uc + static_cast<std::size_t>(i) * H;
      for (int k = 0; k < H; ++k) {
        guc[k] += da_c[i] * c.rh[k];
        drh[k] += uc[k] * da_c[i];
      }
    }
    for (int k = 0; k < H; ++k) {
      da_r[k] = drh[k] * c.h_prev[k] * c.r[k] * (1.0 - c.r[k]);
      dh_prev[k] += drh[k] * c.r[k];
    }
    for (int i = 0; i < H; ++i) {
      g[L.wu + 2 * i] += da_u[i] * c.x0;
      g[L.wu + 2 * i + 1] += da_u[i] * c.x1;
      g[L.bu + i] += da_u[i];
      g[L.wr + 2 * i] += da_r[i] * c.x0;
      g[L.wr + 2 * i + 1] += da_r[i] * c.x1;
      g[L.br + i] += da_r[i];
      double* guu = g + L.uu + static_cast<std::size_t>(i) * H;
      double* gur = g + L.ur + static_cast<std::size_t>(i) * H;
      const double* uu = th + L.uu + static_cast<std::size_t>(i) * H;
      const double* ur = th + L.ur + static_cast<std::size_t>(i) * H;
      for (int k = 0; k < H; ++k) {
        guu[k] += da_u[i] * c.h_prev[k];
        gur[k] += da_r[i] * c.h_prev[k];
        dh_prev[k] += uu[k] * da_u[i] + ur[k] * da_r[i];
      }
    }
    dh.swap(dh_prev);
  }
  for (int i = 0; i < H; ++i) g[L.h0 + i] += dh[i];
  return loss * inv_t;
}

}  // namespace

GruWeights::GruWeights(int hidden) : hidden_(hidden) {
  if (hidden < 1) throw ArgumentError("GruWeights: hidden size must be >= 1");
  theta_.assign(parameter_count(hidden), 0.0);
}

GruWeights GruWeights::random(std::uint64_t seed, int hidden) {
  GruWeights w(hidden);
  Rng rng(seed);
  const double k = 1.0 / std::sqrt(static_cast<double>(hidden));
  const std::size_t h0 = block_offset(hidden, GruBlock::kInitialHidden);
  for (std::size_t i = 0; i < h0; ++i) w.theta_[i] = (2.0 * rng.uniform() - 1.0) * k;
  return w;
}

std::size_t GruWeights::parameter_count(int hidden) { return Layout(hidden).total; }

std::size_t GruWeights::block_offset(int hidden, GruBlock block) {
  const Layout L(hidden);
  switch (block) {
    case GruBlock::kInputUpdate: return L.wu;
    case GruBlock::kInputReset: return L.wr;
    case GruBlock::kInputCandidate: return L.wc;
    case GruBlock::kRecurrentUpdate: return L.uu;
    case GruBlock::kRecurrentReset: return L.ur;
    case GruBlock::kRecurrentCandidate: return L.uc;
    case GruBlock::kBiasUpdate: return L.bu;
    case GruBlock::kBiasReset: return L.br;
    case GruBlock::kBiasCandidate: return L.bc;
    case GruBlock::kReadout: return L.w;
    case GruBlock::kReadoutBias: return L.b;
    case GruBlock::kInitialHidden: return L.h0;
  }
  return L.total;
}

std::size_t GruWeights::block_size(int hidden, GruBlock block) {
  const std::size_t h = static_cast<std::size_t>(hidden);
  switch (block) {
    case GruBlock::kInputUpdate:
    case GruBlock::kInputReset:
    case GruBlock::kInputCandidate: return h * kInputDim;
    case GruBlock::kRecurrentUpdate:
    case GruBlock::kRecurrentReset:
    case GruBlock::kRecurrentCandidate: return h * h;
    case GruBlock::kReadoutBias: return 1;
    default: return h;
  }
}

std::span<double> GruWeights::block(GruBlock b) {
  return std::span<double>(theta_).subspan(block_offset(hidden_, b), block_size(hidden_, b));
}

std::span<const double> GruWeights::block(GruBlock b) const {
  return std::span<const double>(theta_).subspan(block_offset(hidden_, b), block_size(hidden_, b));
}

bool GruWeights::all_finite() const {
  return std::all_of(theta_.begin(), theta_.end(), [](double v) { return std::isfinite(v); });
}

namespace {

struct NamedBlock {
  const char* name;
  GruBlock block;
  bool matrix;
  int cols;  // 0 = hidden
};

constexpr std::array<NamedBlock, kGruBlockCount> kNamedBlocks{{
    {"W_update", GruBlock::kInputUpdate, true, kInputDim},
    {"W_reset", GruBlock::kInputReset, true, kInputDim},
    {"W_candidate", GruBlock::kInputCandidate, true, kInputDim},
    {"U_update", GruBlock::kRecurrentUpdate, true, 0},
    {"U_reset", GruBlock::kRecurrentReset, true, 0},
    {"U_candidate", GruBlock::kRecurrentCandidate, true, 0},
    {"b_update", GruBlock::kBiasUpdate, false, 0},
    {"b_reset", GruBlock::kBiasReset, false, 0},
    {"b_candidate", GruBlock::kBiasCandidate, false, 0},
    {"readout", GruBlock::kReadout, false, 0},
    {"readout_bias", GruBlock::kReadoutBias, false, 0},
    {"h0", GruBlock::kInitialHidden, false, 0},
}};

}  // namespace

nlohmann::json weights_to_json(const GruWeights& w, const nlohmann::json& metadata) {
  const int H = w.hidden();
  nlohmann::json j;
  j["dims"] = {{"input", kInputDim}, {"hidden", H}};
  for (const auto& nb : kNamedBlocks) {
    auto data = w.block(nb.block);
    if (nb.block == GruBlock::kReadoutBias) {
      j[nb.name] = data[0];
    } else if (nb.matrix) {
      const int cols = nb.cols ? nb.cols : H;
      nlohmann::json rows = nlohmann::json::array();
      for (int i = 0; i < H; ++i) {
        rows.push_back(std::vector<double>(data.begin() + i * cols, data.begin() + (i + 1) * cols));
      }
      j[nb.name] = std::move(rows);
    } else {
      j[nb.name] = std::vector<double>(data.begin(), data.end());
    }
  }
  j["metadata"] = metadata;
  return j;
}

GruWeights weights_from_json(const nlohmann::json& j) {
  const auto& dims = j.at("dims");
  if (dims.at("input").get<int>() != kInputDim) throw ArgumentError("checkpoint: input dim must be 2");
  const int H = dims.at("hidden").get<int>();
  GruWeights w(H);
  for (const auto& nb : kNamedBlocks) {
    auto data = w.block(nb.block);
    const auto& node = j.at(nb.name);
    if (nb.block == GruBlock::kReadoutBias) {
      data[0] = node.get<double>();
    } else if (nb.matrix) {
      const int cols = nb.cols ? nb.cols : H;
      if (node.size() != static_cast<std::size_t>(H)) throw ArgumentError(std::string("checkpoint: bad rows in ") + nb.name);
      for (int i = 0; i < H; ++i) {
        if (node[i].size() != static_cast<std::size_t>(cols)) throw ArgumentError(std::string("checkpoint: bad cols in ") + nb.name);
        for (int k = 0; k < cols; ++k) data[i * cols + k] = node[i][k].get<double>();
      }
    } else {
      if (node.size() != data.size()) throw ArgumentError(std::string("checkpoint: bad length of ") + nb.name);
      for (std::size_t k = 0; k < data.size(); ++k) data[k] = node[k].get<double>();
    }
  }
  return w;
}

void save_checkpoint(const std::string& path, const GruWeights& w, const nlohmann::json& metadata) {
  const std::filesystem::path p(path);
  if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write checkpoint " + path);
  os << weights_to_json(w, metadata).dump(1) << '\n';
}

GruWeights load_checkpoint(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot read checkpoint " + path);
  return weights_from_json(nlohmann::json::parse(is));
}

GruStepResult gru_step(const GruWeights& weights, std::span<const double> hidden,
                       std::array<double, 2> input) {
  const int H = weights.hidden();
  if (hidden.size() != static_cast<std::size_t>(H)) throw ArgumentError("gru_step: hidden size mismatch");
  const Layout L(H);
  std::vector<double> u(H), r(H), c(H), rh(H);
  GruStepResult out;
  out.hidden.resize(H);
  forward_step(weights.flat().data(), L, H, hidden.data(), input[0], input[1], u.data(), r.data(),
               c.data(), rh.data(), out.hidden.data());
  out.logit = readout(weights.flat().data(), L, H, out.hidden.data());
  return out;
}

std::array<double, 2> encode_input(std::optional<std::uint8_t> prev_action,
                                   std::optional<std::uint8_t> prev_outcome) {
  return {prev_action ? static_cast<double>(*prev_action) : 0.0,
          prev_outcome ? static_cast<double>(*prev_outcome) : 0.0};
}

GruRunner::GruRunner(const GruWeights& weights)
    : w_(weights), h_(weights.block(GruBlock::kInitialHidden).begin(),
                      weights.block(GruBlock::kInitialHidden).end()),
      scratch_(5 * static_cast<std::size_t>(weights.hidden())) {
  advance(0.0, 0.0);
}

void GruRunner::observe(std::uint8_t action, std::uint8_t outcome) {
  advance(static_cast<double>(action), static_cast<double>(outcome));
}

void GruRunner::advance(double x0, double x1) {
  const int H = w_.hidden();
  const Layout L(H);
  double* s = scratch_.data();
  forward_step(w_.flat().data(), L, H, h_.data(), x0, x1, s, s + H, s + 2 * H, s + 3 * H, s + 4 * H);
  std::copy(s + 4 * H, s + 5 * H, h_.begin());
  logit_ = readout(w_.flat().data(), L, H, h_.data());
}

double session_nll(const GruWeights& weights, const Episode& episode) {
  if (episode.length() == 0) throw ArgumentError("session_nll: session has no trials");
  GruRunner runner(weights);
  double loss = 0.0;
  for (std::size_t t = 0; t < episode.length(); ++t) {
    loss += neg_log_prob(runner.logit(), episode.actions[t]);
    runner.observe(episode.actions[t], episode.outcomes[t]);
  }
  return loss / static_cast<double>(episode.length());
}

double session_nll(const GruWeights& weights, const SessionRecord& session) {
  return session_nll(weights, to_episode(session));
}

double dataset_nll(const GruWeights& weights, std::span<const Episode> episodes) {
  if (episodes.empty()) throw ArgumentError("dataset_nll: empty dataset");
  double total = 0.0;
  for (const auto& e : episodes) total += session_nll(weights, e);
  return total / static_cast<double>(episodes.size());
}

GruWeights nll_gradient(const GruWeights& weights, std::span<const Episode> episodes) {
  if (episodes.empty()) throw ArgumentError("nll_gradient: empty dataset");
  GruWeights grad(weights.hidden());
  std::vector<StepCache> caches;
  const double scale = 1.0 / static_cast<double>(episodes.size());
  for (const auto& e : episodes) accumulate_episode_gradient(weights, e, scale, grad.flat(), caches);
  return grad;
}

GruWeights nll_gradient(const GruWeights& weights, const Dataset& dataset) {
  const auto eps = dataset.episodes();
  return nll_gradient(weights, eps);
}

void FitConfig::validate() const {
  if (!(learning_rate > 0) || max_epochs < 1 || batch_size < 1 || !(clip_norm > 0) ||
      patience < 1 || l2 < 0 || validation_fraction < 0 || validation_fraction >= 1) {
    throw ConfigError("FitConfig: invalid optimiser settings");
  }
}

void to_json(nlohmann::json& j, const FitConfig& c) {
  j = nlohmann::json{{"learning_rate", c.learning_rate}, {"max_epochs", c.max_epochs},
                     {"batch_size", c.batch_size},       {"clip_norm", c.clip_norm},
                     {"patience", c.patience},           {"l2", c.l2},
                     {"validation_fraction", c.validation_fraction}, {"seed", c.seed}};
}

void from_json(const nlohmann::json& j, FitConfig& c) {
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.max_epochs = j.value("max_epochs", c.max_epochs);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.clip_norm = j.value("clip_norm", c.clip_norm);
  c.patience = j.value("patience", c.patience);
  c.l2 = j.value("l2", c.l2);
  c.validation_fraction = j.value("validation_fraction", c.validation_fraction);
  c.seed = j.value("seed", c.seed);
}

namespace {

void shuffle_indices(std::vector<std::size_t>& idx, Rng& rng) {
  for (std::size_t i = idx.size(); i > 1; --i) {
    const std::size_t j = rng.below(i);
    std::swap(idx[i - 1], idx[j]);
  }
}

}  // namespace

FitResult fit(const GruWeights& init, std::span<const Episode> episodes, const FitConfig& config) {
  config.validate();
  if (episodes.empty()) throw ArgumentError("fit: empty dataset");
  Rng rng(derive_seed(config.seed, 0x66697421));

  std::vector<std::size_t> order(episodes.size());
  std::iota(order.begin(), order.end(), 0);
  shuffle_indices(order, rng);
  std::size_t n_val = 0;
  if (episodes.size() >= 2 && config.validation_fraction > 0) {
    n_val = std::max<std::size_t>(
        1, static_cast<std::size_t>(std::lround(config.validation_fraction * episodes.size())));
  }
  std::vector<Episode> val;
  std::vector<Episode> train;
  for (std::size_t i = 0; i < order.size(); ++i) {
    (i < n_val ? val : train).push_back(episodes[order[i]]);
  }
  const std::vector<Episode>& monitor = val.empty() ? train : val;

  GruWeights w = init;
  const std::size_t P = w.size();
  std::vector<double> m(P, 0.0), v(P, 0.0);
  GruWeights grad(w.hidden());
  std::vector<StepCache> caches;
  constexpr double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  long adam_t = 0;

  FitResult best;
  best.weights = w;
  best.validation_nll = dataset_nll(w, monitor);
  best.n_train = train.size();
  best.n_validation = val.size();
  int since_best = 0;

  std::vector<std::size_t> batch_order(train.size());
  std::iota(batch_order.begin(), batch_order.end(), 0);
  int epoch = 0;
  for (epoch = 1; epoch <= config.max_epochs; ++epoch) {
    shuffle_indices(batch_order, rng);
    for (std::size_t start = 0; start < train.size(); start += config.batch_size) {
      const std::size_t end = std::min(train.size(), start + config.batch_size);
      std::fill(grad.flat().begin(), grad.flat().end(), 0.0);
      const double scale = 1.0 / static_cast<double>(end - start);
      double batch_loss = 0.0;
      for (std::size_t k = start; k < end; ++k) {
        batch_loss += accumulate_episode_gradient(w, train[batch_order[k]], scale, grad.flat(), caches);
      }
      if (!std::isfinite(batch_loss)) {
        std::ostringstream os;
        os << "fit: non-finite loss at epoch " << epoch << " (learning rate " << config.learning_rate
           << " too high?)";
        throw FitError(os.str());
      }
      auto g = grad.flat();
      auto th = w.flat();
      double norm_sq = 0.0;
      for (std::size_t i = 0; i < P; ++i) {
        g[i] += config.l2 * th[i];
        norm_sq += g[i] * g[i];
      }
      const double norm = std::sqrt(norm_sq);
      const double clip = norm > config.clip_norm ? config.clip_norm / norm : 1.0;
      ++adam_t;
      const double c1 = 1.0 - std::pow(beta1, static_cast<double>(adam_t));
      const double c2 = 1.0 - std::pow(beta2, static_cast<double>(adam_t));
      for (std::size_t i = 0; i < P; ++i) {
        const double gi = g[i] * clip;
        m[i] = beta1 * m[i] + (1.0 - beta1) * gi;
        v[i] = beta2 * v[i] + (1.0 - beta2) * gi * gi;
        th[i] -= config.learning_rate * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps);
      }
    }
    const double score = dataset_nll(w, monitor);
    if (!std::isfinite(score)) {
      throw FitError("fit: non-finite validation loss at epoch " + std::to_string(epoch));
    }
    if (score < best.validation_nll) {
      best.validation_nll = score;
      best.weights = w;
      best.best_epoch = epoch;
      since_best = 0;
    } else if (++since_best >= config.patience) {
      break;
    }
  }
  best.epochs_run = std::min(epoch, config.max_epochs);
  best.train_nll = dataset_nll(best.weights, train.empty() ? monitor : train);
  return best;
}

FitResult fit(const GruWeights& init, const Dataset& dataset, const FitConfig& config) {
  const auto eps = dataset.episodes();
  return fit(init, eps, config);
}

double policy_rollout_accuracy(const GruWeights& weights, const Trajectory& traj,
                               std::uint64_t action_seed) {
  GruRunner runner(weights);
  Rng rng(action_seed);
  int correct = 0;
  for (std::uint8_t o : traj.observations) {
    const std::uint8_t a = runner.sample_action(rng);
    correct += a == o ? 1 : 0;
    runner.observe(a, o);
  }
  return static_cast<double>(correct) / static_cast<double>(traj.horizon());
}

AccuracyEstimate evaluate_accuracy(const GruWeights& weights, const TaskParams& params,
                                   int horizon, int n_rollouts, std::uint64_t seed) {
  if (n_rollouts < 2) throw ArgumentError("evaluate_accuracy: n_rollouts must be >= 2");
  double sum = 0.0, sum_sq = 0.0;
  for (int r = 0; r < n_rollouts; ++r) {
    const auto traj = sample_trajectory(params, horizon, derive_seed(seed, r, kTrajectoryStream));
    const double acc = policy_rollout_accuracy(weights, traj, derive_seed(seed, r, kPolicyActionStream));
    sum += acc;
    sum_sq += acc * acc;
  }
  const double n = n_rollouts;
  const double mean = sum / n;
  const double var = std::max(0.0, (sum_sq - n * mean * mean) / (n - 1.0));
  return {mean, std::sqrt(var / n)};
}

}  // namespace hmmac
