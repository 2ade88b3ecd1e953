#include "hmmac/regret_search.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include <boost/random/sobol.hpp>

#include "hmmac/errors.hpp"

namespace hmmac {

namespace {

// Stage seeds for the search; each stage shares trajectories across points.
constexpr std::uint64_t kScanStage = 0x5ca9;
constexpr std::uint64_t kRefineStage = 0x2ef1;
constexpr std::uint64_t kFinalStage = 0xf1a1;
constexpr std::uint64_t kShiftStage = 0x5417;

struct Moments {
  double sum = 0.0;
  double sum_sq = 0.0;
  void add(double x) {
    sum += x;
    sum_sq += x * x;
  }
  AccuracyEstimate finish(int n) const {
    const double mean = sum / n;
    const double var = std::max(0.0, (sum_sq - n * mean * mean) / (n - 1.0));
    return {mean, std::sqrt(var / n)};
  }
};

using Key = std::array<double, 4>;

}  // namespace

void to_json(nlohmann::json& j, const RegretEstimate& r) {
  j = nlohmann::json{{"task", r.task},           {"j_il", r.j_il},
                     {"j_pi", r.j_pi},           {"regret", r.regret},
                     {"regret_se", r.regret_se}, {"n_rollouts", r.n_rollouts},
                     {"seed", r.seed}};
}

void from_json(const nlohmann::json& j, RegretEstimate& r) {
  r.task = j.at("task").get<TaskParams>();
  r.j_il = j.at("j_il").get<AccuracyEstimate>();
  r.j_pi = j.at("j_pi").get<AccuracyEstimate>();
  r.regret = j.at("regret").get<double>();
  r.regret_se = j.value("regret_se", 0.0);
  r.n_rollouts = j.at("n_rollouts").get<int>();
  r.seed = j.at("seed").get<std::uint64_t>();
}

RegretEstimate estimate_regret(const GruWeights& weights, const TaskParams& params, int n_rollouts,
                               std::uint64_t seed, const RolloutSettings& settings) {
  if (n_rollouts < 2) throw ArgumentError("estimate_regret: n_rollouts must be >= 2");
  params.validate();
  Moments il, pi, diff;
  for (int r = 0; r < n_rollouts; ++r) {
    const auto traj =
        sample_trajectory(params, settings.horizon, derive_seed(seed, r, kTrajectoryStream));
    const double a_il = il_rollout_accuracy(traj, settings.filter, derive_seed(seed, r, kFilterStream),
                                            derive_seed(seed, r, kIdealActionStream));
    const double a_pi = policy_rollout_accuracy(weights, traj, derive_seed(seed, r, kPolicyActionStream));
    il.add(a_il);
    pi.add(a_pi);
    diff.add(a_il - a_pi);
  }
  RegretEstimate out;
  out.task = params;
  out.j_il = il.finish(n_rollouts);
  out.j_pi = pi.finish(n_rollouts);
  out.regret = out.j_il.mean - out.j_pi.mean;
  out.regret_se = diff.finish(n_rollouts).se;
  out.n_rollouts = n_rollouts;
  out.seed = seed;
  return out;
}

void SearchConfig::validate() const {
  if (n_scan_points < 1 || n_rollouts_scan < 2 || n_refine_candidates < 1 || n_rollouts_refine < 2 ||
      refine_iterations < 0 || n_rollouts_final < 2) {
    throw ConfigError("search budgets must be positive (rollouts >= 2)");
  }
  if (!(dedupe_distance >= 0.0)) throw ConfigError("dedupe_distance must be >= 0");
  if (!(initial_step > 0.0) || !(min_step > 0.0)) throw ConfigError("pattern steps must be > 0");
}

void to_json(nlohmann::json& j, const SearchConfig& c) {
  j = nlohmann::json{{"n_scan_points", c.n_scan_points},
                     {"n_rollouts_scan", c.n_rollouts_scan},
                     {"n_refine_candidates", c.n_refine_candidates},
                     {"n_rollouts_refine", c.n_rollouts_refine},
                     {"refine_iterations", c.refine_iterations},
                     {"n_rollouts_final", c.n_rollouts_final},
                     {"dedupe_distance", c.dedupe_distance},
                     {"initial_step", c.initial_step},
                     {"min_step", c.min_step},
                     {"seed", c.seed}};
}

void from_json(const nlohmann::json& j, SearchConfig& c) {
  c.n_scan_points = j.value("n_scan_points", c.n_scan_points);
  c.n_rollouts_scan = j.value("n_rollouts_scan", c.n_rollouts_scan);
  c.n_refine_candidates = j.value("n_refine_candidates", c.n_refine_candidates);
  c.n_rollouts_refine = j.value("n_rollouts_refine", c.n_rollouts_refine);
  c.refine_iterations = j.value("refine_iterations", c.refine_iterations);
  c.n_rollouts_final = j.value("n_rollouts_final", c.n_rollouts_final);
  c.dedupe_distance = j.value("dedupe_distance", c.dedupe_distance);
  c.initial_step = j.value("initial_step", c.initial_step);
  c.min_step = j.value("min_step", c.min_step);
  c.seed = j.value("seed", c.seed);
  c.validate();
}

void to_json(nlohmann::json& j, const SearchReport& r) {
  nlohmann::json scanned = nlohmann::json::array();
  for (const auto& p : r.scanned) {
    scanned.push_back({{"task", p.task}, {"regret", p.regret}, {"regret_se", p.regret_se}});
  }
  nlohmann::json traces = nlohmann::json::array();
  for (const auto& t : r.refinements) {
    nlohmann::json steps = nlohmann::json::array();
    for (const auto& s : t.steps) {
      steps.push_back({{"round", s.round}, {"step", s.step}, {"task", s.task},
                       {"regret", s.regret}, {"moved", s.moved}});
    }
    traces.push_back({{"start", t.start}, {"best", t.best}, {"best_regret", t.best_regret},
                      {"evaluations", t.evaluations}, {"steps", std::move(steps)}});
  }
  j = nlohmann::json{{"config", r.config},           {"scan_seed", r.scan_seed},
                     {"refine_seed", r.refine_seed}, {"final_seed", r.final_seed},
                     {"scanned", std::move(scanned)}, {"refinements", std::move(traces)},
                     {"selection", r.selection}};
}

SearchResult maximize_regret(const GruWeights& weights, const SearchConfig& config,
                             const RolloutSettings& settings) {
  config.validate();
  SearchResult result;
  SearchReport& report = result.report;
  report.config = config;
  report.scan_seed = derive_seed(config.seed, kScanStage);
  report.refine_seed = derive_seed(config.seed, kRefineStage);
  report.final_seed = derive_seed(config.seed, kFinalStage);

  // Randomly shifted Sobol points (Cranley-Patterson rotation).
  Rng shift_rng(derive_seed(config.seed, kShiftStage));
  std::array<double, 4> shift{};
  for (double& s : shift) s = shift_rng.uniform();
  boost::random::sobol qrng(4);
  const double scale = 1.0 / (static_cast<double>(qrng.max()) + 1.0);
  report.scanned.reserve(static_cast<std::size_t>(config.n_scan_points));
  for (int i = 0; i < config.n_scan_points; ++i) {
    std::array<double, 4> x{};
    for (int d = 0; d < 4; ++d) {
      const double u = static_cast<double>(qrng()) * scale + shift[d];
      x[d] = u - std::floor(u);
    }
    const TaskParams task = TaskParams::from_vector(x);
    const auto est = estimate_regret(weights, task, config.n_rollouts_scan, report.scan_seed, settings);
    report.scanned.push_back({task, est.regret, est.regret_se});
  }

  std::vector<std::size_t> order(report.scanned.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return report.scanned[a].regret > report.scanned[b].regret;
  });
  std::vector<TaskParams> starts;
  for (std::size_t idx : order) {
    if (static_cast<int>(starts.size()) >= config.n_refine_candidates) break;
    const TaskParams& cand = report.scanned[idx].task;
    const bool duplicate = std::any_of(starts.begin(), starts.end(), [&](const TaskParams& s) {
      return sym_distance(s, cand) < config.dedupe_distance;
    });
    if (!duplicate) starts.push_back(cand);
  }

  std::map<Key, double> cache;
  auto evaluate = [&](const TaskParams& t, int& counter) {
    const Key key = t.as_vector();
    if (auto it = cache.find(key); it != cache.end()) return it->second;
    ++counter;
    const double r = estimate_regret(weights, t, config.n_rollouts_refine, report.refine_seed, settings).regret;
    cache.emplace(key, r);
    return r;
  };

  for (const TaskParams& start : starts) {
    RefineTrace trace;
    trace.start = start;
    Key x = start.as_vector();
    double fx = evaluate(start, trace.evaluations);
    double step = config.initial_step;
    for (int round = 1; round <= config.refine_iterations && step >= config.min_step; ++round) {
      bool moved = false;
      for (int d = 0; d < 4 && !moved; ++d) {
        for (double sign : {1.0, -1.0}) {
          Key y = x;
          y[d] = std::clamp(y[d] + sign * step, 0.0, 1.0);
          if (y[d] == x[d]) continue;
          const double fy = evaluate(TaskParams::from_vector(y), trace.evaluations);
          if (fy > fx) {
            x = y;
            fx = fy;
            moved = true;
            break;
          }
        }
      }
      trace.steps.push_back({round, step, TaskParams::from_vector(x), fx, moved});
      if (!moved) step *= 0.5;
    }
    trace.best = TaskParams::from_vector(x);
    trace.best_regret = fx;
    report.refinements.push_back(std::move(trace));
  }

  const auto best = std::max_element(
      report.refinements.begin(), report.refinements.end(),
      [](const RefineTrace& a, const RefineTrace& b) { return a.best_regret < b.best_regret; });
  result.task = best->best;
  result.estimate =
      estimate_regret(weights, result.task, config.n_rollouts_final, report.final_seed, settings);
  report.selection = result.estimate;
  return result;
}

std::vector<LandscapeRow> regret_landscape(const GruWeights& weights, int grid_per_axis,
                                           int n_rollouts, std::uint64_t seed,
                                           const RolloutSettings& settings) {
  if (grid_per_axis > 11) {
    throw ResourceLimitError("regret_landscape: grid_per_axis " + std::to_string(grid_per_axis) +
                             " exceeds 11");
  }
  if (grid_per_axis < 1) throw ArgumentError("regret_landscape: grid_per_axis must be >= 1");
  const int g = grid_per_axis;
  auto axis = [g](int k) { return g == 1 ? 0.5 : static_cast<double>(k) / (g - 1); };
  std::vector<LandscapeRow> rows;
  rows.reserve(static_cast<std::size_t>(g * g * g * g));
  for (int a = 0; a < g; ++a)
    for (int b = 0; b < g; ++b)
      for (int c = 0; c < g; ++c)
        for (int d = 0; d < g; ++d) {
          const TaskParams task{axis(a), axis(b), axis(c), axis(d)};
          const auto est = estimate_regret(weights, task, n_rollouts, seed, settings);
          rows.push_back({task, est.regret, est.regret_se, mixing_time(task), ambiguity(task)});
        }
  return rows;
}

}  // namespace hmmac
