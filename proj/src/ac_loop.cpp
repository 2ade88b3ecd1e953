#include "hmmac/ac_loop.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>
#include <set>
#include <thread>

#include "hmmac/errors.hpp"

namespace hmmac {

namespace fs = std::filesystem;

namespace {

constexpr std::uint64_t kSeedPhaseTasks = 1;
constexpr std::uint64_t kSeedCollect = 2;
constexpr std::uint64_t kInitStream = 3;
constexpr std::uint64_t kFitStream = 4;
constexpr std::uint64_t kSearchStream = 5;
constexpr std::uint64_t kCollectStream = 6;
constexpr std::uint64_t kObservedStream = 7;
constexpr std::uint64_t kRandomEnvStream = 8;
constexpr std::uint64_t kRandomCollectStream = 9;
constexpr std::uint64_t kSubsetStream = 10;

nlohmann::json read_json(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot read " + path.string());
  return nlohmann::json::parse(is);
}

void write_json_atomic(const fs::path& path, const nlohmann::json& j) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream os(tmp, std::ios::trunc);
    if (!os) throw std::runtime_error("cannot write " + tmp.string());
    os << j.dump(2) << '\n';
  }
  fs::rename(tmp, path);
}

std::vector<TaskParams> distinct_tasks(const Dataset& d) {
  std::vector<TaskParams> out;
  for (const auto& s : d.sessions)
    if (std::find(out.begin(), out.end(), s.task) == out.end()) out.push_back(s.task);
  return out;
}

DatasetEntry make_entry(const std::string& tag, const std::string& rel_path, const Dataset& d) {
  return {tag, rel_path, d.fingerprint(), distinct_tasks(d)};
}

struct PrefixFit {
  GruWeights weights;
  ModelEntry entry;
};

PrefixFit fit_prefix(const ExperimentConfig& config, const std::vector<const Dataset*>& parts,
                     const GruWeights& init, const std::string& id, int prefix) {
  const Dataset corpus = merge_datasets(parts, id);
  const std::string fingerprint = corpus.metadata["fingerprint"].get<std::string>();
  FitConfig fc = config.fit;
  fc.seed = fit_seed_for(config.root_seed, fingerprint);
  const FitResult r = fit(init, corpus, fc);
  ModelEntry e;
  e.id = id;
  e.prefix = prefix;
  e.corpus_fingerprint = fingerprint;
  e.train_nll = r.train_nll;
  e.validation_nll = r.validation_nll;
  e.epochs = r.epochs_run;
  return {r.weights, e};
}

nlohmann::json checkpoint_metadata(const ExperimentConfig& config, const ModelEntry& e) {
  return {{"fit_config", config.fit},
          {"dataset_fingerprint", e.corpus_fingerprint},
          {"final_nll", e.train_nll},
          {"validation_nll", e.validation_nll},
          {"epochs", e.epochs},
          {"prefix", e.prefix}};
}

}  // namespace

// ---- config -----------------------------------------------------------------

void ExperimentConfig::validate() const {
  if (horizon < 1) throw ConfigError("horizon must be >= 1");
  if (n_seed_sessions < 1) throw ConfigError("seed phase needs at least one session");
  if (sessions_per_env < 1) throw ConfigError("sessions_per_env must be >= 1");
  if (ac_iterations < 0 || n_random_envs < 0 || n_random_subsets < 0) throw ConfigError("counts must be >= 0");
  if (random_subset_size < 0 || random_subset_size > n_random_envs) {
    throw ConfigError("random_subset_size must lie in [0, n_random_envs]");
  }
  if (hidden < 1) throw ConfigError("hidden must be >= 1");
  if (il_observed_rollouts < 2) throw ConfigError("il_observed_rollouts must be >= 2");
  if (filter.n_particles < 2) throw ConfigError("filter needs >= 2 particles");
  fit.validate();
  search.validate();
  population.validate();
  if (participants.mode != "synthetic" && participants.mode != "queue") {
    throw ConfigError("participants.mode must be 'synthetic' or 'queue'");
  }
  if (participants.mode == "queue" && (participants.plan_path.empty() || participants.data_dir.empty())) {
    throw ConfigError("queue mode needs plan_path and data_dir");
  }
  analysis.features.validate();
  analysis.cluster_mixture.validate();
}

ExperimentConfig ExperimentConfig::desk() { return ExperimentConfig{}; }

ExperimentConfig ExperimentConfig::full() {
  ExperimentConfig c;
  c.preset = "full";
  c.n_seed_sessions = 100;
  c.sessions_per_env = 100;
  c.n_random_subsets = 10;
  return c;
}

ExperimentConfig ExperimentConfig::quick() {
  ExperimentConfig c;
  c.preset = "quick";
  c.filter.n_particles = 300;
  c.il_observed_rollouts = 2000;
  c.search.n_scan_points = 64;
  c.search.n_rollouts_scan = 100;
  c.search.n_refine_candidates = 3;
  c.search.n_rollouts_refine = 300;
  c.search.n_rollouts_final = 1000;
  c.analysis.env_map_background = 2000;
  return c;
}

ExperimentConfig ExperimentConfig::preset_named(const std::string& name) {
  if (name == "desk") return desk();
  if (name == "full") return full();
  if (name == "quick") return quick();
  throw ConfigError("unknown preset '" + name + "'");
}

void to_json(nlohmann::json& j, const ExperimentConfig& c) {
  j = nlohmann::json{
      {"preset", c.preset},
      {"horizon", c.horizon},
      {"n_seed_sessions", c.n_seed_sessions},
      {"sessions_per_env", c.sessions_per_env},
      {"ac_iterations", c.ac_iterations},
      {"n_random_envs", c.n_random_envs},
      {"n_random_subsets", c.n_random_subsets},
      {"random_subset_size", c.random_subset_size},
      {"hidden", c.hidden},
      {"warm_start", c.warm_start},
      {"il_observed_rollouts", c.il_observed_rollouts},
      {"filter", c.filter},
      {"fit", c.fit},
      {"search", c.search},
      {"population", c.population},
      {"participants",
       {{"mode", c.participants.mode},
        {"plan_path", c.participants.plan_path},
        {"data_dir", c.participants.data_dir},
        {"timeout_seconds", c.participants.timeout_seconds},
        {"poll_milliseconds", c.participants.poll_milliseconds}}},
      {"convergence", {{"regret_gap", c.convergence.regret_gap}, {"distance", c.convergence.distance}}},
      {"analysis",
       {{"probe_sequences", c.analysis.probe_sequences},
        {"probe_length", c.analysis.probe_length},
        {"features", c.analysis.features},
        {"cluster_length", c.analysis.cluster_length},
        {"cluster_k", c.analysis.cluster_k},
        {"cluster_mixture", c.analysis.cluster_mixture},
        {"env_map_background", c.analysis.env_map_background},
        {"trajectory_rollouts", c.analysis.trajectory_rollouts}}},
      {"root_seed", c.root_seed}};
}

void from_json(const nlohmann::json& j, ExperimentConfig& c) {
  c = ExperimentConfig::preset_named(j.value("preset", std::string("desk")));
  c.horizon = j.value("horizon", c.horizon);
  c.n_seed_sessions = j.value("n_seed_sessions", c.n_seed_sessions);
  c.sessions_per_env = j.value("sessions_per_env", c.sessions_per_env);
  c.ac_iterations = j.value("ac_iterations", c.ac_iterations);
  c.n_random_envs = j.value("n_random_envs", c.n_random_envs);
  c.n_random_subsets = j.value("n_random_subsets", c.n_random_subsets);
  c.random_subset_size = j.value("random_subset_size", c.random_subset_size);
  c.hidden = j.value("hidden", c.hidden);
  c.warm_start = j.value("warm_start", c.warm_start);
  c.il_observed_rollouts = j.value("il_observed_rollouts", c.il_observed_rollouts);
  if (j.contains("filter")) j.at("filter").get_to(c.filter);
  if (j.contains("fit")) j.at("fit").get_to(c.fit);
  if (j.contains("search")) j.at("search").get_to(c.search);
  if (j.contains("population")) j.at("population").get_to(c.population);
  if (j.contains("participants")) {
    const auto& p = j.at("participants");
    c.participants.mode = p.value("mode", c.participants.mode);
    c.participants.plan_path = p.value("plan_path", c.participants.plan_path);
    c.participants.data_dir = p.value("data_dir", c.participants.data_dir);
    c.participants.timeout_seconds = p.value("timeout_seconds", c.participants.timeout_seconds);
    c.participants.poll_milliseconds = p.value("poll_milliseconds", c.participants.poll_milliseconds);
  }
  if (j.contains("convergence")) {
    const auto& cv = j.at("convergence");
    c.convergence.regret_gap = cv.value("regret_gap", c.convergence.regret_gap);
    c.convergence.distance = cv.value("distance", c.convergence.distance);
  }
  if (j.contains("analysis")) {
    const auto& a = j.at("analysis");
    c.analysis.probe_sequences = a.value("probe_sequences", c.analysis.probe_sequences);
    c.analysis.probe_length = a.value("probe_length", c.analysis.probe_length);
    if (a.contains("features")) a.at("features").get_to(c.analysis.features);
    c.analysis.cluster_length = a.value("cluster_length", c.analysis.cluster_length);
    c.analysis.cluster_k = a.value("cluster_k", c.analysis.cluster_k);
    if (a.contains("cluster_mixture")) a.at("cluster_mixture").get_to(c.analysis.cluster_mixture);
    c.analysis.env_map_background = a.value("env_map_background", c.analysis.env_map_background);
    c.analysis.trajectory_rollouts = a.value("trajectory_rollouts", c.analysis.trajectory_rollouts);
  }
  c.root_seed = j.value("root_seed", c.root_seed);
  c.validate();
}

ExperimentConfig load_config(const fs::path& path) { return read_json(path).get<ExperimentConfig>(); }

// ---- sources ----------------------------------------------------------------

Dataset SyntheticSource::collect(const CollectionRequest& request) {
  Dataset d = simulate_sessions(population_, request.tasks, request.horizon, request.seed,
                                {request.corpus_tag, request.iteration_index});
  d.metadata["source"] = "synthetic";
  return d;
}

void to_json(nlohmann::json& j, const PlanSlot& s) {
  j = nlohmann::json{{"slot_id", s.slot_id}, {"corpus_tag", s.corpus_tag}, {"iteration_index", s.iteration_index},
                     {"task", s.task},       {"seed", s.seed},             {"horizon", s.horizon}};
}

void from_json(const nlohmann::json& j, PlanSlot& s) {
  s.slot_id = j.at("slot_id").get<std::string>();
  s.corpus_tag = j.at("corpus_tag").get<std::string>();
  s.iteration_index = j.value("iteration_index", 0);
  s.task = j.at("task").get<TaskParams>();
  s.seed = j.value("seed", std::uint64_t{0});
  s.horizon = j.value("horizon", 50);
}

std::vector<PlanSlot> read_plan(const fs::path& path) {
  if (!fs::exists(path)) return {};
  const auto j = read_json(path);
  return j.at("slots").get<std::vector<PlanSlot>>();
}

void write_plan(const fs::path& path, const std::vector<PlanSlot>& slots) {
  write_json_atomic(path, nlohmann::json{{"slots", slots}});
}

fs::path dataset_path_for(const fs::path& data_dir, const std::string& corpus_tag) {
  return data_dir / (corpus_tag + ".jsonl");
}

Dataset QueueSource::collect(const CollectionRequest& request) {
  auto slots = read_plan(config_.plan_path);
  for (std::size_t i = 0; i < request.tasks.size(); ++i) {
    PlanSlot s{request.corpus_tag + "-" + std::to_string(i), request.corpus_tag, request.iteration_index,
               request.tasks[i], derive_seed(request.seed, i), request.horizon};
    const bool present = std::any_of(slots.begin(), slots.end(), [&](const PlanSlot& p) { return p.slot_id == s.slot_id; });
    if (!present) slots.push_back(s);
  }
  write_plan(config_.plan_path, slots);

  const fs::path file = dataset_path_for(config_.data_dir, request.corpus_tag);
  const auto deadline = std::chrono::steady_clock::now() +
                        std::chrono::duration_cast<std::chrono::steady_clock::duration>(
                            std::chrono::duration<double>(config_.timeout_seconds));
  while (true) {
    if (fs::exists(file)) {
      auto sessions = read_jsonl(file);
      if (sessions.size() >= request.tasks.size()) {
        sessions.resize(request.tasks.size());
        Dataset d;
        d.id = request.corpus_tag;
        d.corpus_tag = request.corpus_tag;
        d.sessions = std::move(sessions);
        d.metadata["source"] = "queue";
        return d;
      }
    }
    if (std::chrono::steady_clock::now() >= deadline) {
      throw CollectionError("timed out waiting for " + std::to_string(request.tasks.size()) + " sessions of " +
                            request.corpus_tag);
    }
    std::this_thread::sleep_for(std::chrono::milliseconds(config_.poll_milliseconds));
  }
}

std::unique_ptr<ParticipantSource> make_source(const ExperimentConfig& config) {
  if (config.participants.mode == "queue") return std::make_unique<QueueSource>(config.participants);
  return std::make_unique<SyntheticSource>(config.population);
}

// ---- records --------------------------------------------------------------

void to_json(nlohmann::json& j, const AcIterationRecord& r) {
  j = nlohmann::json{{"iteration", r.iteration},
                     {"selected", r.selected},
                     {"predicted", r.predicted},
                     {"il_observed", r.il_observed},
                     {"dataset_accuracy", r.dataset_accuracy},
                     {"observed_regret", r.observed_regret},
                     {"postdicted", r.postdicted},
                     {"min_sym_distance", r.min_sym_distance},
                     {"model_checkpoint", r.model_checkpoint},
                     {"dataset", r.dataset},
                     {"search_report", r.search_report},
                     {"corpus_fingerprint", r.corpus_fingerprint},
                     {"filter_config_hash", r.filter_config_hash}};
}

void from_json(const nlohmann::json& j, AcIterationRecord& r) {
  r.iteration = j.at("iteration").get<int>();
  r.selected = j.at("selected").get<TaskParams>();
  r.predicted = j.at("predicted").get<RegretEstimate>();
  r.il_observed = j.at("il_observed").get<AccuracyEstimate>();
  r.dataset_accuracy = j.at("dataset_accuracy").get<double>();
  r.observed_regret = j.at("observed_regret").get<double>();
  r.postdicted = j.at("postdicted").get<RegretEstimate>();
  r.min_sym_distance = j.at("min_sym_distance").get<double>();
  r.model_checkpoint = j.at("model_checkpoint").get<std::string>();
  r.dataset = j.at("dataset").get<std::string>();
  r.search_report = j.value("search_report", std::string());
  r.corpus_fingerprint = j.value("corpus_fingerprint", std::string());
  r.filter_config_hash = j.value("filter_config_hash", std::string());
}

void to_json(nlohmann::json& j, const ModelEntry& m) {
  j = nlohmann::json{{"id", m.id},
                     {"prefix", m.prefix},
                     {"checkpoint", m.checkpoint},
                     {"corpus_fingerprint", m.corpus_fingerprint},
                     {"train_nll", m.train_nll},
                     {"validation_nll", m.validation_nll},
                     {"epochs", m.epochs}};
}

void from_json(const nlohmann::json& j, ModelEntry& m) {
  m.id = j.at("id").get<std::string>();
  m.prefix = j.at("prefix").get<int>();
  m.checkpoint = j.at("checkpoint").get<std::string>();
  m.corpus_fingerprint = j.at("corpus_fingerprint").get<std::string>();
  m.train_nll = j.value("train_nll", 0.0);
  m.validation_nll = j.value("validation_nll", 0.0);
  m.epochs = j.value("epochs", 0);
}

void to_json(nlohmann::json& j, const DatasetEntry& d) {
  j = nlohmann::json{{"tag", d.tag}, {"path", d.path}, {"fingerprint", d.fingerprint}, {"tasks", d.tasks}};
}

void from_json(const nlohmann::json& j, DatasetEntry& d) {
  d.tag = j.at("tag").get<std::string>();
  d.path = j.at("path").get<std::string>();
  d.fingerprint = j.at("fingerprint").get<std::string>();
  d.tasks = j.at("tasks").get<std::vector<TaskParams>>();
}

void to_json(nlohmann::json& j, const LoopState& s) {
  j = nlohmann::json{{"config", s.config}, {"datasets", s.datasets}, {"models", s.models}, {"records", s.records}};
}

void from_json(const nlohmann::json& j, LoopState& s) {
  s.config = j.at("config").get<ExperimentConfig>();
  s.datasets = j.at("datasets").get<std::vector<DatasetEntry>>();
  s.models = j.at("models").get<std::vector<ModelEntry>>();
  s.records = j.at("records").get<std::vector<AcIterationRecord>>();
}

// ---- seed phase and fitting ---------------------------------------------------

std::vector<TaskParams> seed_phase_tasks(int n_sessions, std::uint64_t seed) {
  if (n_sessions < 1) throw ConfigError("seed phase needs at least one session");
  Rng rng(seed);
  std::vector<TaskParams> tasks;
  tasks.reserve(static_cast<std::size_t>(n_sessions));
  for (int i = 0; i < n_sessions; ++i) {
    const double r = rng.uniform();
    const double p1 = rng.uniform();
    const double p2 = rng.uniform();
    tasks.push_back({p1, p2, r, r});
  }
  return tasks;
}

Dataset run_seed_phase(const ExperimentConfig& config, ParticipantSource& source, std::uint64_t seed) {
  CollectionRequest req;
  req.tasks = seed_phase_tasks(config.n_seed_sessions, derive_seed(seed, kSeedPhaseTasks));
  req.horizon = config.horizon;
  req.seed = derive_seed(seed, kSeedCollect);
  req.corpus_tag = "D1";
  req.iteration_index = 1;
  Dataset d = source.collect(req);
  d.id = "D1";
  d.corpus_tag = "D1";
  return d;
}

std::uint64_t fit_seed_for(std::uint64_t root_seed, const std::string& corpus_fingerprint) {
  return derive_seed(root_seed, kFitStream, std::stoull(corpus_fingerprint, nullptr, 16));
}

GruWeights initial_weights(const ExperimentConfig& config) {
  return GruWeights::random(derive_seed(config.root_seed, kInitStream), config.hidden);
}

// ---- loop -------------------------------------------------------------------

AcLoop::AcLoop(ExperimentConfig config, fs::path dir) : dir_(std::move(dir)) {
  config.validate();
  state_.config = std::move(config);
}

AcLoop AcLoop::resume(const fs::path& dir) {
  const auto j = read_json(dir / "state.json");
  LoopState st = j.get<LoopState>();
  AcLoop loop(st.config, dir);
  loop.state_ = std::move(st);
  return loop;
}

bool AcLoop::exists(const fs::path& dir) { return fs::exists(dir / "state.json"); }

void AcLoop::save() const { write_json_atomic(dir_ / "state.json", state_); }

GruWeights AcLoop::model(int prefix) const {
  for (const auto& m : state_.models)
    if (m.prefix == prefix) return load_checkpoint((dir_ / m.checkpoint).string());
  throw ArgumentError("no model for prefix " + std::to_string(prefix));
}

Dataset AcLoop::dataset(std::size_t index) const {
  if (index >= state_.datasets.size()) throw ArgumentError("dataset index out of range");
  const auto& e = state_.datasets[index];
  return load_dataset(dir_ / e.path, e.tag);
}

std::vector<TaskParams> AcLoop::experiment_tasks() const {
  std::vector<TaskParams> out;
  for (const auto& d : state_.datasets) out.insert(out.end(), d.tasks.begin(), d.tasks.end());
  return out;
}

void AcLoop::run_seed_phase(ParticipantSource& source) {
  if (seeded()) return;
  const ExperimentConfig& cfg = state_.config;
  const Dataset d1 = hmmac::run_seed_phase(cfg, source, cfg.root_seed);
  const std::string rel = "datasets/D1.jsonl";
  save_dataset(dir_ / rel, d1);
  auto pf = fit_prefix(cfg, {&d1}, initial_weights(cfg), "AC_p1", 1);
  pf.entry.checkpoint = "models/AC_p1.json";
  save_checkpoint((dir_ / pf.entry.checkpoint).string(), pf.weights, checkpoint_metadata(cfg, pf.entry));
  state_.datasets.push_back(make_entry("D1", rel, d1));
  state_.models.push_back(pf.entry);
  save();
}

AcIterationRecord AcLoop::run_iteration(ParticipantSource& source) {
  if (!seeded()) throw ArgumentError("run_iteration: seed phase has not been run");
  const ExperimentConfig& cfg = state_.config;
  const int g = static_cast<int>(state_.records.size()) + 2;
  const std::string tag = "AC" + std::to_string(g);
  const GruWeights current = model(g - 1);

  SearchConfig sc = cfg.search;
  sc.seed = derive_seed(cfg.root_seed, kSearchStream, static_cast<std::uint64_t>(g));
  const SearchResult search = maximize_regret(current, sc, cfg.rollouts());

  CollectionRequest req;
  req.tasks.assign(static_cast<std::size_t>(cfg.sessions_per_env), search.task);
  req.horizon = cfg.horizon;
  req.seed = derive_seed(cfg.root_seed, kCollectStream, static_cast<std::uint64_t>(g));
  req.corpus_tag = tag;
  req.iteration_index = g;
  Dataset collected = source.collect(req);
  collected.id = tag;
  collected.corpus_tag = tag;

  AcIterationRecord rec;
  rec.iteration = g;
  rec.selected = search.task;
  rec.predicted = search.estimate;
  rec.il_observed = il_accuracy(search.task, cfg.horizon, cfg.il_observed_rollouts,
                                derive_seed(cfg.root_seed, kObservedStream, static_cast<std::uint64_t>(g)), cfg.filter);
  rec.dataset_accuracy = collected.mean_accuracy();
  rec.observed_regret = rec.il_observed.mean - rec.dataset_accuracy;
  rec.filter_config_hash = hash_hex(nlohmann::json(cfg.filter).dump());

  std::vector<Dataset> previous;
  for (std::size_t i = 0; i < state_.datasets.size(); ++i) previous.push_back(dataset(i));
  std::vector<const Dataset*> parts;
  for (const auto& d : previous) parts.push_back(&d);
  parts.push_back(&collected);
  const std::string model_id = "AC_p" + std::to_string(g);
  auto pf = fit_prefix(cfg, parts, cfg.warm_start ? current : initial_weights(cfg), model_id, g);
  rec.corpus_fingerprint = pf.entry.corpus_fingerprint;
  rec.postdicted = estimate_regret(pf.weights, search.task, sc.n_rollouts_final, search.report.final_seed, cfg.rollouts());

  double nearest = std::numeric_limits<double>::infinity();
  for (const auto& t : experiment_tasks()) nearest = std::min(nearest, sym_distance(t, search.task));
  rec.min_sym_distance = nearest;

  rec.dataset = "datasets/" + tag + ".jsonl";
  rec.search_report = "search/" + tag + ".json";
  rec.model_checkpoint = "models/" + model_id + ".json";
  pf.entry.checkpoint = rec.model_checkpoint;
  save_dataset(dir_ / rec.dataset, collected);
  write_json_atomic(dir_ / rec.search_report, search.report);
  save_checkpoint((dir_ / rec.model_checkpoint).string(), pf.weights, checkpoint_metadata(cfg, pf.entry));

  state_.datasets.push_back(make_entry(tag, rec.dataset, collected));
  state_.models.push_back(pf.entry);
  state_.records.push_back(rec);
  save();
  return rec;
}

void AcLoop::run(int iterations, ParticipantSource& source) {
  run_seed_phase(source);
  for (int i = 0; i < iterations; ++i) run_iteration(source);
}

// ---- random corpora ---------------------------------------------------------

void to_json(nlohmann::json& j, const RandomCorpora& r) {
  nlohmann::json corpora = nlohmann::json::array();
  for (const auto& c : r.corpora) corpora.push_back({{"id", c.id}, {"members", c.members}, {"models", c.models}});
  j = nlohmann::json{{"envs", r.envs}, {"datasets", r.datasets}, {"corpora", corpora}};
}

void from_json(const nlohmann::json& j, RandomCorpora& r) {
  r.envs = j.at("envs").get<std::vector<TaskParams>>();
  r.datasets = j.at("datasets").get<std::vector<DatasetEntry>>();
  r.corpora.clear();
  for (const auto& c : j.at("corpora")) {
    r.corpora.push_back({c.at("id").get<std::string>(), c.at("members").get<std::vector<int>>(),
                         c.at("models").get<std::vector<ModelEntry>>()});
  }
}

std::vector<std::vector<int>> draw_distinct_subsets(int n, int subset_size, int k, std::uint64_t seed) {
  if (subset_size < 0 || subset_size > n) throw ConfigError("subset size must lie in [0, n]");
  double available = 1.0;
  for (int i = 0; i < subset_size; ++i) available = available * (n - i) / (i + 1);
  if (k > std::llround(available)) throw ConfigError("cannot draw that many distinct subsets");
  Rng rng(seed);
  std::vector<std::vector<int>> out;
  std::set<std::vector<int>> seen;
  std::vector<int> pool(static_cast<std::size_t>(n));
  while (static_cast<int>(out.size()) < k) {
    std::iota(pool.begin(), pool.end(), 0);
    for (int i = 0; i < subset_size; ++i) {
      const auto pick = i + static_cast<int>(rng.below(static_cast<std::uint64_t>(n - i)));
      std::swap(pool[static_cast<std::size_t>(i)], pool[static_cast<std::size_t>(pick)]);
    }
    std::vector<int> subset(pool.begin(), pool.begin() + subset_size);
    std::vector<int> key = subset;
    std::sort(key.begin(), key.end());
    if (seen.insert(key).second) out.push_back(std::move(subset));
  }
  return out;
}

std::optional<RandomCorpora> load_random_corpora(const fs::path& dir) {
  const fs::path file = dir / "random" / "corpora.json";
  if (!fs::exists(file)) return std::nullopt;
  return read_json(file).get<RandomCorpora>();
}

RandomCorpora build_random_corpora(const AcLoop& loop, ParticipantSource& source) {
  if (!loop.seeded()) throw ArgumentError("build_random_corpora: seed dataset missing");
  if (auto existing = load_random_corpora(loop.dir())) return *existing;
  const ExperimentConfig& cfg = loop.state().config;
  const fs::path dir = loop.dir();
  RandomCorpora out;

  Rng env_rng(derive_seed(cfg.root_seed, kRandomEnvStream));
  std::vector<Dataset> data;
  for (int j = 0; j < cfg.n_random_envs; ++j) {
    const TaskParams t{env_rng.uniform(), env_rng.uniform(), env_rng.uniform(), env_rng.uniform()};
    out.envs.push_back(t);
    CollectionRequest req;
    req.tasks.assign(static_cast<std::size_t>(cfg.sessions_per_env), t);
    req.horizon = cfg.horizon;
    req.seed = derive_seed(cfg.root_seed, kRandomCollectStream, static_cast<std::uint64_t>(j));
    req.corpus_tag = "R" + std::to_string(j + 1);
    req.iteration_index = 0;
    Dataset d = source.collect(req);
    d.id = req.corpus_tag;
    d.corpus_tag = req.corpus_tag;
    const std::string rel = "random/datasets/" + req.corpus_tag + ".jsonl";
    save_dataset(dir / rel, d);
    out.datasets.push_back(make_entry(req.corpus_tag, rel, d));
    data.push_back(std::move(d));
  }

  const Dataset d1 = loop.dataset(0);
  const ModelEntry& shared = loop.state().models.front();
  const GruWeights base = loop.model(1);
  std::map<std::string, std::pair<ModelEntry, GruWeights>> cache;
  const auto subsets = draw_distinct_subsets(cfg.n_random_envs, cfg.random_subset_size, cfg.n_random_subsets,
                                             derive_seed(cfg.root_seed, kSubsetStream));
  for (std::size_t k = 0; k < subsets.size(); ++k) {
    RandomCorpus corpus;
    corpus.id = "RC" + std::to_string(k + 1);
    corpus.members = subsets[k];
    corpus.models.push_back(shared);
    GruWeights prev = base;
    std::vector<const Dataset*> parts{&d1};
    for (std::size_t p = 0; p < subsets[k].size(); ++p) {
      parts.push_back(&data[static_cast<std::size_t>(subsets[k][p])]);
      const int prefix = static_cast<int>(p) + 2;
      const std::string fp = fingerprint_of(parts);
      auto it = cache.find(fp);
      if (it == cache.end()) {
        const std::string id = corpus.id + "_p" + std::to_string(prefix);
        auto pf = fit_prefix(cfg, parts, cfg.warm_start ? prev : initial_weights(cfg), id, prefix);
        pf.entry.checkpoint = "random/models/" + id + ".json";
        save_checkpoint((dir / pf.entry.checkpoint).string(), pf.weights, checkpoint_metadata(cfg, pf.entry));
        it = cache.emplace(fp, std::make_pair(pf.entry, pf.weights)).first;
      }
      corpus.models.push_back(it->second.first);
      prev = it->second.second;
    }
    out.corpora.push_back(std::move(corpus));
  }
  write_json_atomic(dir / "random" / "corpora.json", out);
  return out;
}

// ---- reports ----------------------------------------------------------------

void to_json(nlohmann::json& j, const ConvergenceReport& r) {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& row : r.rows) {
    rows.push_back({{"iteration", row.iteration},
                    {"predicted", row.predicted},
                    {"observed", row.observed},
                    {"postdicted", row.postdicted},
                    {"min_sym_distance", row.min_sym_distance}});
  }
  j = nlohmann::json{{"rows", rows}, {"converged", r.converged}};
  j["converged_at"] = r.converged_at ? nlohmann::json(*r.converged_at) : nlohmann::json(nullptr);
}

ConvergenceReport convergence_report(const std::vector<AcIterationRecord>& records,
                                     const ConvergenceThresholds& thresholds) {
  if (records.empty()) throw ArgumentError("convergence_report: no records");
  ConvergenceReport rep;
  for (const auto& r : records) {
    rep.rows.push_back({r.iteration, r.predicted.regret, r.observed_regret, r.postdicted.regret, r.min_sym_distance});
  }
  auto meets = [&](const ConvergenceRow& row) {
    return std::abs(row.predicted - row.postdicted) < thresholds.regret_gap && row.min_sym_distance < thresholds.distance;
  };
  for (std::size_t i = 1; i < rep.rows.size(); ++i) {
    if (meets(rep.rows[i])) {
      rep.converged_at = rep.rows[i].iteration;
      break;
    }
  }
  rep.converged = rep.rows.size() >= 2 && meets(rep.rows.back());
  return rep;
}

std::string convergence_csv(const ConvergenceReport& report) {
  std::ostringstream out;
  out.precision(10);
  out << "iteration,predicted,observed,postdicted,min_sym_distance\n";
  for (const auto& r : report.rows) {
    out << r.iteration << ',' << r.predicted << ',' << r.observed << ',' << r.postdicted << ',' << r.min_sym_distance
        << '\n';
  }
  return out.str();
}

void to_json(nlohmann::json& j, const ReplicationPlan& p) {
  nlohmann::json corpora = nlohmann::json::array();
  for (const auto& c : p.corpora) corpora.push_back({{"corpus", c.corpus}, {"prefix_datasets", c.prefix_datasets}});
  j = nlohmann::json{{"n_environments", p.n_environments},
                     {"n_models", p.n_models},
                     {"n_distinct_fits", p.n_distinct_fits},
                     {"subsets", p.subsets},
                     {"corpora", corpora}};
}

ReplicationPlan plan_replication(const ExperimentConfig& config) {
  config.validate();
  ReplicationPlan plan;
  plan.n_environments = 1 + config.ac_iterations + config.n_random_envs;
  plan.subsets = draw_distinct_subsets(config.n_random_envs, config.random_subset_size, config.n_random_subsets,
                                       derive_seed(config.root_seed, kSubsetStream));
  CorpusPlanEntry ac{"AC", {"D1"}};
  for (int g = 2; g <= config.ac_iterations + 1; ++g) ac.prefix_datasets.push_back("AC" + std::to_string(g));
  plan.corpora.push_back(ac);
  for (std::size_t k = 0; k < plan.subsets.size(); ++k) {
    CorpusPlanEntry e{"RC" + std::to_string(k + 1), {"D1"}};
    for (int m : plan.subsets[k]) e.prefix_datasets.push_back("R" + std::to_string(m + 1));
    plan.corpora.push_back(e);
  }
  plan.n_models = 0;
  for (const auto& c : plan.corpora) plan.n_models += static_cast<int>(c.prefix_datasets.size());
  plan.n_distinct_fits = plan.n_models - static_cast<int>(plan.subsets.size());
  return plan;
}

}  // namespace hmmac
