#include "hmmac/experiment.hpp"

#include <algorithm>
#include <chrono>
#include <fstream>
#include <sstream>

#include "hmmac/errors.hpp"

namespace hmmac {

namespace fs = std::filesystem;

namespace {

void write_text(const fs::path& path, const std::string& text) {
  fs::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os << text;
}

double median(std::vector<double> v) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const std::size_t m = v.size() / 2;
  return v.size() % 2 ? v[m] : 0.5 * (v[m - 1] + v[m]);
}

}  // namespace

void to_json(nlohmann::json& j, const ExperimentSummary& s) {
  nlohmann::json distill_seed = nlohmann::json::object(), distill_final = nlohmann::json::object();
  for (const auto& [n, r] : s.distill_seed) distill_seed[std::to_string(n)] = r;
  for (const auto& [n, r] : s.distill_final) distill_final[std::to_string(n)] = r;
  j = nlohmann::json{{"root_seed", s.root_seed},
                     {"deficits",
                      {{"prefixes", s.deficits.prefixes},
                       {"ac", s.deficits.ac},
                       {"random", s.deficits.random},
                       {"random_mean", s.deficits.random_mean}}},
                     {"convergence", s.convergence},
                     {"distill_seed", distill_seed},
                     {"distill_final", distill_final},
                     {"cluster_seed", s.cluster_seed},
                     {"cluster_final", s.cluster_final},
                     {"median_ambiguity_selected", s.median_ambiguity_selected},
                     {"median_ambiguity_background", s.median_ambiguity_background},
                     {"seconds", s.seconds}};
}

DeficitCurves deficit_curves(const AcLoop& loop, const RandomCorpora& random, std::string* nll_csv) {
  const fs::path dir = loop.dir();
  std::vector<std::string> dataset_ids;
  std::vector<Dataset> datasets;
  for (std::size_t i = 0; i < loop.state().datasets.size(); ++i) {
    datasets.push_back(loop.dataset(i));
    dataset_ids.push_back(loop.state().datasets[i].tag);
  }
  for (const auto& e : random.datasets) {
    datasets.push_back(load_dataset(dir / e.path, e.tag));
    dataset_ids.push_back(e.tag);
  }

  // Distinct models by checkpoint path.
  std::vector<std::string> model_ids;
  std::vector<GruWeights> models;
  std::map<std::string, std::size_t> by_checkpoint;
  auto add_model = [&](const ModelEntry& m) {
    if (by_checkpoint.count(m.checkpoint)) return;
    by_checkpoint[m.checkpoint] = models.size();
    models.push_back(load_checkpoint((dir / m.checkpoint).string()));
    model_ids.push_back(m.id);
  };
  for (const auto& m : loop.state().models) add_model(m);
  for (const auto& c : random.corpora)
    for (const auto& m : c.models) add_model(m);

  std::vector<const GruWeights*> model_ptrs;
  for (const auto& m : models) model_ptrs.push_back(&m);
  std::vector<const Dataset*> dataset_ptrs;
  for (const auto& d : datasets) dataset_ptrs.push_back(&d);
  NllMatrix matrix(model_ids, model_ptrs, dataset_ids, dataset_ptrs);

  auto held_out = [&](const std::vector<std::string>& training) {
    std::vector<std::size_t> out;
    for (std::size_t d = 0; d < dataset_ids.size(); ++d)
      if (std::find(training.begin(), training.end(), dataset_ids[d]) == training.end()) out.push_back(d);
    return out;
  };

  DeficitCurves curves;
  std::vector<std::string> ac_training;
  const auto& ac_models = loop.state().models;
  for (std::size_t p = 0; p < ac_models.size(); ++p) {
    ac_training.push_back(loop.state().datasets[p].tag);
    curves.prefixes.push_back(ac_models[p].prefix);
    const auto held = held_out(ac_training);
    curves.ac.push_back(held.empty() ? 0.0 : matrix.worst_case(by_checkpoint.at(ac_models[p].checkpoint), held));
  }
  for (const auto& c : random.corpora) {
    std::vector<std::string> training{"D1"};
    std::vector<double> curve;
    for (std::size_t p = 0; p < c.models.size(); ++p) {
      if (p > 0) training.push_back(random.datasets[static_cast<std::size_t>(c.members[p - 1])].tag);
      const auto held = held_out(training);
      curve.push_back(held.empty() ? 0.0 : matrix.worst_case(by_checkpoint.at(c.models[p].checkpoint), held));
    }
    curves.random[c.id] = curve;
  }
  for (std::size_t p = 0; p < curves.prefixes.size(); ++p) {
    double sum = 0.0;
    int n = 0;
    for (const auto& [id, curve] : curves.random) {
      if (p < curve.size()) {
        sum += curve[p];
        ++n;
      }
    }
    curves.random_mean.push_back(n ? sum / n : 0.0);
  }
  if (nll_csv) *nll_csv = matrix.to_csv();
  return curves;
}

std::vector<std::vector<std::uint8_t>> experiment_probe(const AcLoop& loop, int n_sequences, int length,
                                                        std::uint64_t seed) {
  const auto& entries = loop.state().datasets;
  if (entries.empty()) throw ArgumentError("experiment_probe: no datasets");
  Rng pick(seed);
  std::vector<std::vector<std::uint8_t>> out;
  out.reserve(static_cast<std::size_t>(n_sequences));
  for (int i = 0; i < n_sequences; ++i) {
    const auto& group = entries[pick.below(entries.size())].tasks;
    const auto& task = group[pick.below(group.size())];
    out.push_back(sample_trajectory(task, length, derive_seed(seed, i)).observations);
  }
  return out;
}

ExperimentSummary analyze_experiment(const AcLoop& loop, const RandomCorpora& random) {
  const auto start = std::chrono::steady_clock::now();
  const ExperimentConfig& cfg = loop.state().config;
  const AnalysisSettings& as = cfg.analysis;
  const fs::path out = loop.dir() / "analysis";
  const std::uint64_t seed = derive_seed(cfg.root_seed, 0xa11);
  ExperimentSummary s;
  s.root_seed = cfg.root_seed;

  std::string nll_csv;
  s.deficits = deficit_curves(loop, random, &nll_csv);
  write_text(out / "deficits.csv", nll_csv);
  std::ostringstream curves;
  curves << "corpus,prefix,worst_case_deficit\n";
  for (std::size_t p = 0; p < s.deficits.prefixes.size(); ++p) {
    curves << "AC," << s.deficits.prefixes[p] << ',' << s.deficits.ac[p] << '\n';
    curves << "random_mean," << s.deficits.prefixes[p] << ',' << s.deficits.random_mean[p] << '\n';
  }
  for (const auto& [id, curve] : s.deficits.random)
    for (std::size_t p = 0; p < curve.size(); ++p) curves << id << ',' << p + 1 << ',' << curve[p] << '\n';
  write_text(out / "worst_case_deficit.csv", curves.str());

  if (!loop.state().records.empty()) {
    s.convergence = convergence_report(loop.state().records, cfg.convergence);
    write_text(out / "convergence.csv", convergence_csv(s.convergence));
  }

  const GruWeights seed_model = loop.model(1);
  const GruWeights final_model = loop.model(static_cast<int>(loop.state().models.size()));
  const auto probe = experiment_probe(loop, as.probe_sequences, as.probe_length, derive_seed(seed, 1));
  std::ostringstream distill;
  distill << "model,n,recency,r2\n";
  for (int n = 1; n <= 3; ++n) {
    QFeatureConfig fc = as.features;
    fc.n = n;
    s.distill_seed[n] = distill_glm_best(seed_model, fc, probe, derive_seed(seed, 2));
    s.distill_final[n] = distill_glm_best(final_model, fc, probe, derive_seed(seed, 2));
    distill << "seed," << n << ',' << s.distill_seed[n].config.recency << ',' << s.distill_seed[n].r2 << '\n';
    distill << "final," << n << ',' << s.distill_final[n].config.recency << ',' << s.distill_final[n].r2 << '\n';
  }
  write_text(out / "distill.csv", distill.str());

  s.cluster_seed = cluster_sequences(seed_model, as.cluster_length, as.cluster_k, derive_seed(seed, 3), as.cluster_mixture);
  s.cluster_final = cluster_sequences(final_model, as.cluster_length, as.cluster_k, derive_seed(seed, 3), as.cluster_mixture);
  write_text(out / "clusters.json",
             nlohmann::json{{"seed", s.cluster_seed}, {"final", s.cluster_final}}.dump(2) + "\n");

  std::vector<TaskParams> selected;
  for (const auto& r : loop.state().records) selected.push_back(r.selected);
  EnvMapOptions em;
  em.background = as.env_map_background;
  em.rollouts = cfg.rollouts();
  em.n_rollouts = 200;
  const auto rows = env_map(selected, &final_model, derive_seed(seed, 4), em);
  write_text(out / "env_map.csv", env_map_csv(rows));
  std::vector<double> sel_amb, bg_amb;
  for (const auto& r : rows) (r.source == "input" ? sel_amb : bg_amb).push_back(r.ambiguity);
  s.median_ambiguity_selected = median(sel_amb);
  s.median_ambiguity_background = median(bg_amb);

  // Choice trajectories on two reference sequences.
  std::vector<std::uint8_t> alternating, ones(static_cast<std::size_t>(cfg.horizon), 1);
  for (int t = 0; t < cfg.horizon; ++t) alternating.push_back(static_cast<std::uint8_t>(t % 2));
  std::ostringstream traj;
  traj << "model,sequence,t,p_one\n";
  for (const auto& [name, w] : {std::pair<std::string, const GruWeights*>{"seed", &seed_model},
                                {"final", &final_model}}) {
    for (const auto& [seq_name, seq] : {std::pair<std::string, const std::vector<std::uint8_t>*>{"alternating", &alternating},
                                        {"ones", &ones}}) {
      const auto p = model_trajectory(*w, *seq, as.trajectory_rollouts, derive_seed(seed, 5));
      for (std::size_t t = 0; t < p.size(); ++t) traj << name << ',' << seq_name << ',' << t + 1 << ',' << p[t] << '\n';
    }
  }
  write_text(out / "trajectories.csv", traj.str());

  s.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  write_text(out / "manifest.json", nlohmann::json(s).dump(2) + "\n");
  return s;
}

ExperimentSummary run_experiment(const ExperimentConfig& config, const fs::path& dir, ParticipantSource& source) {
  AcLoop loop = AcLoop::exists(dir) ? AcLoop::resume(dir) : AcLoop(config, dir);
  loop.run_seed_phase(source);
  while (loop.iterations_done() < loop.state().config.ac_iterations) loop.run_iteration(source);
  const RandomCorpora random = build_random_corpora(loop, source);
  return analyze_experiment(loop, random);
}

}  // namespace hmmac
