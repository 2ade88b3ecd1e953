#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include "hmmac/ac_loop.hpp"
#include "hmmac/errors.hpp"
#include "hmmac/experiment.hpp"
#include "hmmac/session_service.hpp"

using namespace hmmac;
namespace fs = std::filesystem;

namespace {

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
};

void add_common(CLI::App* app, Common& c, const std::string& out_help) {
  app->add_option("--config", c.config, "JSON configuration file");
  app->add_option("--seed", c.seed, "Root seed (overrides the configuration)");
  app->add_option("--out", c.out, out_help);
}

ExperimentConfig experiment_config(const Common& c) {
  auto cfg = c.config.empty() ? ExperimentConfig::desk() : load_config(c.config);
  if (c.seed) cfg.root_seed = *c.seed;
  cfg.validate();
  return cfg;
}

void emit(const nlohmann::json& j, const std::string& path = "") {
  if (path.empty()) {
    std::cout << j.dump(2) << '\n';
    return;
  }
  if (fs::path(path).has_parent_path()) fs::create_directories(fs::path(path).parent_path());
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path);
  os << j.dump(2) << '\n';
}

fs::path require_dir(const Common& c) {
  if (c.out.empty()) throw ArgumentError("--out <loop directory> is required");
  return c.out;
}

// Opens the loop in dir, creating it from the configuration if absent.
AcLoop open_loop(const Common& c) {
  const auto dir = require_dir(c);
  if (AcLoop::exists(dir)) return AcLoop::resume(dir);
  return AcLoop(experiment_config(c), dir);
}

TaskParams parse_task(const std::string& text) {
  std::vector<double> v;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) v.push_back(std::stod(item));
  if (v.size() != 4) throw ArgumentError("--task expects p1,p2,r1,r2");
  TaskParams t{v[0], v[1], v[2], v[3]};
  t.validate();
  return t;
}

nlohmann::json record_summary(const AcIterationRecord& r) {
  return {{"iteration", r.iteration},
          {"selected", r.selected},
          {"predicted_regret", r.predicted.regret},
          {"observed_regret", r.observed_regret},
          {"postdicted_regret", r.postdicted.regret},
          {"min_sym_distance", r.min_sym_distance},
          {"model", r.model_checkpoint}};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Adversarial construction of two-state HMM prediction tasks"};
  app.require_subcommand(1);

  Common seed_c, step_c, run_c, rand_c, report_c, fit_c, search_c, sim_c, serve_c, analyze_c;

  auto* seed_cmd = app.add_subcommand("seed-phase", "Collect D1 and fit the prefix-1 model");
  add_common(seed_cmd, seed_c, "Loop directory");

  auto* step_cmd = app.add_subcommand("ac-step", "Run one adversarial iteration");
  add_common(step_cmd, step_c, "Loop directory");

  int run_iterations = -1;
  bool run_full = false;
  auto* run_cmd = app.add_subcommand("ac-run", "Run the remaining adversarial iterations");
  add_common(run_cmd, run_c, "Loop directory");
  run_cmd->add_option("--iterations", run_iterations, "Iterations to run (default: up to ac_iterations)");
  run_cmd->add_flag("--full", run_full, "Also build random corpora and run the analysis");

  auto* rand_cmd = app.add_subcommand("random-corpora", "Collect random-environment datasets and fit corpus prefixes");
  add_common(rand_cmd, rand_c, "Loop directory");

  auto* report_cmd = app.add_subcommand("report", "Print convergence and deficit curves of a loop");
  add_common(report_cmd, report_c, "Loop directory");
  std::string report_json;
  report_cmd->add_option("--json", report_json, "Also write the report to this file");

  std::vector<std::string> fit_data;
  std::string fit_init;
  auto* fit_cmd = app.add_subcommand("fit", "Fit the recurrent policy to session files");
  add_common(fit_cmd, fit_c, "Checkpoint path");
  fit_cmd->add_option("--data", fit_data, "Line-delimited session files")->required();
  fit_cmd->add_option("--init", fit_init, "Warm-start checkpoint");

  std::string search_model;
  auto* search_cmd = app.add_subcommand("regret-search", "Find the environment of maximal regret for a model");
  add_common(search_cmd, search_c, "Result JSON path (default: stdout)");
  search_cmd->add_option("--model", search_model, "Checkpoint")->required();

  std::string sim_task;
  int sim_sessions = 30;
  std::string sim_tag = "sim";
  auto* sim_cmd = app.add_subcommand("simulate", "Simulate synthetic sessions on one environment");
  add_common(sim_cmd, sim_c, "Output .jsonl path (default: stdout)");
  sim_cmd->add_option("--task", sim_task, "p1,p2,r1,r2")->required();
  sim_cmd->add_option("--sessions", sim_sessions, "Number of sessions");
  sim_cmd->add_option("--tag", sim_tag, "Corpus tag");

  int port = 8080;
  std::string host = "0.0.0.0", plan, data_dir;
  double idle_minutes = 30.0;
  auto* serve_cmd = app.add_subcommand("serve", "Run the participant session service");
  add_common(serve_cmd, serve_c, "Data directory (same as --data-dir)");
  serve_cmd->add_option("--port", port, "TCP port");
  serve_cmd->add_option("--host", host, "Bind address");
  serve_cmd->add_option("--plan", plan, "Pending-environment plan file");
  serve_cmd->add_option("--data-dir", data_dir, "Where datasets and session state are written");
  serve_cmd->add_option("--idle-minutes", idle_minutes, "Idle timeout before a session expires");

  std::string analyze_model;
  auto* analyze_cmd = app.add_subcommand("analyze", "Run the evaluation battery on a loop or a single model");
  add_common(analyze_cmd, analyze_c, "Loop directory");
  analyze_cmd->add_option("--model", analyze_model, "Analyse one checkpoint instead of a loop");

  CLI11_PARSE(app, argc, argv);

  try {
    if (seed_cmd->parsed()) {
      auto loop = open_loop(seed_c);
      auto source = make_source(loop.state().config);
      loop.run_seed_phase(*source);
      emit({{"models", loop.state().models.size()}, {"dataset", loop.state().datasets.front().path}});
    } else if (step_cmd->parsed()) {
      auto loop = open_loop(step_c);
      auto source = make_source(loop.state().config);
      loop.run_seed_phase(*source);
      emit(record_summary(loop.run_iteration(*source)));
    } else if (run_cmd->parsed()) {
      if (run_full) {
        const auto dir = require_dir(run_c);
        const auto cfg = AcLoop::exists(dir) ? AcLoop::resume(dir).state().config : experiment_config(run_c);
        auto source = make_source(cfg);
        emit(run_experiment(cfg, dir, *source));
      } else {
        auto loop = open_loop(run_c);
        auto source = make_source(loop.state().config);
        loop.run_seed_phase(*source);
        const int n = run_iterations >= 0 ? run_iterations
                                          : std::max(0, loop.state().config.ac_iterations - loop.iterations_done());
        loop.run(n, *source);
        nlohmann::json rows = nlohmann::json::array();
        for (const auto& r : loop.state().records) rows.push_back(record_summary(r));
        emit(rows);
      }
    } else if (rand_cmd->parsed()) {
      const auto loop = AcLoop::resume(require_dir(rand_c));
      auto source = make_source(loop.state().config);
      const auto r = build_random_corpora(loop, *source);
      emit({{"environments", r.envs.size()}, {"corpora", r.corpora.size()}});
    } else if (report_cmd->parsed()) {
      const auto loop = AcLoop::resume(require_dir(report_c));
      nlohmann::json j;
      const auto& records = loop.state().records;
      if (!records.empty()) {
        j["convergence"] = convergence_report(records, loop.state().config.convergence);
      }
      if (auto random = load_random_corpora(loop.dir())) {
        const auto curves = deficit_curves(loop, *random);
        j["deficits"] = {{"prefixes", curves.prefixes}, {"ac", curves.ac}, {"random_mean", curves.random_mean}};
      }
      emit(j);
      if (!report_json.empty()) emit(j, report_json);
    } else if (fit_cmd->parsed()) {
      const auto cfg = experiment_config(fit_c);
      std::vector<Dataset> parts;
      for (const auto& f : fit_data) parts.push_back(load_dataset(f));
      std::vector<const Dataset*> ptrs;
      for (const auto& d : parts) ptrs.push_back(&d);
      const auto corpus = merge_datasets(ptrs, "corpus");
      auto fc = cfg.fit;
      fc.seed = fit_seed_for(cfg.root_seed, corpus.fingerprint());
      const auto init = fit_init.empty() ? initial_weights(cfg) : load_checkpoint(fit_init);
      const auto r = fit(init, corpus, fc);
      const nlohmann::json meta{{"corpus_fingerprint", corpus.fingerprint()},
                                {"train_nll", r.train_nll},
                                {"validation_nll", r.validation_nll},
                                {"epochs", r.epochs_run}};
      if (fit_c.out.empty()) throw ArgumentError("--out <checkpoint> is required");
      save_checkpoint(fit_c.out, r.weights, meta);
      emit(meta);
    } else if (search_cmd->parsed()) {
      const auto cfg = experiment_config(search_c);
      auto sc = cfg.search;
      sc.seed = cfg.root_seed;
      const auto r = maximize_regret(load_checkpoint(search_model), sc, cfg.rollouts());
      emit({{"task", r.task}, {"estimate", r.estimate}, {"report", r.report}}, search_c.out);
    } else if (sim_cmd->parsed()) {
      const auto cfg = experiment_config(sim_c);
      const auto d = simulate_sessions(cfg.population, parse_task(sim_task), sim_sessions, cfg.horizon, cfg.root_seed,
                                       {sim_tag, 0});
      if (sim_c.out.empty()) {
        for (const auto& s : d.sessions) std::cout << nlohmann::json(s).dump() << '\n';
      } else {
        write_jsonl(sim_c.out, d.sessions);
      }
    } else if (serve_cmd->parsed()) {
      ServiceConfig sc;
      if (!serve_c.config.empty()) {
        std::ifstream is(serve_c.config);
        const auto j = nlohmann::json::parse(is);
        sc.instructions = j.value("instructions", sc.instructions);
        sc.points_per_correct = j.value("points_per_correct", sc.points_per_correct);
        idle_minutes = j.value("idle_minutes", idle_minutes);
      }
      sc.plan_path = plan;
      sc.data_dir = !data_dir.empty() ? data_dir : !serve_c.out.empty() ? serve_c.out : "data";
      sc.idle_timeout_seconds = idle_minutes * 60.0;
      sc.seed = serve_c.seed.value_or(0);
      SessionManager manager(sc);
      std::cerr << "serving on " << host << ':' << port << '\n';
      serve(manager, host, port);
    } else if (analyze_cmd->parsed()) {
      if (!analyze_model.empty()) {
        const auto cfg = experiment_config(analyze_c);
        const auto w = load_checkpoint(analyze_model);
        const auto& as = cfg.analysis;
        const auto tasks = seed_phase_tasks(cfg.n_seed_sessions, cfg.root_seed);
        const auto probe = probe_corpus(tasks, as.probe_sequences, as.probe_length, derive_seed(cfg.root_seed, 1));
        nlohmann::json j;
        for (int n = 1; n <= 3; ++n) {
          auto fc = as.features;
          fc.n = n;
          j["distill"][std::to_string(n)] = distill_glm_best(w, fc, probe, derive_seed(cfg.root_seed, 2));
        }
        j["clusters"] = cluster_sequences(w, as.cluster_length, as.cluster_k, derive_seed(cfg.root_seed, 3),
                                          as.cluster_mixture);
        emit(j);
      } else {
        const auto loop = AcLoop::resume(require_dir(analyze_c));
        auto random = load_random_corpora(loop.dir());
        if (!random) {
          auto source = make_source(loop.state().config);
          random = build_random_corpora(loop, *source);
        }
        emit(analyze_experiment(loop, *random));
      }
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
