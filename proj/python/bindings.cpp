#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "hmmac/ac_loop.hpp"
#include "hmmac/agents.hpp"
#include "hmmac/analysis.hpp"
#include "hmmac/env_hmm.hpp"
#include "hmmac/errors.hpp"
#include "hmmac/experiment.hpp"
#include "hmmac/gru_policy.hpp"
#include "hmmac/ideal_learner.hpp"
#include "hmmac/regret_search.hpp"

namespace py = pybind11;
using namespace hmmac;

namespace {

py::object to_py(const nlohmann::json& j) { return py::module_::import("json").attr("loads")(j.dump()); }

nlohmann::json from_py(const py::object& o) {
  if (o.is_none()) return nlohmann::json::object();
  return nlohmann::json::parse(py::module_::import("json").attr("dumps")(o).cast<std::string>());
}

template <class T>
T parse_or(const py::object& o, T fallback) {
  if (o.is_none()) return fallback;
  return from_py(o).get<T>();
}

std::vector<std::vector<std::uint8_t>> to_bits(const std::vector<std::vector<int>>& seqs) {
  std::vector<std::vector<std::uint8_t>> out;
  out.reserve(seqs.size());
  for (const auto& s : seqs) {
    std::vector<std::uint8_t> row;
    for (int v : s) {
      if (v != 0 && v != 1) throw py::value_error("sequences must contain only 0 and 1");
      row.push_back(static_cast<std::uint8_t>(v));
    }
    out.push_back(std::move(row));
  }
  return out;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Two-state HMM tasks, ideal learner, recurrent policy and adversarial task selection";

  py::register_exception<DomainError>(m, "DomainError", PyExc_ValueError);
  py::register_exception<ArgumentError>(m, "ArgumentError", PyExc_ValueError);
  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<ResourceLimitError>(m, "ResourceLimitError", PyExc_RuntimeError);
  py::register_exception<CollectionError>(m, "CollectionError", PyExc_RuntimeError);
  py::register_exception<FitError>(m, "FitError", PyExc_RuntimeError);
  py::register_exception<DegenerateChainError>(m, "DegenerateChainError", PyExc_RuntimeError);

  py::class_<TaskParams>(m, "TaskParams")
      .def(py::init([](double p1, double p2, double r1, double r2) {
             TaskParams t;
             t.p1 = p1;
             t.p2 = p2;
             t.r1 = r1;
             t.r2 = r2;
             t.validate();
             return t;
           }),
           py::arg("p1"), py::arg("p2"), py::arg("r1"), py::arg("r2"))
      .def_readonly("p1", &TaskParams::p1)
      .def_readonly("p2", &TaskParams::p2)
      .def_readonly("r1", &TaskParams::r1)
      .def_readonly("r2", &TaskParams::r2)
      .def("as_tuple", [](const TaskParams& t) { return py::make_tuple(t.p1, t.p2, t.r1, t.r2); })
      .def("__eq__", [](const TaskParams& a, const TaskParams& b) { return a == b; })
      .def("__repr__", [](const TaskParams& t) {
        return "TaskParams(p1=" + std::to_string(t.p1) + ", p2=" + std::to_string(t.p2) +
               ", r1=" + std::to_string(t.r1) + ", r2=" + std::to_string(t.r2) + ")";
      });

  m.def(
      "sample_trajectory",
      [](const TaskParams& t, int horizon, std::uint64_t seed) {
        const auto tr = sample_trajectory(t, horizon, seed);
        return py::make_tuple(std::vector<int>(tr.states.begin(), tr.states.end()),
                              std::vector<int>(tr.observations.begin(), tr.observations.end()));
      },
      py::arg("task"), py::arg("horizon"), py::arg("seed"), "Returns (states, observations).");
  m.def("stationary_distribution", &stationary_distribution);
  m.def("mixing_time", &mixing_time);
  m.def("ambiguity", &ambiguity);
  m.def("alternation_rate", &alternation_rate);
  m.def("sym_distance", &sym_distance);
  m.def("symmetry_orbit", &symmetry_orbit);
  m.def("log_likelihood", [](const TaskParams& t, const std::vector<int>& obs) {
    return log_likelihood(t, to_bits({obs}).front());
  });

  m.def(
      "il_accuracy",
      [](const TaskParams& t, int horizon, int n_rollouts, std::uint64_t seed, int n_particles) {
        FilterConfig fc;
        fc.n_particles = n_particles;
        return to_py(il_accuracy(t, horizon, n_rollouts, seed, fc));
      },
      py::arg("task"), py::arg("horizon") = 50, py::arg("n_rollouts") = 1000, py::arg("seed") = 0,
      py::arg("n_particles") = 1000);

  py::class_<GruWeights>(m, "GruWeights")
      .def_static("random", &GruWeights::random, py::arg("seed"), py::arg("hidden") = kDefaultHidden)
      .def_static("zeros", &GruWeights::zeros, py::arg("hidden") = kDefaultHidden)
      .def_static("load", &load_checkpoint)
      .def("save", [](const GruWeights& w, const std::string& path) { save_checkpoint(path, w); })
      .def_property_readonly("hidden", &GruWeights::hidden)
      .def("__len__", &GruWeights::size)
      .def("parameters", [](const GruWeights& w) { return std::vector<double>(w.flat().begin(), w.flat().end()); })
      .def("logits",
           [](const GruWeights& w, const std::vector<int>& actions, const std::vector<int>& outcomes) {
             if (actions.size() != outcomes.size()) throw py::value_error("actions and outcomes differ in length");
             GruRunner r(w);
             std::vector<double> out;
             for (std::size_t t = 0; t < actions.size(); ++t) {
               out.push_back(r.logit());
               r.observe(static_cast<std::uint8_t>(actions[t]), static_cast<std::uint8_t>(outcomes[t]));
             }
             return out;
           },
           "Teacher-forced logit of each trial before its outcome is seen.");

  m.def(
      "fit",
      [](const GruWeights& init, const std::vector<std::string>& dataset_paths, py::object config) {
        std::vector<Dataset> parts;
        for (const auto& p : dataset_paths) parts.push_back(load_dataset(p));
        std::vector<const Dataset*> ptrs;
        for (const auto& d : parts) ptrs.push_back(&d);
        const auto corpus = merge_datasets(ptrs, "corpus");
        const auto r = fit(init, corpus, parse_or(config, FitConfig{}));
        return py::make_tuple(r.weights, to_py({{"train_nll", r.train_nll},
                                                {"validation_nll", r.validation_nll},
                                                {"epochs", r.epochs_run},
                                                {"corpus_fingerprint", corpus.fingerprint()}}));
      },
      py::arg("init"), py::arg("datasets"), py::arg("config") = py::none(),
      "Fits to the union of the line-delimited session files; returns (weights, info).");
  m.def("dataset_nll", [](const GruWeights& w, const std::string& path) {
    const auto d = load_dataset(path);
    const auto eps = d.episodes();
    return dataset_nll(w, eps);
  });

  m.def(
      "estimate_regret",
      [](const GruWeights& w, const TaskParams& t, int n_rollouts, std::uint64_t seed, int horizon, int n_particles) {
        RolloutSettings rs;
        rs.horizon = horizon;
        rs.filter.n_particles = n_particles;
        return to_py(estimate_regret(w, t, n_rollouts, seed, rs));
      },
      py::arg("weights"), py::arg("task"), py::arg("n_rollouts") = 1000, py::arg("seed") = 0, py::arg("horizon") = 50,
      py::arg("n_particles") = 1000);
  m.def(
      "maximize_regret",
      [](const GruWeights& w, py::object config, int horizon, int n_particles) {
        RolloutSettings rs;
        rs.horizon = horizon;
        rs.filter.n_particles = n_particles;
        const auto r = maximize_regret(w, parse_or(config, SearchConfig{}), rs);
        return py::make_tuple(r.task, to_py(r.estimate), to_py(r.report));
      },
      py::arg("weights"), py::arg("config") = py::none(), py::arg("horizon") = 50, py::arg("n_particles") = 1000,
      "Returns (task, estimate, report).");

  m.def(
      "simulate_sessions",
      [](const TaskParams& t, int n_sessions, int horizon, std::uint64_t seed, py::object population,
         const std::string& tag) {
        const auto pop = parse_or(population, PopulationSpec::default_mixed());
        const auto d = simulate_sessions(pop, t, n_sessions, horizon, seed, {tag, 0});
        return to_py(d.sessions);
      },
      py::arg("task"), py::arg("n_sessions"), py::arg("horizon") = 50, py::arg("seed") = 0,
      py::arg("population") = py::none(), py::arg("tag") = "sim");
  m.def("default_population", [] { return to_py(PopulationSpec::default_mixed()); });

  m.def("ones_fraction", [](const std::vector<int>& s) { return ones_fraction(to_bits({s}).front()); });
  m.def("alts_fraction", [](const std::vector<int>& s) { return alts_fraction(to_bits({s}).front()); });
  m.def(
      "distill",
      [](const GruWeights& w, const std::vector<std::vector<int>>& probe, int n, std::uint64_t seed, bool best) {
        QFeatureConfig fc;
        fc.n = n;
        const auto bits = to_bits(probe);
        return to_py(best ? distill_glm_best(w, fc, bits, seed) : distill_glm(w, fc, bits, seed));
      },
      py::arg("weights"), py::arg("probe"), py::arg("n") = 1, py::arg("seed") = 0, py::arg("best_recency") = true);
  m.def(
      "probe_corpus",
      [](const std::vector<TaskParams>& tasks, int n, int length, std::uint64_t seed) {
        std::vector<std::vector<int>> out;
        for (const auto& s : probe_corpus(tasks, n, length, seed)) out.emplace_back(s.begin(), s.end());
        return out;
      },
      py::arg("tasks"), py::arg("n_sequences"), py::arg("length"), py::arg("seed") = 0);
  m.def(
      "cluster_sequences",
      [](const GruWeights& w, int length, int k, std::uint64_t seed, py::object options) {
        return to_py(cluster_sequences(w, length, k, seed, parse_or(options, GmmOptions{})));
      },
      py::arg("weights"), py::arg("length") = 15, py::arg("k") = 2, py::arg("seed") = 0, py::arg("options") = py::none());

  m.def("seed_phase_tasks", &seed_phase_tasks, py::arg("n_sessions"), py::arg("seed"));
  m.def(
      "experiment_config",
      [](py::object overrides) { return to_py(parse_or(overrides, ExperimentConfig::desk())); },
      py::arg("overrides") = py::none(), "Resolved configuration (preset plus overrides).");
  m.def(
      "plan_replication",
      [](py::object config) { return to_py(plan_replication(parse_or(config, ExperimentConfig::desk()))); },
      py::arg("config") = py::none());
  m.def(
      "run_experiment",
      [](py::object config, const std::string& dir) {
        const auto cfg = parse_or(config, ExperimentConfig::desk());
        auto source = make_source(cfg);
        py::gil_scoped_release release;
        const auto s = run_experiment(cfg, dir, *source);
        py::gil_scoped_acquire acquire;
        return to_py(s);
      },
      py::arg("config"), py::arg("dir"), "Seed phase, AC iterations, random corpora and analysis; resumes in dir.");
}
