import json
import math

import pytest

import hmmac


def task():
    return hmmac.TaskParams(0.1, 0.2, 0.8, 0.3)


def test_task_validation_and_symmetry():
    t = task()
    assert t.as_tuple() == (0.1, 0.2, 0.8, 0.3)
    with pytest.raises(hmmac.DomainError):
        hmmac.TaskParams(1.5, 0.1, 0.1, 0.1)
    orbit = hmmac.symmetry_orbit(t)
    assert len(orbit) == 4
    for image in orbit:
        assert hmmac.sym_distance(t, image) == pytest.approx(0.0)
    pi = hmmac.stationary_distribution(t)
    assert sum(pi) == pytest.approx(1.0)
    assert pi[0] == pytest.approx(0.2 / 0.3)


def test_trajectory_is_seeded_and_likelihood_is_finite():
    states, obs = hmmac.sample_trajectory(task(), 50, 7)
    assert len(obs) == 50 and set(obs) <= {0, 1}
    assert set(states) <= {1, 2}
    assert hmmac.sample_trajectory(task(), 50, 7) == (states, obs)
    assert math.isfinite(hmmac.log_likelihood(task(), obs))


def test_ideal_learner_beats_chance_on_informative_task():
    est = hmmac.il_accuracy(hmmac.TaskParams(0.05, 0.05, 0.9, 0.1), 50, 100, 3, 200)
    assert est["mean"] > 0.6


def test_weights_round_trip_and_logits(tmp_path):
    w = hmmac.GruWeights.random(5)
    assert len(w) == 225 and w.hidden == 7
    path = str(tmp_path / "w.json")
    w.save(path)
    again = hmmac.GruWeights.load(path)
    assert again.parameters() == pytest.approx(w.parameters(), abs=0.0)
    logits = w.logits([0, 1, 1], [1, 0, 1])
    assert len(logits) == 3 and all(math.isfinite(x) for x in logits)


def test_simulate_fit_regret_pipeline(tmp_path):
    sessions = hmmac.simulate_sessions(task(), 12, horizon=20, seed=4)
    assert len(sessions) == 12
    path = tmp_path / "d.jsonl"
    path.write_text("".join(json.dumps(s) + "\n" for s in sessions))
    init = hmmac.GruWeights.random(1)
    before = hmmac.dataset_nll(init, str(path))
    fitted, info = hmmac.fit(init, [str(path)], {"max_epochs": 30, "patience": 30, "seed": 2})
    assert info["epochs"] >= 1
    assert hmmac.dataset_nll(fitted, str(path)) < before
    est = hmmac.estimate_regret(fitted, task(), n_rollouts=20, seed=1, horizon=20, n_particles=100)
    assert {"regret", "regret_se", "j_il", "j_pi"} <= set(est)


def test_search_returns_task_in_unit_cube():
    config = {
        "n_scan_points": 8,
        "n_rollouts_scan": 5,
        "n_refine_candidates": 2,
        "n_rollouts_refine": 5,
        "refine_iterations": 2,
        "n_rollouts_final": 10,
    }
    best, estimate, report = hmmac.maximize_regret(
        hmmac.GruWeights.random(3), config, horizon=15, n_particles=50)
    assert all(0.0 <= v <= 1.0 for v in best.as_tuple())
    assert isinstance(report, dict) and "regret" in estimate


def test_analysis_entry_points():
    w = hmmac.GruWeights.random(9)
    probe = hmmac.probe_corpus([task()], 40, 20, 1)
    result = hmmac.distill(w, probe, n=1, seed=0)
    assert -1.0 < result["r2"] <= 1.0
    report = hmmac.cluster_sequences(w, length=6, k=2, seed=0, options={"restarts": 2})
    assert isinstance(report, dict)
    assert hmmac.ones_fraction([1, 1, 0, 0]) == pytest.approx(0.5)


def test_configuration_and_replication_plan():
    cfg = hmmac.experiment_config({"preset": "full"})
    plan = hmmac.plan_replication(cfg)
    assert plan["n_environments"] == 14
    assert plan["n_models"] == 66
    with pytest.raises(hmmac.ConfigError):
        hmmac.experiment_config({"preset": "nonexistent"})
    assert len(hmmac.seed_phase_tasks(5, 1)) == 5
