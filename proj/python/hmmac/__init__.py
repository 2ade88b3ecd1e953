"""Python interface to the hmmac core library.

Structured results (estimates, reports, configurations, session records) are
returned as plain dicts and lists; tasks and policy weights are wrapped types.
"""

from ._core import (
    ArgumentError,
    CollectionError,
    ConfigError,
    DomainError,
    FitError,
    GruWeights,
    ResourceLimitError,
    TaskParams,
    alternation_rate,
    alts_fraction,
    ambiguity,
    cluster_sequences,
    dataset_nll,
    default_population,
    distill,
    estimate_regret,
    experiment_config,
    fit,
    il_accuracy,
    log_likelihood,
    maximize_regret,
    mixing_time,
    ones_fraction,
    plan_replication,
    probe_corpus,
    run_experiment,
    sample_trajectory,
    seed_phase_tasks,
    simulate_sessions,
    stationary_distribution,
    sym_distance,
    symmetry_orbit,
)

__all__ = [name for name in dir() if not name.startswith("_")]
