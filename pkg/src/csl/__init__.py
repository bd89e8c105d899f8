"""Deterministic simulator and verification harness for decentralized
gradient methods on linearly separable data.

Modules: :mod:`~csl.topology` (graphs and mixing matrices),
:mod:`~csl.data` (separable datasets and max-margin solutions),
:mod:`~csl.losses` (loss models and self-boundedness constants),
:mod:`~csl.engine` (the synchronous update loop), :mod:`~csl.metrics`
(trajectories, rate fits, and inequality checkers), :mod:`~csl.harness`
(experiment configs and canned setups), :mod:`~csl.cli` (command-line
front end), and :mod:`~csl.estimator` (a scikit-learn style facade).
"""

from .data import (
    Dataset,
    NotSeparableError,
    Partition,
    bundled_dataset_path,
    generate_signed_measurements,
    load_csv_dataset,
    partition_dataset,
    solve_max_margin,
)
from .engine import EngineAbort, compute_step_rules, run
from .estimator import DecentralizedClassifier
from .harness import (
    AlgoSpec,
    DatasetSpec,
    ExperimentConfig,
    RunBundle,
    TopologySpec,
    reproduce,
    run_experiment,
    sweep,
)
from .losses import LossModel, make_loss_model, verify_self_bounds
from .metrics import (
    CheckReport,
    RateFit,
    Trajectory,
    check_consensus_recursion,
    check_descent,
    check_key_lemma_bound,
    check_pl_linear_convergence,
    check_sandwich,
    check_train_bound_convex,
    fit_rate,
)
from .topology import Graph, MixingMatrix, build_mixing_matrix, generate_erdos_renyi

__version__ = "0.1.0"

__all__ = [
    "AlgoSpec",
    "CheckReport",
    "Dataset",
    "DatasetSpec",
    "DecentralizedClassifier",
    "EngineAbort",
    "ExperimentConfig",
    "Graph",
    "LossModel",
    "MixingMatrix",
    "NotSeparableError",
    "Partition",
    "RateFit",
    "RunBundle",
    "TopologySpec",
    "Trajectory",
    "build_mixing_matrix",
    "bundled_dataset_path",
    "check_consensus_recursion",
    "check_descent",
    "check_key_lemma_bound",
    "check_pl_linear_convergence",
    "check_sandwich",
    "check_train_bound_convex",
    "compute_step_rules",
    "fit_rate",
    "generate_erdos_renyi",
    "generate_signed_measurements",
    "load_csv_dataset",
    "make_loss_model",
    "partition_dataset",
    "reproduce",
    "run",
    "run_experiment",
    "solve_max_margin",
    "sweep",
    "verify_self_bounds",
]
