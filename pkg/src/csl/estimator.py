"""Scikit-learn compatible front end for the decentralized trainers.

:class:`DecentralizedClassifier` wraps dataset wrapping, graph/mixing
construction, partitioning, step-size selection, and the training loop
behind the usual ``fit`` / ``predict`` / ``decision_function`` API, so
the simulator composes with sklearn tooling (pipelines, grid search,
cross-validation). The fitted model predicts with the averaged
parameter; per-agent rows stay available on ``agent_coef_`` and the full
per-iteration record on ``trajectory_``.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from . import engine
from .data import Dataset, NotSeparableError, attach_margin, partition_dataset, solve_max_margin
from .losses import LOSS_KINDS, make_loss_model, risk
from .topology import (
    MIXING_SCHEMES,
    NAMED_GRAPH_KINDS,
    build_mixing_matrix,
    generate_erdos_renyi,
    generate_named_graph,
)

TOPOLOGY_KINDS = ("erdos_renyi",) + NAMED_GRAPH_KINDS


class DecentralizedClassifier(BaseEstimator, ClassifierMixin):
    """Binary linear classifier trained by synchronous decentralized steps.

    Parameters
    ----------
    algo : one of :data:`~.engine.ALGO_KINDS`
        Update rule; centralized baselines ignore the topology settings.
    loss : one of :data:`~.losses.LOSS_KINDS`
    n_agents : int
        Rows of the parameter matrix; the training set is split into
        this many nearly equal shards.
    topology : "erdos_renyi" or a named graph kind
    p_connect : float
        Edge probability for the random topology.
    scheme : mixing weight scheme, one of :data:`~.topology.MIXING_SCHEMES`
    eta : float or "auto"
        Base step size; "auto" picks the loss-appropriate certified rule
        (normalized-direction algorithms fall back to 0.5, which has no
        curvature scale to respect).
    eta_schedule : "constant" or "inverse_sqrt"
    gamma_momentum : float
        Momentum factor, used by ``fdlr_nesterov`` only.
    T : int
        Number of recorded states; ``T - 1`` steps are taken.
    record_every : int or None
        Trajectory cadence (None: 1 for short runs, 10 for long ones).
    solve_margin : bool
        Solve the max-margin direction on the training set so the
        trajectory's directional-distance columns are filled. Skipped
        automatically when the data is not separable.
    random_state : int
        Seeds the topology draw and the shard assignment.

    Attributes
    ----------
    classes_ : (2,) original class labels, sorted; index 1 is "positive"
    coef_ : (d,) averaged parameter
    agent_coef_ : (n_agents, d) per-agent parameters
    trajectory_ : :class:`~.metrics.Trajectory`
    mixing_ : :class:`~.topology.MixingMatrix`
    step_rules_ : :class:`~.engine.StepSizeRules`
    """

    def __init__(
        self,
        algo: str = "dgd",
        loss: str = "logistic",
        n_agents: int = 4,
        topology: str = "erdos_renyi",
        p_connect: float = 0.5,
        scheme: str = "metropolis",
        eta="auto",
        eta_schedule: str = "constant",
        gamma_momentum: float = 0.8,
        T: int = 200,
        record_every: int | None = None,
        solve_margin: bool = True,
        random_state: int = 0,
    ):
        self.algo = algo
        self.loss = loss
        self.n_agents = n_agents
        self.topology = topology
        self.p_connect = p_connect
        self.scheme = scheme
        self.eta = eta
        self.eta_schedule = eta_schedule
        self.gamma_momentum = gamma_momentum
        self.T = T
        self.record_every = record_every
        self.solve_margin = solve_margin
        self.random_state = random_state

    def _validate_params_strict(self) -> None:
        if self.algo not in engine.ALGO_KINDS:
            raise ValueError(f"algo must be one of {engine.ALGO_KINDS}, got {self.algo!r}")
        if self.loss not in LOSS_KINDS:
            raise ValueError(f"loss must be one of {LOSS_KINDS}, got {self.loss!r}")
        if self.topology not in TOPOLOGY_KINDS:
            raise ValueError(f"topology must be one of {TOPOLOGY_KINDS}, got {self.topology!r}")
        if self.scheme not in MIXING_SCHEMES:
            raise ValueError(f"scheme must be one of {MIXING_SCHEMES}, got {self.scheme!r}")
        if self.eta != "auto" and not (np.isscalar(self.eta) and float(self.eta) > 0):
            raise ValueError(f"eta must be 'auto' or a positive number, got {self.eta!r}")
        if int(self.T) < 1:
            raise ValueError(f"T must be >= 1, got {self.T}")
        if int(self.n_agents) < 1:
            raise ValueError(f"n_agents must be >= 1, got {self.n_agents}")

    def fit(self, X, y) -> "DecentralizedClassifier":
        self._validate_params_strict()
        X, y = check_X_y(X, y, dtype=np.float64, ensure_min_samples=2)
        self.classes_ = np.unique(y)
        if self.classes_.shape[0] != 2:
            raise ValueError(
                f"this classifier is strictly binary, got {self.classes_.shape[0]} classes"
            )
        labels = np.where(y == self.classes_[1], 1.0, -1.0)
        dataset = Dataset(features=X, labels=labels)
        if self.solve_margin:
            try:
                dataset = attach_margin(dataset, solve_max_margin(dataset))
            except NotSeparableError:
                pass

        n_agents = 1 if self.algo in engine.CENTRAL_ALGOS else int(self.n_agents)
        if n_agents > dataset.n:
            raise ValueError(f"n_agents={n_agents} exceeds n_samples={dataset.n}")
        if self.topology == "erdos_renyi":
            graph = generate_erdos_renyi(n_agents, self.p_connect, seed=self.random_state)
        else:
            graph = generate_named_graph(self.topology, n_agents)
        mixing = build_mixing_matrix(graph, self.scheme)
        partition = partition_dataset(dataset, n_agents, seed=self.random_state)
        model = make_loss_model(self.loss, dataset)

        f0 = risk(model, np.zeros(dataset.d), dataset.signed)
        rules = engine.compute_step_rules(mixing, model, n_agents, F_at_init=f0)
        if self.eta == "auto":
            normalized_steps = self.algo in ("fdlr", "fdlr_nesterov", "normalized_dgd", "central_ngd")
            eta = 0.5 if normalized_steps else rules.eta_default
        else:
            eta = float(self.eta)

        traj = engine.run(
            self.algo, dataset, partition, mixing, model,
            eta=eta, T=int(self.T), eta_schedule=self.eta_schedule,
            gamma_momentum=float(self.gamma_momentum),
            record_every=self.record_every,
        )
        self.mixing_ = mixing
        self.step_rules_ = rules
        self.loss_model_ = model
        self.trajectory_ = traj
        self.agent_coef_ = traj.W_final
        self.coef_ = traj.w_bar_final
        self.n_features_in_ = dataset.d
        self.n_iter_ = int(traj.t[-1])
        return self

    def decision_function(self, X) -> np.ndarray:
        check_is_fitted(self, "coef_")
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(
                f"X has {X.shape[1]} features, expected {self.n_features_in_}"
            )
        return X @ self.coef_

    def predict(self, X) -> np.ndarray:
        scores = self.decision_function(X)
        return self.classes_[(scores > 0.0).astype(int)]
