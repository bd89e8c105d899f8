"""Synchronous iteration state machines and step-size rule calculators.

Seven update rules share one representation: the parameter matrix ``W``
holds one row per agent, trackers ``V`` and momentum ``Z`` exist only
where the algorithm uses them, and every step evaluates local gradients
at the pre-step ``W`` (simultaneous rounds). Centralized baselines are
the single-row special cases and bypass mixing entirely.

Local objectives follow the convention that agent ``l``'s risk is
``(N/n) * sum_{j in shard_l} f(w_l, x_j)``: the divisor is the global
sample count, not the shard size. For balanced shards that is exactly
the shard mean; it also gives leave-one-out runs a clean meaning
(masking one sample's weight changes a single gradient term and nothing
else), which the stability checker relies on.

Every step function is pure: it returns a fresh :class:`AlgoState` and
raises :class:`EngineAbort` on non-finite values or vanishing
normalization directions. :func:`run` drives steps, records a
:class:`~.metrics.Trajectory` on the requested cadence, and converts
aborts into a truncated trajectory with the reason attached.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .data import Dataset, Partition
from .losses import (
    LossModel,
    grad_coeffs_of_margins,
    losses_of_margins,
    risk_grad,
)
from .metrics import Trajectory, consensus_error, directional_distance
from .topology import MixingMatrix

ALGO_KINDS = (
    "dgd",
    "dgt",
    "fdlr",
    "fdlr_nesterov",
    "normalized_dgd",
    "central_gd",
    "central_ngd",
)
TRACKER_ALGOS = ("dgt", "fdlr", "fdlr_nesterov")
CENTRAL_ALGOS = ("central_gd", "central_ngd")
ETA_SCHEDULES = ("constant", "inverse_sqrt")

# Below this row norm a normalized direction is numerically meaningless;
# runs that hit it halt gracefully with the partial trajectory.
VANISH_TOL = 1e-15


class EngineAbort(RuntimeError):
    """Raised by step functions when a run cannot continue."""


@dataclass(frozen=True)
class AlgoState:
    """One algorithm's full iteration state at time ``t`` (1-based)."""

    algo: str
    W: np.ndarray
    V: np.ndarray | None
    Z: np.ndarray | None
    t: int
    eta: float
    eta_schedule: str
    gamma_momentum: float


@dataclass(frozen=True)
class StepSizeRules:
    """Step-size thresholds certified by the convergence analyses.

    ``None`` marks a rule whose constants are unavailable for the loss
    (no global smoothness constant, no decay-rate constant, or no solved
    margin). ``eta_default`` is the conservative pick :func:`run`-level
    callers use when asked for an automatic step size.
    """

    eta_max_convex: float | None
    eta_max_pl: float | None
    delta_exp: float | None
    eta_max_contraction: float
    eta_default: float


def current_eta(state: AlgoState) -> float:
    """Step size in effect for the step leaving ``state.t``."""
    if state.eta_schedule == "constant":
        return state.eta
    return state.eta / float(np.sqrt(state.t))


def full_partition(n: int) -> Partition:
    """The single-shard partition used by centralized baselines."""
    return Partition(shards=(tuple(range(n)),), n_samples=n)


def _padded_shards(
    dataset: Dataset,
    partition: Partition,
    sample_weights: np.ndarray | None,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Shard tensors (x_pad, wt_pad, mask): (N, m_max, d) and (N, m_max).

    Padding rows are zero samples with zero weight, so they drop out of
    every sum without branching. ``mask`` flags real samples regardless
    of ``sample_weights`` (recorded risks stay unweighted).
    """
    signed = dataset.signed
    n, d = signed.shape
    shards = partition.shards
    if sample_weights is not None:
        sample_weights = np.asarray(sample_weights, dtype=np.float64)
        if sample_weights.shape != (n,):
            raise ValueError(f"sample_weights must have shape ({n},)")
        if np.any(sample_weights < 0.0):
            raise ValueError("sample_weights must be nonnegative")
    m_max = max(len(s) for s in shards)
    x_pad = np.zeros((len(shards), m_max, d))
    wt_pad = np.zeros((len(shards), m_max))
    mask = np.zeros((len(shards), m_max))
    for row, shard in enumerate(shards):
        idx = np.asarray(shard, dtype=np.intp)
        x_pad[row, : idx.size] = signed[idx]
        mask[row, : idx.size] = 1.0
        wt_pad[row, : idx.size] = 1.0 if sample_weights is None else sample_weights[idx]
    return x_pad, wt_pad, mask


def local_gradients(
    W: np.ndarray,
    model: LossModel,
    dataset: Dataset,
    partition: Partition,
    sample_weights: np.ndarray | None = None,
) -> np.ndarray:
    """Stacked local gradients: row ``l`` is (N/n) sum_j w_j f'(u) x_j."""
    x_pad, wt_pad, _ = _padded_shards(dataset, partition, sample_weights)
    u = np.einsum("lmd,ld->lm", x_pad, W)
    coeff = grad_coeffs_of_margins(model, u) * wt_pad
    scale = len(partition.shards) / dataset.n
    return scale * np.einsum("lm,lmd->ld", coeff, x_pad)


def matrix_risk(
    W: np.ndarray,
    model: LossModel,
    dataset: Dataset,
    partition: Partition,
) -> float:
    """Average of local risks at each agent's own row: (1/n) sum_l sum_j f(w_l, x_j)."""
    x_pad, _, mask = _padded_shards(dataset, partition, None)
    u = np.einsum("lmd,ld->lm", x_pad, W)
    return float(np.sum(losses_of_margins(model, u) * mask) / dataset.n)


def make_state(
    algo: str,
    dataset: Dataset,
    partition: Partition,
    model: LossModel,
    eta: float,
    eta_schedule: str = "constant",
    gamma_momentum: float = 0.0,
    sample_weights: np.ndarray | None = None,
) -> AlgoState:
    """Zero-initialized state; trackers start at the local gradients so
    their column sums match the gradient column sums from the start."""
    if algo not in ALGO_KINDS:
        raise ValueError(f"unknown algo {algo!r}, expected one of {ALGO_KINDS}")
    if eta_schedule not in ETA_SCHEDULES:
        raise ValueError(f"unknown schedule {eta_schedule!r}, expected one of {ETA_SCHEDULES}")
    if eta <= 0.0:
        raise ValueError(f"eta must be positive, got {eta}")
    if partition.n_samples != dataset.n:
        raise ValueError("partition does not cover this dataset")
    if algo in CENTRAL_ALGOS and len(partition.shards) != 1:
        raise ValueError(f"{algo} needs the single-shard partition")
    n_agents = len(partition.shards)
    d = dataset.d
    W = np.zeros((n_agents, d))
    # central_ngd mirrors the tracker recursion so the normalized
    # decentralized variants collapse to it bitwise at N=1
    V = (
        local_gradients(W, model, dataset, partition, sample_weights)
        if algo in TRACKER_ALGOS or algo == "central_ngd"
        else None
    )
    Z = (
        np.zeros((n_agents, d))
        if algo == "fdlr_nesterov" or (algo == "central_ngd" and gamma_momentum > 0.0)
        else None
    )
    return AlgoState(
        algo=algo, W=W, V=V, Z=Z, t=1,
        eta=float(eta), eta_schedule=eta_schedule,
        gamma_momentum=float(gamma_momentum),
    )


def _require_finite(name: str, arr: np.ndarray, t: int) -> None:
    if not np.all(np.isfinite(arr)):
        raise EngineAbort(f"non-finite {name} at t={t}")


def _normalized_rows(V: np.ndarray, what: str, t: int) -> np.ndarray:
    norms = np.linalg.norm(V, axis=1)
    if float(np.min(norms)) < VANISH_TOL:
        row = int(np.argmin(norms))
        raise EngineAbort(f"vanishing {what} (row {row}) at t={t}")
    return V / norms[:, None]


def step_dgd(
    state: AlgoState,
    mixing: MixingMatrix,
    model: LossModel,
    partition: Partition,
    dataset: Dataset,
    sample_weights: np.ndarray | None = None,
) -> AlgoState:
    """Neighbor averaging followed by a local gradient step."""
    g = local_gradients(state.W, model, dataset, partition, sample_weights)
    _require_finite("gradient", g, state.t)
    W_new = mixing.weights @ state.W - current_eta(state) * g
    _require_finite("parameters", W_new, state.t + 1)
    return replace(state, W=W_new, t=state.t + 1)


def step_dgt(
    state: AlgoState,
    mixing: MixingMatrix,
    model: LossModel,
    partition: Partition,
    dataset: Dataset,
    sample_weights: np.ndarray | None = None,
) -> AlgoState:
    """Gradient-tracking step: parameters move along the tracker, and the
    tracker absorbs the change in local gradients."""
    g_old = local_gradients(state.W, model, dataset, partition, sample_weights)
    _require_finite("gradient", g_old, state.t)
    A = mixing.weights
    W_new = A @ (state.W - current_eta(state) * state.V)
    _require_finite("parameters", W_new, state.t + 1)
    g_new = local_gradients(W_new, model, dataset, partition, sample_weights)
    _require_finite("gradient", g_new, state.t + 1)
    V_new = A @ state.V + g_new - g_old
    return replace(state, W=W_new, V=V_new, t=state.t + 1)


def step_fdlr(
    state: AlgoState,
    mixing: MixingMatrix,
    model: LossModel,
    partition: Partition,
    dataset: Dataset,
    sample_weights: np.ndarray | None = None,
) -> AlgoState:
    """Tracking step along row-normalized tracker directions."""
    v_unit = _normalized_rows(state.V, "tracker", state.t)
    g_old = local_gradients(state.W, model, dataset, partition, sample_weights)
    _require_finite("gradient", g_old, state.t)
    A = mixing.weights
    W_new = A @ (state.W - current_eta(state) * v_unit)
    _require_finite("parameters", W_new, state.t + 1)
    g_new = local_gradients(W_new, model, dataset, partition, sample_weights)
    _require_finite("gradient", g_new, state.t + 1)
    V_new = A @ state.V + g_new - g_old
    return replace(state, W=W_new, V=V_new, t=state.t + 1)


def step_fdlr_nesterov(
    state: AlgoState,
    mixing: MixingMatrix,
    model: LossModel,
    partition: Partition,
    dataset: Dataset,
    sample_weights: np.ndarray | None = None,
) -> AlgoState:
    """Normalized tracking step with momentum folded into the move."""
    v_unit = _normalized_rows(state.V, "tracker", state.t)
    g_old = local_gradients(state.W, model, dataset, partition, sample_weights)
    _require_finite("gradient", g_old, state.t)
    A = mixing.weights
    Z_new = state.gamma_momentum * (state.Z + v_unit)
    W_half = state.W - current_eta(state) * (Z_new + v_unit)
    W_new = A @ W_half
    _require_finite("parameters", W_new, state.t + 1)
    g_new = local_gradients(W_new, model, dataset, partition, sample_weights)
    _require_finite("gradient", g_new, state.t + 1)
    V_new = A @ state.V + g_new - g_old
    return replace(state, W=W_new, V=V_new, Z=Z_new, t=state.t + 1)


def step_normalized_dgd(
    state: AlgoState,
    mixing: MixingMatrix,
    model: LossModel,
    partition: Partition,
    dataset: Dataset,
    sample_weights: np.ndarray | None = None,
) -> AlgoState:
    """Neighbor averaging with row-normalized local gradient steps."""
    g = local_gradients(state.W, model, dataset, partition, sample_weights)
    _require_finite("gradient", g, state.t)
    g_unit = _normalized_rows(g, "local gradient", state.t)
    W_new = mixing.weights @ state.W - current_eta(state) * g_unit
    _require_finite("parameters", W_new, state.t + 1)
    return replace(state, W=W_new, t=state.t + 1)


def step_centralized(
    state: AlgoState,
    model: LossModel,
    dataset: Dataset,
    normalized: bool,
    sample_weights: np.ndarray | None = None,
) -> AlgoState:
    """Full-gradient baseline on a single-row state, optionally normalized.

    The normalized variant maintains the tracker recursion (which for a
    single agent telescopes to the current gradient) with the same
    floating-point operation order as the decentralized tracking steps,
    so those collapse to this baseline bitwise at N=1. Normalizing the
    recomputed gradient instead would seed ulp-level gaps that the
    direction normalization amplifies once gradients shrink.
    """
    part = full_partition(dataset.n)
    if normalized:
        v_unit = _normalized_rows(state.V, "tracker", state.t)
        g_old = local_gradients(state.W, model, dataset, part, sample_weights)
        _require_finite("gradient", g_old, state.t)
        if state.gamma_momentum > 0.0:
            Z_new = state.gamma_momentum * (state.Z + v_unit)
            W_new = state.W - current_eta(state) * (Z_new + v_unit)
        else:
            Z_new = state.Z
            W_new = state.W - current_eta(state) * v_unit
        _require_finite("parameters", W_new, state.t + 1)
        g_new = local_gradients(W_new, model, dataset, part, sample_weights)
        _require_finite("gradient", g_new, state.t + 1)
        V_new = state.V + g_new - g_old
        return replace(state, W=W_new, V=V_new, Z=Z_new, t=state.t + 1)
    g = local_gradients(state.W, model, dataset, part, sample_weights)
    _require_finite("gradient", g, state.t)
    W_new = state.W - current_eta(state) * g
    _require_finite("parameters", W_new, state.t + 1)
    return replace(state, W=W_new, t=state.t + 1)


def advance(
    state: AlgoState,
    mixing: MixingMatrix | None,
    model: LossModel,
    partition: Partition,
    dataset: Dataset,
    sample_weights: np.ndarray | None = None,
) -> AlgoState:
    """Dispatch one step of whatever algorithm the state encodes."""
    if state.algo == "dgd":
        return step_dgd(state, mixing, model, partition, dataset, sample_weights)
    if state.algo == "dgt":
        return step_dgt(state, mixing, model, partition, dataset, sample_weights)
    if state.algo == "fdlr":
        return step_fdlr(state, mixing, model, partition, dataset, sample_weights)
    if state.algo == "fdlr_nesterov":
        return step_fdlr_nesterov(state, mixing, model, partition, dataset, sample_weights)
    if state.algo == "normalized_dgd":
        return step_normalized_dgd(state, mixing, model, partition, dataset, sample_weights)
    return step_centralized(
        state, model, dataset, normalized=state.algo == "central_ngd",
        sample_weights=sample_weights,
    )


def compute_step_rules(
    mixing: MixingMatrix,
    model: LossModel,
    n_agents: int,
    F_at_init: float = 1.0,
) -> StepSizeRules:
    """Evaluate every step-size threshold available for this loss/graph.

    The contraction rule substitutes the curvature factor ``h`` when the
    loss has no global smoothness constant. The default step size picks
    the rule matching the loss family: ``min(delta_exp / F_at_init,
    contraction)`` for the exponential loss, the convex rule for
    logistic, the decay rule (else convex) for squared.
    """
    a1, a2 = mixing.alpha1, mixing.alpha2
    b1, b2 = mixing.beta1, mixing.beta2
    smooth = model.L if model.L is not None else model.h
    eta_max_contraction = (1.0 - mixing.lam) / (4.0 * smooth)

    eta_max_convex = None
    if model.L is not None:
        eta_max_convex = (1.0 / model.L) * min(
            1.0 - a1, float(np.sqrt((1.0 - a1) / (2.0 * a2)))
        )

    eta_max_pl = None
    if model.mu is not None and model.mu > 0.0 and model.L is not None:
        eta_max_pl = min(
            (1.0 - a1) / model.mu,
            float(np.sqrt((1.0 - a1) * model.mu / a2)) / (2.0 * model.L**2),
            1.0 / model.L,
        )

    delta_exp = None
    h, tau = model.h, model.tau
    if tau > 0.0:
        terms = (
            4.0 * h**3 * n_agents / tau**2,
            h**2,
            6.0 * h**2 * b2 / (1.0 - b1),
            4.0 * h**2 * float(np.sqrt(b2)) / (tau * (1.0 - b1)),
        )
        delta_exp = 1.0 / max(terms)

    if model.kind == "exponential":
        candidates = [eta_max_contraction]
        if delta_exp is not None:
            candidates.append(delta_exp / F_at_init)
        eta_default = min(candidates)
    elif model.kind == "logistic":
        eta_default = eta_max_convex
    else:
        eta_default = eta_max_pl if eta_max_pl is not None else eta_max_convex
    return StepSizeRules(
        eta_max_convex=eta_max_convex,
        eta_max_pl=eta_max_pl,
        delta_exp=delta_exp,
        eta_max_contraction=eta_max_contraction,
        eta_default=float(eta_default),
    )


def recorded_ticks(T: int, record_every: int) -> np.ndarray:
    """States to record: every multiple of the cadence, plus 1 and T."""
    ticks = set(range(record_every, T + 1, record_every))
    ticks.update((1, T))
    return np.array(sorted(ticks), dtype=np.int64)


def default_record_every(T: int) -> int:
    # 1 keeps short runs fully checkable; 10 keeps long CSVs small
    # without hiding the tail.
    return 1 if T <= 1000 else 10


_CORE_ROW_FIELDS = (
    "eta", "train_loss_mean", "train_loss_local", "consensus_sq",
    "grad_norm", "err_train",
)


def run(
    algo: str,
    dataset: Dataset,
    partition: Partition | None,
    mixing: MixingMatrix | None,
    model: LossModel,
    *,
    eta: float,
    T: int,
    eta_schedule: str = "constant",
    gamma_momentum: float = 0.0,
    record_every: int | None = None,
    holdout: Dataset | None = None,
    tracked_agent: int = 0,
    sample_weights: np.ndarray | None = None,
    meta: dict | None = None,
) -> Trajectory:
    """Run ``T`` states of one algorithm and record a trajectory.

    State 1 is the zero initialization; ``T - 1`` steps are taken. On
    :class:`EngineAbort` the trajectory is truncated at the last healthy
    recorded state and flagged with the abort reason. All recorded
    quantities are measured on the full training set (and the optional
    holdout), independent of ``sample_weights``.
    """
    if T < 1:
        raise ValueError(f"T must be >= 1, got {T}")
    if algo in CENTRAL_ALGOS:
        partition = full_partition(dataset.n)
        mixing = None
    else:
        if partition is None or mixing is None:
            raise ValueError(f"{algo} requires a partition and a mixing matrix")
        if mixing.weights.shape[0] != len(partition.shards):
            raise ValueError("mixing matrix size does not match the partition")
    if record_every is None:
        record_every = default_record_every(T)
    if record_every < 1:
        raise ValueError(f"record_every must be >= 1, got {record_every}")

    state = make_state(
        algo, dataset, partition, model,
        eta=eta, eta_schedule=eta_schedule, gamma_momentum=gamma_momentum,
        sample_weights=sample_weights,
    )
    ticks = set(recorded_ticks(T, record_every).tolist())
    if not 0 <= tracked_agent < len(partition.shards):
        raise ValueError(f"tracked_agent {tracked_agent} out of range")

    w_mm = dataset.max_margin_direction
    rows: dict[str, list[float]] = {name: [] for name in ("t",) + _CORE_ROW_FIELDS}
    for name in ("test_loss", "dir_dist", "dir_dist_agent", "err_test"):
        rows[name] = []
    aborted = False
    reason = None

    def record(st: AlgoState) -> bool:
        w_bar = st.W.mean(axis=0)
        f_bar, g_bar = risk_grad(model, w_bar, dataset.signed)
        row = {
            "eta": current_eta(st),
            "train_loss_mean": f_bar,
            "train_loss_local": matrix_risk(st.W, model, dataset, partition),
            "consensus_sq": consensus_error(st.W),
            "grad_norm": float(np.linalg.norm(g_bar)),
            "err_train": float(np.mean(dataset.signed @ w_bar <= 0.0)),
        }
        if not all(np.isfinite(v) for v in row.values()):
            return False
        if holdout is not None:
            row["test_loss"] = float(np.mean(losses_of_margins(model, holdout.signed @ w_bar)))
            row["err_test"] = float(np.mean(holdout.signed @ w_bar <= 0.0))
        else:
            row["test_loss"] = np.nan
            row["err_test"] = np.nan
        if w_mm is None:
            row["dir_dist"] = np.nan
            row["dir_dist_agent"] = np.nan
        else:
            # the zero vector has no direction; score it as maximally far
            w_ag = st.W[tracked_agent]
            row["dir_dist"] = (
                2.0 if not np.any(w_bar) else directional_distance(w_bar, w_mm)
            )
            row["dir_dist_agent"] = (
                2.0 if not np.any(w_ag) else directional_distance(w_ag, w_mm)
            )
        rows["t"].append(st.t)
        for name, value in row.items():
            rows[name].append(value)
        return True

    # divergence is detected explicitly, so let overflow pass silently
    with np.errstate(all="ignore"):
        while True:
            if state.t in ticks:
                if not record(state):
                    aborted = True
                    reason = f"non-finite metrics at t={state.t}"
                    break
            if state.t >= T:
                break
            try:
                state = advance(state, mixing, model, partition, dataset, sample_weights)
            except EngineAbort as exc:
                aborted = True
                reason = str(exc)
                break

    if not rows["t"]:
        raise EngineAbort(reason or "run aborted before the first record")
    info = {
        "algo": algo,
        "eta": float(eta),
        "eta_schedule": eta_schedule,
        "gamma_momentum": float(gamma_momentum),
        "T": int(T),
        "record_every": int(record_every),
        "n_agents": len(partition.shards),
        "loss": model.kind,
        "tracked_agent": int(tracked_agent),
    }
    info.update(meta or {})
    return Trajectory(
        algo=algo,
        t=np.array(rows["t"], dtype=np.int64),
        eta=np.array(rows["eta"]),
        train_loss_mean=np.array(rows["train_loss_mean"]),
        train_loss_local=np.array(rows["train_loss_local"]),
        consensus_sq=np.array(rows["consensus_sq"]),
        test_loss=np.array(rows["test_loss"]),
        dir_dist=np.array(rows["dir_dist"]),
        dir_dist_agent=np.array(rows["dir_dist_agent"]),
        grad_norm=np.array(rows["grad_norm"]),
        err_train=np.array(rows["err_train"]),
        err_test=np.array(rows["err_test"]),
        W_final=state.W.copy(),
        w_bar_final=state.W.mean(axis=0),
        aborted=aborted,
        abort_reason=reason,
        meta=info,
    )
