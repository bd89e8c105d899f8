"""Separable datasets: synthetic generator, CSV loading, sharding, margins.

Every loss evaluator consumes the signed samples ``x_i = y_i * a_i``; a
linear classifier ``w`` separates the data iff ``x_i^T w > 0`` for all i.
The synthetic generator draws Gaussian features and labels them with a
hidden unit vector, so the data is separable by construction; the
max-margin solver then recovers the canonical margin ``gamma`` and
direction used by the directional-distance metric and the step-size rules.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, replace
from functools import cached_property
from pathlib import Path

import numpy as np

# A projected-gradient residual below this means every margin constraint
# x_i^T w >= 1 holds to the same accuracy at the returned solution.
MARGIN_TOL = 1e-10
LABEL_VALUES = (-1.0, 1.0)


class NotSeparableError(ValueError):
    """Raised when no hyperplane attains a positive margin."""


@dataclass(frozen=True, eq=False)
class Dataset:
    """Binary classification data with labels in {-1, +1}.

    ``margin`` is 0 until :func:`solve_max_margin` has filled it;
    ``w_star`` and ``feature_scale`` are only present for generated data
    (they let holdout sets come from the same distribution).
    """

    features: np.ndarray
    labels: np.ndarray
    seed: int | None = None
    w_star: np.ndarray | None = None
    feature_scale: float = 1.0
    margin: float = 0.0
    max_margin_direction: np.ndarray | None = None

    def __post_init__(self) -> None:
        f = self.features
        y = self.labels
        if f.ndim != 2 or f.shape[0] < 1 or f.shape[1] < 1:
            raise ValueError(f"features must be (n, d) with n,d >= 1, got {f.shape}")
        if y.shape != (f.shape[0],):
            raise ValueError(f"labels shape {y.shape} does not match n = {f.shape[0]}")
        if not np.all(np.isfinite(f)):
            raise ValueError("features contain non-finite values")
        if not np.all(np.isin(y, LABEL_VALUES)):
            raise ValueError("labels must take values in {-1, +1}")

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def d(self) -> int:
        return self.features.shape[1]

    @cached_property
    def signed(self) -> np.ndarray:
        """Signed samples x_i = y_i * a_i; shared by all loss evaluators."""
        return self.labels[:, None] * self.features

    @cached_property
    def radius(self) -> float:
        """Largest sample norm r = max_i ||a_i||."""
        return float(np.max(np.linalg.norm(self.features, axis=1)))

    def is_one_class(self) -> bool:
        return bool(np.all(self.labels == self.labels[0]))


@dataclass(frozen=True)
class Partition:
    """Disjoint shard index sets covering 0..n-1, one shard per agent."""

    shards: tuple[tuple[int, ...], ...]
    n_samples: int

    def __post_init__(self) -> None:
        seen: set[int] = set()
        if len(self.shards) < 1:
            raise ValueError("need at least one shard")
        for k, shard in enumerate(self.shards):
            if len(shard) == 0:
                raise ValueError(f"shard {k} is empty")
            for i in shard:
                if not 0 <= i < self.n_samples:
                    raise ValueError(f"shard {k} has out-of-range index {i}")
                if i in seen:
                    raise ValueError(f"index {i} appears in more than one shard")
                seen.add(i)
        if len(seen) != self.n_samples:
            raise ValueError("shards do not cover all samples")

    @property
    def n_agents(self) -> int:
        return len(self.shards)

    def as_arrays(self) -> list[np.ndarray]:
        return [np.asarray(s, dtype=np.int64) for s in self.shards]


def generate_signed_measurements(
    n: int,
    d: int,
    seed: int,
    normalize: bool = False,
    solve_margin: bool = True,
) -> Dataset:
    """Draw a separable dataset: Gaussian features labeled by a hidden unit vector.

    Rows whose projection on the hidden vector is numerically zero are
    redrawn, so ``y_i = sign(a_i^T w_star)`` is always well defined. With
    ``normalize=True`` features are rescaled so the largest sample norm is
    one (the scale is stored and reapplied to holdout draws). By default
    the max-margin problem is solved immediately and its margin/direction
    stored on the dataset.
    """
    if n < 1 or d < 1:
        raise ValueError(f"need n, d >= 1, got n={n}, d={d}")
    w_rng = np.random.default_rng(np.random.SeedSequence([seed, 0]))
    w_star = w_rng.normal(size=d)
    w_star /= np.linalg.norm(w_star)
    x_rng = np.random.default_rng(np.random.SeedSequence([seed, 1]))
    features = x_rng.normal(size=(n, d))
    labels = _label_rows(features, w_star, x_rng)
    scale = 1.0
    if normalize:
        scale = 1.0 / float(np.max(np.linalg.norm(features, axis=1)))
        features = features * scale
    ds = Dataset(
        features=features,
        labels=labels,
        seed=seed,
        w_star=w_star,
        feature_scale=scale,
    )
    if solve_margin:
        sol = solve_max_margin(ds)
        ds = attach_margin(ds, sol)
    return ds


def _label_rows(features: np.ndarray, w_star: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    dots = features @ w_star
    for _ in range(100):
        bad = np.abs(dots) < 1e-12
        if not np.any(bad):
            break
        features[bad] = rng.normal(size=(int(bad.sum()), features.shape[1]))
        dots = features @ w_star
    return np.sign(dots)


def draw_holdout(dataset: Dataset, m: int, seed: int = 0) -> Dataset:
    """Fresh draw from the generator behind ``dataset`` (same hidden vector)."""
    if dataset.w_star is None or dataset.seed is None:
        raise ValueError("dataset has no generator; holdout draws need w_star")
    if m < 1:
        raise ValueError(f"need m >= 1, got {m}")
    rng = np.random.default_rng(np.random.SeedSequence([dataset.seed, 2, seed]))
    features = rng.normal(size=(m, dataset.d))
    labels = _label_rows(features, dataset.w_star, rng)
    features = features * dataset.feature_scale
    return Dataset(
        features=features,
        labels=labels,
        seed=None,
        w_star=dataset.w_star,
        feature_scale=dataset.feature_scale,
    )


def partition_dataset(dataset: Dataset, n_agents: int, seed: int) -> Partition:
    """Shuffle indices and split into ``n_agents`` shards balanced within one."""
    if not 1 <= n_agents <= dataset.n:
        raise ValueError(f"n_agents must be in [1, n={dataset.n}], got {n_agents}")
    rng = np.random.default_rng(np.random.SeedSequence([seed, 3]))
    perm = rng.permutation(dataset.n)
    shards = tuple(tuple(int(i) for i in part) for part in np.array_split(perm, n_agents))
    return Partition(shards=shards, n_samples=dataset.n)


def empirical_margin(dataset: Dataset, w: np.ndarray) -> float:
    """min_i y_i a_i^T w / ||w||; negative iff some sample is misclassified."""
    norm = float(np.linalg.norm(w))
    if norm == 0.0:
        raise ValueError("empirical margin is undefined at w = 0")
    return float(np.min(dataset.signed @ w)) / norm


@dataclass(frozen=True, eq=False)
class MaxMarginSolution:
    """Hard-margin separator: ``w`` satisfies x_i^T w >= 1, margin = 1/||w||."""

    w: np.ndarray
    margin: float
    active: tuple[int, ...]
    dual: np.ndarray
    n_sweeps: int
    converged: bool
    one_class: bool

    @property
    def direction(self) -> np.ndarray:
        return self.w / np.linalg.norm(self.w)


def solve_max_margin(
    dataset: Dataset,
    tol: float = MARGIN_TOL,
    max_sweeps: int = 50_000,
) -> MaxMarginSolution:
    """Solve min ||w|| s.t. y_i a_i^T w >= 1 by dual coordinate ascent.

    Deterministic: seeded permutation order per sweep, alpha initialized
    at zero, liblinear-style shrinking with a full rescan before
    termination. One-class data is solved the same way and flagged (the
    solution degenerates to the mean-direction side of the cone). Raises
    :class:`NotSeparableError` when the best margin after the sweep
    budget is still nonpositive, which is how dual divergence on
    non-separable data shows up.
    """
    x = np.ascontiguousarray(dataset.signed, dtype=np.float64)
    n = x.shape[0]
    sqnorm = np.einsum("ij,ij->i", x, x)
    if np.any(sqnorm == 0.0):
        raise NotSeparableError("zero sample cannot satisfy a positive margin")
    alpha = np.zeros(n)
    w = np.zeros(x.shape[1])
    rng = np.random.default_rng(np.random.SeedSequence([0xC5A, n]))
    active = np.arange(n)
    shrink_slack = 1.0
    converged = False
    sweeps_done = 0
    for sweep in range(1, max_sweeps + 1):
        sweeps_done = sweep
        pg_max = 0.0
        keep: list[int] = []
        for i in rng.permutation(active):
            g = 1.0 - float(x[i] @ w)
            if alpha[i] == 0.0 and g < -shrink_slack:
                continue  # constraint strongly satisfied, park it until rescan
            keep.append(int(i))
            pg = g if (alpha[i] > 0.0 or g > 0.0) else 0.0
            if pg != 0.0:
                pg_max = max(pg_max, abs(pg))
                new = alpha[i] + g / sqnorm[i]
                if new < 0.0:
                    new = 0.0
                if new != alpha[i]:
                    w += (new - alpha[i]) * x[i]
                    alpha[i] = new
        if pg_max < tol:
            if len(active) == n:
                converged = True
                break
            active = np.arange(n)  # rescan everything before declaring victory
            shrink_slack = 1.0
            continue
        active = np.asarray(keep, dtype=np.int64) if keep else np.arange(n)
        shrink_slack = min(shrink_slack, max(pg_max, tol))
    norm = float(np.linalg.norm(w))
    if norm == 0.0 or float(np.min(x @ w)) / norm <= 0.0:
        raise NotSeparableError(
            f"no positive-margin separator found after {sweeps_done} sweeps"
        )
    margins = x @ w
    active_set = tuple(int(i) for i in np.nonzero(margins <= 1.0 + 1e-6)[0])
    return MaxMarginSolution(
        w=w,
        margin=1.0 / norm,
        active=active_set,
        dual=alpha,
        n_sweeps=sweeps_done,
        converged=converged,
        one_class=dataset.is_one_class(),
    )


def attach_margin(dataset: Dataset, sol: MaxMarginSolution) -> Dataset:
    """Return a copy of ``dataset`` carrying the solved margin and direction."""
    return replace(dataset, margin=sol.margin, max_margin_direction=sol.direction)


def dataset_to_csv(dataset: Dataset, path: str | Path) -> None:
    """Write ``x0..x{d-1},y`` rows with round-trip float formatting."""
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([f"x{j}" for j in range(dataset.d)] + ["y"])
        for i in range(dataset.n):
            writer.writerow(
                [repr(float(v)) for v in dataset.features[i]] + [repr(float(dataset.labels[i]))]
            )


def bundled_dataset_path() -> Path:
    """Path to the packaged small separable CSV (96 samples, 13 features)."""
    path = Path(__file__).parent / "assets" / "small_separable.csv"
    if not path.exists():
        raise FileNotFoundError(f"bundled dataset missing: {path}")
    return path


def load_csv_dataset(path: str | Path) -> Dataset:
    """Load features + label column from CSV; label is the last column.

    A non-numeric first row is treated as a header. Labels may be coded
    {-1, +1} or {0, 1} (the latter is mapped to {-1, +1}); anything else,
    ragged rows, or unparsable cells raise ``ValueError`` naming the
    offending file line.
    """
    path = Path(path)
    with path.open(newline="") as fh:
        rows = list(csv.reader(fh))
    rows = [r for r in rows if r]  # ignore blank lines
    if not rows:
        raise ValueError(f"{path}: no data rows")
    start = 0
    if not _all_floats(rows[0]):
        start = 1
        if len(rows) == 1:
            raise ValueError(f"{path}: header only, no data rows")
    width = len(rows[start])
    if width < 2:
        raise ValueError(f"{path}: line {start + 1}: need at least one feature column plus a label")
    parsed = []
    for lineno, row in enumerate(rows[start:], start=start + 1):
        if len(row) != width:
            raise ValueError(f"{path}: line {lineno}: expected {width} columns, got {len(row)}")
        try:
            parsed.append([float(c) for c in row])
        except ValueError as exc:
            raise ValueError(f"{path}: line {lineno}: {exc}") from None
    arr = np.asarray(parsed, dtype=np.float64)
    features, raw_labels = arr[:, :-1], arr[:, -1]
    values = set(np.unique(raw_labels).tolist())
    if values <= {-1.0, 1.0}:
        labels = raw_labels
    elif values <= {0.0, 1.0}:
        labels = np.where(raw_labels == 0.0, -1.0, 1.0)
    else:
        bad = sorted(values - {-1.0, 0.0, 1.0}) or sorted(values)
        lineno = start + 1 + int(np.nonzero(np.isin(raw_labels, bad))[0][0])
        raise ValueError(
            f"{path}: line {lineno}: labels must be coded {{-1,+1}} or {{0,1}}, got {bad[0]!r}"
        )
    return Dataset(features=features, labels=labels)


def _all_floats(row: list[str]) -> bool:
    try:
        for cell in row:
            float(cell)
    except ValueError:
        return False
    return True
