"""Communication graphs and doubly stochastic mixing matrices.

Agents exchange parameters over an undirected connected graph. Each graph
is turned into a symmetric doubly stochastic mixing matrix ``A`` whose
support is the edge set plus the diagonal. All consensus arguments hinge on
the deviation contraction

    ||A W - W_bar||_F^2 <= lam * ||W - W_bar||_F^2,

where ``W_bar`` is the row-wise average broadcast to every row and
``lam = max(|lam_2|, |lam_N|)^2 < 1`` is the squared second-largest
eigenvalue magnitude of ``A``. The derived constants ``alpha1/alpha2``
(consensus recursion) and ``beta1/beta2`` (descent recursion) are stored
alongside the weights so downstream checkers evaluate the exact same
numbers the step-size rules used.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

# Row sums / symmetry are construction-exact; the tolerance only absorbs
# float accumulation in validation and serialization round trips.
STOCHASTIC_TOL = 1e-12

NAMED_GRAPH_KINDS = ("ring", "path", "complete", "star")
MIXING_SCHEMES = ("metropolis", "lazy_metropolis", "max_degree")


class DisconnectedGraphError(ValueError):
    """Raised when an operation requires a connected graph."""


class DegenerateSpectrumError(ValueError):
    """Raised when a mixing matrix has lam >= 1 (no consensus contraction)."""


@dataclass(frozen=True)
class Graph:
    """Undirected simple graph on nodes ``0..n_nodes-1``.

    Edges are canonical ``(i, j)`` pairs with ``i < j``, sorted, no
    duplicates, no self loops.
    """

    n_nodes: int
    edges: tuple[tuple[int, int], ...]

    def __post_init__(self) -> None:
        if self.n_nodes < 1:
            raise ValueError(f"n_nodes must be >= 1, got {self.n_nodes}")
        seen = set()
        for e in self.edges:
            i, j = e
            if not (0 <= i < j < self.n_nodes):
                raise ValueError(f"edge {e} is not a canonical pair within range")
            if e in seen:
                raise ValueError(f"duplicate edge {e}")
            seen.add(e)
        if tuple(sorted(self.edges)) != self.edges:
            raise ValueError("edges must be sorted canonically")

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    def degrees(self) -> np.ndarray:
        deg = np.zeros(self.n_nodes, dtype=np.int64)
        for i, j in self.edges:
            deg[i] += 1
            deg[j] += 1
        return deg

    def adjacency(self) -> np.ndarray:
        adj = np.zeros((self.n_nodes, self.n_nodes), dtype=np.int64)
        for i, j in self.edges:
            adj[i, j] = 1
            adj[j, i] = 1
        return adj

    def neighbor_lists(self) -> list[list[int]]:
        nbrs: list[list[int]] = [[] for _ in range(self.n_nodes)]
        for i, j in self.edges:
            nbrs[i].append(j)
            nbrs[j].append(i)
        return [sorted(v) for v in nbrs]

    def is_connected(self) -> bool:
        if self.n_nodes == 1:
            return True
        nbrs = self.neighbor_lists()
        seen = {0}
        stack = [0]
        while stack:
            u = stack.pop()
            for v in nbrs[u]:
                if v not in seen:
                    seen.add(v)
                    stack.append(v)
        return len(seen) == self.n_nodes

    def connected_components(self) -> list[list[int]]:
        nbrs = self.neighbor_lists()
        seen: set[int] = set()
        comps: list[list[int]] = []
        for start in range(self.n_nodes):
            if start in seen:
                continue
            comp = [start]
            seen.add(start)
            stack = [start]
            while stack:
                u = stack.pop()
                for v in nbrs[u]:
                    if v not in seen:
                        seen.add(v)
                        comp.append(v)
                        stack.append(v)
            comps.append(sorted(comp))
        return comps

    def to_json(self) -> str:
        return json.dumps(
            {"n_nodes": self.n_nodes, "edges": [list(e) for e in self.edges]},
            sort_keys=True,
        )

    @classmethod
    def from_json(cls, text: str) -> Graph:
        obj = json.loads(text)
        edges = tuple(sorted((int(i), int(j)) for i, j in obj["edges"]))
        return cls(n_nodes=int(obj["n_nodes"]), edges=edges)


def _edges_from_upper(mask: np.ndarray) -> tuple[tuple[int, int], ...]:
    ii, jj = np.nonzero(np.triu(mask, k=1))
    return tuple(sorted((int(i), int(j)) for i, j in zip(ii, jj)))


def generate_erdos_renyi(
    n_nodes: int, p_edge: float, seed: int, max_attempts: int = 100
) -> Graph:
    """Sample a connected Erdos-Renyi graph G(n, p), deterministically.

    Each undirected pair is included independently with probability
    ``p_edge``. Disconnected draws are resampled from the same seeded
    stream up to ``max_attempts`` times; if every draw is disconnected
    the last one is patched by chaining component representatives
    (lowest node index of each component, in order), so the result is
    always connected and a fixed function of ``(n_nodes, p_edge, seed)``.
    """
    if not 0.0 <= p_edge <= 1.0:
        raise ValueError(f"p_edge must be in [0, 1], got {p_edge}")
    if n_nodes < 1:
        raise ValueError(f"n_nodes must be >= 1, got {n_nodes}")
    rng = np.random.default_rng(seed)
    graph = Graph(n_nodes, ())
    for _ in range(max_attempts):
        mask = rng.random((n_nodes, n_nodes)) < p_edge
        graph = Graph(n_nodes, _edges_from_upper(mask))
        if graph.is_connected():
            return graph
    comps = graph.connected_components()
    reps = [c[0] for c in comps]
    bridged = set(graph.edges)
    for a, b in zip(reps[:-1], reps[1:]):
        bridged.add((min(a, b), max(a, b)))
    return Graph(n_nodes, tuple(sorted(bridged)))


def generate_named_graph(kind: str, n_nodes: int) -> Graph:
    """Build a ring, path, complete, or star graph on ``n_nodes`` nodes."""
    if kind not in NAMED_GRAPH_KINDS:
        raise ValueError(f"unknown graph kind {kind!r}, expected one of {NAMED_GRAPH_KINDS}")
    if n_nodes < 1:
        raise ValueError(f"n_nodes must be >= 1, got {n_nodes}")
    edges: set[tuple[int, int]] = set()
    if kind == "ring":
        for i in range(n_nodes):
            j = (i + 1) % n_nodes
            if i != j:
                edges.add((min(i, j), max(i, j)))
    elif kind == "path":
        edges = {(i, i + 1) for i in range(n_nodes - 1)}
    elif kind == "complete":
        edges = {(i, j) for i in range(n_nodes) for j in range(i + 1, n_nodes)}
    elif kind == "star":
        edges = {(0, i) for i in range(1, n_nodes)}
    return Graph(n_nodes, tuple(sorted(edges)))


@dataclass(frozen=True, eq=False)
class MixingMatrix:
    """Validated mixing matrix with its spectral constants.

    ``lam`` is the squared second-largest eigenvalue magnitude;
    ``alpha1 = beta1 = (3 + lam)/4``, ``alpha2 = 4*(2/(1-lam) - 1)`` and
    ``beta2 = 4/(1-lam) - 2`` are the recursion constants every step-size
    rule and checker consumes.
    """

    weights: np.ndarray
    scheme: str
    lam: float
    alpha1: float
    alpha2: float
    beta1: float
    beta2: float

    @property
    def n_nodes(self) -> int:
        return self.weights.shape[0]

    def to_json(self) -> str:
        return json.dumps(
            {
                "scheme": self.scheme,
                "weights": self.weights.tolist(),
                "lam": self.lam,
                "alpha1": self.alpha1,
                "alpha2": self.alpha2,
                "beta1": self.beta1,
                "beta2": self.beta2,
            },
            sort_keys=True,
        )

    @classmethod
    def from_json(cls, text: str) -> MixingMatrix:
        obj = json.loads(text)
        weights = np.asarray(obj["weights"], dtype=np.float64)
        validate_mixing_matrix(weights)
        return cls(
            weights=weights,
            scheme=str(obj["scheme"]),
            lam=float(obj["lam"]),
            alpha1=float(obj["alpha1"]),
            alpha2=float(obj["alpha2"]),
            beta1=float(obj["beta1"]),
            beta2=float(obj["beta2"]),
        )


def validate_mixing_matrix(
    weights: np.ndarray, graph: Graph | None = None, tol: float = STOCHASTIC_TOL
) -> None:
    """Check symmetry, row/column sums, nonnegativity, and graph support."""
    w = np.asarray(weights)
    if w.ndim != 2 or w.shape[0] != w.shape[1]:
        raise ValueError(f"weights must be square, got shape {w.shape}")
    if not np.all(np.isfinite(w)):
        raise ValueError("weights contain non-finite entries")
    if np.max(np.abs(w - w.T)) > tol:
        raise ValueError("weights are not symmetric")
    row_err = np.max(np.abs(w.sum(axis=1) - 1.0))
    if row_err > tol:
        raise ValueError(f"row sums deviate from 1 by {row_err:.3e} > {tol:.0e}")
    if np.min(w) < -tol:
        raise ValueError(f"negative weight {np.min(w):.3e}")
    if graph is not None:
        if graph.n_nodes != w.shape[0]:
            raise ValueError("graph size does not match weights")
        allowed = graph.adjacency().astype(bool)
        np.fill_diagonal(allowed, True)
        off_support = np.abs(w[~allowed])
        if off_support.size and np.max(off_support) > tol:
            raise ValueError("weights have support outside graph edges + diagonal")


def spectral_constants(
    weights: np.ndarray, tol: float = STOCHASTIC_TOL
) -> tuple[float, float, float, float, float]:
    """Return ``(lam, alpha1, alpha2, beta1, beta2)`` for a mixing matrix.

    Eigenvalues come from the symmetric eigensolver (tridiagonalization +
    QR via LAPACK); ``lam = max(|lam_2|, |lam_N|)^2`` with eigenvalues
    sorted descending. Raises :class:`DegenerateSpectrumError` when
    ``lam >= 1`` within ``tol``, i.e. no contraction is available.
    """
    w = np.asarray(weights, dtype=np.float64)
    n = w.shape[0]
    if n == 1:
        lam = 0.0
    else:
        eigs = np.linalg.eigvalsh(w)  # ascending
        sigma = max(abs(float(eigs[-2])), abs(float(eigs[0])))
        lam = sigma * sigma
    if lam >= 1.0 - tol:
        raise DegenerateSpectrumError(
            f"lam = {lam!r} >= 1: mixing matrix does not contract deviations"
        )
    alpha1 = (3.0 + lam) / 4.0
    alpha2 = 4.0 * (2.0 / (1.0 - lam) - 1.0)
    beta1 = (3.0 + lam) / 4.0
    beta2 = 4.0 / (1.0 - lam) - 2.0
    return lam, alpha1, alpha2, beta1, beta2


def _metropolis_weights(graph: Graph) -> np.ndarray:
    deg = graph.degrees()
    n = graph.n_nodes
    w = np.zeros((n, n), dtype=np.float64)
    for i, j in graph.edges:
        # 1/(1 + max degree of the endpoints) keeps rows substochastic
        # before the diagonal soak-up, hence nonnegative throughout.
        w[i, j] = w[j, i] = 1.0 / (1.0 + max(deg[i], deg[j]))
    np.fill_diagonal(w, 1.0 - w.sum(axis=1))
    return w


def build_mixing_matrix(graph: Graph, scheme: str = "metropolis") -> MixingMatrix:
    """Build a symmetric doubly stochastic mixing matrix for ``graph``.

    Schemes: ``metropolis`` (edge weight ``1/(1+max(deg_i, deg_j))``),
    ``lazy_metropolis`` (average of metropolis with the identity), and
    ``max_degree`` (uniform edge weight ``1/(1+max_degree)``).
    Requires a connected graph; raises otherwise.
    """
    if scheme not in MIXING_SCHEMES:
        raise ValueError(f"unknown scheme {scheme!r}, expected one of {MIXING_SCHEMES}")
    if not graph.is_connected():
        raise DisconnectedGraphError("mixing matrix requires a connected graph")
    if scheme == "metropolis":
        w = _metropolis_weights(graph)
    elif scheme == "lazy_metropolis":
        w = 0.5 * (np.eye(graph.n_nodes) + _metropolis_weights(graph))
    else:  # max_degree
        n = graph.n_nodes
        deg = graph.degrees()
        delta = int(deg.max()) if n > 1 else 0
        w = np.zeros((n, n), dtype=np.float64)
        for i, j in graph.edges:
            w[i, j] = w[j, i] = 1.0 / (1.0 + delta)
        np.fill_diagonal(w, 1.0 - w.sum(axis=1))
    validate_mixing_matrix(w, graph)
    lam, alpha1, alpha2, beta1, beta2 = spectral_constants(w)
    return MixingMatrix(
        weights=w,
        scheme=scheme,
        lam=lam,
        alpha1=alpha1,
        alpha2=alpha2,
        beta1=beta1,
        beta2=beta2,
    )
