"""Tests for graph generation, mixing matrices, and spectral constants."""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from numpy.testing import assert_allclose, assert_array_equal

from csl.topology import (
    DegenerateSpectrumError,
    DisconnectedGraphError,
    Graph,
    MIXING_SCHEMES,
    NAMED_GRAPH_KINDS,
    MixingMatrix,
    build_mixing_matrix,
    generate_erdos_renyi,
    generate_named_graph,
    spectral_constants,
    validate_mixing_matrix,
)


def second_eigenvalue_magnitude(weights, n_iter=3000, seed=0):
    """Power-iteration oracle for max(|lam_2|, |lam_N|).

    Iterates on the deviation map B = W - (1/N) 1 1^T, which shares
    eigenvectors with W but has the top eigenvalue replaced by 0.  Even
    when +sigma and -sigma are both present the norm gain per step is
    exactly sigma on their joint eigenspace, so the final ||B x|| is a
    reliable estimate of the spectral radius of B.
    """
    w = np.asarray(weights, dtype=np.float64)
    n = w.shape[0]
    if n == 1:
        return 0.0
    b = w - np.full((n, n), 1.0 / n)
    rng = np.random.default_rng(seed)
    x = rng.standard_normal(n)
    x -= x.mean()
    x /= np.linalg.norm(x)
    for _ in range(n_iter):
        y = b @ x
        norm = np.linalg.norm(y)
        if norm < 1e-300:
            return 0.0
        x = y / norm
    return float(np.linalg.norm(b @ x))


# ---------------------------------------------------------------------------
# Graph construction and validation


def test_graph_rejects_malformed_edges():
    with pytest.raises(ValueError):
        Graph(0, ())
    with pytest.raises(ValueError):
        Graph(3, ((1, 0),))  # not canonical i < j
    with pytest.raises(ValueError):
        Graph(3, ((0, 3),))  # out of range
    with pytest.raises(ValueError):
        Graph(3, ((0, 1), (0, 1)))  # duplicate
    with pytest.raises(ValueError):
        Graph(3, ((1, 2), (0, 1)))  # unsorted
    with pytest.raises(ValueError):
        Graph(3, ((1, 1),))  # self loop


def test_graph_degree_and_adjacency_agree():
    g = Graph(4, ((0, 1), (0, 2), (2, 3)))
    adj = g.adjacency()
    assert_array_equal(adj, adj.T)
    assert_array_equal(g.degrees(), adj.sum(axis=1))
    assert g.neighbor_lists() == [[1, 2], [0], [0, 3], [2]]


def test_graph_connectivity_and_components():
    connected = Graph(4, ((0, 1), (1, 2), (2, 3)))
    assert connected.is_connected()
    split = Graph(5, ((0, 1), (2, 3)))
    assert not split.is_connected()
    assert split.connected_components() == [[0, 1], [2, 3], [4]]
    assert Graph(1, ()).is_connected()


def test_graph_json_round_trip():
    g = Graph(5, ((0, 2), (1, 4), (2, 3)))
    assert Graph.from_json(g.to_json()) == g


@pytest.mark.parametrize(
    "kind, n, expected_edges",
    [
        ("ring", 6, 6),
        ("ring", 2, 1),
        ("path", 6, 5),
        ("complete", 6, 15),
        ("star", 6, 5),
        ("ring", 1, 0),
    ],
)
def test_named_graph_edge_counts(kind, n, expected_edges):
    g = generate_named_graph(kind, n)
    assert g.n_nodes == n
    assert g.n_edges == expected_edges
    assert g.is_connected()


def test_named_graph_rejects_unknown_kind():
    with pytest.raises(ValueError, match="unknown graph kind"):
        generate_named_graph("torus", 4)


def test_erdos_renyi_is_deterministic():
    a = generate_erdos_renyi(12, 0.4, seed=7)
    b = generate_erdos_renyi(12, 0.4, seed=7)
    assert a == b
    c = generate_erdos_renyi(12, 0.4, seed=8)
    assert a != c


def test_erdos_renyi_zero_probability_bridges_to_a_path():
    # Every raw draw at p=0 is edgeless, so the generator falls back to
    # chaining the component representatives 0-1-...-(n-1).
    g = generate_erdos_renyi(5, 0.0, seed=1)
    assert g.edges == ((0, 1), (1, 2), (2, 3), (3, 4))
    assert g.is_connected()


def test_erdos_renyi_validates_inputs():
    with pytest.raises(ValueError):
        generate_erdos_renyi(5, 1.5, seed=0)
    with pytest.raises(ValueError):
        generate_erdos_renyi(0, 0.5, seed=0)


@given(
    n=st.integers(min_value=2, max_value=20),
    p=st.floats(min_value=0.1, max_value=1.0),
    seed=st.integers(min_value=0, max_value=10_000),
)
@settings(max_examples=60, deadline=None)
def test_erdos_renyi_always_connected(n, p, seed):
    assert generate_erdos_renyi(n, p, seed).is_connected()


# ---------------------------------------------------------------------------
# Mixing matrices


def test_metropolis_weights_on_a_path_match_hand_computation():
    # Path 0-1-2: degrees (1, 2, 1), so both edges get 1/(1+2) = 1/3 and
    # the diagonal soaks up the remainder.
    g = generate_named_graph("path", 3)
    mix = build_mixing_matrix(g, "metropolis")
    expected = np.array(
        [
            [2 / 3, 1 / 3, 0.0],
            [1 / 3, 1 / 3, 1 / 3],
            [0.0, 1 / 3, 2 / 3],
        ]
    )
    assert_allclose(mix.weights, expected, atol=1e-15)


def test_complete_graph_metropolis_is_uniform_averaging():
    n = 7
    mix = build_mixing_matrix(generate_named_graph("complete", n))
    assert_allclose(mix.weights, np.full((n, n), 1.0 / n), atol=1e-15)
    assert mix.lam == pytest.approx(0.0, abs=1e-24)


def test_lazy_metropolis_halves_off_diagonal_mass():
    g = generate_named_graph("ring", 5)
    plain = build_mixing_matrix(g, "metropolis")
    lazy = build_mixing_matrix(g, "lazy_metropolis")
    assert_allclose(
        lazy.weights, 0.5 * (np.eye(5) + plain.weights), atol=1e-15
    )
    # the 1/2 self weight clips the spectrum into [0, 1]
    assert np.min(np.linalg.eigvalsh(lazy.weights)) >= -1e-12


def test_max_degree_scheme_uses_uniform_edge_weight():
    g = Graph(4, ((0, 1), (0, 2), (0, 3)))  # star, max degree 3
    mix = build_mixing_matrix(g, "max_degree")
    off = mix.weights[0, 1:]
    assert_allclose(off, 0.25, atol=1e-15)
    assert_allclose(mix.weights.sum(axis=1), 1.0, atol=1e-15)


def test_build_mixing_matrix_rejects_disconnected_graph():
    with pytest.raises(DisconnectedGraphError):
        build_mixing_matrix(Graph(4, ((0, 1), (2, 3))))


def test_build_mixing_matrix_rejects_unknown_scheme():
    with pytest.raises(ValueError, match="unknown scheme"):
        build_mixing_matrix(generate_named_graph("ring", 4), "uniform")


def test_validate_mixing_matrix_rejects_defects():
    good = build_mixing_matrix(generate_named_graph("ring", 4)).weights
    validate_mixing_matrix(good)

    asym = good.copy()
    asym[0, 1] += 1e-6
    with pytest.raises(ValueError, match="not symmetric"):
        validate_mixing_matrix(asym)

    bad_rows = good * 1.001
    with pytest.raises(ValueError, match="row sums"):
        validate_mixing_matrix(bad_rows)

    # symmetric with unit row sums but one negative pair
    negative = np.array([[1.5, -0.5], [-0.5, 1.5]])
    with pytest.raises(ValueError, match="negative"):
        validate_mixing_matrix(negative)

    with pytest.raises(ValueError, match="square"):
        validate_mixing_matrix(np.ones((2, 3)))

    nonfinite = good.copy()
    nonfinite[0, 0] = np.nan
    with pytest.raises(ValueError, match="non-finite"):
        validate_mixing_matrix(nonfinite)


def test_validate_mixing_matrix_checks_graph_support():
    g = generate_named_graph("path", 3)
    w = build_mixing_matrix(generate_named_graph("complete", 3)).weights
    # complete-graph weights put mass on the (0, 2) non-edge of the path
    with pytest.raises(ValueError, match="support"):
        validate_mixing_matrix(w, g)
    validate_mixing_matrix(build_mixing_matrix(g).weights, g)


def test_mixing_matrix_json_round_trip():
    mix = build_mixing_matrix(generate_erdos_renyi(6, 0.5, seed=3))
    back = MixingMatrix.from_json(mix.to_json())
    assert_allclose(back.weights, mix.weights, atol=0)
    assert back.scheme == mix.scheme
    assert back.lam == mix.lam
    assert back.beta2 == mix.beta2


# ---------------------------------------------------------------------------
# Spectral constants


def test_spectral_gap_matches_power_iteration_oracle():
    # Two independent routes to the same quantity: LAPACK eigvalsh inside
    # spectral_constants vs. plain power iteration on the deviation map.
    for seed in range(8):
        g = generate_erdos_renyi(5 + 3 * seed, 0.4, seed=seed)
        w = build_mixing_matrix(g).weights
        lam = spectral_constants(w)[0]
        sigma = second_eigenvalue_magnitude(w)
        assert lam == pytest.approx(sigma**2, abs=1e-10)


def test_ring_spectrum_matches_circulant_formula():
    # Metropolis on a ring is the circulant (I + C + C^T)/3 with
    # eigenvalues (1 + 2 cos(2 pi k / n)) / 3.
    for n in (4, 5, 8, 11):
        w = build_mixing_matrix(generate_named_graph("ring", n)).weights
        eigs = (1.0 + 2.0 * np.cos(2.0 * np.pi * np.arange(n) / n)) / 3.0
        sigma = np.max(np.abs(eigs[1:]))
        lam = spectral_constants(w)[0]
        assert lam == pytest.approx(sigma**2, abs=1e-12)


def test_recursion_constants_follow_from_lam():
    mix = build_mixing_matrix(generate_erdos_renyi(9, 0.35, seed=2))
    lam = mix.lam
    assert 0.0 <= lam < 1.0
    assert mix.alpha1 == pytest.approx((3.0 + lam) / 4.0, rel=1e-15)
    assert mix.beta1 == mix.alpha1
    assert mix.alpha2 == pytest.approx(4.0 * (2.0 / (1.0 - lam) - 1.0), rel=1e-14)
    assert mix.beta2 == pytest.approx(4.0 / (1.0 - lam) - 2.0, rel=1e-14)
    # alpha1 in (3/4, 1), alpha2 >= 4, beta2 >= 2 whenever lam in [0, 1)
    assert 0.75 <= mix.alpha1 < 1.0
    assert mix.alpha2 >= 4.0 - 1e-12
    assert mix.beta2 >= 2.0 - 1e-12


def test_single_node_graph_has_zero_lam():
    mix = build_mixing_matrix(Graph(1, ()))
    assert mix.weights.shape == (1, 1)
    assert mix.weights[0, 0] == pytest.approx(1.0)
    assert mix.lam == 0.0


def test_identity_matrix_has_no_contraction():
    with pytest.raises(DegenerateSpectrumError):
        spectral_constants(np.eye(3))


def test_block_diagonal_matrix_has_no_contraction():
    # Doubly stochastic but reducible: consensus never mixes across blocks.
    w = np.zeros((4, 4))
    w[:2, :2] = 0.5
    w[2:, 2:] = 0.5
    with pytest.raises(DegenerateSpectrumError):
        spectral_constants(w)


@given(
    n=st.integers(min_value=2, max_value=15),
    p=st.floats(min_value=0.2, max_value=0.9),
    seed=st.integers(min_value=0, max_value=5_000),
    scheme=st.sampled_from(MIXING_SCHEMES),
)
@settings(max_examples=50, deadline=None)
def test_mixing_matrix_properties_hold_on_random_graphs(n, p, seed, scheme):
    g = generate_erdos_renyi(n, p, seed)
    mix = build_mixing_matrix(g, scheme)
    w = mix.weights

    assert_allclose(w, w.T, atol=1e-15)
    assert_allclose(w.sum(axis=1), 1.0, atol=1e-12)
    assert_allclose(w.sum(axis=0), 1.0, atol=1e-12)
    assert np.min(w) >= -1e-15

    allowed = g.adjacency().astype(bool)
    np.fill_diagonal(allowed, True)
    assert np.max(np.abs(w[~allowed]), initial=0.0) == 0.0

    assert 0.0 <= mix.lam < 1.0


@given(
    n=st.integers(min_value=2, max_value=12),
    seed=st.integers(min_value=0, max_value=5_000),
)
@settings(max_examples=50, deadline=None)
def test_mixing_contracts_deviations_at_rate_sqrt_lam(n, seed):
    rng = np.random.default_rng(seed)
    g = generate_erdos_renyi(n, 0.5, seed)
    mix = build_mixing_matrix(g)
    x = rng.standard_normal(n)
    dev = x - x.mean()
    mixed_dev = mix.weights @ x - x.mean()
    # averaging preserves the mean and shrinks deviations by at least
    # sqrt(lam) per application
    assert np.linalg.norm(mixed_dev) <= np.sqrt(mix.lam) * np.linalg.norm(dev) + 1e-12


@given(kind=st.sampled_from(NAMED_GRAPH_KINDS), n=st.integers(min_value=2, max_value=20))
@settings(max_examples=40, deadline=None)
def test_named_graphs_yield_valid_mixing_matrices(kind, n):
    mix = build_mixing_matrix(generate_named_graph(kind, n))
    validate_mixing_matrix(mix.weights)
    assert 0.0 <= mix.lam < 1.0
