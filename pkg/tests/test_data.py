"""Tests for dataset generation, partitioning, CSV io, and the margin solver."""

import numpy as np
import pytest
from hypothesis import assume, given, settings, strategies as st
from numpy.testing import assert_allclose, assert_array_equal

from csl.data import (
    Dataset,
    MaxMarginSolution,
    NotSeparableError,
    Partition,
    attach_margin,
    bundled_dataset_path,
    dataset_to_csv,
    draw_holdout,
    empirical_margin,
    generate_signed_measurements,
    load_csv_dataset,
    partition_dataset,
    solve_max_margin,
)


def max_margin_2d_by_enumeration(signed):
    """Exact hard-margin oracle in two dimensions.

    The minimizer of ||w|| over {z_i . w >= 1} is a basic solution with
    at most two tight constraints, so enumerating every single row and
    every row pair and keeping the feasible candidate of smallest norm
    recovers the optimum exactly (up to float arithmetic).
    """
    z = np.asarray(signed, dtype=np.float64)
    n = z.shape[0]
    best_w = None
    best_norm = np.inf
    candidates = []
    for i in range(n):
        sq = float(z[i] @ z[i])
        if sq > 0.0:
            candidates.append(z[i] / sq)
    for i in range(n):
        for j in range(i + 1, n):
            zz = z[[i, j]]
            gram = zz @ zz.T
            if abs(np.linalg.det(gram)) < 1e-12:
                continue
            coef = np.linalg.solve(gram, np.ones(2))
            candidates.append(zz.T @ coef)
    for w in candidates:
        if np.min(z @ w) >= 1.0 - 1e-9:
            norm = float(np.linalg.norm(w))
            if norm < best_norm:
                best_norm = norm
                best_w = w
    if best_w is None:
        raise NotSeparableError("no feasible candidate")
    return best_w, 1.0 / best_norm


# ---------------------------------------------------------------------------
# Dataset container


def test_dataset_validates_shapes_and_labels():
    x = np.ones((3, 2))
    with pytest.raises(ValueError):
        Dataset(features=x, labels=np.ones(2))
    with pytest.raises(ValueError):
        Dataset(features=x, labels=np.array([1.0, -1.0, 0.5]))
    with pytest.raises(ValueError):
        Dataset(features=np.array([[1.0, np.inf]]), labels=np.array([1.0]))
    ds = Dataset(features=x, labels=np.array([1.0, -1.0, 1.0]))
    assert ds.n == 3 and ds.d == 2


def test_signed_rows_carry_the_label_sign():
    ds = Dataset(
        features=np.array([[1.0, 2.0], [3.0, -4.0]]),
        labels=np.array([-1.0, 1.0]),
    )
    assert_allclose(ds.signed, np.array([[-1.0, -2.0], [3.0, -4.0]]))
    assert ds.radius == pytest.approx(5.0)
    assert not ds.is_one_class()
    assert Dataset(features=np.eye(2), labels=np.array([1.0, 1.0])).is_one_class()


# ---------------------------------------------------------------------------
# Generator


def test_generator_is_deterministic_and_labels_match_hidden_vector():
    a = generate_signed_measurements(40, 6, seed=11)
    b = generate_signed_measurements(40, 6, seed=11)
    assert_array_equal(a.features, b.features)
    assert_array_equal(a.labels, b.labels)
    assert a.margin == b.margin
    assert_allclose(np.linalg.norm(a.w_star), 1.0, atol=1e-12)
    assert_array_equal(a.labels, np.sign(a.features @ a.w_star))
    c = generate_signed_measurements(40, 6, seed=12)
    assert not np.array_equal(a.features, c.features)


def test_generator_normalize_caps_the_radius_at_one():
    ds = generate_signed_measurements(30, 5, seed=3, normalize=True)
    assert ds.radius == pytest.approx(1.0, abs=1e-12)
    raw = generate_signed_measurements(30, 5, seed=3, normalize=False)
    assert ds.feature_scale == pytest.approx(1.0 / raw.radius)
    assert_allclose(ds.features, raw.features * ds.feature_scale)


def test_generator_solve_margin_flag_controls_margin_attachment():
    with_margin = generate_signed_measurements(20, 4, seed=5)
    assert with_margin.margin > 0.0
    assert with_margin.max_margin_direction is not None
    bare = generate_signed_measurements(20, 4, seed=5, solve_margin=False)
    assert bare.margin == 0.0
    assert bare.max_margin_direction is None
    assert_array_equal(bare.features, with_margin.features)


def test_holdout_draws_are_deterministic_and_use_the_same_rule():
    ds = generate_signed_measurements(25, 8, seed=9, normalize=True)
    h1 = draw_holdout(ds, 100)
    h2 = draw_holdout(ds, 100)
    assert_array_equal(h1.features, h2.features)
    assert h1.n == 100 and h1.d == ds.d
    assert_array_equal(h1.labels, np.sign(h1.features @ ds.w_star))
    h3 = draw_holdout(ds, 100, seed=1)
    assert not np.array_equal(h1.features, h3.features)
    # holdout rows are rescaled by the training feature scale
    assert h1.feature_scale == ds.feature_scale


def test_holdout_requires_a_generator_backed_dataset():
    ds = Dataset(features=np.eye(3), labels=np.array([1.0, -1.0, 1.0]))
    with pytest.raises(ValueError, match="w_star"):
        draw_holdout(ds, 10)
    gen = generate_signed_measurements(10, 3, seed=0)
    with pytest.raises(ValueError):
        draw_holdout(gen, 0)


# ---------------------------------------------------------------------------
# Partitions


def test_partition_validates_cover_and_bounds():
    with pytest.raises(ValueError):
        Partition(shards=((0, 1), (1, 2)), n_samples=3)  # overlap
    with pytest.raises(ValueError):
        Partition(shards=((0, 1),), n_samples=3)  # not a cover
    with pytest.raises(ValueError):
        Partition(shards=((0, 1), ()), n_samples=2)  # empty shard
    with pytest.raises(ValueError):
        Partition(shards=((0, 3),), n_samples=2)  # out of range
    p = Partition(shards=((2, 0), (1,)), n_samples=3)
    assert p.n_agents == 2
    assert [a.tolist() for a in p.as_arrays()] == [[2, 0], [1]]


@given(
    n=st.integers(min_value=1, max_value=60),
    n_agents=st.integers(min_value=1, max_value=12),
    seed=st.integers(min_value=0, max_value=1_000),
)
@settings(max_examples=60, deadline=None)
def test_partition_shards_cover_disjointly_and_balance_within_one(n, n_agents, seed):
    assume(n_agents <= n)
    ds = Dataset(
        features=np.ones((n, 2)), labels=np.ones(n)
    )
    part = partition_dataset(ds, n_agents, seed)
    flat = sorted(i for shard in part.shards for i in shard)
    assert flat == list(range(n))
    sizes = [len(s) for s in part.shards]
    assert max(sizes) - min(sizes) <= 1


def test_partition_dataset_is_deterministic_and_bounds_checked():
    ds = generate_signed_measurements(12, 3, seed=1, solve_margin=False)
    assert partition_dataset(ds, 4, seed=7).shards == partition_dataset(ds, 4, seed=7).shards
    assert partition_dataset(ds, 4, seed=7).shards != partition_dataset(ds, 4, seed=8).shards
    with pytest.raises(ValueError):
        partition_dataset(ds, 0, seed=0)
    with pytest.raises(ValueError):
        partition_dataset(ds, 13, seed=0)


# ---------------------------------------------------------------------------
# Margins and the hard-margin solver


def test_empirical_margin_hand_case():
    ds = Dataset(
        features=np.array([[2.0, 0.0], [0.0, 1.0]]),
        labels=np.array([1.0, -1.0]),
    )
    # signed rows (2, 0) and (0, -1); w = (1, -1)/sqrt(2) gives margins
    # sqrt(2) and 1/sqrt(2)
    w = np.array([1.0, -1.0])
    assert empirical_margin(ds, w) == pytest.approx(1.0 / np.sqrt(2.0))
    assert empirical_margin(ds, np.array([-1.0, 0.0])) < 0.0
    with pytest.raises(ValueError):
        empirical_margin(ds, np.zeros(2))


def test_max_margin_on_orthonormal_rows_is_inverse_sqrt_n():
    # signed rows e_1..e_n: optimum w = sum_i e_i, margin 1/sqrt(n),
    # every row active
    n = 6
    labels = np.array([1.0, -1.0, 1.0, 1.0, -1.0, -1.0])
    ds = Dataset(features=np.diag(labels), labels=labels)
    sol = solve_max_margin(ds)
    assert sol.margin == pytest.approx(1.0 / np.sqrt(n), abs=1e-9)
    assert sol.active == tuple(range(n))
    assert sol.converged
    assert_allclose(sol.w, labels * np.sign(labels), atol=1e-8)  # all ones in signed space


def test_max_margin_two_point_hand_case():
    ds = Dataset(
        features=np.array([[1.0, 0.0], [-1.0, 0.0]]),
        labels=np.array([1.0, -1.0]),
    )
    sol = solve_max_margin(ds)
    assert sol.margin == pytest.approx(1.0, abs=1e-10)
    assert_allclose(sol.direction, [1.0, 0.0], atol=1e-9)
    assert not sol.one_class


def test_max_margin_matches_enumeration_oracle_on_fixed_draws():
    for seed in range(6):
        rng = np.random.default_rng(seed)
        w_true = rng.normal(size=2)
        w_true /= np.linalg.norm(w_true)
        features = rng.normal(size=(10, 2))
        dots = features @ w_true
        features = features[np.abs(dots) > 1e-3]
        labels = np.sign(features @ w_true)
        ds = Dataset(features=features, labels=labels)
        sol = solve_max_margin(ds)
        w_ref, margin_ref = max_margin_2d_by_enumeration(ds.signed)
        assert sol.margin == pytest.approx(margin_ref, rel=1e-7)
        assert_allclose(sol.direction, w_ref / np.linalg.norm(w_ref), atol=1e-6)


@given(seed=st.integers(min_value=0, max_value=10_000), n=st.integers(min_value=2, max_value=12))
@settings(max_examples=40, deadline=None)
def test_max_margin_matches_enumeration_oracle_on_random_2d_data(seed, n):
    rng = np.random.default_rng(seed)
    w_true = rng.normal(size=2)
    assume(np.linalg.norm(w_true) > 1e-3)
    w_true /= np.linalg.norm(w_true)
    features = rng.normal(size=(n, 2))
    dots = features @ w_true
    assume(np.all(np.abs(dots) > 1e-3))
    ds = Dataset(features=features, labels=np.sign(dots))
    sol = solve_max_margin(ds)
    _, margin_ref = max_margin_2d_by_enumeration(ds.signed)
    assert sol.margin == pytest.approx(margin_ref, rel=1e-6)


def test_max_margin_solution_satisfies_kkt_conditions():
    ds = generate_signed_measurements(30, 4, seed=21, solve_margin=False)
    sol = solve_max_margin(ds)
    z = ds.signed
    margins = z @ sol.w
    # primal feasibility: every scaled margin is at least one
    assert np.min(margins) >= 1.0 - 1e-8
    # stationarity: w is the dual combination of signed rows
    assert_allclose(sol.w, z.T @ sol.dual, atol=1e-8)
    # dual feasibility and complementary slackness
    assert np.min(sol.dual) >= 0.0
    slack = margins - 1.0
    assert np.max(sol.dual * slack) == pytest.approx(0.0, abs=1e-6)
    assert sol.margin == pytest.approx(1.0 / np.linalg.norm(sol.w))
    # active set collects the tight constraints
    for i in sol.active:
        assert margins[i] <= 1.0 + 1e-6


def test_max_margin_flags_one_class_data():
    ds = Dataset(features=np.abs(np.random.default_rng(0).normal(size=(8, 3))), labels=np.ones(8))
    sol = solve_max_margin(ds)
    assert sol.one_class
    assert sol.margin > 0.0


def test_antipodal_points_with_equal_labels_are_not_separable():
    ds = Dataset(
        features=np.array([[1.0, 2.0], [-1.0, -2.0]]),
        labels=np.array([1.0, 1.0]),
    )
    with pytest.raises(NotSeparableError):
        solve_max_margin(ds)


def test_zero_row_is_rejected_by_the_solver():
    ds = Dataset(
        features=np.array([[0.0, 0.0], [1.0, 0.0]]),
        labels=np.array([1.0, 1.0]),
    )
    with pytest.raises(NotSeparableError, match="zero sample"):
        solve_max_margin(ds)


def test_attach_margin_copies_solution_fields():
    ds = generate_signed_measurements(15, 3, seed=2, solve_margin=False)
    sol = solve_max_margin(ds)
    out = attach_margin(ds, sol)
    assert out.margin == sol.margin
    assert_allclose(out.max_margin_direction, sol.direction)
    assert ds.margin == 0.0  # original untouched


def test_margin_solver_agrees_with_reference_svm():
    svm = pytest.importorskip("sklearn.svm")
    import warnings

    for seed in (0, 4):
        ds = generate_signed_measurements(40, 6, seed=seed, solve_margin=False)
        sol = solve_max_margin(ds)
        # intercept-free hinge loss with large C approaches the same
        # homogeneous hard-margin problem
        clf = svm.LinearSVC(
            C=1e6, fit_intercept=False, loss="hinge", tol=1e-12, max_iter=2_000_000
        )
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            clf.fit(ds.features, ds.labels)
        w_ref = clf.coef_.ravel()
        assert sol.margin == pytest.approx(1.0 / np.linalg.norm(w_ref), rel=1e-8)
        cos = abs(w_ref @ sol.direction) / np.linalg.norm(w_ref)
        assert cos == pytest.approx(1.0, abs=1e-10)


# ---------------------------------------------------------------------------
# CSV round-trip and bundled data


def test_csv_round_trip_is_exact(tmp_path):
    ds = generate_signed_measurements(17, 4, seed=6, normalize=True, solve_margin=False)
    path = tmp_path / "data.csv"
    dataset_to_csv(ds, path)
    back = load_csv_dataset(path)
    assert_array_equal(back.features, ds.features)  # repr round-trips exactly
    assert_array_equal(back.labels, ds.labels)


def test_csv_loader_accepts_zero_one_labels_and_no_header(tmp_path):
    path = tmp_path / "zo.csv"
    path.write_text("1.0,2.0,0\n-1.0,0.5,1\n")
    ds = load_csv_dataset(path)
    assert_array_equal(ds.labels, [-1.0, 1.0])
    assert ds.d == 2


def test_csv_loader_reports_offending_line(tmp_path):
    ragged = tmp_path / "ragged.csv"
    ragged.write_text("x0,x1,y\n1.0,2.0,1\n3.0,1\n")
    with pytest.raises(ValueError, match="line 3"):
        load_csv_dataset(ragged)

    badlabel = tmp_path / "badlabel.csv"
    badlabel.write_text("x0,y\n1.0,1\n2.0,3\n")
    with pytest.raises(ValueError, match="labels must be coded"):
        load_csv_dataset(badlabel)

    empty = tmp_path / "empty.csv"
    empty.write_text("")
    with pytest.raises(ValueError, match="no data rows"):
        load_csv_dataset(empty)

    headeronly = tmp_path / "h.csv"
    headeronly.write_text("x0,y\n")
    with pytest.raises(ValueError, match="no data rows"):
        load_csv_dataset(headeronly)

    narrow = tmp_path / "narrow.csv"
    narrow.write_text("1.0\n-1.0\n")
    with pytest.raises(ValueError, match="at least one feature"):
        load_csv_dataset(narrow)


def test_bundled_dataset_loads_and_is_separable():
    path = bundled_dataset_path()
    ds = load_csv_dataset(path)
    assert ds.n == 96 and ds.d == 13
    assert set(np.unique(ds.labels)) == {-1.0, 1.0}
    sol = solve_max_margin(ds)
    assert sol.margin > 0.0
    assert sol.converged
