"""Tests for the loss families, their constants, and the self-bound verifier."""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from numpy.testing import assert_allclose

from csl.data import Dataset, generate_signed_measurements
from csl.losses import (
    LOSS_KINDS,
    estimate_pl_constant,
    grad,
    grad_coeffs_of_margins,
    hessian_operator_norm,
    logistic_lower_phi,
    losses_of_margins,
    make_loss_model,
    per_sample_losses,
    realizability_rho,
    risk,
    risk_grad,
    verify_self_bounds,
)


@pytest.fixture(scope="module")
def solved_dataset():
    return generate_signed_measurements(24, 6, seed=13)


def dense_hessian(model, w, signed):
    """Explicit Hessian (1/n) sum_i c_i x_i x_i^T for the oracle route."""
    u = signed @ w
    if model.kind == "exponential":
        coeff = np.exp(-u)
    elif model.kind == "logistic":
        s = 1.0 / (1.0 + np.exp(u))
        coeff = s * (1.0 - s)
    else:
        coeff = np.full(u.shape, 2.0)
    n = signed.shape[0]
    return (signed.T * coeff) @ signed / n


# ---------------------------------------------------------------------------
# Values and gradients


def test_risk_values_at_zero(solved_dataset):
    x = solved_dataset.signed
    w0 = np.zeros(solved_dataset.d)
    assert risk(make_loss_model("exponential", solved_dataset), w0, x) == pytest.approx(1.0)
    assert risk(make_loss_model("logistic", solved_dataset), w0, x) == pytest.approx(np.log(2.0))
    assert risk(make_loss_model("squared", solved_dataset), w0, x) == pytest.approx(1.0)


def test_gradients_at_zero_are_scaled_mean_rows(solved_dataset):
    x = solved_dataset.signed
    w0 = np.zeros(solved_dataset.d)
    mean_row = x.mean(axis=0)
    assert_allclose(grad(make_loss_model("exponential", solved_dataset), w0, x), -mean_row)
    assert_allclose(grad(make_loss_model("logistic", solved_dataset), w0, x), -0.5 * mean_row)
    assert_allclose(grad(make_loss_model("squared", solved_dataset), w0, x), -2.0 * mean_row)


@pytest.mark.parametrize("kind", LOSS_KINDS)
@given(seed=st.integers(min_value=0, max_value=10_000), scale=st.floats(min_value=0.05, max_value=2.0))
@settings(max_examples=25, deadline=None)
def test_gradient_matches_central_differences(kind, seed, scale, solved_dataset):
    model = make_loss_model(kind, solved_dataset)
    x = solved_dataset.signed
    rng = np.random.default_rng(seed)
    w = rng.normal(size=solved_dataset.d) * scale
    g = grad(model, w, x)
    step = 1e-6 * max(1.0, scale)
    for _ in range(4):
        u = rng.normal(size=solved_dataset.d)
        u /= np.linalg.norm(u)
        fd = (risk(model, w + step * u, x) - risk(model, w - step * u, x)) / (2.0 * step)
        assert fd == pytest.approx(float(g @ u), rel=5e-5, abs=1e-9)


@pytest.mark.parametrize("kind", LOSS_KINDS)
def test_risk_grad_is_consistent_with_separate_calls(kind, solved_dataset):
    model = make_loss_model(kind, solved_dataset)
    x = solved_dataset.signed
    w = np.random.default_rng(3).normal(size=solved_dataset.d)
    value, g = risk_grad(model, w, x)
    assert value == pytest.approx(risk(model, w, x), rel=1e-15)
    assert_allclose(g, grad(model, w, x), atol=0)
    # elementwise helpers agree with the aggregate forms
    u = x @ w
    assert value == pytest.approx(float(np.mean(losses_of_margins(model, u))))
    assert_allclose(per_sample_losses(model, w, x), losses_of_margins(model, u))
    assert_allclose(g, grad_coeffs_of_margins(model, u) @ x / x.shape[0], atol=1e-15)


def test_logistic_is_stable_at_extreme_parameters(solved_dataset):
    model = make_loss_model("logistic", solved_dataset)
    x = solved_dataset.signed
    w = solved_dataset.max_margin_direction * 1e4
    with np.errstate(over="raise"):
        value, g = risk_grad(model, w, x)
        phi = logistic_lower_phi(w, x)
    assert np.isfinite(value) and value >= 0.0
    assert np.all(np.isfinite(g))
    assert 0.0 <= phi <= 1.0
    # far along the separator the risk and the lower factor both vanish
    assert value < 1e-100
    assert logistic_lower_phi(np.zeros(solved_dataset.d), x) == pytest.approx(0.5)


# ---------------------------------------------------------------------------
# Constants


def test_loss_constants_follow_radius_and_margin(solved_dataset):
    r = solved_dataset.radius
    gamma = solved_dataset.margin
    exp = make_loss_model("exponential", solved_dataset)
    assert exp.L is None
    assert exp.c == pytest.approx(r)
    assert exp.alpha == 1.0
    assert exp.h == pytest.approx(r * r)
    assert exp.tau == pytest.approx(gamma)
    assert exp.mu is None

    logi = make_loss_model("logistic", solved_dataset)
    assert logi.L == pytest.approx(r * r / 4.0)
    assert logi.c == pytest.approx(r)
    assert logi.alpha == 1.0
    assert logi.h == pytest.approx(2.0 * r * r)
    assert logi.tau == 0.0

    sq = make_loss_model("squared", solved_dataset)
    assert sq.L == pytest.approx(2.0 * r * r)
    assert sq.c == pytest.approx(2.0 * r)
    assert sq.alpha == 0.5
    assert sq.h == pytest.approx(2.0 * r * r)
    assert sq.mu is not None and sq.mu > 0.0


def test_unknown_loss_kind_is_rejected(solved_dataset):
    with pytest.raises(ValueError, match="unknown loss kind"):
        make_loss_model("hinge", solved_dataset)


# ---------------------------------------------------------------------------
# Hessian norm and self-bounds


@pytest.mark.parametrize("kind", LOSS_KINDS)
def test_hessian_norm_matches_dense_eigendecomposition(kind, solved_dataset):
    model = make_loss_model(kind, solved_dataset)
    x = solved_dataset.signed
    rng = np.random.default_rng(8)
    for scale in (0.3, 1.0):
        w = rng.normal(size=solved_dataset.d) * scale
        ref = float(np.max(np.linalg.eigvalsh(dense_hessian(model, w, x))))
        assert hessian_operator_norm(model, w, x, n_iters=400) == pytest.approx(ref, rel=1e-8)


def test_squared_hessian_norm_is_parameter_independent(solved_dataset):
    model = make_loss_model("squared", solved_dataset)
    x = solved_dataset.signed
    a = hessian_operator_norm(model, np.zeros(solved_dataset.d), x)
    b = hessian_operator_norm(model, np.full(solved_dataset.d, 3.0), x)
    assert a == pytest.approx(b, rel=1e-12)
    assert a <= model.h + 1e-12


@pytest.mark.parametrize("kind", LOSS_KINDS)
def test_self_bounds_hold_on_generated_data(kind, solved_dataset):
    model = make_loss_model(kind, solved_dataset)
    worst = verify_self_bounds(model, solved_dataset, n_trials=60, seed=1)
    assert worst < 1e-8


def test_self_bounds_survive_extreme_scales():
    ds = generate_signed_measurements(40, 30, seed=2)
    model = make_loss_model("exponential", ds)
    # scale 50 pushes raw exp(-u) far past float range; the factored
    # evaluation must still return a finite verdict
    worst = verify_self_bounds(model, ds, n_trials=30, seed=0, scales=(50.0,))
    assert np.isfinite(worst)
    assert worst < 1e-8


# ---------------------------------------------------------------------------
# Realizability budget


def test_realizability_witness_achieves_the_target_risk(solved_dataset):
    x = solved_dataset.signed
    direction = solved_dataset.max_margin_direction
    for kind in ("exponential", "logistic"):
        model = make_loss_model(kind, solved_dataset)
        for eps in (1e-6, 1e-3, 0.5, 1.0):
            rho = realizability_rho(model, eps)
            assert risk(model, rho * direction, x) <= eps + 1e-12


def test_realizability_values_match_closed_forms(solved_dataset):
    gamma = solved_dataset.margin
    exp = make_loss_model("exponential", solved_dataset)
    assert realizability_rho(exp, 0.01) == pytest.approx(np.log(100.0) / gamma)
    logi = make_loss_model("logistic", solved_dataset)
    assert realizability_rho(logi, 0.01) == pytest.approx(-np.log(np.expm1(0.01)) / gamma)
    # past log 2 the zero vector already meets the target
    assert realizability_rho(logi, 0.75) == 0.0


@given(
    eps_lo=st.floats(min_value=1e-6, max_value=0.5),
    ratio=st.floats(min_value=1.01, max_value=10.0),
)
@settings(max_examples=30, deadline=None)
def test_realizability_budget_shrinks_as_the_target_loosens(eps_lo, ratio, solved_dataset):
    eps_hi = min(eps_lo * ratio, 1.0)
    for kind in ("exponential", "logistic"):
        model = make_loss_model(kind, solved_dataset)
        assert realizability_rho(model, eps_hi) <= realizability_rho(model, eps_lo) + 1e-12


def test_realizability_rejects_bad_inputs(solved_dataset):
    model = make_loss_model("exponential", solved_dataset)
    with pytest.raises(ValueError):
        realizability_rho(model, 0.0)
    with pytest.raises(ValueError):
        realizability_rho(model, 1.5)
    with pytest.raises(ValueError, match="squared"):
        realizability_rho(make_loss_model("squared", solved_dataset), 0.1)
    unsolved = generate_signed_measurements(10, 3, seed=0, solve_margin=False)
    with pytest.raises(ValueError, match="margin"):
        realizability_rho(make_loss_model("exponential", unsolved), 0.1)


# ---------------------------------------------------------------------------
# PL constant


def test_pl_constant_on_diagonal_data_matches_singular_values():
    # X = diag(3, 2, 1): smallest nonzero singular value 1, n = 3
    ds = Dataset(features=np.diag([3.0, 2.0, 1.0]), labels=np.ones(3))
    assert estimate_pl_constant(ds) == pytest.approx(2.0 / 3.0)


def test_pl_constant_skips_zero_singular_values():
    # rank-one rows: sigma = sqrt(5) is the only nonzero singular value.
    # Validation is off because rank-deficient data cannot interpolate,
    # so the built-in witness (which assumes zero optimal risk) fails.
    ds = Dataset(
        features=np.array([[1.0, 0.0], [2.0, 0.0]]),
        labels=np.array([1.0, 1.0]),
    )
    assert estimate_pl_constant(ds, validate=False) == pytest.approx(5.0)


@given(seed=st.integers(min_value=0, max_value=2_000))
@settings(max_examples=20, deadline=None)
def test_pl_inequality_holds_at_random_points_in_the_wide_regime(seed):
    # d > n: squared risk satisfies ||grad F||^2 >= 2 mu F everywhere
    ds = generate_signed_measurements(6, 20, seed=seed, solve_margin=False)
    mu = estimate_pl_constant(ds, validate=False)
    model = make_loss_model("squared", ds)
    rng = np.random.default_rng(seed + 1)
    for _ in range(5):
        w = rng.normal(size=ds.d)
        value, g = risk_grad(model, w, ds.signed)
        assert float(g @ g) >= 2.0 * mu * value - 1e-9
