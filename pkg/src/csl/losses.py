"""Loss families on signed samples and their certified constants.

Every loss acts on the signed sample ``x = y * a`` through ``u = w^T x``:

* ``exponential``  f(u) = exp(-u)
* ``logistic``     f(u) = log(1 + exp(-u))
* ``squared``      f(u) = (1 - u)^2

A :class:`LossModel` carries the data-dependent constants the step-size
rules and checkers consume: ``r`` (sample radius), ``gamma`` (max
margin), per-sample smoothness ``L``, self-bounding pair ``(c, alpha)``
with ``||grad f|| <= c * f^alpha``, Hessian factor ``h``, gradient lower
factor ``tau``, and the PL constant ``mu`` for the squared loss. The
verifier re-derives the gradient/Hessian self-bounds numerically at
random points (with exponents factored out so huge scales cannot
overflow) and reports the worst relative violation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import Dataset

LOSS_KINDS = ("exponential", "logistic", "squared")

# Singular values below this fraction of the largest are treated as zero
# when extracting the smallest nonzero one for the PL constant.
PL_RANK_TOL = 1e-10


@dataclass(frozen=True)
class LossModel:
    """Loss family plus the constants certified for one dataset."""

    kind: str
    r: float
    gamma: float
    L: float | None
    c: float
    alpha: float
    h: float
    tau: float
    mu: float | None


def make_loss_model(kind: str, dataset: Dataset) -> LossModel:
    """Derive the loss constants for ``dataset``.

    The exponential loss is not globally smooth, so ``L`` is None there
    and callers fall back on ``h``. ``gamma``/``tau`` are zero when the
    dataset's max margin has not been solved.
    """
    if kind not in LOSS_KINDS:
        raise ValueError(f"unknown loss kind {kind!r}, expected one of {LOSS_KINDS}")
    r = dataset.radius
    gamma = dataset.margin
    if kind == "exponential":
        return LossModel(
            kind=kind, r=r, gamma=gamma, L=None, c=r, alpha=1.0,
            h=r * r, tau=gamma, mu=None,
        )
    if kind == "logistic":
        return LossModel(
            kind=kind, r=r, gamma=gamma, L=r * r / 4.0, c=r, alpha=1.0,
            h=2.0 * r * r, tau=0.0, mu=None,
        )
    # squared: per-sample smoothness 2*max||x||^2; curvature has no loss
    # factor, so h doubles as the absolute Hessian bound.
    return LossModel(
        kind=kind, r=r, gamma=gamma, L=2.0 * r * r, c=2.0 * r, alpha=0.5,
        h=2.0 * r * r, tau=0.0, mu=estimate_pl_constant(dataset),
    )


def _sigmoid(t: np.ndarray) -> np.ndarray:
    # stable on both tails: never exponentiates a positive argument
    out = np.empty_like(t, dtype=np.float64)
    pos = t >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-t[pos]))
    e = np.exp(t[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def risk(model: LossModel, w: np.ndarray, signed: np.ndarray) -> float:
    """Average loss over the signed samples ``signed`` at parameter ``w``."""
    u = signed @ w
    if model.kind == "exponential":
        return float(np.mean(np.exp(-u)))
    if model.kind == "logistic":
        return float(np.mean(np.logaddexp(0.0, -u)))
    res = 1.0 - u
    return float(np.mean(res * res))


def grad(model: LossModel, w: np.ndarray, signed: np.ndarray) -> np.ndarray:
    return risk_grad(model, w, signed)[1]


def losses_of_margins(model: LossModel, u: np.ndarray) -> np.ndarray:
    """Elementwise loss at signed margins ``u = w^T x`` (any array shape)."""
    if model.kind == "exponential":
        return np.exp(-u)
    if model.kind == "logistic":
        return np.logaddexp(0.0, -u)
    res = 1.0 - u
    return res * res


def grad_coeffs_of_margins(model: LossModel, u: np.ndarray) -> np.ndarray:
    """Elementwise df/du at signed margins: grad_w f = coeff * x."""
    if model.kind == "exponential":
        return -np.exp(-u)
    if model.kind == "logistic":
        return -_sigmoid(-u)
    return -2.0 * (1.0 - u)


def per_sample_losses(model: LossModel, w: np.ndarray, signed: np.ndarray) -> np.ndarray:
    """Vector of f(w^T x_i) over the signed samples (``risk`` is its mean)."""
    return losses_of_margins(model, signed @ w)


def risk_grad(model: LossModel, w: np.ndarray, signed: np.ndarray) -> tuple[float, np.ndarray]:
    """Risk and gradient in one pass (the exp factors are shared)."""
    u = signed @ w
    n = signed.shape[0]
    if model.kind == "exponential":
        z = np.exp(-u)
        return float(np.mean(z)), -(z @ signed) / n
    if model.kind == "logistic":
        value = float(np.mean(np.logaddexp(0.0, -u)))
        coeff = _sigmoid(-u)
        return value, -(coeff @ signed) / n
    res = 1.0 - u
    return float(np.mean(res * res)), -2.0 * (res @ signed) / n


def _hessian_coeff(model: LossModel, u: np.ndarray) -> np.ndarray:
    """Per-sample weights c_i with Hessian = (1/n) sum_i c_i x_i x_i^T."""
    if model.kind == "exponential":
        return np.exp(-u)
    if model.kind == "logistic":
        s = _sigmoid(-u)
        return s * (1.0 - s)
    return np.full(u.shape, 2.0)


def _psd_opnorm(signed: np.ndarray, coeff: np.ndarray, n_iters: int = 200) -> float:
    """Power iteration on (1/n) X^T diag(coeff) X, coeff >= 0."""
    n, d = signed.shape
    rng = np.random.default_rng(np.random.SeedSequence([0x0431, d]))
    v = rng.normal(size=d)
    v /= np.linalg.norm(v)
    lam = 0.0
    for _ in range(n_iters):
        hv = signed.T @ (coeff * (signed @ v)) / n
        norm = float(np.linalg.norm(hv))
        if norm == 0.0:
            return 0.0
        v = hv / norm
        lam = norm
    return lam


def hessian_operator_norm(
    model: LossModel, w: np.ndarray, signed: np.ndarray, n_iters: int = 200
) -> float:
    """||grad^2 F(w)||_2 via power iteration (can overflow at extreme w;
    the self-bound verifier uses the factored form instead)."""
    return _psd_opnorm(signed, _hessian_coeff(model, signed @ w), n_iters)


def logistic_lower_phi(w: np.ndarray, signed: np.ndarray) -> float:
    """Phi(w) = (1/n) sum_i sigma(-u_i): the logistic gradient lower factor."""
    return float(np.mean(_sigmoid(-(signed @ w))))


def verify_self_bounds(
    model: LossModel,
    dataset: Dataset,
    n_trials: int = 300,
    seed: int = 0,
    scales: tuple[float, ...] = (0.1, 1.0, 10.0),
    hess_iters: int = 150,
) -> float:
    """Max relative violation of the gradient/Hessian self-bounds.

    Draws ``n_trials`` Gaussian directions cycled through ``scales`` and
    checks, per loss family:

    * exponential: gamma*F <= ||grad F|| <= r*F and ||hess F|| <= r^2*F
      (evaluated with exp(max exponent) factored out, so scale-10 points
      on wide data cannot overflow);
    * logistic: gamma*Phi(w) <= ||grad F|| <= r*F and ||hess F|| <= 2r^2*F;
    * squared: ||grad F|| <= 2r*sqrt(F) and ||hess F|| <= 2r^2.

    Lower bounds need the true margin; they are skipped when
    ``model.gamma == 0``. The return value is negative or tiny when every
    bound holds.
    """
    x = dataset.signed
    n = x.shape[0]
    rng = np.random.default_rng(np.random.SeedSequence([seed, 5]))
    worst = -np.inf

    def rel_excess(lhs: float, rhs: float) -> float:
        return (lhs - rhs) / max(abs(rhs), 1e-300)

    for trial in range(n_trials):
        w = rng.normal(size=dataset.d) * scales[trial % len(scales)]
        u = x @ w
        if model.kind == "exponential":
            s = float(np.max(-u))
            z = np.exp(-u - s)  # exp(-u) = e^s * z with z in (0, 1]
            f_tilde = float(np.mean(z))
            g_tilde = float(np.linalg.norm((z @ x) / n))
            hess_tilde = _psd_opnorm(x, z, hess_iters)
            worst = max(worst, rel_excess(g_tilde, model.r * f_tilde))
            worst = max(worst, rel_excess(hess_tilde, model.r**2 * f_tilde))
            if model.gamma > 0:
                worst = max(worst, rel_excess(model.gamma * f_tilde, g_tilde))
        elif model.kind == "logistic":
            value, g = risk_grad(model, w, x)
            gnorm = float(np.linalg.norm(g))
            hess = _psd_opnorm(x, _hessian_coeff(model, u), hess_iters)
            worst = max(worst, rel_excess(gnorm, model.r * value))
            worst = max(worst, rel_excess(hess, model.h * value))
            if model.gamma > 0:
                worst = max(worst, rel_excess(model.gamma * logistic_lower_phi(w, x), gnorm))
        else:
            value, g = risk_grad(model, w, x)
            gnorm = float(np.linalg.norm(g))
            hess = _psd_opnorm(x, _hessian_coeff(model, u), hess_iters)
            worst = max(worst, rel_excess(gnorm, model.c * np.sqrt(value)))
            worst = max(worst, rel_excess(hess, model.h))
    return float(worst)


def realizability_rho(model: LossModel, eps: float) -> float:
    """Norm budget rho(eps): some ||w|| <= rho(eps) attains train loss <= eps.

    The witness is rho(eps) times the unit max-margin direction:
    every signed sample then has u >= rho*gamma, which drives the tail
    of the loss below eps. Squared loss has no decreasing tail, so no
    rho is defined for it.
    """
    if not 0.0 < eps <= 1.0:
        raise ValueError(f"eps must be in (0, 1], got {eps}")
    if model.gamma <= 0.0:
        raise ValueError("realizability needs a solved positive margin")
    if model.kind == "exponential":
        return float(np.log(1.0 / eps) / model.gamma)
    if model.kind == "logistic":
        # exp(eps) - 1 > 1 for eps > log 2: w = 0 already achieves eps.
        return float(max(0.0, -np.log(np.expm1(eps)) / model.gamma))
    raise ValueError("squared loss does not decay to zero along any ray")


def estimate_pl_constant(dataset: Dataset, validate: bool = True, n_checks: int = 100) -> float:
    """PL constant mu = 2 * sigma_min_nonzero(X)^2 / n for the squared loss.

    In the interpolating regime (d >= n, zero optimal risk) the estimate
    is cross-checked on ``n_checks`` random points against
    ||grad F(w)||^2 >= 2*mu*F(w).
    """
    x = dataset.signed
    n = x.shape[0]
    svals = np.linalg.svd(x, compute_uv=False)
    nonzero = svals[svals > PL_RANK_TOL * svals[0]]
    mu = 2.0 * float(nonzero[-1]) ** 2 / n
    if validate and dataset.d >= n:
        model = LossModel(
            kind="squared", r=dataset.radius, gamma=0.0, L=None,
            c=2.0 * dataset.radius, alpha=0.5, h=0.0, tau=0.0, mu=None,
        )
        rng = np.random.default_rng(np.random.SeedSequence([17, n, dataset.d]))
        for _ in range(n_checks):
            w = rng.normal(size=dataset.d)
            value, g = risk_grad(model, w, x)
            lhs = float(g @ g)
            if lhs + 1e-9 * max(1.0, abs(lhs)) < 2.0 * mu * value:
                raise AssertionError(
                    f"PL witness failed: ||grad||^2 = {lhs:.6e} < 2*mu*F = {2*mu*value:.6e}"
                )
    return mu
