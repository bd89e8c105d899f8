"""Command-line front end: run, sweep, reproduce, verify, fit-rate.

Every command is a thin driver over the library modules. Output plots
are standalone SVG line charts generated here with no renderer
dependency; given identical input CSVs the bytes are identical, which
makes the figures golden-testable.

Exit codes: 0 success, 1 verification suite failure, 2 invalid
configuration or unknown name, 3 engine abort (partial outputs are
kept). The default output root is ``$CSL_OUT_DIR`` or ``./out``.
"""

from __future__ import annotations

import argparse
import csv
import math
import os
import sys
from dataclasses import dataclass, field
from xml.sax.saxutils import escape

import numpy as np

from . import engine, harness
from .data import generate_signed_measurements
from .losses import (
    LOSS_KINDS,
    make_loss_model,
    realizability_rho,
    risk,
    risk_grad,
    verify_self_bounds,
)
from .metrics import (
    TRAJECTORY_COLUMNS,
    Trajectory,
    check_consensus_recursion,
    check_descent,
    check_pl_linear_convergence,
    check_sandwich,
    check_train_bound_convex,
    fit_rate,
)
from .topology import (
    NAMED_GRAPH_KINDS,
    build_mixing_matrix,
    generate_erdos_renyi,
    generate_named_graph,
    validate_mixing_matrix,
)

VERIFY_SUITES = ("mixing", "losses", "engine", "bounds", "all")

EXIT_OK = 0
EXIT_VERIFY_FAILED = 1
EXIT_BAD_CONFIG = 2
EXIT_ENGINE_ABORT = 3


class PlotDataError(ValueError):
    """Plot data is unusable (missing column, empty, or nonpositive on
    a log axis); the message names the offending series."""


@dataclass(frozen=True)
class Series:
    # skip_nonpositive drops rows a log axis cannot show (e.g. the zero
    # consensus error of the consensual start state) instead of erroring
    label: str
    x_field: str
    y_field: str
    csv_path: str
    skip_nonpositive: bool = False


@dataclass(frozen=True)
class PlotSpec:
    """One chart: data series, per-axis scale, optional rate guides.

    ``guides`` holds ``(exponent, anchor)`` pairs; a guide is a dashed
    straight line of the given slope in axis coordinates (so a power
    law on log-log axes), through ``anchor=(x0, y0)`` or through the
    last point of the first series when ``anchor`` is None.
    """

    title: str
    series: tuple[Series, ...]
    xscale: str = "linear"
    yscale: str = "linear"
    xlabel: str = "t"
    ylabel: str = ""
    guides: tuple[tuple[float, tuple[float, float] | None], ...] = ()

    def __post_init__(self):
        if self.xscale not in ("linear", "log") or self.yscale not in ("linear", "log"):
            raise ValueError("axis scales must be 'linear' or 'log'")


# fixed palette; cycles if a chart has more series
_PALETTE = (
    "#1b6ca8", "#d1495b", "#2e933c", "#8447ff",
    "#e08d29", "#5c5c5c", "#00a8a8", "#a05195",
)

# chart geometry in pixels
_W, _H = 720.0, 480.0
_PX0, _PX1 = 70.0, 540.0
_PY0, _PY1 = 42.0, 428.0


def _read_columns(path: str, fields: tuple[str, ...]) -> dict[str, np.ndarray]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise PlotDataError(f"{path}: empty CSV")
        missing = [f for f in fields if f not in header]
        if missing:
            raise PlotDataError(
                f"{path}: missing columns {missing}, available: {header}"
            )
        idx = {f: header.index(f) for f in fields}
        cols: dict[str, list[float]] = {f: [] for f in fields}
        for row in reader:
            for f in fields:
                cols[f].append(float(row[idx[f]]))
    return {f: np.asarray(v, dtype=np.float64) for f, v in cols.items()}


def _load_series(s: Series, xscale: str, yscale: str) -> tuple[np.ndarray, np.ndarray]:
    cols = _read_columns(s.csv_path, (s.x_field, s.y_field))
    x, y = cols[s.x_field], cols[s.y_field]
    keep = np.isfinite(x) & np.isfinite(y)
    if s.skip_nonpositive:
        if xscale == "log":
            keep &= x > 0
        if yscale == "log":
            keep &= y > 0
    x, y = x[keep], y[keep]
    if x.size == 0:
        raise PlotDataError(f"series {s.label!r}: no finite data points")
    for name, vals, scale in ((s.x_field, x, xscale), (s.y_field, y, yscale)):
        if scale == "log" and np.any(vals <= 0):
            raise PlotDataError(
                f"series {s.label!r}: nonpositive {name} values on a log axis"
            )
    return x, y


def _axis_transform(vals: np.ndarray, scale: str) -> np.ndarray:
    return np.log10(vals) if scale == "log" else vals


def _linear_ticks(lo: float, hi: float, target: int = 5) -> list[float]:
    span = hi - lo
    if span <= 0:
        return [lo]
    step = 10.0 ** math.floor(math.log10(span / target))
    for mult in (1.0, 2.0, 5.0, 10.0, 20.0):
        if span / (mult * step) <= target + 1:
            step *= mult
            break
    first = math.ceil(lo / step)
    last = math.floor(hi / step + 1e-9)
    return [k * step if k != 0 else 0.0 for k in range(first, last + 1)]


def _ticks(lo: float, hi: float, scale: str) -> list[tuple[float, str]]:
    """Tick positions in transformed coordinates with their labels."""
    if scale == "linear":
        return [(t, "%g" % t) for t in _linear_ticks(lo, hi)]
    decades = list(range(math.ceil(lo - 1e-9), math.floor(hi + 1e-9) + 1))
    if not decades:
        mid = 0.5 * (lo + hi)
        return [(u, "%.3g" % 10.0**u) for u in (lo, mid, hi)]
    stride = max(1, math.ceil(len(decades) / 8))
    return [(float(k), "1e%d" % k) for k in decades[::stride]]


def _clip_segment(x0, y0, x1, y1, lo_x, hi_x, lo_y, hi_y):
    """Liang-Barsky clip; returns endpoints or None if fully outside."""
    dx, dy = x1 - x0, y1 - y0
    t0, t1 = 0.0, 1.0
    for p, q in (
        (-dx, x0 - lo_x), (dx, hi_x - x0),
        (-dy, y0 - lo_y), (dy, hi_y - y0),
    ):
        if p == 0.0:
            if q < 0.0:
                return None
            continue
        r = q / p
        if p < 0.0:
            if r > t1:
                return None
            t0 = max(t0, r)
        else:
            if r < t0:
                return None
            t1 = min(t1, r)
    return (x0 + t0 * dx, y0 + t0 * dy, x0 + t1 * dx, y0 + t1 * dy)


def emit_plot(spec: PlotSpec, out_path: str) -> str:
    """Render the spec to a standalone SVG file; returns ``out_path``.

    Deterministic byte-for-byte: fixed geometry, fixed palette, all
    coordinates printed with two decimals.
    """
    if not spec.series:
        raise PlotDataError("plot needs at least one series")
    data = [_load_series(s, spec.xscale, spec.yscale) for s in spec.series]
    txs = [_axis_transform(x, spec.xscale) for x, _ in data]
    tys = [_axis_transform(y, spec.yscale) for _, y in data]
    xmin = min(float(tx.min()) for tx in txs)
    xmax = max(float(tx.max()) for tx in txs)
    ymin = min(float(ty.min()) for ty in tys)
    ymax = max(float(ty.max()) for ty in tys)
    if xmax - xmin <= 0:
        xmin, xmax = xmin - 0.5, xmax + 0.5
    if ymax - ymin <= 0:
        ymin, ymax = ymin - 0.5, ymax + 0.5
    pad_y = 0.04 * (ymax - ymin)
    ymin, ymax = ymin - pad_y, ymax + pad_y

    def px(u: float) -> float:
        return _PX0 + (u - xmin) / (xmax - xmin) * (_PX1 - _PX0)

    def py(v: float) -> float:
        return _PY1 - (v - ymin) / (ymax - ymin) * (_PY1 - _PY0)

    out: list[str] = []
    out.append('<?xml version="1.0" encoding="UTF-8"?>')
    out.append(
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_W:g}" height="{_H:g}" '
        f'viewBox="0 0 {_W:g} {_H:g}">'
    )
    out.append(f'<rect x="0" y="0" width="{_W:g}" height="{_H:g}" fill="#ffffff"/>')
    out.append(
        f'<text x="{(_PX0 + _PX1) / 2:.2f}" y="24.00" font-family="monospace" '
        f'font-size="14" text-anchor="middle">{escape(spec.title)}</text>'
    )
    out.append(
        f'<rect x="{_PX0:.2f}" y="{_PY0:.2f}" width="{_PX1 - _PX0:.2f}" '
        f'height="{_PY1 - _PY0:.2f}" fill="none" stroke="#000000" stroke-width="1"/>'
    )
    for u, label in _ticks(xmin, xmax, spec.xscale):
        if not xmin <= u <= xmax:
            continue
        x = px(u)
        out.append(
            f'<line x1="{x:.2f}" y1="{_PY1:.2f}" x2="{x:.2f}" y2="{_PY1 + 5:.2f}" '
            f'stroke="#000000" stroke-width="1"/>'
        )
        out.append(
            f'<text x="{x:.2f}" y="{_PY1 + 18:.2f}" font-family="monospace" '
            f'font-size="11" text-anchor="middle">{escape(label)}</text>'
        )
    for v, label in _ticks(ymin, ymax, spec.yscale):
        if not ymin <= v <= ymax:
            continue
        y = py(v)
        out.append(
            f'<line x1="{_PX0 - 5:.2f}" y1="{y:.2f}" x2="{_PX0:.2f}" y2="{y:.2f}" '
            f'stroke="#000000" stroke-width="1"/>'
        )
        out.append(
            f'<text x="{_PX0 - 8:.2f}" y="{y + 4:.2f}" font-family="monospace" '
            f'font-size="11" text-anchor="end">{escape(label)}</text>'
        )
    out.append(
        f'<text x="{(_PX0 + _PX1) / 2:.2f}" y="{_PY1 + 38:.2f}" font-family="monospace" '
        f'font-size="12" text-anchor="middle">{escape(spec.xlabel)}</text>'
    )
    if spec.ylabel:
        out.append(
            f'<text x="16.00" y="{(_PY0 + _PY1) / 2:.2f}" font-family="monospace" '
            f'font-size="12" text-anchor="middle" '
            f'transform="rotate(-90 16.00 {(_PY0 + _PY1) / 2:.2f})">'
            f"{escape(spec.ylabel)}</text>"
        )

    for exponent, anchor in spec.guides:
        if anchor is None:
            ax, ay = float(txs[0][-1]), float(tys[0][-1])
        else:
            ax = float(_axis_transform(np.asarray(anchor[0]), spec.xscale))
            ay = float(_axis_transform(np.asarray(anchor[1]), spec.yscale))
        y_at_min = ay + exponent * (xmin - ax)
        y_at_max = ay + exponent * (xmax - ax)
        seg = _clip_segment(xmin, y_at_min, xmax, y_at_max, xmin, xmax, ymin, ymax)
        if seg is None:
            continue
        gx0, gy0, gx1, gy1 = seg
        out.append(
            f'<line x1="{px(gx0):.2f}" y1="{py(gy0):.2f}" x2="{px(gx1):.2f}" '
            f'y2="{py(gy1):.2f}" stroke="#888888" stroke-width="1.2" '
            f'stroke-dasharray="6,4"/>'
        )
        mx, my = 0.5 * (gx0 + gx1), 0.5 * (gy0 + gy1)
        out.append(
            f'<text x="{px(mx) + 6:.2f}" y="{py(my) - 6:.2f}" font-family="monospace" '
            f'font-size="11" fill="#555555">slope={exponent:g}</text>'
        )

    for i, ((x, y), tx, ty) in enumerate(zip(data, txs, tys)):
        color = _PALETTE[i % len(_PALETTE)]
        pts = " ".join(f"{px(u):.2f},{py(v):.2f}" for u, v in zip(tx, ty))
        out.append(
            f'<polyline points="{pts}" fill="none" stroke="{color}" '
            f'stroke-width="1.5"/>'
        )
    legend_y = 60.0
    for i, s in enumerate(spec.series):
        color = _PALETTE[i % len(_PALETTE)]
        y = legend_y + 17.0 * i
        out.append(
            f'<line x1="{_PX1 + 12:.2f}" y1="{y - 4:.2f}" x2="{_PX1 + 34:.2f}" '
            f'y2="{y - 4:.2f}" stroke="{color}" stroke-width="1.5"/>'
        )
        out.append(
            f'<text x="{_PX1 + 40:.2f}" y="{y:.2f}" font-family="monospace" '
            f'font-size="11">{escape(s.label)}</text>'
        )
    out.append("</svg>")
    os.makedirs(os.path.dirname(out_path) or ".", exist_ok=True)
    with open(out_path, "w", encoding="ascii", newline="\n") as fh:
        fh.write("\n".join(out) + "\n")
    return out_path


# ---------------------------------------------------------------------------
# figure plot compositions


def _csvs(bundle: harness.RunBundle) -> dict[str, str]:
    return {
        label: os.path.join(bundle.out_dir, f"{label}.csv")
        for label in bundle.trajectories
    }


def _figure_plots(
    figure: str, scale: str, bundles: list[harness.RunBundle], out_root: str
) -> list[str]:
    """Compose one SVG per panel from the bundle CSVs already on disk."""
    paths: list[str] = []

    def save(spec: PlotSpec, stem: str) -> None:
        paths.append(emit_plot(spec, os.path.join(out_root, f"{stem}.svg")))

    if figure == "fig1_left":
        csvs = _csvs(bundles[0])
        series = tuple(
            Series(label, "t", "dir_dist", csvs[label]) for label in sorted(csvs)
        )
        save(
            PlotSpec(
                title="directional distance to the max-margin predictor",
                series=series, xscale="log", yscale="log", ylabel="dir_dist",
            ),
            f"fig1_left_{scale}",
        )
    elif figure == "fig2":
        for bundle, panel in zip(bundles, ("left", "right")):
            csvs = _csvs(bundle)
            if panel == "left":
                series = tuple(
                    Series(f"{label} {kind}", "t", f"err_{kind}", csvs[label])
                    for label in sorted(csvs)
                    for kind in ("train", "test")
                )
                spec = PlotSpec(
                    title="misclassification error",
                    series=series, xscale="log", yscale="linear",
                    ylabel="error rate",
                )
            else:
                series = tuple(
                    Series(f"{label} {kind}", "t", column, csvs[label])
                    for label in sorted(csvs)
                    for kind, column in (("train", "train_loss_mean"), ("test", "test_loss"))
                )
                spec = PlotSpec(
                    title="training and test loss",
                    series=series, xscale="log", yscale="log", ylabel="loss",
                )
            save(spec, f"fig2_{panel}_{scale}")
    elif figure == "fig3":
        low, high = bundles
        low_csv = _csvs(low)["dgd"]
        high_csv = _csvs(high)["dgd"]
        d_low, d_high = low.constants["d"], high.constants["d"]
        save(
            PlotSpec(
                title="consensus error decay",
                series=(
                    # the consensual start state has zero consensus error
                    Series(f"dgd d={d_low}", "t", "consensus_sq", low_csv,
                           skip_nonpositive=True),
                    Series(f"dgd d={d_high}", "t", "consensus_sq", high_csv,
                           skip_nonpositive=True),
                ),
                xscale="log", yscale="log", ylabel="consensus_sq",
                guides=((-2.0, None),),
            ),
            f"fig3_consensus_{scale}",
        )
        save(
            PlotSpec(
                title="training loss decay",
                series=(
                    Series(f"dgd d={d_low}", "t", "train_loss_mean", low_csv),
                    Series(f"dgd d={d_high}", "t", "train_loss_mean", high_csv),
                ),
                xscale="log", yscale="log", ylabel="train_loss_mean",
                guides=((-1.0, None),),
            ),
            f"fig3_train_{scale}",
        )
        save(
            PlotSpec(
                title="test loss, decentralized vs centralized",
                series=(
                    Series("dgd", "t", "test_loss", low_csv),
                    Series("central_gd", "t", "test_loss", _csvs(low)["central_gd"]),
                ),
                xscale="log", yscale="log", ylabel="test_loss",
            ),
            f"fig3_test_{scale}",
        )
    elif figure == "fig4":
        csvs = _csvs(bundles[0])
        save(
            PlotSpec(
                title="interpolating least squares: train vs test",
                series=(
                    # interpolating train loss may underflow to exact zero
                    Series("dgd train", "t", "train_loss_mean", csvs["dgd"],
                           skip_nonpositive=True),
                    Series("dgd test", "t", "test_loss", csvs["dgd"]),
                ),
                xscale="log", yscale="log", ylabel="loss",
            ),
            f"fig4_{scale}",
        )
    else:  # fig5
        csvs = _csvs(bundles[0])
        series = tuple(
            Series(label, "t", "dir_dist", csvs[label]) for label in sorted(csvs)
        )
        save(
            PlotSpec(
                title="normalized step sizes: sweep vs tuned baselines",
                series=series, xscale="log", yscale="log", ylabel="dir_dist",
            ),
            f"fig5_{scale}",
        )
    return paths


# ---------------------------------------------------------------------------
# verification suites


@dataclass
class SuiteRow:
    suite: str
    check: str
    ok: bool
    detail: str


def _suite_mixing(seed: int, rows: list[SuiteRow]) -> None:
    rng = np.random.default_rng(np.random.SeedSequence([seed, 21]))
    worst = 0.0
    ok = True
    for k in range(25):
        n = 5 + (5 * k) % 26
        p = (0.2, 0.5, 0.8)[k % 3]
        graph = generate_erdos_renyi(n, p, seed=seed + k)
        mixing = build_mixing_matrix(graph, ("metropolis", "lazy_metropolis", "max_degree")[k % 3])
        try:
            validate_mixing_matrix(mixing.weights, graph)
        except ValueError as exc:
            rows.append(SuiteRow("mixing", "er_graphs", False, str(exc)))
            return
        sigma = math.sqrt(mixing.lam)
        for _ in range(5):
            W = rng.standard_normal((n, 4))
            dev = W - W.mean(axis=0)
            lhs = np.linalg.norm(mixing.weights @ dev)
            gap = lhs - sigma * np.linalg.norm(dev)
            worst = max(worst, gap)
            ok = ok and gap <= 1e-12
    rows.append(SuiteRow("mixing", "er_graphs", ok, f"max_contraction_gap={worst:.3e}"))
    named_ok = True
    for kind in NAMED_GRAPH_KINDS:
        graph = generate_named_graph(kind, 8)
        mixing = build_mixing_matrix(graph)
        try:
            validate_mixing_matrix(mixing.weights, graph)
        except ValueError:
            named_ok = False
        named_ok = named_ok and 0.0 <= mixing.lam < 1.0
    rows.append(SuiteRow("mixing", "named_graphs", named_ok, "ring/path/complete/star"))


def _suite_losses(seed: int, rows: list[SuiteRow]) -> None:
    dataset = generate_signed_measurements(40, 8, seed=seed)
    for kind in LOSS_KINDS:
        model = make_loss_model(kind, dataset)
        worst = verify_self_bounds(model, dataset, n_trials=120, seed=seed)
        rows.append(
            SuiteRow("losses", f"self_bounds:{kind}", worst <= 1e-8,
                     f"max_rel_violation={worst:.3e}")
        )
    rng = np.random.default_rng(np.random.SeedSequence([seed, 22]))
    worst_fd = 0.0
    for kind in LOSS_KINDS:
        model = make_loss_model(kind, dataset)
        for _ in range(5):
            w = rng.standard_normal(dataset.d)
            _, g = risk_grad(model, w, dataset.signed)
            eps = 1e-6
            fd = np.empty_like(w)
            for j in range(dataset.d):
                e = np.zeros(dataset.d)
                e[j] = eps
                fd[j] = (
                    risk(model, w + e, dataset.signed)
                    - risk(model, w - e, dataset.signed)
                ) / (2 * eps)
            denom = max(1.0, float(np.linalg.norm(g)))
            worst_fd = max(worst_fd, float(np.linalg.norm(fd - g)) / denom)
    rows.append(
        SuiteRow("losses", "gradient_fd", worst_fd <= 1e-5, f"max_rel_err={worst_fd:.3e}")
    )
    eps_grid = np.array([1.0, 0.5, 0.1, 0.01, 1e-4])
    for kind in ("exponential", "logistic"):
        model = make_loss_model(kind, dataset)
        rhos = [realizability_rho(model, float(e)) for e in eps_grid]
        mono = all(r2 >= r1 - 1e-12 for r1, r2 in zip(rhos, rhos[1:]))
        rows.append(
            SuiteRow("losses", f"rho_monotone:{kind}", mono,
                     f"rho(1)={rhos[0]:.3g} rho(1e-4)={rhos[-1]:.3g}")
        )


def _suite_engine(seed: int, rows: list[SuiteRow]) -> None:
    dataset = generate_signed_measurements(30, 6, seed=seed)
    pairs = (
        ("dgd", "central_gd"), ("dgt", "central_gd"), ("fdlr", "central_ngd"),
        ("fdlr_nesterov", "central_ngd"), ("normalized_dgd", "central_ngd"),
    )
    graph1 = generate_named_graph("complete", 1)
    mixing1 = build_mixing_matrix(graph1)
    from .data import partition_dataset

    part1 = partition_dataset(dataset, 1, seed=seed)
    worst = 0.0
    for kind in LOSS_KINDS:
        model = make_loss_model(kind, dataset)
        for algo, central in pairs:
            gamma = 0.7 if algo == "fdlr_nesterov" else 0.0
            kw = dict(eta=0.05, T=30, gamma_momentum=gamma, record_every=1)
            ta = engine.run(algo, dataset, part1, mixing1, model, **kw)
            tb = engine.run(central, dataset, part1, mixing1, model, **kw)
            worst = max(worst, float(np.max(np.abs(ta.W_final - tb.W_final))))
            worst = max(
                worst,
                float(np.max(np.abs(ta.train_loss_mean - tb.train_loss_mean))),
            )
    rows.append(
        SuiteRow("engine", "single_agent_collapse", worst <= 1e-12, f"max_gap={worst:.3e}")
    )
    graph = generate_erdos_renyi(5, 0.6, seed=seed)
    mixing = build_mixing_matrix(graph)
    part = partition_dataset(dataset, 5, seed=seed)
    model = make_loss_model("logistic", dataset)
    t1 = engine.run("dgt", dataset, part, mixing, model, eta=0.05, T=60)
    t2 = engine.run("dgt", dataset, part, mixing, model, eta=0.05, T=60)
    same = np.array_equal(t1.W_final, t2.W_final) and np.array_equal(
        t1.train_loss_mean, t2.train_loss_mean
    )
    rows.append(SuiteRow("engine", "determinism", same, "re-run is bitwise identical"))
    state = engine.make_state("dgt", dataset, part, model, eta=0.05)
    gsum = engine.local_gradients(state.W, model, dataset, part).sum(axis=0)
    vsum = state.V.sum(axis=0)
    gap = float(np.max(np.abs(gsum - vsum)))
    rows.append(SuiteRow("engine", "tracker_init", gap <= 1e-12, f"max_gap={gap:.3e}"))


def _suite_bounds(seed: int, eta_scale: float, rows: list[SuiteRow]) -> None:
    from .data import partition_dataset

    n_agents = 5
    graph = generate_erdos_renyi(n_agents, 0.6, seed=seed)
    mixing = build_mixing_matrix(graph)

    ds_log = generate_signed_measurements(60, 10, seed=seed)
    part_log = partition_dataset(ds_log, n_agents, seed=seed)
    model_log = make_loss_model("logistic", ds_log)
    rules_log = engine.compute_step_rules(mixing, model_log, n_agents)
    eta_rec = 0.9 * (1.0 - mixing.lam) / (4.0 * model_log.L) * eta_scale
    traj = engine.run("dgd", ds_log, part_log, mixing, model_log, eta=eta_rec, T=300)
    rep = check_consensus_recursion(traj, mixing, model_log)
    rows.append(
        SuiteRow("bounds", "consensus_recursion", rep.ok,
                 f"violations={rep.violations} pre={rep.preconditions_met}")
    )
    eta_cvx = 0.9 * rules_log.eta_max_convex * eta_scale
    traj = engine.run("dgd", ds_log, part_log, mixing, model_log, eta=eta_cvx, T=300)
    rep = check_train_bound_convex(traj, model_log, ds_log, mixing)
    rows.append(
        SuiteRow("bounds", "train_bound_convex", rep.ok,
                 f"violations={rep.violations} pre={rep.preconditions_met}")
    )

    ds_exp = generate_signed_measurements(60, 10, seed=seed + 1)
    part_exp = partition_dataset(ds_exp, n_agents, seed=seed)
    model_exp = make_loss_model("exponential", ds_exp)
    f0 = risk(model_exp, np.zeros(ds_exp.d), ds_exp.signed)
    rules_exp = engine.compute_step_rules(mixing, model_exp, n_agents, F_at_init=f0)
    eta_exp = 0.9 * rules_exp.eta_default * eta_scale
    traj = engine.run("dgd", ds_exp, part_exp, mixing, model_exp, eta=eta_exp, T=300)
    rep = check_descent(traj)
    rows.append(
        SuiteRow("bounds", "descent", rep.ok,
                 f"violations={rep.violations} pre={rep.preconditions_met}")
    )
    rep = check_sandwich(traj, model_exp, mixing)
    rows.append(
        SuiteRow("bounds", "sandwich", rep.ok,
                 f"violations={rep.violations} pre={rep.preconditions_met}")
    )

    ds_sq = generate_signed_measurements(8, 32, seed=seed)
    graph_sq = generate_named_graph("complete", 4)
    mixing_sq = build_mixing_matrix(graph_sq)
    part_sq = partition_dataset(ds_sq, 4, seed=seed)
    model_sq = make_loss_model("squared", ds_sq)
    rules_sq = engine.compute_step_rules(mixing_sq, model_sq, 4)
    eta_pl = 0.9 * rules_sq.eta_max_pl * eta_scale
    traj = engine.run("dgd", ds_sq, part_sq, mixing_sq, model_sq, eta=eta_pl, T=300)
    rep = check_pl_linear_convergence(traj, model_sq.mu, eta_pl, model=model_sq, mixing=mixing_sq)
    rows.append(
        SuiteRow("bounds", "pl_linear_convergence", rep.ok,
                 f"violations={rep.violations} pre={rep.preconditions_met}")
    )


def run_verify_suite(suite: str, seed: int, eta_scale: float = 1.0) -> list[SuiteRow]:
    rows: list[SuiteRow] = []
    if suite in ("mixing", "all"):
        _suite_mixing(seed, rows)
    if suite in ("losses", "all"):
        _suite_losses(seed, rows)
    if suite in ("engine", "all"):
        _suite_engine(seed, rows)
    if suite in ("bounds", "all"):
        _suite_bounds(seed, eta_scale, rows)
    return rows


# ---------------------------------------------------------------------------
# commands


def _say(args, *parts) -> None:
    if not args.quiet:
        print(*parts)


def _out_root(args) -> str:
    if args.out:
        return args.out
    return os.environ.get("CSL_OUT_DIR", "out")


def _bundle_status(args, bundle: harness.RunBundle) -> int:
    for label, traj in sorted(bundle.trajectories.items()):
        note = f" ABORTED({traj.abort_reason})" if traj.aborted else ""
        _say(
            args,
            f"  {label:<24} T_rec={traj.t[-1]:<8g} train_loss={traj.train_loss_mean[-1]:.6g} "
            f"consensus_sq={traj.consensus_sq[-1]:.3e}{note}",
        )
    for label, reason in sorted(bundle.errors.items()):
        _say(args, f"  {label:<24} FAILED: {reason}")
    for key, rep in sorted(bundle.reports.items()):
        _say(
            args,
            f"  check {key:<36} {'PASS' if rep.ok else 'FAIL'} "
            f"violations={rep.violations}",
        )
    return EXIT_ENGINE_ABORT if bundle.any_aborted else EXIT_OK


def cmd_run(args) -> int:
    with open(args.config, encoding="utf-8") as fh:
        config = harness.ExperimentConfig.from_json(fh.read())
    if args.scale == "desk":
        config = harness.desk_variant(config)
    out_root = _out_root(args)
    bundle = harness.run_experiment(config, out_dir=out_root)
    _say(args, f"{config.name}: wrote {bundle.out_dir} (hash {config.config_hash})")
    status = _bundle_status(args, bundle)
    if status != EXIT_OK:
        print(f"{config.name}: engine abort; partial outputs in {bundle.out_dir}",
              file=sys.stderr)
    return status


def _parse_sweep_value(text: str):
    for cast in (int, float):
        try:
            return cast(text)
        except ValueError:
            continue
    return text


def cmd_sweep(args) -> int:
    with open(args.config, encoding="utf-8") as fh:
        config = harness.ExperimentConfig.from_json(fh.read())
    if args.scale == "desk":
        config = harness.desk_variant(config)
    values = [_parse_sweep_value(v) for v in args.values.split(",") if v != ""]
    if not values:
        raise harness.ConfigError("sweep needs at least one value")
    result = harness.sweep(config, args.parameter, values, out_dir=_out_root(args))
    _say(args, result.summary)
    if result.errors and not any(b is not None for b in result.bundles):
        print("sweep: every value failed", file=sys.stderr)
        return EXIT_ENGINE_ABORT
    return EXIT_OK


def cmd_reproduce(args) -> int:
    out_root = _out_root(args)
    bundles = harness.reproduce(args.figure, args.scale, seed=args.seed, out_dir=out_root)
    status = EXIT_OK
    for bundle in bundles:
        _say(args, f"{bundle.config.name}: wrote {bundle.out_dir} "
                   f"({bundle.wall_time:.2f}s)")
        status = max(status, _bundle_status(args, bundle))
    plots = _figure_plots(args.figure, args.scale, bundles, out_root)
    for path in plots:
        _say(args, f"plot: {path}")
    return status


def cmd_verify(args) -> int:
    rows = run_verify_suite(args.suite, args.seed, eta_scale=args.eta_scale)
    width = max(len(r.check) for r in rows)
    failed = [r for r in rows if not r.ok]
    if not args.quiet:
        for r in rows:
            print(f"{r.suite:<8} {r.check:<{width}}  {'PASS' if r.ok else 'FAIL'}  {r.detail}")
        print(f"{len(rows) - len(failed)}/{len(rows)} checks passed")
    if failed:
        for r in failed:
            print(f"verify: FAIL {r.suite}:{r.check} ({r.detail})", file=sys.stderr)
        return EXIT_VERIFY_FAILED
    return EXIT_OK


def cmd_fit_rate(args) -> int:
    traj = Trajectory.from_csv(args.csv)
    fit = fit_rate(traj, args.field, window_fraction=args.window)
    _say(
        args,
        f"{args.field}: exponent={fit.exponent:.4f} r2={fit.r_squared:.4f} "
        f"window=[{fit.t_lo:g}, {fit.t_hi:g}] points={fit.n_points}",
    )
    return EXIT_OK


def _build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0, help="base RNG seed")
    common.add_argument("--out", default=None,
                        help="output root (default: $CSL_OUT_DIR or ./out)")
    common.add_argument("--scale", choices=harness.SCALES, default="paper",
                        help="canned-config scale")
    common.add_argument("--quiet", action="store_true", help="suppress progress output")

    parser = argparse.ArgumentParser(
        prog="csl",
        description="Decentralized gradient-method simulator and verification harness.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", parents=[common], help="run one experiment config")
    p.add_argument("--config", required=True, help="JSON config path")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep", parents=[common], help="run a config over parameter values")
    p.add_argument("--config", required=True, help="JSON config path")
    p.add_argument("--parameter", required=True,
                   help="e.g. T, loss, eta, eta:<label>, dataset.n, topology.p_connect")
    p.add_argument("--values", required=True, help="comma-separated values")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("reproduce", parents=[common],
                       help="run a canned figure setup and emit plots")
    p.add_argument("--figure", required=True, choices=harness.FIGURE_NAMES)
    p.set_defaults(func=cmd_reproduce)

    p = sub.add_parser("verify", parents=[common], help="run invariant suites")
    p.add_argument("--suite", default="all", choices=VERIFY_SUITES)
    p.add_argument("--eta-scale", type=float, default=1.0,
                   help="multiply rule step sizes (negative control when > 1)")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("fit-rate", parents=[common],
                       help="fit a log-log tail exponent to a trajectory column")
    p.add_argument("--csv", required=True, help="trajectory CSV path")
    p.add_argument("--field", required=True,
                   choices=[c for c in TRAJECTORY_COLUMNS if c not in ("t", "eta")])
    p.add_argument("--window", type=float, default=0.5,
                   help="tail fraction of the time span to fit")
    p.set_defaults(func=cmd_fit_rate)
    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits 2 on usage errors and 0 on --help
        return int(exc.code) if exc.code is not None else EXIT_OK
    try:
        return args.func(args)
    except (harness.ConfigError, PlotDataError) as exc:
        print(f"csl: {exc}", file=sys.stderr)
        return EXIT_BAD_CONFIG
    except FileNotFoundError as exc:
        print(f"csl: {exc}", file=sys.stderr)
        return EXIT_BAD_CONFIG
    except ValueError as exc:
        print(f"csl: {exc}", file=sys.stderr)
        return EXIT_BAD_CONFIG
    except engine.EngineAbort as exc:
        print(f"csl: engine abort: {exc}", file=sys.stderr)
        return EXIT_ENGINE_ABORT


if __name__ == "__main__":
    sys.exit(main())
