"""Offline diagnostics: loss tracking fits, loss/gradient-norm ordering and
cross-strategy summaries of metrics logs."""
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.stats import rankdata

from .errors import ShapeError

ORDERING_WINDOW = 50


@dataclass(frozen=True)
class TrackingFit:
    a: float
    b: float
    n: int


def tracking_coefficients(predicted, actual):
    """Least-squares ``actual ~ a * predicted + b``.

    A predictor with variance below 1e-12 gives ``a = 0, b = mean(actual)``.
    """
    x = np.asarray(predicted, dtype=np.float64)
    y = np.asarray(actual, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise ShapeError(f"predicted {x.shape} and actual {y.shape} must be equal-length vectors")
    if x.size < 2:
        raise ValueError("need at least two pairs")
    xm, ym = x.mean(), y.mean()
    dx = x - xm
    var = float(dx @ dx) / x.size
    if var < 1e-12:
        return TrackingFit(0.0, float(ym), x.size)
    a = float(dx @ (y - ym)) / float(dx @ dx)
    return TrackingFit(a, float(ym - a * xm), x.size)


def spearman(x, y):
    """Spearman rank correlation with average ranks for ties.

    Without ties the closed form ``1 - 6 sum d^2 / (n (n^2 - 1))`` is used,
    which is exact for identical or reversed orderings.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape:
        raise ShapeError("inputs must have equal length")
    n = x.size
    rx, ry = rankdata(x), rankdata(y)
    if np.unique(x).size == n and np.unique(y).size == n:
        d = rx - ry
        return 1.0 - 6.0 * float(d @ d) / (n * (n * n - 1.0))
    rx -= rx.mean()
    ry -= ry.mean()
    denom = np.sqrt(float(rx @ rx) * float(ry @ ry))
    return float(rx @ ry) / denom if denom > 0 else 0.0


def moving_stats(values, window):
    """Moving mean and population std over full windows only."""
    v = np.asarray(values, dtype=np.float64)
    if v.size < window:
        return np.empty(0), np.empty(0)
    w = sliding_window_view(v, window)
    return w.mean(axis=1), w.std(axis=1)


@dataclass
class OrderingDiagnostic:
    spearman: float
    sorted_losses: np.ndarray
    moving_avg: np.ndarray
    moving_std: np.ndarray
    window: int = ORDERING_WINDOW


def loss_gnorm_ordering(losses, gnorms, window=ORDERING_WINDOW):
    """Losses sorted by gradient norm, their rank correlation and moving stats."""
    losses = np.asarray(losses, dtype=np.float64)
    gnorms = np.asarray(gnorms, dtype=np.float64)
    if losses.shape != gnorms.shape:
        raise ShapeError("losses and gradient norms must have equal length")
    if np.any(gnorms < 0):
        raise ValueError("gradient norms must be non-negative")
    ordered = losses[np.argsort(gnorms, kind="stable")]
    avg, std = moving_stats(ordered, window)
    return OrderingDiagnostic(spearman(losses, gnorms), ordered, avg, std, window)


def first_crossing(iterations, values, threshold):
    """First iteration whose value is <= threshold, or None."""
    hit = np.flatnonzero(np.asarray(values, dtype=np.float64) <= threshold)
    return int(iterations[hit[0]]) if hit.size else None


def _column(records, name):
    return np.array([np.nan if getattr(r, name) is None else getattr(r, name) for r in records], dtype=np.float64)


@dataclass
class ReportRow:
    label: str
    runs: int
    iterations: int
    loss_mean: float
    loss_std: float
    var_trace_mean: float
    var_trace_std: float
    iters_to_threshold_median: float
    iters_to_threshold_reached: int


@dataclass
class VarianceReport:
    rows: list
    series: dict  # label -> dict of moving-stat arrays on the common grid
    window: int
    threshold: float


def variance_report(logs, window=50, threshold=None):
    """Summarize metrics logs per label (usually per strategy cell).

    ``logs`` maps a label to a list of runs, each a list of metrics records.
    Runs under one label are averaged on their common iteration grid; moving
    mean/std over ``window`` of that average are reported, taking the value at
    the last full window.  Iterations-to-threshold scans each run's moving mean
    batch loss for its first crossing.
    """
    if not logs or any(len(runs) == 0 for runs in logs.values()):
        raise ValueError("no metrics logs to summarize")
    rows = []
    series = {}
    for label, runs in logs.items():
        grid = set(r.iteration for r in runs[0])
        for run in runs[1:]:
            grid &= set(r.iteration for r in run)
        grid = np.array(sorted(grid), dtype=np.int64)
        if grid.size == 0:
            raise ValueError(f"runs under {label!r} share no iterations")
        loss = np.zeros(grid.size)
        var = np.zeros(grid.size)
        crossings = []
        for run in runs:
            by_iter = {r.iteration: r for r in run}
            recs = [by_iter[i] for i in grid]
            run_loss = _column(recs, "batch_loss")
            loss += run_loss
            var += _column(recs, "var_trace")
            if threshold is not None:
                m, _ = moving_stats(run_loss, window)
                crossings.append(first_crossing(grid[window - 1:], m, threshold))
        loss /= len(runs)
        var /= len(runs)
        w = min(window, grid.size)
        lm, ls = moving_stats(loss, w)
        vm, vs = moving_stats(var, w)
        series[label] = {
            "iteration": grid[w - 1:],
            "loss_mean": lm,
            "loss_std": ls,
            "var_trace_mean": vm,
            "var_trace_std": vs,
        }
        reached = [c for c in crossings if c is not None]
        rows.append(
            ReportRow(
                label=label,
                runs=len(runs),
                iterations=int(grid.size),
                loss_mean=float(lm[-1]),
                loss_std=float(ls[-1]),
                var_trace_mean=float(vm[-1]),
                var_trace_std=float(vs[-1]),
                iters_to_threshold_median=float(np.median(reached)) if reached else None,
                iters_to_threshold_reached=len(reached),
            )
        )
    return VarianceReport(rows, series, window, threshold)
