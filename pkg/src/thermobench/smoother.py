"""Local-linear tricube smoothing against a (circular) time-of-week covariate.

The smoother estimates conditional expectations such as E[x(k) | time of
week]. Samples that share a position are pooled through their sums, so a
season of stacked weeks costs no more than a single week. Bandwidths are in
position units (15-minute steps for the default grid).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import ConfigurationError, DegenerateWindowError, SelectionError


@dataclass(frozen=True)
class SmootherConfig:
    """Smoother settings.

    ``bandwidth=None`` means "choose by cross-validation over
    ``bandwidth_grid``". ``period`` is the circular period of the position
    covariate (672 for 15-minute time-of-week); ``0`` disables wrapping.
    """

    bandwidth: float | None = None
    kernel: str = "tricube"
    cv_folds: int = 5
    bandwidth_grid: tuple[float, ...] = (4.0, 8.0, 16.0, 32.0, 64.0)
    period: float = 672.0

    def __post_init__(self):
        if self.kernel != "tricube":
            raise ConfigurationError(f"unsupported kernel {self.kernel!r}")
        if self.bandwidth is not None and self.bandwidth <= 0:
            raise ConfigurationError("bandwidth must be positive")
        if self.cv_folds < 2:
            raise ConfigurationError("cv_folds must be at least 2")
        grid = tuple(float(h) for h in self.bandwidth_grid)
        if not grid or any(h <= 0 for h in grid) or list(grid) != sorted(grid):
            raise ConfigurationError("bandwidth_grid must be sorted positive values")
        object.__setattr__(self, "bandwidth_grid", grid)


@dataclass(frozen=True)
class SmoothedSeries:
    values: np.ndarray
    bandwidth_used: float


def tricube_weight(scaled_distance):
    """``(1 - |d|^3)^3`` inside the unit interval, zero outside."""
    d = np.abs(np.asarray(scaled_distance, dtype=float))
    w = np.where(d < 1.0, (1.0 - d ** 3) ** 3, 0.0)
    return float(w) if w.ndim == 0 else w


def _group(series, positions):
    y = np.asarray(series, dtype=float)
    squeeze = y.ndim == 1
    y2 = y[:, None] if squeeze else y
    pos = np.asarray(positions, dtype=float)
    if pos.ndim != 1 or pos.size != y2.shape[0]:
        raise ConfigurationError("series and positions must have matching lengths")
    upos, inverse, counts = np.unique(pos, return_inverse=True, return_counts=True)
    sums = np.zeros((upos.size, y2.shape[1]))
    np.add.at(sums, inverse, y2)
    return upos, counts.astype(float), sums, squeeze


def _evaluate(upos, counts, sums, eval_pos, bandwidth, period):
    return kernels.lwlr_grouped(upos, counts, sums, eval_pos, bandwidth, period)


def lwlr_smooth(series, positions, cfg: SmootherConfig | None = None,
                eval_positions=None, bandwidth: float | None = None) -> SmoothedSeries:
    """Locally weighted linear regression of ``series`` on ``positions``.

    Each output value comes from a tricube-weighted affine fit over the
    samples within ``bandwidth`` of the evaluation position, evaluated at
    that position. ``series`` may be a matrix; columns are smoothed
    independently with identical weights. When neither ``bandwidth`` nor
    ``cfg.bandwidth`` is set the bandwidth is chosen by
    :func:`select_bandwidth`.

    Raises
    ------
    DegenerateWindowError
        If some evaluation window holds fewer than two distinct positions.
    """
    cfg = cfg or SmootherConfig()
    h = bandwidth if bandwidth is not None else cfg.bandwidth
    if h is None:
        h = select_bandwidth(series, positions, cfg)
    upos, counts, sums, squeeze = _group(series, positions)
    ev = np.asarray(positions if eval_positions is None else eval_positions, dtype=float)
    values, ok = _evaluate(upos, counts, sums, ev, h, cfg.period)
    if not ok.all():
        bad = ev[~ok]
        raise DegenerateWindowError(
            f"bandwidth {h} leaves {bad.size} evaluation window(s) with fewer than "
            f"two distinct positions (first at position {bad[0]:g})")
    return SmoothedSeries(values[:, 0] if squeeze else values, float(h))


def _fold_bounds(n, k):
    edges = np.linspace(0, n, k + 1).round().astype(int)
    return list(zip(edges[:-1], edges[1:]))


def cv_errors(series, positions, cfg: SmootherConfig) -> np.ndarray:
    """Mean held-out squared error for each grid bandwidth (``inf`` if degenerate)."""
    y = np.asarray(series, dtype=float)
    y2 = y[:, None] if y.ndim == 1 else y
    pos = np.asarray(positions, dtype=float)
    n = y2.shape[0]
    if n < cfg.cv_folds:
        raise ConfigurationError("series shorter than the number of folds")
    folds = _fold_bounds(n, cfg.cv_folds)
    errs = np.empty(len(cfg.bandwidth_grid))
    for i, h in enumerate(cfg.bandwidth_grid):
        total = 0.0
        for lo, hi in folds:
            train = np.ones(n, dtype=bool)
            train[lo:hi] = False
            upos, counts, sums, _ = _group(y2[train], pos[train])
            pred, ok = _evaluate(upos, counts, sums, pos[lo:hi], h, cfg.period)
            if not ok.all():
                total = np.inf
                break
            total += float(np.sum((pred - y2[lo:hi]) ** 2))
        errs[i] = total / (n * y2.shape[1])
    return errs


def select_bandwidth(series, positions, cfg: SmootherConfig | None = None) -> float:
    """Grid bandwidth with the smallest k-fold (contiguous block) CV error.

    Near-ties are resolved toward the larger bandwidth.
    """
    cfg = cfg or SmootherConfig()
    grid = cfg.bandwidth_grid
    if len(grid) == 1:
        return grid[0]
    errs = cv_errors(series, positions, cfg)
    finite = np.isfinite(errs)
    if not finite.any():
        raise SelectionError("every grid bandwidth gives a degenerate window in cross-validation")
    best = errs[finite].min()
    y = np.asarray(series, dtype=float)
    scale = float(np.mean(y ** 2))
    tol = 1e-9 * best + 1e-14 * scale
    candidates = [h for h, e in zip(grid, errs) if np.isfinite(e) and e - best <= tol]
    return float(max(candidates))
