"""Accuracy indexes, rate sweeps, and the inverse-proportional law fits.

Two dimensionless indexes summarize a run near steady state (the last 20%
of the horizon): Q_y compares the worst transmission error against the
output swing, Q compares the worst synchronization-error norm against the
state swing.  Sweeping the error level Delta (hence the bit rate R = 1/Ts)
and fitting Q_y = G_y / R and Q = G / R recovers the hyperbolic accuracy
laws; sweeping the controller gain K shows the error plateau for large K.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from typing import Iterable, Optional, Sequence

import numpy as np

from .codec import CodecConfig
from .simloop import (
    SimConfig,
    Trace,
    WINDOW_FRACTION,
    bit_rate,
    optimal_sampling,
    simulate,
)
from .sysmodel import DivergenceError

# Continuous zoom rate: rho = exp(-ZOOM_RATE * Ts), so the coder range decays
# with time constant 1/ZOOM_RATE seconds regardless of the sampling time.
ZOOM_RATE = 0.1


@dataclass
class SweepPoint:
    """One error-level sweep result; ok=False marks a diverged run."""

    delta: float
    Ts: float
    R: float
    Qy: float
    Q: float
    ok: bool = True


@dataclass
class GainPoint:
    """One controller-gain sweep result."""

    K: float
    Q: float
    ok: bool = True


def derive_codec_config(
    delta: float, M0: float, Ly: float
) -> CodecConfig:
    """Per-run coder settings derived from the error level Delta.

    Ts is the rate-optimal interval, the limit range is Delta/2 (so the
    steady transmission error stays within Delta), and rho realizes the
    fixed continuous zoom rate at that Ts.
    """
    if not delta > 0.0:
        raise ValueError(f"Delta must be positive, got {delta}")
    Ts = optimal_sampling(delta, Ly)
    return CodecConfig(M0=M0, M_inf=delta / 2.0, rho=math.exp(-ZOOM_RATE * Ts), Ts=Ts)


def _window_values(times: np.ndarray, values: np.ndarray, start: float) -> np.ndarray:
    mask = times >= start - 1e-12
    if not np.any(mask):
        raise ValueError("steady-state window contains no stored samples")
    return values[mask]


def relative_transmission_error(trace: Trace, t_fin: Optional[float] = None) -> float:
    """max |delta_y| over the steady window divided by max |y1| over the run.

    Uses the streaming maxima recorded during simulation when they apply
    (exact on the full integration grid); otherwise falls back to the stored
    arrays, e.g. for synthetic traces.
    """
    if trace.stats is not None and (t_fin is None or abs(t_fin - trace.horizon) <= trace.Ts):
        denom = trace.stats.max_abs_y1
        num = trace.stats.max_abs_delta_window
    else:
        horizon = trace.horizon if t_fin is None else t_fin
        num = float(np.max(np.abs(_window_values(trace.times, trace.delta_y, WINDOW_FRACTION * horizon))))
        denom = float(np.max(np.abs(trace.y1)))
    if denom == 0.0:
        raise ValueError("output history is identically zero")
    return num / denom


def normalized_sync_error(trace: Trace, t_fin: Optional[float] = None) -> float:
    """max ||z - x|| over the steady window divided by max ||x|| over the run."""
    if trace.stats is not None and (t_fin is None or abs(t_fin - trace.horizon) <= trace.Ts):
        denom = trace.stats.max_x_norm
        num = trace.stats.max_e_norm_window
    else:
        horizon = trace.horizon if t_fin is None else t_fin
        e = np.linalg.norm(trace.z - trace.x, axis=1)
        num = float(np.max(_window_values(trace.times, e, WINDOW_FRACTION * horizon)))
        denom = float(np.max(np.linalg.norm(trace.x, axis=1)))
    if denom == 0.0:
        raise ValueError("state history is identically zero")
    return num / denom


def transient_time(trace: Trace, factor: float = 3.0, level_quantile: float = 0.95) -> float:
    """Time after which ||e(t)|| stays below factor times its steady level.

    The steady level is a high quantile (default 95th percentile) of ||e||
    at sampling instants inside the steady window; the plain window max is a
    poor level estimate for chaotic errors because it is dominated by rare
    excursions.  Returns 0 when the threshold is never exceeded.
    """
    e = trace.full.e_norm
    n = e.shape[0]
    times = np.arange(n) * trace.Ts
    start = trace.stats.window_start if trace.stats else WINDOW_FRACTION * trace.horizon
    window = e[times >= start - 1e-12]
    if window.size == 0:
        raise ValueError("steady-state window contains no samples")
    threshold = factor * float(np.quantile(window, level_quantile))
    above = np.nonzero(e > threshold)[0]
    if above.size == 0:
        return 0.0
    return float((above[-1] + 1) * trace.Ts)


def fit_inverse_law(points: Iterable[tuple[float, float]]) -> float:
    """Closed-form least squares for Q = G / R: G = sum(Q/R) / sum(1/R^2).

    Points with non-positive R carry no information for the law and are
    ignored; raises if none remain.
    """
    num = 0.0
    den = 0.0
    used = 0
    for R, Q in points:
        if R <= 0.0:
            continue
        num += Q / R
        den += 1.0 / (R * R)
        used += 1
    if used == 0:
        raise ValueError("no points with positive rate R")
    return num / den


def run_delta_sweep(
    base: SimConfig,
    deltas: Sequence[float],
    Ly: float = 45.0,
    jobs: int = 1,
) -> list[SweepPoint]:
    """Run one closed loop per error level Delta and collect (R, Q_y, Q).

    Each point derives its own coder settings from Delta (see
    derive_codec_config); diverged points are flagged, not fatal.  Points
    come back sorted by rate R.
    """
    deltas = [float(d) for d in deltas]
    if not deltas:
        raise ValueError("deltas must be non-empty")
    if any(d <= 0.0 for d in deltas):
        raise ValueError("all deltas must be positive")
    tasks = [(replace(base, codec=derive_codec_config(d, base.codec.M0, Ly)), d) for d in deltas]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            points = list(pool.map(_delta_worker, tasks))
    else:
        points = [_delta_worker(t) for t in tasks]
    points.sort(key=lambda pt: pt.R)
    return points


def _delta_worker(task: tuple[SimConfig, float]) -> SweepPoint:
    cfg, delta = task
    Ts = cfg.codec.Ts
    R = bit_rate(Ts)
    try:
        trace = simulate(cfg)
    except DivergenceError:
        return SweepPoint(delta=delta, Ts=Ts, R=R, Qy=math.nan, Q=math.nan, ok=False)
    return SweepPoint(
        delta=delta,
        Ts=Ts,
        R=R,
        Qy=relative_transmission_error(trace),
        Q=normalized_sync_error(trace),
    )


def run_gain_sweep(
    base: SimConfig, gains: Sequence[float], jobs: int = 1
) -> list[GainPoint]:
    """Fix the coder settings of ``base`` and vary the controller gain K."""
    gains = [float(g) for g in gains]
    if not gains:
        raise ValueError("gains must be non-empty")
    tasks = [replace(base, K=g) for g in gains]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            points = list(pool.map(_gain_worker, tasks))
    else:
        points = [_gain_worker(t) for t in tasks]
    return points


def _gain_worker(cfg: SimConfig) -> GainPoint:
    try:
        trace = simulate(cfg)
    except DivergenceError:
        return GainPoint(K=cfg.K, Q=math.nan, ok=False)
    return GainPoint(K=cfg.K, Q=normalized_sync_error(trace))


def write_sweep_csv(points: Sequence[SweepPoint], path) -> None:
    """CSV of the Delta sweep: delta,Ts,R,Qy,Q,flag (flag=1 marks divergence)."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("delta,Ts,R,Qy,Q,flag\n")
        for pt in points:
            fh.write(
                f"{pt.delta:.17g},{pt.Ts:.17g},{pt.R:.17g},"
                f"{pt.Qy:.17g},{pt.Q:.17g},{0 if pt.ok else 1}\n"
            )


def write_gain_csv(points: Sequence[GainPoint], path) -> None:
    """CSV of the gain sweep: K,Q,flag."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("K,Q,flag\n")
        for pt in points:
            fh.write(f"{pt.K:.17g},{pt.Q:.17g},{0 if pt.ok else 1}\n")


def fit_summary(points: Sequence[SweepPoint]) -> str:
    """Fit both hyperbolic laws over the valid sweep points and report residuals."""
    valid = [pt for pt in points if pt.ok]
    if not valid:
        raise ValueError("no valid sweep points to fit")
    Gy = fit_inverse_law((pt.R, pt.Qy) for pt in valid)
    G = fit_inverse_law((pt.R, pt.Q) for pt in valid)
    res_y = math.sqrt(sum((pt.Qy - Gy / pt.R) ** 2 for pt in valid) / len(valid))
    res = math.sqrt(sum((pt.Q - G / pt.R) ** 2 for pt in valid) / len(valid))
    lines = [
        f"points used = {len(valid)} (flagged excluded: {len(points) - len(valid)})",
        f"G_y = {Gy:.12g}   (fit of Q_y = G_y / R)",
        f"G = {G:.12g}   (fit of Q = G / R)",
        f"rms residual Q_y = {res_y:.12g}",
        f"rms residual Q = {res:.12g}",
    ]
    return "\n".join(lines) + "\n"
