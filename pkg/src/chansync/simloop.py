"""Closed-loop sampled-data simulation of master-slave synchronization.

One simulate() call runs the whole feedback chain: the master evolves
autonomously; at every sampling instant its output is encoded to a single
bit, carried over an ideal (lossless, delay-free) channel, decoded, and held
constant over the sampling interval; the slave is driven by
u(t) = -K * (y2(t) - ybar1[k]) with the held value.  Master and slave are
integrated with a fixed-step RK4 scheme whose step is exactly Ts/substeps,
so sampling instants always fall on integration grid points and runs are
bit-for-bit reproducible.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import _kernels, codec
from .codec import CodecConfig, CodecState
from .sysmodel import ChuaNonlinearity, DivergenceError, LurieSystem, master_rhs, slave_rhs

# Optimal-sampling constant for the one-bit coder: Ts = Delta / (BETA * L_y).
BETA = 1.688

# Fraction of the horizon treated as "near steady state" by accuracy indexes.
WINDOW_FRACTION = 0.8

# Full state histories are kept below this horizon; above it the stored
# trace is decimated 10:1 (metrics are streamed on the full grid either way).
DECIMATION_HORIZON = 100.0
DECIMATION_FACTOR = 10


@dataclass
class SimConfig:
    """Complete description of one closed-loop run."""

    system: LurieSystem
    codec: CodecConfig
    K: float
    x0: np.ndarray
    z0: np.ndarray
    t_fin: float
    substeps: int = 10

    def __post_init__(self):
        self.x0 = np.asarray(self.x0, dtype=float).reshape(-1)
        self.z0 = np.asarray(self.z0, dtype=float).reshape(-1)
        n = self.system.n
        if self.x0.shape != (n,) or self.z0.shape != (n,):
            raise ValueError(f"initial states must be length-{n} vectors")
        if not self.t_fin > 0.0:
            raise ValueError(f"t_fin must be positive, got {self.t_fin}")
        if self.substeps < 1:
            raise ValueError(f"substeps must be >= 1, got {self.substeps}")


@dataclass
class SimStats:
    """Streaming maxima computed on the full integration grid."""

    max_abs_y1: float
    max_x_norm: float
    max_abs_delta_window: float
    max_e_norm_window: float
    window_start: float


@dataclass
class FullSeries:
    """Per-sample series kept at full resolution even when the trace is decimated."""

    bits: np.ndarray            # transmitted bits, +/-1, one per interval
    M: np.ndarray               # coder range M[k]
    peak_delta: np.ndarray      # max |delta_y(t)| over interval [t_k, t_{k+1}]
    e_norm: np.ndarray          # ||z - x|| at each sampling instant


@dataclass
class Trace:
    """Recorded closed-loop run.

    The primary histories (times .. bits) share one stored time grid, which
    is every sampling instant for short runs and every DECIMATION_FACTOR-th
    instant for long ones.  ``full`` carries the cheap per-sample series at
    full resolution; ``stats`` carries streaming maxima over the full
    integration grid (so accuracy indexes do not depend on decimation).
    """

    times: np.ndarray
    x: np.ndarray
    z: np.ndarray
    y1: np.ndarray
    y2: np.ndarray
    ybar1: np.ndarray
    u: np.ndarray
    delta_y: np.ndarray
    M_history: np.ndarray
    bits: np.ndarray
    full: FullSeries
    saturation_count: int
    decimation: int
    n_intervals: int
    Ts: float
    horizon: float
    stats: Optional[SimStats] = None
    config: Optional[SimConfig] = None
    diverged: bool = False

    @property
    def e_norm(self) -> np.ndarray:
        """||z - x|| on the stored grid."""
        return np.linalg.norm(self.z - self.x, axis=1)


def _python_closed_loop(cfg: SimConfig, n_intervals: int, d: int, win_start: float):
    """Reference implementation of the loop; mirrors the compiled kernel."""
    system, ccfg = cfg.system, cfg.codec
    n = system.n
    Ts, m = ccfg.Ts, cfg.substeps
    h = Ts / m
    S = (n_intervals + d - 1) // d

    t_s = np.zeros(S)
    xs = np.zeros((S, n))
    zs = np.zeros((S, n))
    y1s = np.zeros(S)
    y2s = np.zeros(S)
    ybars = np.zeros(S)
    us = np.zeros(S)
    dys = np.zeros(S)
    bits = np.zeros(n_intervals, dtype=np.int8)
    Ms = np.zeros(n_intervals)
    peak_dy = np.zeros(n_intervals)
    e_norm = np.zeros(n_intervals)

    x = cfg.x0.copy()
    z = cfg.z0.copy()
    coder = CodecState()
    decoder = CodecState()
    sat_count = 0
    max_abs_y1 = 0.0
    max_x_norm = 0.0
    max_dy_win = 0.0
    max_e_win = 0.0
    stored = 0
    completed = 0
    diverged = False
    win_edge = win_start - 1e-12
    C = system.C

    # Overflow on the way to a detected divergence is expected, not a warning.
    with np.errstate(over="ignore", invalid="ignore"):
        for k in range(n_intervals):
            tk = k * Ts
            y1 = float(C @ x)
            y2 = float(C @ z)
            Mk = codec.range_at(k, ccfg)
            bit, coder, saturated = codec.coder_step(coder, ccfg, y1)
            if saturated:
                sat_count += 1
            ybar, decoder = codec.decoder_step(decoder, ccfg, bit)
            u0 = -cfg.K * (y2 - ybar)
            delta = y1 - ybar

            bits[k] = bit
            Ms[k] = Mk
            en = float(np.linalg.norm(z - x))
            xn = float(np.linalg.norm(x))
            e_norm[k] = en
            max_abs_y1 = max(max_abs_y1, abs(y1))
            max_x_norm = max(max_x_norm, xn)
            peak = abs(delta)
            if tk >= win_edge:
                max_dy_win = max(max_dy_win, peak)
                max_e_win = max(max_e_win, en)

            if k % d == 0:
                t_s[stored] = tk
                xs[stored] = x
                zs[stored] = z
                y1s[stored] = y1
                y2s[stored] = y2
                ybars[stored] = ybar
                us[stored] = u0
                dys[stored] = delta
                stored += 1

            ok = True
            for j in range(m):
                x = _rk4_state(system, x, h, None)
                z = _rk4_state(system, z, h, (cfg.K, ybar))
                if not (np.all(np.isfinite(x)) and np.all(np.isfinite(z))):
                    ok = False
                    break
                t = tk + (j + 1) * h
                y1 = float(C @ x)
                ad = abs(y1 - ybar)
                peak = max(peak, ad)
                max_abs_y1 = max(max_abs_y1, abs(y1))
                xn = float(np.linalg.norm(x))
                max_x_norm = max(max_x_norm, xn)
                if t >= win_edge:
                    max_dy_win = max(max_dy_win, ad)
                    max_e_win = max(max_e_win, float(np.linalg.norm(z - x)))
            peak_dy[k] = peak
            completed = k + 1
            if not ok:
                diverged = True
                break

    return (
        stored,
        completed,
        int(diverged),
        sat_count,
        t_s,
        xs,
        zs,
        y1s,
        y2s,
        ybars,
        us,
        dys,
        bits,
        Ms,
        peak_dy,
        e_norm,
        max_abs_y1,
        max_x_norm,
        max_dy_win,
        max_e_win,
    )


def _rk4_state(system: LurieSystem, s: np.ndarray, h: float, held) -> np.ndarray:
    """RK4 step for master (held=None) or slave with held decoded output."""
    if held is None:
        f = lambda v: master_rhs(system, v)
    else:
        K, ybar = held
        C = system.C
        f = lambda v: slave_rhs(system, v, -K * (float(C @ v) - ybar))
    k1 = f(s)
    k2 = f(s + 0.5 * h * k1)
    k3 = f(s + 0.5 * h * k2)
    k4 = f(s + h * k3)
    return s + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def simulate(cfg: SimConfig, *, decimation: Optional[int] = None, engine: str = "auto") -> Trace:
    """Run the closed loop and record a Trace.

    Fully deterministic: identical configs produce bit-identical traces.
    ``decimation`` overrides the storage rule (None applies the 10:1 rule
    above DECIMATION_HORIZON).  ``engine`` selects "numba" (compiled fast
    path, requires the piecewise-linear Chua nonlinearity), "python"
    (reference loop), or "auto".  Raises DivergenceError (carrying the
    partial trace) if either state leaves the finite range.
    """
    Ts = cfg.codec.Ts
    n_intervals = max(1, int(math.ceil(cfg.t_fin / Ts - 1e-9)))
    horizon = n_intervals * Ts
    win_start = WINDOW_FRACTION * horizon
    if decimation is None:
        d = DECIMATION_FACTOR if cfg.t_fin > DECIMATION_HORIZON else 1
    else:
        if decimation < 1:
            raise ValueError("decimation must be >= 1")
        d = decimation

    chua_like = isinstance(cfg.system.phi, ChuaNonlinearity)
    if engine == "auto":
        use_kernel = _kernels.HAVE_NUMBA and chua_like
    elif engine == "numba":
        if not (_kernels.HAVE_NUMBA and chua_like):
            raise ValueError("numba engine requires numba and a ChuaNonlinearity phi")
        use_kernel = True
    elif engine == "python":
        use_kernel = False
    else:
        raise ValueError(f"unknown engine {engine!r}")

    if use_kernel:
        phi = cfg.system.phi
        raw = _kernels.closed_loop_kernel(
            cfg.system.A,
            cfg.system.B,
            cfg.system.C,
            phi.m0,
            phi.m1,
            float(cfg.K),
            cfg.x0,
            cfg.z0,
            Ts,
            cfg.substeps,
            n_intervals,
            cfg.codec.M0,
            cfg.codec.M_inf,
            cfg.codec.rho,
            win_start,
            d,
        )
    else:
        raw = _python_closed_loop(cfg, n_intervals, d, win_start)

    (
        stored,
        completed,
        diverged,
        sat_count,
        t_s,
        xs,
        zs,
        y1s,
        y2s,
        ybars,
        us,
        dys,
        bits,
        Ms,
        peak_dy,
        e_norm,
        max_abs_y1,
        max_x_norm,
        max_dy_win,
        max_e_win,
    ) = raw

    if diverged:
        stored = (completed - 1) // d + 1
    full = FullSeries(
        bits=bits[:completed],
        M=Ms[:completed],
        peak_delta=peak_dy[:completed],
        e_norm=e_norm[:completed],
    )
    stats = SimStats(
        max_abs_y1=float(max_abs_y1),
        max_x_norm=float(max_x_norm),
        max_abs_delta_window=float(max_dy_win),
        max_e_norm_window=float(max_e_win),
        window_start=win_start,
    )
    trace = Trace(
        times=t_s[:stored],
        x=xs[:stored],
        z=zs[:stored],
        y1=y1s[:stored],
        y2=y2s[:stored],
        ybar1=ybars[:stored],
        u=us[:stored],
        delta_y=dys[:stored],
        M_history=full.M[::d],
        bits=full.bits[::d],
        full=full,
        saturation_count=int(sat_count),
        decimation=d,
        n_intervals=completed if diverged else n_intervals,
        Ts=Ts,
        horizon=horizon,
        stats=None if diverged else stats,
        config=cfg,
        diverged=bool(diverged),
    )
    if diverged:
        t_div = completed * Ts
        raise DivergenceError(
            f"closed-loop state became non-finite near t={t_div:.6g} s",
            time=t_div,
            trace=trace,
        )
    return trace


def estimate_Ly(
    system: LurieSystem, x0, t_fin: float, h: float = 0.002
) -> float:
    """Bound on the master output rate: max |C * dx/dt| along one trajectory.

    Integrates the autonomous master over [0, t_fin] with fixed step h and
    takes the max over grid points, which stands in for the supremum over
    the invariant set the trajectory samples.
    """
    if not (t_fin > 0.0 and h > 0.0):
        raise ValueError("t_fin and h must be positive")
    x0 = np.asarray(x0, dtype=float).reshape(-1)
    if x0.shape != (system.n,):
        raise ValueError(f"x0 must be a length-{system.n} vector")
    n_steps = int(math.ceil(t_fin / h - 1e-9))

    if _kernels.HAVE_NUMBA and isinstance(system.phi, ChuaNonlinearity):
        rate, diverged, step = _kernels.output_rate_kernel(
            system.A, system.B, system.C, system.phi.m0, system.phi.m1, x0, h, n_steps
        )
        if diverged:
            raise DivergenceError(
                f"master trajectory became non-finite near t={step * h:.6g} s",
                time=step * h,
            )
        return float(rate)

    x = x0.copy()
    best = abs(float(system.C @ master_rhs(system, x)))
    with np.errstate(over="ignore", invalid="ignore"):
        for step in range(n_steps):
            x = _rk4_state(system, x, h, None)
            if not np.all(np.isfinite(x)):
                raise DivergenceError(
                    f"master trajectory became non-finite near t={(step + 1) * h:.6g} s",
                    time=(step + 1) * h,
                )
            best = max(best, abs(float(system.C @ master_rhs(system, x))))
    return best


def sampling_bound(Delta: float, L_y: float) -> float:
    """Supremum of admissible sampling intervals for transmission-error level Delta."""
    if not (Delta > 0.0 and L_y > 0.0):
        raise ValueError("Delta and L_y must be positive")
    return Delta / L_y


def optimal_sampling(Delta: float, L_y: float) -> float:
    """Rate-optimal sampling interval Delta / (BETA * L_y) for the one-bit coder."""
    if not (Delta > 0.0 and L_y > 0.0):
        raise ValueError("Delta and L_y must be positive")
    return Delta / (BETA * L_y)


def bit_rate(Ts: float) -> float:
    """Channel bit rate 1/Ts (the binary coder sends one bit per sample)."""
    if not Ts > 0.0:
        raise ValueError(f"sampling time must be positive, got {Ts}")
    return 1.0 / Ts


def export_trace_csv(trace: Trace, path) -> None:
    """Write the stored grid as CSV with 17-significant-digit floats.

    Header for n states: t,x1..xn,z1..zn,y1,ybar1,y2,u,delta_y,M.
    """
    n = trace.x.shape[1]
    header = (
        "t,"
        + ",".join(f"x{i + 1}" for i in range(n))
        + ","
        + ",".join(f"z{i + 1}" for i in range(n))
        + ",y1,ybar1,y2,u,delta_y,M"
    )
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(header + "\n")
        for i in range(trace.times.shape[0]):
            row = [trace.times[i]]
            row.extend(trace.x[i])
            row.extend(trace.z[i])
            row.extend(
                [
                    trace.y1[i],
                    trace.ybar1[i],
                    trace.y2[i],
                    trace.u[i],
                    trace.delta_y[i],
                    trace.M_history[i],
                ]
            )
            fh.write(",".join(f"{v:.17g}" for v in row) + "\n")
