"""Compiled inner loops for the closed-loop simulation.

The sampled-data loop is inherently sequential (the transmitted bit feeds
back into the slave), so it cannot be vectorized; these numba kernels make
1000-second sweeps run in seconds.  Semantics are identical to the pure
Python loop in simloop (which remains the reference implementation and the
fallback when numba is unavailable or the nonlinearity is a generic
callable).  No fastmath: operation order is fixed so runs are reproducible.
"""

from __future__ import annotations

import numpy as np

try:
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    HAVE_NUMBA = False

    def njit(*args, **kwargs):
        if args and callable(args[0]):
            return args[0]

        def deco(fn):
            return fn

        return deco


@njit(cache=True)
def _dot(v, x):
    s = 0.0
    for i in range(v.shape[0]):
        s += v[i] * x[i]
    return s


@njit(cache=True)
def _chua_phi(y, m0, m1):
    return m0 * y + m1 * (abs(y + 1.0) - abs(y - 1.0))


@njit(cache=True)
def _master_deriv(A, B, m0, m1, C, x, out):
    ph = _chua_phi(_dot(C, x), m0, m1)
    for i in range(A.shape[0]):
        s = 0.0
        for j in range(A.shape[1]):
            s += A[i, j] * x[j]
        out[i] = s + B[i] * ph


@njit(cache=True)
def _slave_deriv(A, B, m0, m1, C, K, ybar, z, out):
    y = _dot(C, z)
    ph = _chua_phi(y, m0, m1)
    u = -K * (y - ybar)
    for i in range(A.shape[0]):
        s = 0.0
        for j in range(A.shape[1]):
            s += A[i, j] * z[j]
        out[i] = s + B[i] * (ph + u)


@njit(cache=True)
def _rk4_pair(A, B, C, m0, m1, K, ybar, x, z, h, scratch):
    """One RK4 step of the (master, slave) pair; updates x, z in place."""
    n = A.shape[0]
    k1x = scratch[0]
    k2x = scratch[1]
    k3x = scratch[2]
    k4x = scratch[3]
    k1z = scratch[4]
    k2z = scratch[5]
    k3z = scratch[6]
    k4z = scratch[7]
    tx = scratch[8]
    tz = scratch[9]

    _master_deriv(A, B, m0, m1, C, x, k1x)
    _slave_deriv(A, B, m0, m1, C, K, ybar, z, k1z)
    for i in range(n):
        tx[i] = x[i] + 0.5 * h * k1x[i]
        tz[i] = z[i] + 0.5 * h * k1z[i]
    _master_deriv(A, B, m0, m1, C, tx, k2x)
    _slave_deriv(A, B, m0, m1, C, K, ybar, tz, k2z)
    for i in range(n):
        tx[i] = x[i] + 0.5 * h * k2x[i]
        tz[i] = z[i] + 0.5 * h * k2z[i]
    _master_deriv(A, B, m0, m1, C, tx, k3x)
    _slave_deriv(A, B, m0, m1, C, K, ybar, tz, k3z)
    for i in range(n):
        tx[i] = x[i] + h * k3x[i]
        tz[i] = z[i] + h * k3z[i]
    _master_deriv(A, B, m0, m1, C, tx, k4x)
    _slave_deriv(A, B, m0, m1, C, K, ybar, tz, k4z)
    for i in range(n):
        x[i] = x[i] + (h / 6.0) * (k1x[i] + 2.0 * k2x[i] + 2.0 * k3x[i] + k4x[i])
        z[i] = z[i] + (h / 6.0) * (k1z[i] + 2.0 * k2z[i] + 2.0 * k3z[i] + k4z[i])


@njit(cache=True)
def closed_loop_kernel(
    A, B, C, m0, m1, K, x0, z0, Ts, substeps, n_intervals, M0, M_inf, rho, win_start, d
):
    """Run the full sampled-data loop; see simloop.simulate for the contract.

    Returns stored (possibly decimated) per-sample rows, full-resolution
    per-sample series (bits, M, per-interval peak |delta_y|, ||e||), and
    streaming maxima used by the accuracy indexes.
    """
    n = A.shape[0]
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

    x = x0.copy()
    z = z0.copy()
    scratch = np.zeros((10, n))
    h = Ts / substeps
    c = 0.0
    sat_count = 0
    max_abs_y1 = 0.0
    max_x_norm = 0.0
    max_dy_win = 0.0
    max_e_win = 0.0
    stored = 0
    completed = 0
    diverged = 0
    win_edge = win_start - 1e-12

    for k in range(n_intervals):
        tk = k * Ts
        y1 = _dot(C, x)
        y2 = _dot(C, z)
        Mk = (M0 - M_inf) * rho ** np.float64(k) + M_inf
        dy = y1 - c
        bit = 1 if dy >= 0.0 else -1
        if abs(dy) > 2.0 * Mk:
            sat_count += 1
        dybar = Mk if bit == 1 else -Mk
        ybar = c + dybar
        c = c + dybar
        u0 = -K * (y2 - ybar)
        delta = y1 - ybar

        bits[k] = bit
        Ms[k] = Mk
        e2 = 0.0
        x2 = 0.0
        for i in range(n):
            de = z[i] - x[i]
            e2 += de * de
            x2 += x[i] * x[i]
        en = np.sqrt(e2)
        xn = np.sqrt(x2)
        e_norm[k] = en
        if abs(y1) > max_abs_y1:
            max_abs_y1 = abs(y1)
        if xn > max_x_norm:
            max_x_norm = xn
        peak = abs(delta)
        if tk >= win_edge:
            if peak > max_dy_win:
                max_dy_win = peak
            if en > max_e_win:
                max_e_win = en

        if k % d == 0:
            t_s[stored] = tk
            for i in range(n):
                xs[stored, i] = x[i]
                zs[stored, i] = z[i]
            y1s[stored] = y1
            y2s[stored] = y2
            ybars[stored] = ybar
            us[stored] = u0
            dys[stored] = delta
            stored += 1

        ok = True
        for j in range(substeps):
            _rk4_pair(A, B, C, m0, m1, K, ybar, x, z, h, scratch)
            for i in range(n):
                if not (np.isfinite(x[i]) and np.isfinite(z[i])):
                    ok = False
            if not ok:
                break
            t = tk + (j + 1) * h
            y1 = _dot(C, x)
            ad = abs(y1 - ybar)
            if ad > peak:
                peak = ad
            if abs(y1) > max_abs_y1:
                max_abs_y1 = abs(y1)
            e2 = 0.0
            x2 = 0.0
            for i in range(n):
                de = z[i] - x[i]
                e2 += de * de
                x2 += x[i] * x[i]
            xn = np.sqrt(x2)
            if xn > max_x_norm:
                max_x_norm = xn
            if t >= win_edge:
                if ad > max_dy_win:
                    max_dy_win = ad
                en = np.sqrt(e2)
                if en > max_e_win:
                    max_e_win = en
        peak_dy[k] = peak
        completed = k + 1
        if not ok:
            diverged = 1
            break

    return (
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
    )


@njit(cache=True)
def output_rate_kernel(A, B, C, m0, m1, x0, h, n_steps):
    """Max |C * dx/dt| along the autonomous master trajectory.

    Returns (rate bound, diverged flag, steps completed).
    """
    n = A.shape[0]
    x = x0.copy()
    deriv = np.zeros(n)
    scratch = np.zeros((5, n))
    k1 = scratch[0]
    k2 = scratch[1]
    k3 = scratch[2]
    k4 = scratch[3]
    tmp = scratch[4]

    _master_deriv(A, B, m0, m1, C, x, deriv)
    best = abs(_dot(C, deriv))
    for step in range(n_steps):
        _master_deriv(A, B, m0, m1, C, x, k1)
        for i in range(n):
            tmp[i] = x[i] + 0.5 * h * k1[i]
        _master_deriv(A, B, m0, m1, C, tmp, k2)
        for i in range(n):
            tmp[i] = x[i] + 0.5 * h * k2[i]
        _master_deriv(A, B, m0, m1, C, tmp, k3)
        for i in range(n):
            tmp[i] = x[i] + h * k3[i]
        _master_deriv(A, B, m0, m1, C, tmp, k4)
        for i in range(n):
            x[i] = x[i] + (h / 6.0) * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])
            if not np.isfinite(x[i]):
                return best, 1, step
        _master_deriv(A, B, m0, m1, C, x, deriv)
        r = abs(_dot(C, deriv))
        if r > best:
            best = r
    return best, 0, n_steps
