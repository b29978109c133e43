"""Static output feedback, transfer-function analysis, and passification checks.

The controller itself is one line (u = -K*eps).  The rest of this module
answers whether that controller can synchronize a given Lurie system and how
large the residual error may be:

  * transfer_function extracts W(s) = C (sI - A)^{-1} B = b(s)/a(s),
  * is_hyper_minimum_phase tests the numerator condition (degree n-1,
    positive coefficients, Hurwitz) that is equivalent to the existence of a
    passifying gain,
  * verify_passification / find_passifying_P certify a quadratic Lyapunov
    matrix P with P B = C^T and P A_K + A_K^T P <= -mu P,
  * error_gain_bound turns such a certificate into the steady-state gain
    from transmission-error level to synchronization-error norm.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import product
from typing import Optional

import numpy as np
from scipy.optimize import minimize

from .sysmodel import LurieSystem

# Numerical policy (documented defaults):
#   positive definiteness  : smallest eigenvalue > PD_TOL * ||P||_2
#   P B = C^T residual     : ||P B - C^T|| <= RESIDUAL_TOL * max(1, ||C||)
#   Lyapunov feasibility   : lambda_max(S) <= LYAP_TOL * max(1, ||S||_2)
PD_TOL = 1e-9
RESIDUAL_TOL = 1e-8
LYAP_TOL = 1e-9


class Polynomial:
    """Real polynomial stored as ascending-power coefficients.

    Trailing (highest-power) coefficients below zero_threshold relative to
    the largest magnitude are trimmed, so ``degree`` reflects the numerically
    meaningful leading term.  The zero polynomial has degree -1.
    """

    def __init__(self, coeffs, zero_threshold: float = 1e-12):
        arr = np.atleast_1d(np.asarray(coeffs, dtype=float))
        if arr.ndim != 1 or arr.size == 0:
            raise ValueError("coefficients must be a non-empty 1-D sequence")
        scale = float(np.max(np.abs(arr)))
        cut = arr.size
        while cut > 1 and abs(arr[cut - 1]) <= zero_threshold * scale:
            cut -= 1
        arr = arr[:cut].copy()
        if arr.size == 1 and abs(arr[0]) <= zero_threshold * max(scale, 1e-300):
            arr = np.zeros(1)
        arr.setflags(write=False)
        self.coeffs = arr
        self.zero_threshold = zero_threshold

    @property
    def degree(self) -> int:
        if self.coeffs.size == 1 and self.coeffs[0] == 0.0:
            return -1
        return self.coeffs.size - 1

    def __call__(self, x):
        return np.polynomial.polynomial.polyval(x, self.coeffs)

    def descending(self) -> np.ndarray:
        return self.coeffs[::-1]

    def __repr__(self):
        terms = ", ".join(f"{c:.12g}" for c in self.coeffs)
        return f"Polynomial([{terms}])"

    def __str__(self):
        if self.degree <= 0:
            return f"{self.coeffs[0]:.12g}"
        parts = []
        for power in range(self.degree, -1, -1):
            c = self.coeffs[power]
            if c == 0.0:
                continue
            if power == 0:
                parts.append(f"{c:.12g}")
            elif power == 1:
                parts.append(f"{c:.12g}*s")
            else:
                parts.append(f"{c:.12g}*s^{power}")
        return " + ".join(parts).replace("+ -", "- ")


def control_law(epsilon: float, K: float) -> float:
    """Static output feedback u = -K * epsilon."""
    return -K * epsilon


@dataclass(frozen=True)
class ErrorSystem:
    """Certified synchronization-error dynamics.

    Bundles the closed-loop matrix A_K = A - B K C with a Lyapunov weight P
    and decay rate mu for which the certificate holds; construction rejects
    a non-symmetric or indefinite P.
    """

    A_K: np.ndarray
    K: float
    mu: float
    P: np.ndarray

    def __post_init__(self):
        A_K = np.atleast_2d(np.asarray(self.A_K, dtype=float))
        P = _check_symmetric(self.P)
        if P.shape != A_K.shape:
            raise ValueError("P and A_K dimensions differ")
        eigs = np.linalg.eigvalsh(P)
        if eigs[0] <= PD_TOL * max(abs(eigs[0]), abs(eigs[-1])):
            raise ValueError("P must be positive definite")
        if not self.mu > 0.0:
            raise ValueError("mu must be positive")
        A_K.setflags(write=False)
        P.setflags(write=False)
        object.__setattr__(self, "A_K", A_K)
        object.__setattr__(self, "P", P)

    def error_gain(self, L_phi: float) -> float:
        return error_gain_bound(self.P, self.K, L_phi, self.mu)


def _as_siso(A, B, C) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.asarray(B, dtype=float).reshape(-1)
    C = np.asarray(C, dtype=float).reshape(-1)
    n = A.shape[0]
    if A.shape != (n, n) or B.shape != (n,) or C.shape != (n,):
        raise ValueError(
            f"dimension mismatch: A {A.shape}, B {B.shape}, C {C.shape}"
        )
    return A, B, C


def transfer_function(A, B, C) -> tuple[Polynomial, Polynomial]:
    """Numerator/denominator of W(s) = C (sI - A)^{-1} B.

    Uses the Faddeev-LeVerrier recursion, which produces both the
    characteristic polynomial a(s) and the adjugate expansion feeding the
    numerator b(s) with only matrix products and traces.
    """
    A, B, C = _as_siso(A, B, C)
    n = A.shape[0]
    eye = np.eye(n)
    a_desc = np.empty(n + 1)
    b_desc = np.empty(n)
    a_desc[0] = 1.0
    M = eye.copy()
    for k in range(1, n + 1):
        if k > 1:
            M = A @ M + a_desc[k - 1] * eye
        b_desc[k - 1] = C @ M @ B
        a_desc[k] = -np.trace(A @ M) / k
    return Polynomial(b_desc[::-1]), Polynomial(a_desc[::-1])


def is_hurwitz(p: Polynomial) -> bool:
    """Routh test: True iff every root of p lies in the open left half-plane.

    Zero-pivot policy: a first-column entry at or below the numerical zero
    threshold means the polynomial is treated as not Hurwitz (boundary cases
    count as failures; strict stability is what the downstream analysis
    needs).  A constant nonzero polynomial is vacuously Hurwitz; the zero
    polynomial is rejected.
    """
    deg = p.degree
    if deg < 0:
        raise ValueError("the zero polynomial has no stability verdict")
    if deg == 0:
        return True
    c = p.descending().copy()
    if c[0] < 0.0:
        c = -c
    scale = float(np.max(np.abs(c)))
    tol = 1e-12 * scale
    # All coefficients strictly positive is necessary for Hurwitz.
    if np.any(c <= tol):
        return False
    width = (deg + 2) // 2
    row_prev = np.zeros(width + 1)
    row_curr = np.zeros(width + 1)
    row_prev[: len(c[0::2])] = c[0::2]
    row_curr[: len(c[1::2])] = c[1::2]
    for _ in range(deg - 1):
        pivot = row_curr[0]
        if pivot <= tol:
            return False
        nxt = np.zeros(width + 1)
        nxt[:-1] = (pivot * row_prev[1:] - row_prev[0] * row_curr[1:]) / pivot
        row_prev, row_curr = row_curr, nxt
    return row_curr[0] > tol


def is_hyper_minimum_phase(A, B, C) -> bool:
    """True iff b(s) has exact degree n-1, all-positive coefficients, and is Hurwitz.

    This numerator condition (on W = b/a from transfer_function) is exactly
    what makes a static output gain K exist that renders the closed loop
    strictly passive.
    """
    A, B, C = _as_siso(A, B, C)
    n = A.shape[0]
    b, _ = transfer_function(A, B, C)
    if b.degree != n - 1:
        return False
    scale = float(np.max(np.abs(b.coeffs)))
    if np.any(b.coeffs <= 1e-12 * scale):
        return False
    return is_hurwitz(b)


def _check_symmetric(P: np.ndarray) -> np.ndarray:
    P = np.atleast_2d(np.asarray(P, dtype=float))
    if P.shape[0] != P.shape[1]:
        raise ValueError(f"P must be square, got shape {P.shape}")
    asym = np.max(np.abs(P - P.T))
    if asym > 1e-9 * (np.max(np.abs(P)) + 1e-300):
        raise ValueError("P must be symmetric")
    return 0.5 * (P + P.T)


def verify_passification(A, B, C, K: float, P, mu: float) -> bool:
    """Check a passification certificate (P, K, mu) for the system (A, B, C).

    True iff P is positive definite, P B = C^T within tolerance, and
    lambda_max(P A_K + A_K^T P + mu P) <= tolerance with A_K = A - B K C.
    Non-symmetric P is rejected with an error rather than a False verdict.
    """
    A, B, C = _as_siso(A, B, C)
    P = _check_symmetric(P)
    if P.shape[0] != A.shape[0]:
        raise ValueError("P dimension does not match A")
    eigs = np.linalg.eigvalsh(P)
    p_norm = max(abs(eigs[0]), abs(eigs[-1]))
    if eigs[0] <= PD_TOL * p_norm:
        return False
    if np.linalg.norm(P @ B - C) > RESIDUAL_TOL * max(1.0, np.linalg.norm(C)):
        return False
    A_K = A - np.outer(B, C) * K
    S = P @ A_K + A_K.T @ P + mu * P
    s_max = np.linalg.eigvalsh(S)[-1]
    return s_max <= LYAP_TOL * max(1.0, np.linalg.norm(S, 2))


def _sym_basis(n: int) -> list[np.ndarray]:
    basis = []
    for i in range(n):
        for j in range(i, n):
            E = np.zeros((n, n))
            E[i, j] = 1.0
            E[j, i] = 1.0
            basis.append(E)
    return basis


def find_passifying_P(
    A,
    B,
    C,
    K: float,
    mu: float,
    *,
    grid: tuple[float, ...] = (0.0, 0.5, -0.5, 2.0, -2.0, 8.0, -8.0),
    refine_iters: int = 400,
    max_grid_points: int = 3000,
) -> Optional[np.ndarray]:
    """Search for P > 0 with P B = C^T and P A_K + A_K^T P <= -mu P.

    Small-dimension heuristic (n <= 4): the equality constraint P B = C^T is
    eliminated exactly (particular solution plus a basis of symmetric
    matrices annihilating B), then the worst eigenvalue margin is minimized
    over the remaining free coordinates by a coarse grid followed by
    Nelder-Mead refinement.  The margin is convex in the coordinates, so the
    local refinement is reliable; ``grid`` and ``refine_iters`` set the
    searched resolution.  Returns P, or None when no certificate was found
    at this resolution ("infeasible" is a value here, not an error).
    """
    A, B, C = _as_siso(A, B, C)
    n = A.shape[0]
    if n > 4:
        raise ValueError("feasibility search is limited to n <= 4")
    A_K = A - np.outer(B, C) * K

    basis = _sym_basis(n)
    L = np.column_stack([E @ B for E in basis])  # maps sym coords -> P B
    coords0, *_ = np.linalg.lstsq(L, C, rcond=None)
    if np.linalg.norm(L @ coords0 - C) > 1e-9 * max(1.0, np.linalg.norm(C)):
        return None  # P B = C^T has no symmetric solution (degenerate B)
    P0 = sum(c * E for c, E in zip(coords0, basis))

    # Null directions keep P B = C^T exactly.
    _, sv, Vt = np.linalg.svd(L)
    rank = int(np.sum(sv > 1e-12 * max(sv[0], 1e-300)))
    null = Vt[rank:]
    free = [sum(c * E for c, E in zip(row, basis)) for row in null]
    d = len(free)

    # Weight so the positivity margin competes on the same scale as the
    # Lyapunov margin.
    weight = 2.0 * np.linalg.norm(A_K, 2) + mu + 1.0

    def candidate(theta: np.ndarray) -> np.ndarray:
        P = P0.copy()
        for t, E in zip(theta, free):
            P = P + t * E
        return P

    def margin(theta: np.ndarray) -> float:
        P = candidate(theta)
        S = P @ A_K + A_K.T @ P + mu * P
        lyap = np.linalg.eigvalsh(S)[-1]
        pos = -np.linalg.eigvalsh(P)[0] * weight
        return max(lyap, pos)

    if d == 0:
        P = 0.5 * (P0 + P0.T)
        return P if verify_passification(A, B, C, K, P, mu) else None

    span = max(1.0, float(np.linalg.norm(P0)))
    values = tuple(g * span for g in grid)
    if len(values) ** d <= max_grid_points:
        points = product(values, repeat=d)
    else:
        rng = np.random.default_rng(0)  # fixed seed: search is deterministic
        points = (rng.choice(values, size=d) for _ in range(max_grid_points))

    best_theta = np.zeros(d)
    best = margin(best_theta)
    for pt in points:
        theta = np.asarray(pt, dtype=float)
        m = margin(theta)
        if m < best:
            best, best_theta = m, theta

    res = minimize(
        margin,
        best_theta,
        method="Nelder-Mead",
        options={"maxiter": refine_iters * (d + 1), "xatol": 1e-10, "fatol": 1e-12},
    )
    theta = res.x if res.fun < best else best_theta
    # One polish round helps Nelder-Mead out of its final simplex.
    res2 = minimize(
        margin,
        theta,
        method="Nelder-Mead",
        options={"maxiter": refine_iters * (d + 1), "xatol": 1e-12, "fatol": 1e-14},
    )
    if res2.fun < margin(theta):
        theta = res2.x

    P = candidate(theta)
    P = 0.5 * (P + P.T)
    return P if verify_passification(A, B, C, K, P, mu) else None


def error_gain_bound(P, K: float, L_phi: float, mu: float) -> float:
    """Steady-state gain bound sqrt(cond(P)) * (L_phi + |K|) / mu.

    The limit synchronization-error norm cannot exceed this factor times the
    transmission-error level, given a valid certificate (P, mu).
    """
    if not mu > 0.0:
        raise ValueError(f"decay rate mu must be positive, got {mu}")
    P = _check_symmetric(P)
    eigs = np.linalg.eigvalsh(P)
    if eigs[0] <= PD_TOL * max(abs(eigs[0]), abs(eigs[-1])):
        raise ValueError("P must be positive definite")
    return float(np.sqrt(eigs[-1] / eigs[0]) * (L_phi + abs(K)) / mu)


@dataclass
class SystemAnalysis:
    """Summary of the output-feedback feasibility analysis for one system."""

    b: Polynomial
    a: Polynomial
    hmp: bool
    K: float
    mu: Optional[float] = None
    P: Optional[np.ndarray] = None
    error_gain: Optional[float] = None
    error_system: Optional[ErrorSystem] = None

    @property
    def feasible(self) -> bool:
        return self.P is not None


def analyze_system(
    system: LurieSystem,
    K: float,
    mu_candidates: tuple[float, ...] = (0.2, 0.1, 0.05, 0.02, 0.01),
) -> SystemAnalysis:
    """Run the full feasibility analysis at gain K.

    Tries the decay rates in mu_candidates from largest down and keeps the
    first one for which a Lyapunov certificate is found (larger mu gives a
    tighter error bound).
    """
    b, a = transfer_function(system.A, system.B, system.C)
    hmp = is_hyper_minimum_phase(system.A, system.B, system.C)
    analysis = SystemAnalysis(b=b, a=a, hmp=hmp, K=K)
    if not hmp:
        return analysis
    for mu in mu_candidates:
        P = find_passifying_P(system.A, system.B, system.C, K, mu)
        if P is not None:
            A_K = system.A - np.outer(system.B, system.C) * K
            analysis.mu = mu
            analysis.P = P
            analysis.error_system = ErrorSystem(A_K=A_K, K=K, mu=mu, P=P)
            analysis.error_gain = analysis.error_system.error_gain(system.lipschitz)
            break
    return analysis


def format_analysis_report(analysis: SystemAnalysis) -> str:
    """Human-readable report: HMP verdict, b/a coefficients, bound, P."""
    lines = [
        f"HMP: {'true' if analysis.hmp else 'false'}",
        f"b(s) = {analysis.b}",
        f"a(s) = {analysis.a}",
        "b coefficients (descending): "
        + " ".join(f"{c:.12g}" for c in analysis.b.descending()),
        "a coefficients (descending): "
        + " ".join(f"{c:.12g}" for c in analysis.a.descending()),
        f"controller gain K = {analysis.K:.12g}",
    ]
    if analysis.feasible:
        lines.append(f"Lyapunov decay mu = {analysis.mu:.12g}")
        lines.append(f"error gain bound C_e+ = {analysis.error_gain:.12g}")
        lines.append("P =")
        for row in analysis.P:
            lines.append("  " + " ".join(f"{v: .12g}" for v in row))
    else:
        lines.append("passification certificate: infeasible at searched resolution")
    return "\n".join(lines) + "\n"
