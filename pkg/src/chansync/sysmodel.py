"""Lurie-form system models, the Chua oscillator, and a fixed-step RK4 integrator.

A Lurie system is a linear block (A, B, C) closed through a scalar
nonlinearity ``phi`` that only sees the measured output ``y = C x``:

    master:  dx/dt = A x + B phi(C x)
    slave:   dz/dt = A z + B phi(C z) + B u

Both systems share (A, B, C, phi); the slave additionally receives a scalar
control ``u`` through the same input column B.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np


class DivergenceError(RuntimeError):
    """Raised when a state trajectory leaves the finite floating-point range.

    ``time`` is the last instant with a finite state (when known); ``trace``
    carries a partial simulation record when the closed loop aborts.
    """

    def __init__(self, message: str, time: float | None = None, trace=None):
        super().__init__(message)
        self.time = time
        self.trace = trace


def zero_phi(y: float) -> float:
    """Trivial nonlinearity; turns a Lurie system into a plain linear one."""
    return 0.0


@dataclass(frozen=True)
class ChuaParams:
    """Dimensionless Chua oscillator parameters (p, q, m0, m1)."""

    p: float
    q: float
    m0: float
    m1: float

    def __post_init__(self):
        if not (self.p > 0.0 and self.q > 0.0):
            raise ValueError(
                f"Chua parameters require p > 0 and q > 0, got p={self.p}, q={self.q}"
            )


@dataclass(frozen=True)
class ChuaNonlinearity:
    """Piecewise-linear Chua diode characteristic m0*y + m1*(|y+1| - |y-1|).

    Odd, continuous, with slope m0 + 2*m1 on |y| < 1 and slope m0 outside.
    Instances are recognized by the simulation loop and dispatched to the
    compiled fast path.
    """

    m0: float
    m1: float

    def __call__(self, y: float) -> float:
        return self.m0 * y + self.m1 * (abs(y + 1.0) - abs(y - 1.0))

    @property
    def lipschitz(self) -> float:
        return max(abs(self.m0), abs(self.m0 + 2.0 * self.m1))


def chua_phi(y: float, params: ChuaParams) -> float:
    """Evaluate the Chua diode characteristic at output value y."""
    return params.m0 * y + params.m1 * (abs(y + 1.0) - abs(y - 1.0))


@dataclass(frozen=True)
class LurieSystem:
    """Continuous-time Lurie system: linear (A, B, C) plus output nonlinearity.

    A is n x n, B and C are length-n vectors (single input, single output).
    ``lipschitz`` is a Lipschitz constant of ``phi`` over the operating range;
    it feeds the analytic error bounds, not the dynamics.
    """

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    phi: Callable[[float], float]
    lipschitz: float

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        B = np.asarray(self.B, dtype=float).reshape(-1)
        C = np.asarray(self.C, dtype=float).reshape(-1)
        if A.shape[0] != A.shape[1]:
            raise ValueError(f"A must be square, got shape {A.shape}")
        n = A.shape[0]
        if B.shape != (n,) or C.shape != (n,):
            raise ValueError(
                f"B and C must be length-{n} vectors, got {B.shape} and {C.shape}"
            )
        if not self.lipschitz >= 0.0:
            raise ValueError("lipschitz constant must be non-negative")
        for arr in (A, B, C):
            arr.setflags(write=False)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)
        object.__setattr__(self, "C", C)

    @property
    def n(self) -> int:
        return self.A.shape[0]

    def output(self, state) -> float:
        return float(self.C @ _components(state))


@dataclass
class State:
    """State vector plus time stamp; the only mutable type in this module."""

    components: np.ndarray
    time: float = 0.0

    def __post_init__(self):
        self.components = np.asarray(self.components, dtype=float).reshape(-1)


def _components(state) -> np.ndarray:
    if isinstance(state, State):
        return state.components
    return np.asarray(state, dtype=float).reshape(-1)


def chua_system(params: ChuaParams) -> LurieSystem:
    """Build the three-state Chua oscillator as a Lurie system.

    The diode nonlinearity and the control both act on the first state
    equation scaled by p, hence B = (p, 0, 0)^T and y = x1.
    """
    p, q = params.p, params.q
    A = np.array([[-p, p, 0.0], [1.0, -1.0, 1.0], [0.0, -q, 0.0]])
    B = np.array([p, 0.0, 0.0])
    C = np.array([1.0, 0.0, 0.0])
    phi = ChuaNonlinearity(params.m0, params.m1)
    return LurieSystem(A=A, B=B, C=C, phi=phi, lipschitz=phi.lipschitz)


def master_rhs(system: LurieSystem, x) -> np.ndarray:
    """Time derivative of the autonomous master: A x + B phi(C x)."""
    xv = _components(x)
    return system.A @ xv + system.B * system.phi(float(system.C @ xv))


def slave_rhs(system: LurieSystem, z, u: float) -> np.ndarray:
    """Time derivative of the controlled slave: A z + B phi(C z) + B u."""
    zv = _components(z)
    return system.A @ zv + system.B * (system.phi(float(system.C @ zv)) + u)


def integrate_step(rhs, state: State, h: float) -> State:
    """Advance one classical 4th-order Runge-Kutta step of size h.

    ``rhs(t, y)`` must return the derivative vector. Deterministic; raises
    DivergenceError if the new state has any non-finite component.
    """
    if not h > 0.0:
        raise ValueError(f"step size must be positive, got {h}")
    t = state.time
    y = state.components
    k1 = np.asarray(rhs(t, y), dtype=float)
    k2 = np.asarray(rhs(t + 0.5 * h, y + 0.5 * h * k1), dtype=float)
    k3 = np.asarray(rhs(t + 0.5 * h, y + 0.5 * h * k2), dtype=float)
    k4 = np.asarray(rhs(t + h, y + h * k3), dtype=float)
    y_new = y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    if not np.all(np.isfinite(y_new)):
        raise DivergenceError(f"state became non-finite near t={t + h:.6g}", time=t)
    return State(y_new, t + h)
