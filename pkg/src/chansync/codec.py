"""Binary zooming coder/decoder with one-step memory.

The coder keeps a running prediction c[k] (the "central number") of the
sampled signal, transmits only the sign of the innovation y[k] - c[k], and
both ends update c with the quantized innovation.  The quantizer range

    M[k] = (M0 - M_inf) * rho**k + M_inf

shrinks geometrically ("zooming") from M0 toward M_inf, so accuracy improves
as the transient dies out while early saturation is avoided.  Coder and
decoder run the same deterministic update from the same initial state
(c = 0, k = 0), so their states stay bit-exact equal given the bit stream.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

Bit = int  # +1 or -1; serialized as '1'/'0' in transcript files


@dataclass(frozen=True)
class CodecConfig:
    """Range schedule and sampling time shared by coder and decoder."""

    M0: float
    M_inf: float
    rho: float
    Ts: float

    def __post_init__(self):
        if not (0.0 < self.rho <= 1.0):
            raise ValueError(f"decay parameter rho must be in (0, 1], got {self.rho}")
        if not (self.M0 >= self.M_inf > 0.0):
            raise ValueError(
                f"ranges must satisfy M0 >= M_inf > 0, got M0={self.M0}, M_inf={self.M_inf}"
            )
        if not self.Ts > 0.0:
            raise ValueError(f"sampling time must be positive, got {self.Ts}")


@dataclass(frozen=True)
class CodecState:
    """Central number and step index of either end of the link."""

    c: float = 0.0
    k: int = 0


def quantize(y: float, M: float) -> float:
    """One-bit quantizer M*sign(y) with the tie-break sign(0) = +1."""
    if not M > 0.0:
        raise ValueError(f"quantizer range must be positive, got {M}")
    return M if y >= 0.0 else -M


def range_at(k: int, cfg: CodecConfig) -> float:
    """Quantizer range M[k], evaluated from the closed formula.

    Both ends evaluate this same expression (never a recursive update), so
    no drift can accumulate between coder and decoder.
    """
    if k < 0:
        raise ValueError(f"step index must be non-negative, got {k}")
    return (cfg.M0 - cfg.M_inf) * math.pow(cfg.rho, float(k)) + cfg.M_inf


def coder_step(
    state: CodecState, cfg: CodecConfig, y: float
) -> tuple[Bit, CodecState, bool]:
    """Encode one sample; returns (bit, next state, saturated flag).

    The innovation dy = y - c[k] is quantized to +/-M[k]; the sign is the
    transmitted bit.  Saturation (|dy| > 2 M[k]) is flagged but never aborts:
    the bit still goes out and the zooming schedule recovers.
    """
    M = range_at(state.k, cfg)
    dy = y - state.c
    q = quantize(dy, M)
    bit = 1 if q >= 0.0 else -1
    saturated = abs(dy) > 2.0 * M
    return bit, CodecState(state.c + q, state.k + 1), saturated


def decoder_step(state: CodecState, cfg: CodecConfig, bit: Bit) -> tuple[float, CodecState]:
    """Decode one received bit; returns (reconstructed sample, next state).

    Mirrors coder_step exactly: the reconstructed innovation is bit*M[k] and
    the reconstructed sample is c[k] + bit*M[k].  Requires the decoder to
    have been initialized identically to the coder (c=0, k=0).
    """
    if bit not in (1, -1):
        raise ValueError(f"bit must be +1 or -1, got {bit!r}")
    M = range_at(state.k, cfg)
    dybar = bit * M
    ybar = state.c + dybar
    return ybar, CodecState(state.c + dybar, state.k + 1)


def decode_bits(bits: Iterable[Bit], cfg: CodecConfig) -> np.ndarray:
    """Replay a whole bit sequence through a fresh decoder.

    Returns the reconstructed samples ybar[k]; used to audit recorded runs.
    """
    state = CodecState()
    out = []
    for bit in bits:
        ybar, state = decoder_step(state, cfg, int(bit))
        out.append(ybar)
    return np.asarray(out, dtype=float)


def hold(ybar_sequence: Sequence[float], t: float, Ts: float) -> float:
    """Zero-order hold: value of the reconstructed signal at continuous time t.

    Constant on each [k*Ts, (k+1)*Ts).  Raises ValueError outside the
    recorded sequence.
    """
    if t < 0.0:
        raise ValueError(f"time must be non-negative, got {t}")
    # Small forward nudge so t = k*Ts lands in interval k despite rounding.
    k = int(math.floor(t / Ts + 1e-9))
    if k >= len(ybar_sequence):
        raise ValueError(
            f"t={t} is beyond the recorded sequence ({len(ybar_sequence)} samples of {Ts} s)"
        )
    return float(ybar_sequence[k])


def write_transcript(path, bits: Iterable[Bit]) -> None:
    """Write an audit transcript, one "k,bit" line per sample ('1'/'0')."""
    with open(path, "w", encoding="utf-8") as fh:
        for k, bit in enumerate(bits):
            fh.write(f"{k},{'1' if bit > 0 else '0'}\n")


def read_transcript(path) -> np.ndarray:
    """Read a transcript written by write_transcript; returns +/-1 bits."""
    bits = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh):
            line = line.strip()
            if not line:
                continue
            k_str, bit_str = line.split(",")
            if int(k_str) != len(bits):
                raise ValueError(f"line {lineno + 1}: sample index out of order")
            if bit_str not in ("0", "1"):
                raise ValueError(f"line {lineno + 1}: bit must be '0' or '1'")
            bits.append(1 if bit_str == "1" else -1)
    return np.asarray(bits, dtype=np.int8)
