"""Deterministic master-slave synchronization over a binary rate-limited channel.

Subpackages:
  sysmodel - Lurie systems, the Chua oscillator, fixed-step RK4 integration
  codec    - binary zooming coder/decoder state machines
  control  - output feedback, transfer functions, passification analysis
  simloop  - the closed sampled-data loop and trace recording
  analysis - accuracy indexes, rate/gain sweeps, hyperbolic law fits
  cli      - command-line front end
"""

from .codec import CodecConfig, CodecState
from .simloop import SimConfig, Trace, simulate
from .sysmodel import ChuaParams, DivergenceError, LurieSystem, chua_system

__version__ = "0.1.0"

__all__ = [
    "CodecConfig",
    "CodecState",
    "ChuaParams",
    "DivergenceError",
    "LurieSystem",
    "SimConfig",
    "Trace",
    "chua_system",
    "simulate",
    "__version__",
]
