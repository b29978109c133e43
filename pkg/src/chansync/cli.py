"""Command-line front end: single runs, sweeps, and analysis reports.

Configuration is a flat key=value text format with dotted section prefixes
(system.p, codec.M0, run.t_fin), chosen so experiment folders diff cleanly.
Every run writes the fully resolved configuration (defaults + file +
--set overrides, with all derived values filled in) next to its outputs;
re-running from that echoed file reproduces every CSV byte for byte.

Exit codes: 0 success, 2 configuration error, 3 divergence,
4 infeasible analysis, 1 I/O failure.
"""

from __future__ import annotations

import argparse
import math
import os
import sys
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from . import analysis, codec, control, simloop
from .codec import CodecConfig
from .simloop import SimConfig
from .sysmodel import ChuaParams, DivergenceError, chua_system

EXIT_OK = 0
EXIT_IO = 1
EXIT_CONFIG = 2
EXIT_DIVERGED = 3
EXIT_INFEASIBLE = 4


class ConfigError(ValueError):
    """Malformed or inconsistent configuration; maps to exit code 2."""


def _parse_float(text: str) -> float:
    try:
        return float(text)
    except ValueError as exc:
        raise ConfigError(f"expected a number, got {text!r}") from exc


def _parse_int(text: str) -> int:
    try:
        return int(text)
    except ValueError as exc:
        raise ConfigError(f"expected an integer, got {text!r}") from exc


def _parse_bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("true", "1", "yes", "on"):
        return True
    if low in ("false", "0", "no", "off"):
        return False
    raise ConfigError(f"expected true/false, got {text!r}")


def _parse_floats(text: str) -> tuple[float, ...]:
    items = [s for s in (part.strip() for part in text.split(",")) if s]
    if not items:
        raise ConfigError("expected a comma-separated list of numbers")
    return tuple(_parse_float(s) for s in items)


# key -> (parser, default); None default means "derived during resolution".
_KEYS: dict[str, tuple[Callable, object]] = {
    "system.p": (_parse_float, 10.0),
    "system.q": (_parse_float, 15.6),
    "system.m0": (_parse_float, 0.33),
    "system.m1": (_parse_float, 0.945),
    "control.K": (_parse_float, 1.0),
    "channel.Ly": (_parse_float, 45.0),
    "codec.Delta": (_parse_float, 1.0),
    "codec.M0": (_parse_float, 5.0),
    "codec.M_inf": (_parse_float, None),
    "codec.Ts": (_parse_float, None),
    "codec.rho": (_parse_float, None),
    "run.t_fin": (_parse_float, 1000.0),
    "run.substeps": (_parse_int, 10),
    "run.x0": (_parse_floats, (0.3,)),
    "run.z0": (_parse_floats, (0.0,)),
    "run.transcript": (_parse_bool, False),
    "run.ly_h": (_parse_float, 0.002),
    "sweep.deltas": (_parse_floats, tuple(round(0.2 * i, 10) for i in range(1, 16))),
    "sweep.gains": (_parse_floats, (1.0, 2.0, 5.0, 10.0)),
}


def parse_config_text(text: str, source: str = "<config>") -> dict:
    """Parse key=value lines; fails on the first unknown/duplicate/bad entry.

    Blank lines and '#' comments are allowed.  The whole file must parse
    before any computation starts; there are no partial configs.
    """
    values: dict[str, object] = {}
    for lineno, raw_line in enumerate(text.splitlines(), start=1):
        line = raw_line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {raw_line!r}")
        key, _, value = line.partition("=")
        key = key.strip()
        value = value.strip()
        if key not in _KEYS:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        if key in values:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r}")
        parser, _ = _KEYS[key]
        try:
            values[key] = parser(value)
        except ConfigError as exc:
            raise ConfigError(f"{source}:{lineno}: {key}: {exc}") from exc
    return values


@dataclass
class EffectiveConfig:
    """Fully resolved configuration (defaults + overrides + derived values)."""

    p: float
    q: float
    m0: float
    m1: float
    K: float
    Ly: float
    Delta: float
    M0: float
    M_inf: float
    Ts: float
    rho: float
    t_fin: float
    substeps: int
    x0: tuple[float, ...]
    z0: tuple[float, ...]
    transcript: bool
    ly_h: float
    deltas: tuple[float, ...]
    gains: tuple[float, ...]

    def system(self):
        return chua_system(ChuaParams(self.p, self.q, self.m0, self.m1))

    def codec_config(self) -> CodecConfig:
        return CodecConfig(M0=self.M0, M_inf=self.M_inf, rho=self.rho, Ts=self.Ts)

    def sim_config(self) -> SimConfig:
        system = self.system()
        return SimConfig(
            system=system,
            codec=self.codec_config(),
            K=self.K,
            x0=_broadcast(self.x0, system.n, "run.x0"),
            z0=_broadcast(self.z0, system.n, "run.z0"),
            t_fin=self.t_fin,
            substeps=self.substeps,
        )


def _broadcast(vec: tuple[float, ...], n: int, key: str) -> np.ndarray:
    if len(vec) == 1:
        return np.full(n, vec[0])
    if len(vec) != n:
        raise ConfigError(f"{key} must have 1 or {n} components, got {len(vec)}")
    return np.asarray(vec)


def resolve(values: dict) -> EffectiveConfig:
    """Fill defaults, derive codec settings, and validate all constraints.

    Derivations (applied only when the key is absent): Ts = Delta/(BETA*Ly),
    M_inf = Delta/2, rho = exp(-0.1*Ts).  Explicit keys always win, so an
    echoed effective config resolves to exactly itself.
    """
    merged = {key: default for key, (_, default) in _KEYS.items()}
    merged.update(values)

    delta = merged["codec.Delta"]
    ly = merged["channel.Ly"]
    if not delta > 0.0:
        raise ConfigError(f"codec.Delta must be > 0, got {delta}")
    if not ly > 0.0:
        raise ConfigError(f"channel.Ly must be > 0, got {ly}")
    if merged["codec.Ts"] is None:
        merged["codec.Ts"] = simloop.optimal_sampling(delta, ly)
    if merged["codec.M_inf"] is None:
        merged["codec.M_inf"] = delta / 2.0
    if merged["codec.rho"] is None:
        merged["codec.rho"] = math.exp(-analysis.ZOOM_RATE * merged["codec.Ts"])

    cfg = EffectiveConfig(
        p=merged["system.p"],
        q=merged["system.q"],
        m0=merged["system.m0"],
        m1=merged["system.m1"],
        K=merged["control.K"],
        Ly=ly,
        Delta=delta,
        M0=merged["codec.M0"],
        M_inf=merged["codec.M_inf"],
        Ts=merged["codec.Ts"],
        rho=merged["codec.rho"],
        t_fin=merged["run.t_fin"],
        substeps=merged["run.substeps"],
        x0=tuple(merged["run.x0"]),
        z0=tuple(merged["run.z0"]),
        transcript=merged["run.transcript"],
        ly_h=merged["run.ly_h"],
        deltas=tuple(merged["sweep.deltas"]),
        gains=tuple(merged["sweep.gains"]),
    )

    # Constraint checks reuse the library validators but surface as config errors.
    try:
        cfg.codec_config()
        cfg.sim_config()
    except (ValueError, TypeError) as exc:
        raise ConfigError(str(exc)) from exc
    if not cfg.ly_h > 0.0:
        raise ConfigError(f"run.ly_h must be > 0, got {cfg.ly_h}")
    if any(d <= 0.0 for d in cfg.deltas):
        raise ConfigError("sweep.deltas must all be > 0")
    return cfg


def effective_text(cfg: EffectiveConfig) -> str:
    """Echo of the resolved configuration; parses back to the same values."""

    def fmt(value) -> str:
        if isinstance(value, bool):
            return "true" if value else "false"
        if isinstance(value, tuple):
            return ", ".join(repr(v) for v in value)
        if isinstance(value, float):
            return repr(value)
        return str(value)

    pairs = [
        ("system.p", cfg.p),
        ("system.q", cfg.q),
        ("system.m0", cfg.m0),
        ("system.m1", cfg.m1),
        ("control.K", cfg.K),
        ("channel.Ly", cfg.Ly),
        ("codec.Delta", cfg.Delta),
        ("codec.M0", cfg.M0),
        ("codec.M_inf", cfg.M_inf),
        ("codec.Ts", cfg.Ts),
        ("codec.rho", cfg.rho),
        ("run.t_fin", cfg.t_fin),
        ("run.substeps", cfg.substeps),
        ("run.x0", cfg.x0),
        ("run.z0", cfg.z0),
        ("run.transcript", cfg.transcript),
        ("run.ly_h", cfg.ly_h),
        ("sweep.deltas", cfg.deltas),
        ("sweep.gains", cfg.gains),
    ]
    lines = ["# effective configuration (resolved; re-run reproduces outputs exactly)"]
    lines.extend(f"{key} = {fmt(value)}" for key, value in pairs)
    return "\n".join(lines) + "\n"


def load_config(path: Optional[str], overrides: list[str]) -> EffectiveConfig:
    values: dict = {}
    if path is not None:
        with open(path, "r", encoding="utf-8") as fh:
            values = parse_config_text(fh.read(), source=path)
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"--set {item!r}: expected key=value")
        parsed = parse_config_text(item, source=f"--set {item}")
        for key, value in parsed.items():
            values[key] = value
    return resolve(values)


def _write(path: str, text: str) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)
    print(f"wrote {path}")


def _echo_config(cfg: EffectiveConfig, out_dir: str) -> None:
    _write(os.path.join(out_dir, "effective_config.cfg"), effective_text(cfg))


def cmd_simulate(cfg: EffectiveConfig, out_dir: str, jobs: int) -> int:
    sim_cfg = cfg.sim_config()
    _echo_config(cfg, out_dir)
    try:
        trace = simloop.simulate(sim_cfg)
    except DivergenceError as exc:
        if exc.trace is not None:
            path = os.path.join(out_dir, "trace.csv")
            simloop.export_trace_csv(exc.trace, path)
            print(f"wrote {path} (partial)")
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    path = os.path.join(out_dir, "trace.csv")
    simloop.export_trace_csv(trace, path)
    print(f"wrote {path}")
    if cfg.transcript:
        tpath = os.path.join(out_dir, "bits.txt")
        codec.write_transcript(tpath, trace.full.bits)
        print(f"wrote {tpath}")
    qy = analysis.relative_transmission_error(trace)
    q = analysis.normalized_sync_error(trace)
    print(
        f"summary: Qy = {qy:.6g}, Q = {q:.6g}, "
        f"saturation events = {trace.saturation_count}, samples = {trace.n_intervals}"
    )
    return EXIT_OK


def cmd_sweep_delta(cfg: EffectiveConfig, out_dir: str, jobs: int) -> int:
    _echo_config(cfg, out_dir)
    points = analysis.run_delta_sweep(cfg.sim_config(), cfg.deltas, Ly=cfg.Ly, jobs=jobs)
    path = os.path.join(out_dir, "sweep_delta.csv")
    analysis.write_sweep_csv(points, path)
    print(f"wrote {path}")
    ok_points = [pt for pt in points if pt.ok]
    if not ok_points:
        print("error: every sweep point diverged", file=sys.stderr)
        return EXIT_DIVERGED
    _write(os.path.join(out_dir, "fit_summary.txt"), analysis.fit_summary(points))
    return EXIT_OK


def cmd_sweep_gain(cfg: EffectiveConfig, out_dir: str, jobs: int) -> int:
    _echo_config(cfg, out_dir)
    points = analysis.run_gain_sweep(cfg.sim_config(), cfg.gains, jobs=jobs)
    path = os.path.join(out_dir, "sweep_gain.csv")
    analysis.write_gain_csv(points, path)
    print(f"wrote {path}")
    if not any(pt.ok for pt in points):
        print("error: every sweep point diverged", file=sys.stderr)
        return EXIT_DIVERGED
    return EXIT_OK


def cmd_analyze_system(cfg: EffectiveConfig, out_dir: str, jobs: int) -> int:
    _echo_config(cfg, out_dir)
    result = control.analyze_system(cfg.system(), cfg.K)
    _write(os.path.join(out_dir, "analysis.txt"), control.format_analysis_report(result))
    if not result.feasible:
        print("error: no passification certificate found", file=sys.stderr)
        return EXIT_INFEASIBLE
    print(f"summary: HMP = {result.hmp}, C_e+ = {result.error_gain:.6g} (mu = {result.mu})")
    return EXIT_OK


def cmd_estimate_ly(cfg: EffectiveConfig, out_dir: str, jobs: int) -> int:
    _echo_config(cfg, out_dir)
    system = cfg.system()
    try:
        ly = simloop.estimate_Ly(
            system, _broadcast(cfg.x0, system.n, "run.x0"), cfg.t_fin, cfg.ly_h
        )
    except DivergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    _write(os.path.join(out_dir, "estimate_ly.txt"), f"Ly = {ly:.17g}\n")
    print(f"Ly = {ly:.6g}")
    return EXIT_OK


_COMMANDS = {
    "simulate": cmd_simulate,
    "sweep-delta": cmd_sweep_delta,
    "sweep-gain": cmd_sweep_gain,
    "analyze-system": cmd_analyze_system,
    "estimate-ly": cmd_estimate_ly,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="chansync",
        description="Master-slave synchronization over a binary rate-limited channel",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in [
        ("simulate", "run one closed loop and export the trace CSV"),
        ("sweep-delta", "sweep the error level Delta and fit the hyperbolic laws"),
        ("sweep-gain", "sweep the controller gain K at fixed Delta"),
        ("analyze-system", "transfer function, HMP verdict, passification certificate"),
        ("estimate-ly", "bound the master output rate by numeric integration"),
    ]:
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", metavar="PATH", help="configuration file")
        p.add_argument("--out", metavar="DIR", default="out", help="output directory")
        p.add_argument(
            "--set",
            metavar="KEY=VALUE",
            action="append",
            default=[],
            dest="overrides",
            help="override one configuration key (repeatable)",
        )
        p.add_argument("--jobs", type=int, default=1, help="parallel sweep workers")
    return parser


def main(argv: Optional[list[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code else EXIT_OK
    try:
        cfg = load_config(args.config, args.overrides)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    try:
        os.makedirs(args.out, exist_ok=True)
        return _COMMANDS[args.command](cfg, args.out, args.jobs)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    raise SystemExit(main())
