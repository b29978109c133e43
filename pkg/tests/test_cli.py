"""CLI tests: config parsing, artifact writing, echo reproducibility, exit codes."""

import math

import numpy as np
import pytest

from chansync import cli
from chansync.cli import (
    ConfigError,
    effective_text,
    load_config,
    parse_config_text,
    resolve,
)


class TestConfigParsing:
    def test_defaults(self):
        cfg = resolve({})
        assert (cfg.p, cfg.q, cfg.m0, cfg.m1) == (10.0, 15.6, 0.33, 0.945)
        assert cfg.K == 1.0 and cfg.M0 == 5.0 and cfg.t_fin == 1000.0
        assert cfg.x0 == (0.3,) and cfg.z0 == (0.0,)
        assert len(cfg.deltas) == 15
        assert cfg.deltas[0] == 0.2 and cfg.deltas[-1] == 3.0

    def test_derivations(self):
        cfg = resolve({})
        assert cfg.Ts * 1000 == pytest.approx(13.16, abs=0.01)
        assert cfg.M_inf == 0.5
        assert cfg.rho == pytest.approx(math.exp(-0.1 * cfg.Ts), rel=1e-15)

    def test_delta_override_changes_derived(self):
        cfg = resolve(parse_config_text("codec.Delta = 2.0"))
        assert cfg.Ts * 1000 == pytest.approx(26.33, abs=0.01)
        assert cfg.M_inf == 1.0

    def test_explicit_keys_win_over_derivation(self):
        cfg = resolve(parse_config_text("codec.Ts = 0.05\ncodec.rho = 0.99"))
        assert cfg.Ts == 0.05 and cfg.rho == 0.99

    def test_comments_and_blanks(self):
        values = parse_config_text("# a comment\n\nsystem.p = 7.0  # trailing\n")
        assert values == {"system.p": 7.0}

    def test_unknown_key(self):
        with pytest.raises(ConfigError, match="line 2|:2"):
            parse_config_text("system.p = 7\nsystem.bogus = 1\n")

    def test_duplicate_key(self):
        with pytest.raises(ConfigError, match="duplicate"):
            parse_config_text("system.p = 7\nsystem.p = 8\n")

    def test_type_error_with_context(self):
        with pytest.raises(ConfigError, match="run.t_fin"):
            parse_config_text("run.t_fin = soon\n")

    def test_constraint_violations(self):
        with pytest.raises(ConfigError):
            resolve(parse_config_text("run.t_fin = -5"))
        with pytest.raises(ConfigError):
            resolve(parse_config_text("system.p = -10"))
        with pytest.raises(ConfigError):
            resolve(parse_config_text("codec.Delta = 0"))

    def test_echo_round_trip(self):
        cfg = resolve(parse_config_text("codec.Delta = 1.7\ncontrol.K = 2.5"))
        echoed = resolve(parse_config_text(effective_text(cfg)))
        assert echoed == cfg
        assert effective_text(echoed) == effective_text(cfg)

    def test_vector_initial_conditions(self):
        cfg = resolve(parse_config_text("run.x0 = 0.1, 0.2, 0.3"))
        sim = cfg.sim_config()
        assert np.array_equal(sim.x0, [0.1, 0.2, 0.3])
        with pytest.raises(ConfigError):
            resolve(parse_config_text("run.x0 = 0.1, 0.2")).sim_config()


class TestCliCommands:
    def run(self, *argv):
        return cli.main(list(argv))

    def test_simulate_writes_artifacts(self, tmp_path, capsys):
        out = tmp_path / "run1"
        code = self.run(
            "simulate", "--out", str(out), "--set", "run.t_fin=5",
            "--set", "run.transcript=true",
        )
        assert code == 0
        trace = (out / "trace.csv").read_text().splitlines()
        assert trace[0] == "t,x1,x2,x3,z1,z2,z3,y1,ybar1,y2,u,delta_y,M"
        assert (out / "effective_config.cfg").exists()
        assert (out / "bits.txt").exists()
        captured = capsys.readouterr()
        assert "summary:" in captured.out

    def test_echo_reproduces_byte_identical(self, tmp_path):
        out1 = tmp_path / "a"
        out2 = tmp_path / "b"
        assert self.run("simulate", "--out", str(out1), "--set", "run.t_fin=5") == 0
        assert (
            self.run(
                "simulate", "--config", str(out1 / "effective_config.cfg"), "--out", str(out2)
            )
            == 0
        )
        assert (out1 / "trace.csv").read_bytes() == (out2 / "trace.csv").read_bytes()
        assert (out1 / "effective_config.cfg").read_bytes() == (
            out2 / "effective_config.cfg"
        ).read_bytes()

    def test_config_error_exit_code(self, tmp_path, capsys):
        code = self.run("simulate", "--out", str(tmp_path), "--set", "run.t_fin=-1")
        assert code == 2
        assert "config error" in capsys.readouterr().err

    def test_unknown_key_exit_code(self, tmp_path):
        cfg = tmp_path / "bad.cfg"
        cfg.write_text("nope.nope = 1\n")
        assert self.run("simulate", "--config", str(cfg), "--out", str(tmp_path)) == 2

    def test_missing_config_file(self, tmp_path):
        assert (
            self.run("simulate", "--config", str(tmp_path / "absent.cfg"), "--out", str(tmp_path))
            == 1
        )

    def test_divergence_exit_code(self, tmp_path, capsys):
        # strong positive feedback destabilizes the slave
        code = self.run(
            "simulate", "--out", str(tmp_path), "--set", "control.K=-100",
            "--set", "run.t_fin=50",
        )
        assert code == 3
        assert "non-finite" in capsys.readouterr().err

    def test_sweep_delta(self, tmp_path):
        out = tmp_path / "sweep"
        code = self.run(
            "sweep-delta", "--out", str(out),
            "--set", "sweep.deltas=1.0,2.0", "--set", "run.t_fin=20",
        )
        assert code == 0
        lines = (out / "sweep_delta.csv").read_text().splitlines()
        assert lines[0] == "delta,Ts,R,Qy,Q,flag"
        assert len(lines) == 3
        assert "G_y" in (out / "fit_summary.txt").read_text()

    def test_sweep_delta_default_grid(self, tmp_path):
        # default grid has 15 error levels; short horizon keeps this quick
        out = tmp_path / "grid"
        code = self.run("sweep-delta", "--out", str(out), "--set", "run.t_fin=10")
        assert code == 0
        lines = (out / "sweep_delta.csv").read_text().splitlines()
        assert len(lines) == 16
        summary = (out / "fit_summary.txt").read_text()
        assert "G_y" in summary and "G =" in summary

    def test_sweep_gain(self, tmp_path):
        out = tmp_path / "gain"
        code = self.run(
            "sweep-gain", "--out", str(out),
            "--set", "sweep.gains=1.0,2.0", "--set", "run.t_fin=20",
        )
        assert code == 0
        lines = (out / "sweep_gain.csv").read_text().splitlines()
        assert lines[0] == "K,Q,flag"
        assert len(lines) == 3

    def test_analyze_system(self, tmp_path, capsys):
        out = tmp_path / "an"
        assert self.run("analyze-system", "--out", str(out)) == 0
        report = (out / "analysis.txt").read_text()
        assert "HMP: true" in report
        assert "10 10 156" in report
        assert "C_e+" in report

    def test_analyze_system_infeasible(self, tmp_path):
        # K = -1 puts a closed-loop eigenvalue at the origin: no certificate
        out = tmp_path / "bad"
        code = self.run("analyze-system", "--out", str(out), "--set", "control.K=-1")
        assert code == 4
        assert "infeasible" in (out / "analysis.txt").read_text()

    def test_estimate_ly(self, tmp_path, capsys):
        out = tmp_path / "ly"
        code = self.run(
            "estimate-ly", "--out", str(out), "--set", "run.t_fin=50",
        )
        assert code == 0
        printed = capsys.readouterr().out
        assert "Ly = " in printed
        value = float((out / "estimate_ly.txt").read_text().split("=")[1])
        assert 0.0 < value < 1e3


def test_exit_codes_are_stable_contract():
    assert cli.EXIT_OK == 0
    assert cli.EXIT_CONFIG == 2
    assert cli.EXIT_DIVERGED == 3
    assert cli.EXIT_INFEASIBLE == 4
