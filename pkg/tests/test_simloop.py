"""Closed-loop tests: determinism, engine equivalence, replay, rate formulas."""

import numpy as np
import pytest

from chansync.analysis import derive_codec_config
from chansync.codec import CodecConfig, decode_bits
from chansync.simloop import (
    BETA,
    SimConfig,
    bit_rate,
    estimate_Ly,
    export_trace_csv,
    optimal_sampling,
    sampling_bound,
    simulate,
)
from chansync.sysmodel import (
    ChuaParams,
    DivergenceError,
    LurieSystem,
    chua_system,
    zero_phi,
)

SECT5 = ChuaParams(p=10.0, q=15.6, m0=0.33, m1=0.945)


def chua_config(t_fin=5.0, K=1.0, x0=0.3, z0=0.0, delta=1.0, substeps=10):
    return SimConfig(
        system=chua_system(SECT5),
        codec=derive_codec_config(delta, 5.0, 45.0),
        K=K,
        x0=np.full(3, x0),
        z0=np.full(3, z0),
        t_fin=t_fin,
        substeps=substeps,
    )


class TestRateFormulas:
    def test_sampling_bound(self):
        assert sampling_bound(1.0, 45.0) == pytest.approx(1.0 / 45.0, rel=1e-15)
        assert sampling_bound(2.0, 45.0) == 2.0 * sampling_bound(1.0, 45.0)
        assert sampling_bound(1.0, 1e9) < 1e-8

    def test_optimal_sampling_values(self):
        assert optimal_sampling(1.0, 45.0) * 1e3 == pytest.approx(13.1648, abs=1e-3)
        assert optimal_sampling(0.2, 45.0) * 1e3 == pytest.approx(2.633, abs=1e-2)

    def test_optimal_below_supremum(self):
        for delta, ly in [(1.0, 45.0), (0.3, 12.0), (7.0, 2.0)]:
            assert optimal_sampling(delta, ly) < sampling_bound(delta, ly)

    def test_bit_rate(self):
        assert bit_rate(1.0) == 1.0
        assert bit_rate(0.01316) == pytest.approx(75.99, abs=0.01)
        # algebraic identity R(Ts_opt) = BETA * Ly / Delta
        assert bit_rate(optimal_sampling(1.0, 45.0)) == pytest.approx(
            BETA * 45.0, rel=1e-12
        )

    def test_validation(self):
        with pytest.raises(ValueError):
            sampling_bound(0.0, 45.0)
        with pytest.raises(ValueError):
            optimal_sampling(1.0, 0.0)
        with pytest.raises(ValueError):
            bit_rate(0.0)


class TestSimulateBasics:
    def test_identical_initials_zero_gain(self):
        # identical autonomous dynamics, zero coupling: e(t) == 0 exactly
        cfg = chua_config(t_fin=3.0, K=0.0, x0=0.3, z0=0.3)
        trace = simulate(cfg)
        assert np.array_equal(trace.z, trace.x)
        assert trace.stats.max_e_norm_window == 0.0

    def test_zero_gain_zero_control(self):
        cfg = chua_config(t_fin=2.0, K=0.0)
        trace = simulate(cfg)
        assert np.all(trace.u == 0.0)

    def test_determinism_bit_identical(self):
        cfg = chua_config(t_fin=20.0)
        a = simulate(cfg)
        b = simulate(cfg)
        for name in ("times", "x", "z", "y1", "y2", "ybar1", "u", "delta_y"):
            assert np.array_equal(getattr(a, name), getattr(b, name)), name
        assert np.array_equal(a.full.bits, b.full.bits)
        assert np.array_equal(a.full.M, b.full.M)

    def test_delta_y_identity(self):
        trace = simulate(chua_config(t_fin=5.0))
        assert np.array_equal(trace.delta_y, trace.y1 - trace.ybar1)

    def test_y_outputs_match_states(self):
        trace = simulate(chua_config(t_fin=2.0))
        assert np.array_equal(trace.y1, trace.x[:, 0])
        assert np.array_equal(trace.y2, trace.z[:, 0])

    def test_control_wiring(self):
        cfg = chua_config(t_fin=2.0, K=2.5)
        trace = simulate(cfg)
        assert np.allclose(trace.u, -2.5 * (trace.y2 - trace.ybar1), atol=1e-15)

    def test_sample_count_and_grid(self):
        cfg = chua_config(t_fin=1.0)
        trace = simulate(cfg)
        assert trace.n_intervals == int(np.ceil(1.0 / cfg.codec.Ts - 1e-9))
        assert trace.decimation == 1
        assert np.allclose(np.diff(trace.times), cfg.codec.Ts, rtol=1e-12)

    def test_decimation_rule(self):
        cfg = chua_config(t_fin=120.0)
        trace = simulate(cfg)
        assert trace.decimation == 10
        n = trace.n_intervals
        assert len(trace.times) == (n + 9) // 10
        assert len(trace.full.bits) == n
        assert len(trace.full.e_norm) == n
        # stored-grid series subsample the full series
        assert np.array_equal(trace.M_history, trace.full.M[::10])


class TestEngineEquivalence:
    def test_bits_and_states_agree(self):
        cfg = chua_config(t_fin=5.0)
        nb = simulate(cfg, engine="numba")
        py = simulate(cfg, engine="python")
        assert np.array_equal(nb.full.bits, py.full.bits)
        assert np.array_equal(nb.full.M, py.full.M)
        assert np.array_equal(nb.ybar1, py.ybar1)
        assert np.max(np.abs(nb.x - py.x)) < 1e-9
        assert np.max(np.abs(nb.z - py.z)) < 1e-9
        assert nb.saturation_count == py.saturation_count

    def test_numba_engine_requires_chua_phi(self):
        sys_ = LurieSystem(A=-np.eye(2), B=[1.0, 0.0], C=[1.0, 0.0], phi=zero_phi, lipschitz=0.0)
        cfg = SimConfig(
            system=sys_,
            codec=CodecConfig(M0=1.0, M_inf=0.1, rho=0.99, Ts=0.05),
            K=0.5,
            x0=[1.0, 0.0],
            z0=[0.0, 0.0],
            t_fin=1.0,
        )
        with pytest.raises(ValueError):
            simulate(cfg, engine="numba")
        trace = simulate(cfg)  # auto falls back to the python loop
        assert trace.n_intervals == 20


class TestReplay:
    def test_offline_decoder_replay_matches_loop(self):
        cfg = chua_config(t_fin=20.0)
        trace = simulate(cfg)
        replay = decode_bits(trace.full.bits, cfg.codec)
        assert np.array_equal(replay[:: trace.decimation], trace.ybar1)

    def test_replay_matches_python_engine(self):
        cfg = chua_config(t_fin=5.0)
        trace = simulate(cfg, engine="python")
        replay = decode_bits(trace.full.bits, cfg.codec)
        assert np.array_equal(replay, trace.ybar1)


class TestDivergence:
    def test_unstable_system_aborts_with_partial_trace(self):
        A = 300.0 * np.eye(2)
        sys_ = LurieSystem(A=A, B=[1.0, 0.0], C=[1.0, 0.0], phi=zero_phi, lipschitz=0.0)
        cfg = SimConfig(
            system=sys_,
            codec=CodecConfig(M0=5.0, M_inf=0.5, rho=0.999, Ts=0.01),
            K=0.0,
            x0=[1.0, 1.0],
            z0=[0.0, 0.0],
            t_fin=10.0,
        )
        with pytest.raises(DivergenceError) as exc_info:
            simulate(cfg)
        trace = exc_info.value.trace
        assert trace is not None and trace.diverged
        assert 0 < trace.n_intervals < 1000
        assert np.all(np.isfinite(trace.x))

    def test_estimate_ly_divergence(self):
        sys_ = LurieSystem(A=[[300.0]], B=[1.0], C=[1.0], phi=zero_phi, lipschitz=0.0)
        with pytest.raises(DivergenceError):
            estimate_Ly(sys_, [1.0], 10.0, 0.01)


class TestEstimateLy:
    def test_linear_decay_peaks_at_start(self):
        sys_ = LurieSystem(A=-np.eye(2), B=[1.0, 0.0], C=[1.0, 0.0], phi=zero_phi, lipschitz=0.0)
        ly = estimate_Ly(sys_, [1.0, 0.0], 5.0, 0.001)
        assert ly == pytest.approx(1.0, rel=1e-9)  # |C A x0| at t = 0

    def test_linear_in_output_map(self):
        A = np.array([[-1.0, 0.5], [0.0, -2.0]])
        s1 = LurieSystem(A=A, B=[1.0, 0.0], C=[1.0, 0.0], phi=zero_phi, lipschitz=0.0)
        s2 = LurieSystem(A=A, B=[1.0, 0.0], C=[2.0, 0.0], phi=zero_phi, lipschitz=0.0)
        x0 = [0.7, -0.3]
        assert estimate_Ly(s2, x0, 3.0, 0.001) == pytest.approx(
            2.0 * estimate_Ly(s1, x0, 3.0, 0.001), rel=1e-12
        )

    def test_chua_short_horizon(self):
        ly = estimate_Ly(chua_system(SECT5), [0.3, 0.3, 0.3], 100.0, 0.002)
        assert 20.0 < ly < 35.0

    def test_validation(self):
        sys_ = chua_system(SECT5)
        with pytest.raises(ValueError):
            estimate_Ly(sys_, [0.3, 0.3, 0.3], -1.0, 0.01)
        with pytest.raises(ValueError):
            estimate_Ly(sys_, [0.3, 0.3], 1.0, 0.01)


class TestTraceExport:
    def test_header_and_shape(self, tmp_path):
        trace = simulate(chua_config(t_fin=1.0))
        path = tmp_path / "trace.csv"
        export_trace_csv(trace, path)
        lines = path.read_text().splitlines()
        assert lines[0] == "t,x1,x2,x3,z1,z2,z3,y1,ybar1,y2,u,delta_y,M"
        assert len(lines) == 1 + len(trace.times)

    def test_values_round_trip(self, tmp_path):
        trace = simulate(chua_config(t_fin=1.0))
        path = tmp_path / "trace.csv"
        export_trace_csv(trace, path)
        data = np.loadtxt(path, delimiter=",", skiprows=1)
        assert np.array_equal(data[:, 0], trace.times)
        assert np.array_equal(data[:, 1:4], trace.x)
        assert np.array_equal(data[:, 12], trace.M_history)


class TestConfigValidation:
    def test_bad_dimensions(self):
        with pytest.raises(ValueError):
            chua_config(t_fin=1.0).__class__(
                system=chua_system(SECT5),
                codec=derive_codec_config(1.0, 5.0, 45.0),
                K=1.0,
                x0=[0.3, 0.3],
                z0=[0.0, 0.0, 0.0],
                t_fin=1.0,
            )

    def test_bad_horizon_and_substeps(self):
        with pytest.raises(ValueError):
            chua_config(t_fin=-1.0)
        with pytest.raises(ValueError):
            chua_config(substeps=0)
