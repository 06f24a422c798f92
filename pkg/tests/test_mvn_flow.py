"""Tests for the pseudo-spectral integrator of the first two flows"""

import json
import os

import numpy as np
import pytest

from conftest import band_limited

import diffop_algebra
import mvn_const
import mvn_flow
import mvn_verifier
import spectral_field

from mvn_flow import ConfigError, EvolveConfig, FlowState
from spectral_field import RealField

CONFIG_DIR = os.path.join(os.path.dirname(os.path.dirname(os.path.abspath(__file__))), "configs")


def cosine(grid, amplitude=0.1):
    x, _ = grid.coords()
    return RealField(grid, amplitude * np.cos(x))


def small_config(tmp_path, **overrides):
    data = {
        "grid": {"n": 16},
        "flow": {"n_flow": 1, "steps": 3, "dt": 1e-3},
        "ic": {"kind": "random", "amplitude": 0.1, "seed": 5, "kmax": 3},
        "output": {"dir": str(tmp_path / "run"), "snapshot_every": 2},
    }
    for key, value in overrides.items():
        section, _, name = key.partition("_")
        data[section][name] = value
    return EvolveConfig.from_dict(data)


class TestNonlocalFields:
    def test_omega_closed_form(self, grid64):
        x, _ = grid64.coords()
        omega = mvn_flow.compute_omega(cosine(grid64))
        np.testing.assert_allclose(omega.samples, np.cos(2 * x) / 200, atol=1e-15)

    def test_omega_solves_dbar_equation(self, random_p64):
        omega = mvn_flow.compute_omega(random_p64)
        lhs = spectral_field.wirtinger(omega, "dzbar")
        rhs = spectral_field.wirtinger(random_p64 * random_p64, "dz")
        assert np.max(np.abs((lhs - rhs).samples)) <= 1e-12 * rhs.max_abs()

    def test_zeta_closed_form(self, grid64):
        # x-only fields: d = dbar = d/dx / 2, so zeta = p^2 omega - (dp)^2 minus its mean
        x, _ = grid64.coords()
        p = cosine(grid64)
        zeta = mvn_flow.compute_zeta(p, mvn_flow.compute_omega(p))
        expected = 51 * np.cos(2 * x) / 40000 + np.cos(4 * x) / 80000
        np.testing.assert_allclose(zeta.samples, expected, atol=1e-15)

    def test_zeta_solves_dbar_equation(self, random_p64):
        p = random_p64
        omega = mvn_flow.compute_omega(p)
        zeta = mvn_flow.compute_zeta(p, omega)
        dp = spectral_field.wirtinger(p, "dz")
        rhs = spectral_field.wirtinger(p * p * omega - dp * dp, "dz")
        lhs = spectral_field.wirtinger(zeta, "dzbar")
        assert np.max(np.abs((lhs - rhs).samples)) <= 1e-12 * rhs.max_abs()


class TestRightHandSide:
    def test_first_flow_closed_form(self, grid64):
        x, _ = grid64.coords()
        rhs = mvn_flow.flow_rhs(cosine(grid64), 1, dealias=False)
        np.testing.assert_allclose(rhs.samples, np.sin(x) / 40 - 3 * np.sin(3 * x) / 2000, atol=1e-12)

    @pytest.mark.parametrize("n", [1, 2])
    def test_zero_is_fixed(self, grid64, n):
        p = RealField(grid64, np.zeros(grid64.shape))
        assert mvn_flow.flow_rhs(p, n).max_abs() == 0.0

    @pytest.mark.parametrize("n", [1, 2])
    def test_constant_is_fixed(self, grid64, n):
        p = RealField(grid64, np.full(grid64.shape, 0.3))
        assert mvn_flow.flow_rhs(p, n).max_abs() < 1e-10

    @pytest.mark.parametrize("n", [1, 2])
    def test_matches_symbolic_rhs(self, grid128, n):
        p = band_limited(grid128, seed=4)
        omega = mvn_flow.compute_omega(p)
        binding = {"p": p, "w": omega, "zt": mvn_flow.compute_zeta(p, omega)}
        symbolic = diffop_algebra.eval_on_grid(mvn_verifier.flow_rhs_symbolic(n), binding)
        numeric = mvn_flow.flow_rhs_plus(p, n, dealias=False)
        assert np.max(np.abs((symbolic - numeric).samples)) <= 1e-10 * numeric.max_abs()
        full = mvn_flow.flow_rhs(p, n, dealias=False)
        assert np.max(np.abs(2 * symbolic.samples.real - full.samples)) <= 1e-10 * full.max_abs()

    def test_rhs_is_head_plus_nonlinear(self, random_p64):
        head = spectral_field.from_modes(
            random_p64.grid, mvn_flow.linear_symbol(random_p64.grid, 2) * spectral_field.to_modes(random_p64)
        )
        total = mvn_flow.flow_rhs(random_p64, 2)
        split = mvn_flow.nonlinear_rhs(random_p64, 2) + head.real
        np.testing.assert_allclose(total.samples, split.samples, atol=1e-12)

    def test_bad_order(self, random_p64):
        with pytest.raises(ValueError, match="flow n must be one of"):
            mvn_flow.flow_rhs(random_p64, 3)


class TestConservedQuantities:
    def test_willmore_closed_form(self, grid64):
        assert mvn_flow.willmore(cosine(grid64)) == pytest.approx(np.pi**2 / 25, rel=1e-13)

    @pytest.mark.parametrize("n", [1, 2])
    def test_flux_identity(self, grid128, n):
        p = band_limited(grid128, seed=6, kmax=4)
        assert mvn_flow.flux_residual_numeric(p, n) < 1e-8

    @pytest.mark.parametrize("n", [1, 2])
    def test_rhs_is_orthogonal_to_p(self, random_p64, n):
        dS = 4 * spectral_field.integrate(random_p64 * mvn_flow.flow_rhs(random_p64, n, dealias=False)).real
        assert abs(dS) < 1e-12


class TestStep:
    def test_scheme_convergence(self):
        grid = spectral_field.make_grid(16)
        start = FlowState(p=cosine(grid, 0.5), n_flow=1)
        finals = [mvn_flow.integrate_to(start, 0.2, dt).p.samples for dt in (0.005, 0.0025, 0.00125)]
        e1 = np.max(np.abs(finals[0] - finals[1]))
        e2 = np.max(np.abs(finals[1] - finals[2]))
        assert 14.0 <= e1 / e2 <= 18.0

    def test_rk4_agrees_with_ifrk4(self):
        grid = spectral_field.make_grid(16)
        start = FlowState(p=cosine(grid, 0.2), n_flow=1)
        a = mvn_flow.integrate_to(start, 0.01, 0.001, scheme="ifrk4")
        b = mvn_flow.integrate_to(start, 0.01, 0.001, scheme="rk4")
        assert a.t == pytest.approx(0.01)
        np.testing.assert_allclose(a.p.samples, b.p.samples, atol=1e-9)

    def test_blow_up_cap(self, random_p64):
        with pytest.raises(mvn_flow.FlowBlowUpError, match="blow-up cap"):
            mvn_flow.step(FlowState(p=random_p64), 1e-4, blowup_cap=0.01)

    def test_rejects_bad_dt(self, random_p64):
        with pytest.raises(ValueError, match="dt must be positive"):
            mvn_flow.step(FlowState(p=random_p64), 0.0)

    def test_default_dt(self, grid64):
        k_half = 64 / 3 / 2
        assert mvn_flow.default_dt(grid64, 1) == pytest.approx(0.5 / k_half**3)
        assert mvn_flow.default_dt(grid64, 2) < mvn_flow.default_dt(grid64, 1)


class TestConfig:
    def test_config_files_load(self):
        for n, name in ((1, "flow1.toml"), (2, "flow2.toml")):
            config = EvolveConfig.from_file(os.path.join(CONFIG_DIR, name))
            assert config.flow.n_flow == n
            assert config.grid.n == 64

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError, match="not found"):
            EvolveConfig.from_file(str(tmp_path / "nope.toml"))

    def test_bad_toml(self, tmp_path):
        path = tmp_path / "bad.toml"
        path.write_text("[grid\nn = 3\n")
        with pytest.raises(ConfigError):
            EvolveConfig.from_file(str(path))

    @pytest.mark.parametrize(
        "data,message",
        [
            ({"grid": {"n": 7}}, r"\[grid\]"),
            ({"flow": {"n_flow": 3}}, "n_flow must be one of"),
            ({"flow": {"dt": -1.0}}, "dt must be positive"),
            ({"flow": {"scheme": "euler"}}, "scheme must be one of"),
            ({"ic": {"kind": "soliton"}}, "kind must be one of"),
            ({"flow": {"stepz": 3}}, "unknown keys"),
            ({"solver": {}}, "unknown config sections"),
        ],
    )
    def test_invalid(self, data, message):
        with pytest.raises(ConfigError, match=message):
            EvolveConfig.from_dict(data)

    def test_overrides(self, tmp_path):
        config = small_config(tmp_path).with_overrides(flow_steps=0, grid_n=32, ic_seed=None)
        assert config.flow.steps == 0
        assert config.grid.n == 32
        assert config.ic.seed == 5
        with pytest.raises(ConfigError, match="unknown override"):
            config.with_overrides(flow_speed=2)

    def test_resolve_dt(self, grid64):
        assert mvn_flow.FlowConfig(dt=0.01).resolve_dt(grid64) == 0.01
        assert mvn_flow.FlowConfig(n_flow=2).resolve_dt(grid64) == mvn_flow.default_dt(grid64, 2)


class TestEvolve:
    def test_zero_steps(self, tmp_path):
        config = small_config(tmp_path, flow_steps=0)
        result = mvn_flow.evolve(config)
        out = tmp_path / "run"
        assert len(result.diagnostics) == 1
        assert result.snapshots == [str(out / "p_000000.txt")]
        field, _ = spectral_field.read_field(result.snapshots[0])
        expected = mvn_flow.initial_condition(config.grid.make_grid(), config.ic)
        np.testing.assert_array_equal(field.samples, expected.samples)
        with open(out / mvn_const.RESOLVED_CONFIG_FILENAME) as f:
            resolved = json.load(f)
        assert resolved["flow"]["dt"] == 1e-3

    def test_outputs(self, tmp_path):
        rows = []
        result = mvn_flow.evolve(small_config(tmp_path), on_diagnostics=rows.append)
        out = tmp_path / "run"
        assert [d.step for d in rows] == [0, 1, 2, 3]
        assert [os.path.basename(s) for s in result.snapshots] == ["p_000000.txt", "p_000002.txt", "p_000003.txt"]
        lines = (out / mvn_const.DIAGNOSTICS_FILENAME).read_text().splitlines()
        assert lines[0].split(",") == list(mvn_const.DIAGNOSTICS_COLUMNS)
        assert len(lines) == 5
        with open(out / mvn_const.SUMMARY_FILENAME) as f:
            summary = json.load(f)
        assert summary["steps"] == 3
        assert summary["t_final"] == pytest.approx(3e-3)

    def test_deterministic(self, tmp_path):
        a = mvn_flow.evolve(small_config(tmp_path / "a"))
        b = mvn_flow.evolve(small_config(tmp_path / "b"))
        np.testing.assert_array_equal(a.state.p.samples, b.state.p.samples)

    def test_blow_up_carries_diagnostics(self, tmp_path):
        config = small_config(tmp_path, flow_blowup_cap=0.05)
        with pytest.raises(mvn_flow.FlowBlowUpError) as excinfo:
            mvn_flow.evolve(config)
        assert excinfo.value.diagnostics.step == 0

    @pytest.mark.slow
    @pytest.mark.parametrize("n_flow", [1, 2])
    def test_conservation(self, tmp_path, n_flow):
        config = EvolveConfig.from_file(os.path.join(CONFIG_DIR, f"flow{n_flow}.toml"))
        config = config.with_overrides(output_dir=str(tmp_path), flow_flux_every=0, output_snapshot_every=1000)
        result = mvn_flow.evolve(config)
        assert len(result.diagnostics) == 1001
        assert max(d.s_drift_rel for d in result.diagnostics) <= 1e-6
