"""Tests for the periodic spectral field layer"""

import logging

import numpy as np
import pytest

from conftest import band_limited

import spectral_field

from spectral_field import ComplexField, GaugeObstructionError, GridError, RealField


def plane_wave(grid, mx, my):
    x, y = grid.coords()
    return ComplexField(grid, np.exp(1j * (mx * x + my * y)))


class TestGrid:
    def test_basic(self, grid64):
        assert grid64.n == 64
        assert grid64.shape == (64, 64)
        assert np.isclose(grid64.spacing, 2 * np.pi / 64)
        x, y = grid64.coords()
        assert x[1, 0] == pytest.approx(grid64.spacing)
        assert y[1, 0] == 0.0

    @pytest.mark.parametrize("n", [6, 7, 65, 0])
    def test_rejects_bad_n(self, n):
        with pytest.raises(GridError, match="n must be even"):
            spectral_field.make_grid(n)

    def test_rejects_bad_length(self):
        with pytest.raises(GridError, match="length must be positive"):
            spectral_field.make_grid(16, 0.0)

    def test_field_shape_checked(self, grid64):
        with pytest.raises(GridError):
            RealField(grid64, np.zeros((32, 32)))

    def test_field_rejects_nan(self, grid64):
        samples = np.zeros(grid64.shape)
        samples[3, 4] = np.nan
        with pytest.raises(ValueError, match="finite"):
            RealField(grid64, samples)

    def test_grid_mismatch(self, grid64, grid128):
        with pytest.raises(GridError, match="grid mismatch"):
            RealField(grid64, np.ones(grid64.shape)) + RealField(grid128, np.ones(grid128.shape))

    def test_real_plus_complex_is_complex(self, grid64):
        result = RealField(grid64, np.ones(grid64.shape)) + ComplexField(grid64, 1j * np.ones(grid64.shape))
        assert isinstance(result, ComplexField)
        assert isinstance(result.real, RealField)


class TestWirtinger:
    @pytest.mark.parametrize("mx,my", [(1, 0), (0, 1), (3, -2), (-5, 7)])
    def test_plane_wave_symbols(self, grid64, mx, my):
        f = plane_wave(grid64, mx, my)
        d = spectral_field.wirtinger(f, "dz")
        dbar = spectral_field.wirtinger(f, "dzbar")
        np.testing.assert_allclose(d.samples, (1j * mx + my) / 2 * f.samples, atol=1e-12)
        np.testing.assert_allclose(dbar.samples, (1j * mx - my) / 2 * f.samples, atol=1e-12)

    def test_higher_order(self, grid64):
        f = plane_wave(grid64, 2, 1)
        d3 = spectral_field.wirtinger(f, "dz", order=3)
        np.testing.assert_allclose(d3.samples, ((2j + 1) / 2) ** 3 * f.samples, atol=1e-11)

    @pytest.mark.parametrize("order", [0, 9])
    def test_order_range(self, grid64, order):
        with pytest.raises(ValueError, match="order must be in"):
            spectral_field.wirtinger(plane_wave(grid64, 1, 0), "dz", order=order)

    def test_d_dbar_is_quarter_laplacian(self, random_p64):
        mixed = spectral_field.mixed_derivative(random_p64, 1, 1)
        laplacian = (spectral_field.partial(random_p64, 0, 2) + spectral_field.partial(random_p64, 1, 2)) * 0.25
        np.testing.assert_allclose(mixed.samples, laplacian.samples, atol=1e-13)

    def test_nyquist_zeroed(self, grid64):
        x, _ = grid64.coords()
        f = RealField(grid64, np.cos(32 * x))
        assert spectral_field.partial(f, 0).max_abs() < 1e-12

    def test_twisted_axis(self, grid64):
        x, y = grid64.coords()
        psi = ComplexField(grid64, np.exp(0.5j * x) * np.cos(y))
        d = spectral_field.wirtinger(psi, "dz", twist=(True, False))
        expected = 0.5 * (0.5j * np.exp(0.5j * x) * np.cos(y) + 1j * np.exp(0.5j * x) * np.sin(y))
        np.testing.assert_allclose(d.samples, expected, atol=1e-12)


class TestDbarInverse:
    @pytest.mark.parametrize("mx,my", [(1, 0), (0, 1), (2, -3), (20, 1)])
    def test_single_mode_recovery(self, grid64, mx, my):
        f = plane_wave(grid64, mx, my)
        g = spectral_field.dbar_inverse(spectral_field.wirtinger(f, "dzbar"))
        assert np.max(np.abs(g.samples - f.samples)) <= 1e-13

    def test_result_has_zero_mean(self, random_p64):
        g = spectral_field.dbar_inverse(spectral_field.wirtinger(random_p64 * random_p64, "dz"))
        assert abs(spectral_field.integrate(g)) < 1e-12

    def test_gauge_obstruction(self, grid64):
        x, _ = grid64.coords()
        with pytest.raises(GaugeObstructionError, match="gauge obstruction"):
            spectral_field.dbar_inverse(RealField(grid64, 1.0 + np.cos(x)))

    def test_zero_field(self, grid64):
        g = spectral_field.dbar_inverse(RealField(grid64, np.zeros(grid64.shape)))
        assert g.max_abs() == 0.0

    def test_nyquist_is_projected_out(self, grid64, caplog):
        x, _ = grid64.coords()
        f = plane_wave(grid64, 2, 1)
        rhs = spectral_field.wirtinger(f, "dzbar") + RealField(grid64, np.cos(32 * x))
        with caplog.at_level(logging.WARNING, logger="spectral_field"):
            g = spectral_field.dbar_inverse(rhs)
        assert np.max(np.abs(g.samples - f.samples)) <= 1e-13
        assert "Nyquist" in caplog.text

    def test_no_warning_for_derivatives(self, random_p64, caplog):
        with caplog.at_level(logging.WARNING, logger="spectral_field"):
            spectral_field.dbar_inverse(spectral_field.wirtinger(random_p64, "dz"))
        assert "Nyquist" not in caplog.text


class TestProducts:
    def test_truncate_2_3_rule(self, grid64):
        x, _ = grid64.coords()
        kept = np.cos(21 * x)
        f = RealField(grid64, kept + np.cos(22 * x))
        np.testing.assert_allclose(spectral_field.truncate(f).samples, kept, atol=1e-12)

    def test_dealiased_product_of_low_modes_is_exact(self, grid64):
        x, y = grid64.coords()
        f = RealField(grid64, np.cos(3 * x))
        g = RealField(grid64, np.sin(2 * y))
        np.testing.assert_allclose(
            spectral_field.product(f, g, dealias=True).samples, np.cos(3 * x) * np.sin(2 * y), atol=1e-13
        )

    def test_integrate(self, grid64):
        x, _ = grid64.coords()
        f = RealField(grid64, np.cos(x) ** 2)
        assert spectral_field.integrate(f).real == pytest.approx(2 * np.pi**2, rel=1e-13)

    def test_parseval(self, grid64):
        assert spectral_field.parseval_residual(band_limited(grid64, seed=7)) < 1e-12

    def test_cumulative_periodic(self, grid64):
        x, _ = grid64.coords()
        integral, period = spectral_field.cumulative_periodic(1.0 + np.cos(x), 0, grid64.spacing)
        np.testing.assert_allclose(integral, x + np.sin(x), atol=1e-12)
        np.testing.assert_allclose(period, 2 * np.pi, rtol=1e-13)


class TestFieldFiles:
    def test_round_trip_is_exact(self, tmp_path, random_p64):
        path = str(tmp_path / "p.txt")
        spectral_field.write_field(path, random_p64, t="0.5")
        field, header = spectral_field.read_field(path)
        assert isinstance(field, RealField)
        assert header["t"] == "0.5"
        np.testing.assert_array_equal(field.samples, random_p64.samples)

    def test_complex_round_trip(self, tmp_path, grid64):
        f = plane_wave(grid64, 1, 2)
        path = str(tmp_path / "f.txt")
        spectral_field.write_field(path, f)
        g, _ = spectral_field.read_field(path)
        np.testing.assert_array_equal(g.samples, f.samples)

    def test_missing_header(self, tmp_path):
        path = tmp_path / "bad.txt"
        path.write_text("1.0\n2.0\n")
        with pytest.raises(spectral_field.FieldFormatError, match="header"):
            spectral_field.read_field(str(path))

    def test_wrong_sample_count(self, tmp_path):
        path = tmp_path / "short.txt"
        path.write_text("# n=8 length=6.283185307179586 kind=real\n1.0\n2.0\n")
        with pytest.raises(spectral_field.FieldFormatError, match="expected 64 samples"):
            spectral_field.read_field(str(path))
