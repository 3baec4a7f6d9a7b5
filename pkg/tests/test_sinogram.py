import numpy as np
import pytest

from braggtomo.sinogram import Sinogram, filter_sinogram, psi


def make_sino(values, energies, provenance="analytic"):
    energies = np.asarray(energies, dtype=float)
    return Sinogram(values, energies, np.array([0.0]), np.array([0.0]), 0.0, provenance)


class TestPsi:
    def test_endpoint_zero(self):
        assert psi(29.0, 1.0, 29.0) == pytest.approx(0.0, abs=1e-15)

    def test_unity_plateau(self):
        e = np.linspace(1.0, 14.5, 20)
        np.testing.assert_allclose(psi(e, 1.0, 29.0), 1.0, atol=1e-15)

    def test_three_quarters(self):
        assert psi(0.75 * 29.0, 1.0, 29.0) == pytest.approx(0.375, abs=1e-15)

    def test_monotone_upper_half(self):
        e = np.linspace(14.5, 29.0, 257)
        assert np.all(np.diff(psi(e, 1.0, 29.0)) <= 1e-15)

    def test_flat_landing(self):
        # d(psi)/dE vanishes at E_max: psi(E_max - h) is O(h^2)
        h = 1e-5
        assert psi(29.0 - h, 1.0, 29.0) < 1e-8

    def test_continuity_at_half(self):
        assert psi(14.5 - 1e-12, 1.0, 29.0) == pytest.approx(psi(14.5 + 1e-12, 1.0, 29.0), abs=1e-9)

    def test_precondition(self):
        with pytest.raises(ValueError):
            psi(10.0, 15.0, 29.0)
        with pytest.raises(ValueError):
            psi(0.5, 1.0, 29.0)


class TestFilter:
    def test_low_energy_rows_unchanged(self):
        s = make_sino(np.array([3.0, 4.0, 5.0]), [1.0, 3.0, 4.0])  # first row on the unity plateau
        out = filter_sinogram(s)
        # E_max = 4: rows at 1 keV are below E_max / 2
        assert out.values[0] == 3.0

    def test_top_energy_row_zeroed(self):
        s = make_sino(np.ones(4), [1.0, 2.0, 3.0, 8.0])
        out = filter_sinogram(s)
        assert out.values[-1] == pytest.approx(0.0, abs=1e-15)

    def test_ones_trace_out_profile(self):
        energies = np.arange(1.0, 30.0)
        s = make_sino(np.ones(energies.size), energies)
        out = filter_sinogram(s)
        np.testing.assert_allclose(out.values, psi(energies, 1.0, 29.0), atol=1e-15)

    def test_never_increases_never_negative(self):
        rng = np.random.default_rng(5)
        vals = rng.random(29) * 10
        s = make_sino(vals, np.arange(1.0, 30.0))
        out = filter_sinogram(s)
        assert np.all(out.values <= vals + 1e-15)
        assert np.all(out.values >= 0)

    def test_commutes_with_scaling(self):
        vals = np.arange(29.0) + 1
        s1 = make_sino(vals, np.arange(1.0, 30.0))
        s2 = make_sino(3.0 * vals, np.arange(1.0, 30.0))
        np.testing.assert_allclose(3.0 * filter_sinogram(s1).values, filter_sinogram(s2).values, rtol=1e-15)

    def test_provenance(self):
        s = make_sino(np.ones(3), [1.0, 5.0, 12.0])
        out = filter_sinogram(s)
        assert out.provenance == "filtered"
        with pytest.raises(ValueError):
            filter_sinogram(out)


class TestContainer:
    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            Sinogram(np.ones(5), np.array([1.0, 2.0]), np.array([0.0]), np.array([0.0]), 0.0, "analytic")

    def test_negative_rejected(self):
        with pytest.raises(ValueError):
            make_sino(np.array([-1.0, 0.0]), [1.0, 2.0])

    def test_nonfinite_rejected(self):
        with pytest.raises(ValueError):
            make_sino(np.array([np.nan, 0.0]), [1.0, 2.0])

    def test_bad_provenance(self):
        with pytest.raises(ValueError):
            make_sino(np.ones(2), [1.0, 2.0], provenance="simulated")

    def test_row_energies_order(self):
        s = Sinogram(np.zeros(12), np.array([1.0, 2.0]), np.array([0.0, 1.0]), np.array([0.0, 1.0, 2.0]), 0.0, "analytic")
        np.testing.assert_array_equal(s.row_energies(), np.repeat([1.0, 2.0], 6))

    def test_csv_export(self, tmp_path):
        s = Sinogram(np.arange(4.0), np.array([1.0]), np.array([-5.0, 5.0]), np.array([0.0, 1.0]), 0.0, "analytic")
        path = tmp_path / "sino.csv"
        s.to_csv(path)
        lines = path.read_text().strip().splitlines()
        assert lines[0] == "E_keV,s1_mm,d1_mm,counts"
        assert len(lines) == 5
