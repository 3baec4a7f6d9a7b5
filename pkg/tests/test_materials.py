import numpy as np
import pytest

from braggtomo.materials import (
    AttenuationTable,
    BraggPeakList,
    GaussianMixtureParams,
    atomic_form_factor,
    builtin_attenuation,
    builtin_peaks,
    d_spacing_cubic,
    evaluate_F,
    interp_mu,
    load_attenuation_table,
    load_peak_list,
    normalized_peaks,
    peak_q_from_spacing,
    save_peak_list,
    structure_factor,
    total_mu,
)


class TestSpacing:
    def test_simple_cubic(self):
        assert d_spacing_cubic(5.64, (1, 0, 0)) == pytest.approx(5.64)
        assert d_spacing_cubic(5.64, (2, 0, 0)) == pytest.approx(2.82)

    def test_diamond_111(self):
        assert d_spacing_cubic(3.567, (1, 1, 1)) == pytest.approx(3.567 / np.sqrt(3), rel=1e-12)

    def test_zero_index(self):
        with pytest.raises(ValueError):
            d_spacing_cubic(5.64, (0, 0, 0))

    def test_peak_q(self):
        assert peak_q_from_spacing(0.5) == pytest.approx(1.0)
        assert peak_q_from_spacing(3.567 / np.sqrt(3)) == pytest.approx(0.24285, abs=2e-4)
        assert peak_q_from_spacing(1e9) == pytest.approx(0.0, abs=1e-9)

    def test_q_monotone_in_index_norm(self):
        a0 = 4.0
        qs = [peak_q_from_spacing(d_spacing_cubic(a0, h)) for h in [(1, 0, 0), (1, 1, 0), (1, 1, 1), (2, 0, 0), (2, 1, 0)]]
        assert np.all(np.diff(qs) > 0)


class TestStructureFactor:
    def test_single_atom(self):
        f = atomic_form_factor("C")
        q = 0.3
        assert structure_factor(q, [(f, (0, 0, 0))], (1, 1, 1)) == pytest.approx(float(f(q)) ** 2, rel=1e-12)

    def test_body_centered_extinction(self):
        f = atomic_form_factor("Na")
        cell = [(f, (0, 0, 0)), (f, (0.5, 0.5, 0.5))]
        assert structure_factor(0.2, cell, (1, 0, 0)) == pytest.approx(0.0, abs=1e-18)

    def test_in_phase_pair(self):
        f = atomic_form_factor("Na")
        cell = [(f, (0, 0, 0)), (f, (0.5, 0.5, 0.5))]
        assert structure_factor(0.2, cell, (1, 1, 0)) == pytest.approx(4.0 * float(f(0.2)) ** 2, rel=1e-12)

    def test_empty_cell(self):
        with pytest.raises(ValueError):
            structure_factor(0.2, [], (1, 0, 0))


class TestMixture:
    def test_peak_center_is_max(self):
        peaks = BraggPeakList("m", [0.3], [2.0])
        gm = GaussianMixtureParams(1e-6)
        grid = np.linspace(0, 2, 2001)
        norm = normalized_peaks(peaks, gm, grid)
        curve = evaluate_F(grid, norm, gm)
        assert curve.max() == pytest.approx(1.0, rel=1e-9)
        assert abs(grid[np.argmax(curve)] - 0.3) <= grid[1] - grid[0]

    def test_tail_is_zero(self):
        peaks = BraggPeakList("m", [0.3], [1.0])
        gm = GaussianMixtureParams(1e-6)
        assert evaluate_F(0.5, peaks, gm) < 1e-300

    def test_two_peak_midpoint(self):
        peaks = BraggPeakList("m", [0.2, 0.4], [1.0, 1.0])
        gm = GaussianMixtureParams(1e-6)
        assert evaluate_F(0.3, peaks, gm) == pytest.approx(2.0 * np.exp(-0.01 / 1e-6), abs=1e-300)

    def test_nonnegative_and_argmax_near_peak(self):
        peaks = builtin_peaks("nacl")
        gm = GaussianMixtureParams(1e-4)
        grid = np.linspace(0, 2, 4001)
        curve = evaluate_F(grid, peaks, gm)
        assert np.all(curve >= 0)
        qmax = grid[np.argmax(curve)]
        assert np.min(np.abs(peaks.q - qmax)) <= grid[1] - grid[0]

    def test_invariants(self):
        with pytest.raises(ValueError):
            BraggPeakList("m", [], [])
        with pytest.raises(ValueError):
            BraggPeakList("m", [0.4, 0.2], [1, 1])
        with pytest.raises(ValueError):
            BraggPeakList("m", [0.2, 2.5], [1, 1])
        with pytest.raises(ValueError):
            GaussianMixtureParams(0.0)


class TestAttenuation:
    def make_table(self):
        return AttenuationTable("t", [1.0, 10.0, 100.0], [8.0, 1.0, 0.02], [0.1, 0.2, 0.3], [0.4, 0.2, 0.05])

    def test_exact_row(self):
        tbl = self.make_table()
        assert total_mu(10.0, tbl) == pytest.approx(1.0 + 0.2 + 0.2)

    def test_all_zero(self):
        tbl = AttenuationTable("z", [1.0, 10.0], [0, 0], [0, 0], [0, 0])
        assert total_mu(5.0, tbl) == 0.0

    def test_loglog_interpolation(self):
        tbl = self.make_table()
        # hand interpolation between the 10 and 100 keV rows for mu_pe
        e = 30.0
        t = (np.log(30.0) - np.log(10.0)) / (np.log(100.0) - np.log(10.0))
        expected = np.exp((1 - t) * np.log(1.0) + t * np.log(0.02))
        assert interp_mu(e, tbl)[0] == pytest.approx(expected, rel=1e-12)

    def test_out_of_range(self):
        with pytest.raises(ValueError):
            total_mu(0.5, self.make_table())
        with pytest.raises(ValueError):
            total_mu(101.0, self.make_table())

    def test_total_bounds_partials_and_continuity(self):
        tbl = self.make_table()
        for e in (2.0, 9.999999, 10.0, 10.000001, 55.0):
            pe, inc, coh = interp_mu(e, tbl)
            assert total_mu(e, tbl) >= max(pe, inc, coh)
        assert total_mu(10.0 - 1e-9, tbl) == pytest.approx(total_mu(10.0 + 1e-9, tbl), rel=1e-6)

    def test_monotone_energies_rejected(self):
        with pytest.raises(ValueError):
            AttenuationTable("t", [1.0, 1.0], [0, 0], [0, 0], [0, 0])


class TestBuiltins:
    @pytest.mark.parametrize("mat", ["nacl", "c_graphite", "c_diamond"])
    def test_peaks_load(self, mat):
        peaks = builtin_peaks(mat)
        assert peaks.q.size >= 10
        assert np.all(np.diff(peaks.q) > 0)
        assert 0 < peaks.q[0] and peaks.q[-1] < 2.0
        assert peaks.g.max() == pytest.approx(1.0)

    @pytest.mark.parametrize("mat", ["nacl", "c_graphite", "c_diamond", "cellulose"])
    def test_attenuation_covers_range(self, mat):
        tbl = builtin_attenuation(mat)
        assert tbl.energies[0] <= 1.0 and tbl.energies[-1] >= 29.0
        mus = [total_mu(e, tbl) for e in np.arange(1.0, 30.0)]
        assert np.all(np.diff(mus) < 0)  # photoelectric-dominated regime

    def test_clutter_is_tenth_of_cellulose(self):
        cel = builtin_attenuation("cellulose")
        clu = builtin_attenuation("clutter")
        np.testing.assert_allclose(clu.mu_pe, 0.1 * cel.mu_pe)
        np.testing.assert_allclose(clu.mu_inc, 0.1 * cel.mu_inc)
        np.testing.assert_allclose(clu.mu_coh, 0.1 * cel.mu_coh)

    def test_unknown_material(self):
        with pytest.raises(KeyError):
            builtin_peaks("kryptonite")


class TestCsvIO:
    def test_peak_roundtrip(self, tmp_path):
        peaks = BraggPeakList("m", [0.1, 0.25, 1.5], [1.0, 0.3, 0.02])
        path = tmp_path / "m.csv"
        save_peak_list(path, peaks)
        back = load_peak_list(path, "m")
        np.testing.assert_allclose(back.q, peaks.q)
        np.testing.assert_allclose(back.g, peaks.g)

    def test_bad_header(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("q,i\n0.1,1.0\n")
        with pytest.raises(ValueError):
            load_peak_list(path)

    def test_non_numeric(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("E_keV,mu_pe_per_mm,mu_inc_per_mm,mu_coh_per_mm\n1.0,x,0,0\n")
        with pytest.raises(ValueError):
            load_attenuation_table(path)
