import numpy as np
import pytest
from hypothesis import given, strategies as st

from braggtomo.geometry import (
    GeometryError,
    ScannerConfig,
    bragg_angle,
    detector_height,
    momentum_transfer,
    paper_scanner,
    polarization,
    solid_angle,
    source_falloff,
    source_width,
)


@pytest.fixture(scope="module")
def cfg():
    return paper_scanner()


class TestDetectorHeight:
    def test_endpoints_and_center(self, cfg):
        assert detector_height(-410.0, cfg) == pytest.approx(75.0)
        assert detector_height(410.0, cfg) == pytest.approx(0.0, abs=1e-12)
        assert detector_height(0.0, cfg) == pytest.approx(37.5)

    def test_out_of_range(self, cfg):
        with pytest.raises(ValueError):
            detector_height(411.0, cfg)

    @given(st.floats(-410, 410), st.floats(-410, 410))
    def test_affine(self, a, b):
        cfg = paper_scanner()
        lhs = detector_height(a, cfg) + detector_height(b, cfg)
        assert lhs == pytest.approx(2.0 * detector_height((a + b) / 2.0, cfg), rel=1e-12, abs=1e-9)

    def test_non_increasing(self, cfg):
        x = np.linspace(-410, 410, 64)
        assert np.all(np.diff(detector_height(x, cfg)) <= 0)


class TestSourceWidth:
    def test_source_plane_zero(self, cfg):
        assert source_width(-410.0, cfg) == pytest.approx(0.0)

    def test_center_value(self, cfg):
        assert source_width(0.0, cfg) == pytest.approx(410.0 * np.tan(np.deg2rad(60.0)), rel=1e-12)

    def test_right_angle_fan(self):
        cfg = ScannerConfig(
            w_x1=300.0, w_x2=410.0, beta=np.pi / 2,
            source_x1=[0.0], detector_x1=[0.0], energies=[1.0],
        )
        assert source_width(410.0, cfg) == pytest.approx(2 * 410.0, rel=1e-12)


class TestBraggAngle:
    def test_undeflected(self):
        assert bragg_angle([0, -410, 0], [0, 410, 0], [0, 0]) == pytest.approx(0.0, abs=1e-12)

    def test_perpendicular(self):
        # incoming along +x2, outgoing along +x1
        assert bragg_angle([0, -410, 0], [410, 0, 0], [0, 0]) == pytest.approx(np.pi / 4, rel=1e-12)

    def test_oblique_value(self):
        th = bragg_angle([0, -410, 0], [600, 410, 0], [0, 0])
        cos2t = 410.0 / np.hypot(600.0, 410.0)
        assert np.cos(2 * th) == pytest.approx(cos2t, rel=1e-12)
        assert np.rad2deg(th) == pytest.approx(27.8270, abs=1e-3)

    def test_reflection_symmetry(self):
        s1 = 40.0
        for x1 in (60.0, 125.0, 300.0):
            a = bragg_angle([s1, -410, 0], [s1, 410, 20.0], [x1, 0.0])
            b = bragg_angle([s1, -410, 0], [s1, 410, 20.0], [2 * s1 - x1, 0.0])
            assert a == pytest.approx(b, rel=1e-12)

    def test_degenerate(self):
        with pytest.raises(GeometryError):
            bragg_angle([0, 0, 0], [1, 1, 0], [0, 0])


class TestSolidAngle:
    def test_face_on(self):
        assert solid_angle([0, 0], [0, 200.0, 0], 1.0) == pytest.approx(1.0 / 200.0**2, rel=1e-12)

    def test_grazing(self):
        assert solid_angle([0, 0], [100.0, 0.0, 50.0], 1.0) == pytest.approx(0.0, abs=1e-15)

    def test_oblique_value(self):
        val = solid_angle([0, 0], [0, 410.0, 37.5], 1.0)
        assert val == pytest.approx(410.0 / (410.0**2 + 37.5**2) ** 1.5, rel=1e-12)
        assert val == pytest.approx(5.875e-6, rel=1e-3)

    def test_inverse_square_decay(self):
        near = solid_angle([0, 0], [30.0, 200.0, 10.0], 1.0)
        far = solid_angle([0, 0], [60.0, 400.0, 20.0], 1.0)
        assert near == pytest.approx(4.0 * far, rel=1e-12)

    def test_degenerate(self):
        with pytest.raises(GeometryError):
            solid_angle([5.0, 3.0], [5.0, 3.0, 0.0], 1.0)


class TestPolarization:
    def test_values(self):
        assert polarization(0.0) == pytest.approx(1.0)
        assert polarization(np.pi / 4) == pytest.approx(0.5)
        assert polarization(np.pi / 6) == pytest.approx(0.625, rel=1e-12)

    @given(st.floats(0, np.pi / 2))
    def test_range(self, theta):
        assert 0.5 <= polarization(theta) <= 1.0


class TestSourceFalloff:
    def test_unit_distance(self):
        assert source_falloff([0, -1, 0], [0, 0]) == pytest.approx(1.0)

    def test_inverse_square(self):
        assert source_falloff([0, -2, 0], [0, 0]) == pytest.approx(0.25)

    def test_oblique(self):
        assert source_falloff([0, -410, 0], [300.0, 0.0]) == pytest.approx(1.0 / (300.0**2 + 410.0**2), rel=1e-12)

    def test_degenerate(self):
        with pytest.raises(GeometryError):
            source_falloff([3.0, 4.0, 0.0], [3.0, 4.0])


class TestMomentumTransfer:
    def test_unit_identity(self):
        assert momentum_transfer(12.398, np.pi / 2) == pytest.approx(1.0)

    def test_max_q_about_two(self):
        assert momentum_transfer(29.0, np.deg2rad(57.3)) == pytest.approx(1.97, abs=0.01)

    def test_zero_angle(self):
        assert momentum_transfer(17.0, 0.0) == 0.0

    def test_monotone(self):
        e = np.linspace(1, 29, 16)
        assert np.all(np.diff(momentum_transfer(e, 0.4)) > 0)
        th = np.linspace(0, np.pi / 2, 16)
        assert np.all(np.diff(momentum_transfer(10.0, th)) > 0)


class TestScannerConfig:
    def test_row_count(self):
        assert paper_scanner().n_rows == 539400

    def test_row_of_roundtrip(self, cfg):
        r = cfg.row_of(3, 7, 123)
        e, s, d = cfg.row_lattice()
        assert e[r] == cfg.energies[3]
        assert s[r] == cfg.source_x1[7]
        assert d[r] == cfg.detector_x1[123]

    def test_invariants(self):
        with pytest.raises(ValueError):
            ScannerConfig(w_x1=-1, w_x2=410, beta=1.0, source_x1=[0], detector_x1=[0], energies=[1])
        with pytest.raises(ValueError):
            ScannerConfig(w_x1=300, w_x2=410, beta=1.0, source_x1=[0], detector_x1=[0], energies=[2, 1])
        with pytest.raises(ValueError):
            ScannerConfig(w_x1=300, w_x2=410, beta=0.0, source_x1=[0], detector_x1=[0], energies=[1])
