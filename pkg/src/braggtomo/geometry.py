"""Scanner geometry kernels.

Fan-beam sources sit on the line x2 = -w_x2, energy-resolved detectors on
x2 = +w_x2 with an out-of-plane offset that selects the scattering line L
at height x2. All lengths are millimeters, energies keV, momentum transfer
in inverse Angstroms. Every function here is pure and stateless.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

HC_KEV_ANGSTROM = 12.398


class GeometryError(ValueError):
    """Degenerate ray geometry (coincident points, zero distances)."""


@dataclass(frozen=True)
class ScannerConfig:
    """Scanner lattice and physical constants.

    ``phi_slope`` / ``phi_intercept`` parameterize the linear collimation
    map from scattering-line height x2 to the detector-plane offset:
    ``phi(x2) = phi_intercept + phi_slope * x2``.
    """

    w_x1: float
    w_x2: float
    beta: float
    source_x1: np.ndarray
    detector_x1: np.ndarray
    energies: np.ndarray
    detector_area: float = 1.0
    hc: float = HC_KEV_ANGSTROM
    phi_slope: float = -75.0 / 820.0
    phi_intercept: float = 37.5
    # per-energy source spectrum scale; uniform unless configured otherwise
    spectrum: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "source_x1", np.asarray(self.source_x1, dtype=float))
        object.__setattr__(self, "detector_x1", np.asarray(self.detector_x1, dtype=float))
        object.__setattr__(self, "energies", np.asarray(self.energies, dtype=float))
        if self.w_x1 <= 0 or self.w_x2 <= 0:
            raise ValueError("scanner half-widths must be positive")
        if not 0.0 < self.beta < np.pi:
            raise ValueError("fan opening angle must lie in (0, pi)")
        if self.energies.size == 0 or np.any(np.diff(self.energies) <= 0) or self.energies[0] <= 0:
            raise ValueError("energies must be strictly increasing and positive")
        if self.phi(self.w_x2) != 0.0 or self.phi(-self.w_x2) <= 0.0:
            raise ValueError("phi must vanish at x2=+w_x2 and be positive at x2=-w_x2")
        if self.spectrum is None:
            object.__setattr__(self, "spectrum", np.ones_like(self.energies))
        else:
            spec = np.asarray(self.spectrum, dtype=float)
            if spec.shape != self.energies.shape or np.any(spec < 0):
                raise ValueError("spectrum must be nonnegative, one entry per energy")
            object.__setattr__(self, "spectrum", spec)

    @property
    def e_min(self) -> float:
        return float(self.energies[0])

    @property
    def e_max(self) -> float:
        return float(self.energies[-1])

    @property
    def n_rows(self) -> int:
        """Number of data points: |energies| * |sources| * |detectors|."""
        return self.energies.size * self.source_x1.size * self.detector_x1.size

    def row_of(self, e_idx, s_idx, d_idx):
        """Flat row index of a measurement; row-major over (E, s1, d1)."""
        n_s = self.source_x1.size
        n_d = self.detector_x1.size
        return (np.asarray(e_idx) * n_s + np.asarray(s_idx)) * n_d + np.asarray(d_idx)

    def row_lattice(self):
        """(E, s1, d1) values for every row, each an array of length n_rows."""
        e, s, d = np.meshgrid(self.energies, self.source_x1, self.detector_x1, indexing="ij")
        return e.ravel(), s.ravel(), d.ravel()

    def phi(self, x2: float) -> float:
        return self.phi_intercept + self.phi_slope * x2


def paper_scanner(n_sources: int = 31, n_detectors: int = 600, n_energies: int = 29) -> ScannerConfig:
    """Default portal scanner: 120 deg fan, 300 x 410 mm half-extents.

    The full-size lattice is 31 sources at 20 mm pitch, 600 detectors at
    1 mm pitch and 29 energy bins at 1 keV; pass smaller counts for
    reduced instances (pitch rescales, endpoints fixed).
    """
    return ScannerConfig(
        w_x1=300.0,
        w_x2=410.0,
        beta=np.deg2rad(120.0),
        source_x1=np.linspace(-300.0, 300.0, n_sources),
        detector_x1=-300.0 + (600.0 / n_detectors) * np.arange(n_detectors),
        energies=np.arange(1.0, n_energies + 1.0),
    )


def detector_height(x2, cfg: ScannerConfig):
    """Collimation offset of the detector row that sees the line at height x2."""
    x2 = np.asarray(x2, dtype=float)
    if np.any(np.abs(x2) > cfg.w_x2):
        raise ValueError(f"x2 out of range [-{cfg.w_x2}, {cfg.w_x2}]")
    return cfg.phi_intercept + cfg.phi_slope * x2


def source_width(x2, cfg: ScannerConfig):
    """Half-width of the fan-beam footprint on the line at height x2."""
    x2 = np.asarray(x2, dtype=float)
    if np.any(np.abs(x2) > cfg.w_x2):
        raise ValueError(f"x2 out of range [-{cfg.w_x2}, {cfg.w_x2}]")
    return (cfg.w_x2 + x2) * np.tan(cfg.beta / 2.0)


def bragg_angle(s, d, x):
    """Bragg angle theta (half the scattering angle) for a ray s -> x -> d.

    ``s`` and ``d`` are 3-vectors, ``x`` a 2-vector in the x3 = 0 plane.
    cos(2 theta) is clamped to [-1, 1] to absorb floating-point drift.
    """
    s = np.asarray(s, dtype=float)
    d = np.asarray(d, dtype=float)
    x = np.asarray(x, dtype=float)
    x3 = np.concatenate([x, [0.0]]) if x.shape == (2,) else x
    v_in = x3 - s
    v_out = d - x3
    n_in = np.linalg.norm(v_in)
    n_out = np.linalg.norm(v_out)
    if n_in == 0.0 or n_out == 0.0:
        raise GeometryError("scattering point coincides with source or detector")
    cos2t = np.clip(np.dot(v_in, v_out) / (n_in * n_out), -1.0, 1.0)
    return 0.5 * np.arccos(cos2t)


def solid_angle(x, d, detector_area: float):
    """Solid angle subtended at x by a detector of area detector_area at d.

    The detector normal points in -x2; the numerator is the projection of
    the pixel onto the incoming direction.
    """
    x = np.asarray(x, dtype=float)
    d = np.asarray(d, dtype=float)
    x3 = np.concatenate([x, [0.0]]) if x.shape == (2,) else x
    r = x3 - d
    dist = np.linalg.norm(r)
    if dist == 0.0:
        raise GeometryError("scattering point coincides with detector")
    return detector_area * (-r[1]) / dist**3


def polarization(theta):
    """Unpolarized-beam polarization factor (1 + cos^2  2theta) / 2."""
    return 0.5 * (1.0 + np.cos(2.0 * np.asarray(theta, dtype=float)) ** 2)


def source_falloff(s, x):
    """Inverse-square intensity decay from source s to image point x."""
    s = np.asarray(s, dtype=float)
    x = np.asarray(x, dtype=float)
    x3 = np.concatenate([x, [0.0]]) if x.shape == (2,) else x
    d2 = float(np.sum((s - x3) ** 2))
    if d2 == 0.0:
        raise GeometryError("image point coincides with source")
    return 1.0 / d2


def momentum_transfer(energy, theta, hc: float = HC_KEV_ANGSTROM):
    """Momentum transfer q = (E / hc) * sin(theta), in 1/Angstrom."""
    return np.asarray(energy, dtype=float) / hc * np.sin(np.asarray(theta, dtype=float))
