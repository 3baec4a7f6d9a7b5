"""Material models: Bragg peak lists, Gaussian-mixture cross sections and
per-interaction attenuation tables.

Peak lists for the built-in powders (NaCl, C-graphite, C-diamond) ship as
CSV data files; the structure-factor machinery below is what generated them
and can produce new cubic materials. Attenuation tables are NIST-style CSV
with photoelectric / incoherent / coherent columns in 1/mm.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, replace
from importlib import resources

import numpy as np

PEAK_CSV_HEADER = ["q_invA", "intensity"]
ATTEN_CSV_HEADER = ["E_keV", "mu_pe_per_mm", "mu_inc_per_mm", "mu_coh_per_mm"]

# 4-Gaussian atomic form factor fits f(q) = sum a_i exp(-b_i q^2) + c,
# argument q = sin(theta)/lambda in 1/Angstrom, valid for q < 2.
FORM_FACTOR_COEFFS = {
    "H": ([0.489918, 0.262003, 0.196767, 0.049879], [20.6593, 7.74039, 49.5519, 2.20159], 0.001305),
    "C": ([2.31000, 1.02000, 1.58860, 0.865000], [20.8439, 10.2075, 0.568700, 51.6512], 0.215600),
    "N": ([12.2126, 3.13220, 2.01250, 1.16630], [0.005700, 9.89330, 28.9975, 0.582600], -11.529),
    "O": ([3.04850, 2.28680, 1.54630, 0.867000], [13.2771, 5.70110, 0.323900, 32.9089], 0.250800),
    "Na": ([4.76260, 3.17360, 1.26740, 1.11280], [3.28500, 8.84220, 0.313600, 129.424], 0.676000),
    "Cl": ([11.4604, 7.19640, 6.25560, 1.64550], [0.010400, 1.16620, 18.5194, 47.7784], -9.55740),
}


def atomic_form_factor(symbol: str):
    """Return the analytic form-factor curve f(q) for a known element."""
    try:
        a, b, c = FORM_FACTOR_COEFFS[symbol]
    except KeyError:
        raise KeyError(f"no form-factor fit for element {symbol!r}") from None
    a = np.asarray(a)
    b = np.asarray(b)

    def f(q):
        q2 = np.asarray(q, dtype=float) ** 2
        return np.sum(a * np.exp(-b * q2[..., None]), axis=-1) + c

    return f


@dataclass(frozen=True)
class GaussianMixtureParams:
    """Width of the Gaussians standing in for the delta-comb peaks."""

    sigma2: float = 1e-6

    def __post_init__(self):
        if self.sigma2 <= 0:
            raise ValueError("sigma2 must be positive")


@dataclass(frozen=True)
class BraggPeakList:
    """Sorted peak positions q_j (1/Angstrom) with relative intensities g_j."""

    material_id: str
    q: np.ndarray
    g: np.ndarray
    q_max: float = 2.0

    def __post_init__(self):
        q = np.asarray(self.q, dtype=float)
        g = np.asarray(self.g, dtype=float)
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "g", g)
        if q.size == 0:
            raise ValueError("peak list needs at least one peak")
        if q.shape != g.shape:
            raise ValueError("q and g must have equal length")
        if np.any(np.diff(q) <= 0):
            raise ValueError("peak positions must be strictly increasing")
        if q[0] <= 0 or q[-1] >= self.q_max:
            raise ValueError(f"peak positions must lie in (0, {self.q_max})")
        if np.any(g < 0):
            raise ValueError("peak intensities must be nonnegative")


@dataclass(frozen=True)
class AttenuationTable:
    """Per-interaction linear attenuation coefficients on an energy lattice."""

    material_id: str
    energies: np.ndarray
    mu_pe: np.ndarray
    mu_inc: np.ndarray
    mu_coh: np.ndarray

    def __post_init__(self):
        for name in ("energies", "mu_pe", "mu_inc", "mu_coh"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float))
        if np.any(np.diff(self.energies) <= 0):
            raise ValueError("table energies must be strictly increasing")
        for name in ("mu_pe", "mu_inc", "mu_coh"):
            col = getattr(self, name)
            if col.shape != self.energies.shape:
                raise ValueError("attenuation columns must match the energy column")
            if np.any(col < 0):
                raise ValueError("attenuation coefficients must be nonnegative")

    def scaled(self, factor: float, material_id: str | None = None) -> "AttenuationTable":
        return AttenuationTable(
            material_id or self.material_id,
            self.energies,
            self.mu_pe * factor,
            self.mu_inc * factor,
            self.mu_coh * factor,
        )


def d_spacing_cubic(a0: float, hkl) -> float:
    """Reflection-plane spacing a0 / sqrt(h^2 + k^2 + l^2) for cubic cells."""
    h, k, l = hkl
    s = h * h + k * k + l * l
    if s == 0:
        raise ValueError("Miller index (0,0,0) has no reflection plane")
    if a0 <= 0:
        raise ValueError("lattice constant must be positive")
    return a0 / np.sqrt(s)


def peak_q_from_spacing(d_h: float) -> float:
    """Momentum transfer of the reflection: q = 1 / (2 d_H)."""
    if d_h <= 0:
        raise ValueError("plane spacing must be positive")
    return 1.0 / (2.0 * d_h)


def structure_factor(q: float, cell, hkl) -> float:
    """Squared magnitude of the unit-cell scattering factor.

    ``cell`` is a sequence of (form_factor_curve, fractional_coordinate)
    pairs; the phase of atom i is exp(-2 pi i x_i . H).
    """
    if len(cell) == 0:
        raise ValueError("unit cell must contain at least one atom")
    hkl = np.asarray(hkl, dtype=float)
    total = 0.0 + 0.0j
    for f_i, x_i in cell:
        x_i = np.asarray(x_i, dtype=float)
        total += complex(f_i(q)) * np.exp(-2j * np.pi * np.dot(x_i, hkl))
    return float(np.abs(total) ** 2)


def evaluate_F(q, peaks: BraggPeakList, gm: GaussianMixtureParams):
    """Gaussian-mixture cross-section curve sum_j g_j exp(-(q - q_j)^2 / sigma^2).

    Evaluates the mixture as stored; use :func:`normalized_peaks` first when a
    max-1 curve is required.
    """
    q = np.asarray(q, dtype=float)
    diff = q[..., None] - peaks.q
    return np.sum(peaks.g * np.exp(-(diff**2) / gm.sigma2), axis=-1)


def normalized_peaks(
    peaks: BraggPeakList, gm: GaussianMixtureParams, q_grid, scale: float = 1.0
) -> BraggPeakList:
    """Rescale intensities so the mixture's maximum over q_grid equals scale."""
    peak = float(np.max(evaluate_F(np.asarray(q_grid, dtype=float), peaks, gm)))
    if peak <= 0:
        raise ValueError("mixture vanishes on the given grid; cannot normalize")
    return replace(peaks, g=peaks.g * (scale / peak))


def _interp_channel(e, e0, e1, v0, v1):
    # log-log where both endpoints are positive, linear otherwise
    if v0 > 0.0 and v1 > 0.0:
        t = (np.log(e) - np.log(e0)) / (np.log(e1) - np.log(e0))
        return float(np.exp((1.0 - t) * np.log(v0) + t * np.log(v1)))
    t = (e - e0) / (e1 - e0)
    return float((1.0 - t) * v0 + t * v1)


def interp_mu(energy: float, tbl: AttenuationTable) -> tuple[float, float, float]:
    """(mu_PE, mu_INC, mu_COH) at ``energy``, log-log interpolated."""
    e = tbl.energies
    if energy < e[0] or energy > e[-1]:
        raise ValueError(f"energy {energy} keV outside table range [{e[0]}, {e[-1]}]")
    i = int(np.searchsorted(e, energy, side="right") - 1)
    if i == e.size - 1:
        i -= 1
    if energy == e[i]:
        return float(tbl.mu_pe[i]), float(tbl.mu_inc[i]), float(tbl.mu_coh[i])
    return tuple(
        _interp_channel(energy, e[i], e[i + 1], col[i], col[i + 1])
        for col in (tbl.mu_pe, tbl.mu_inc, tbl.mu_coh)
    )


def total_mu(energy: float, tbl: AttenuationTable) -> float:
    """Total linear attenuation mu_PE + mu_INC + mu_COH at ``energy``."""
    return float(sum(interp_mu(energy, tbl)))


def load_peak_list(path, material_id: str | None = None, q_max: float = 2.0) -> BraggPeakList:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = _read_csv(fh, PEAK_CSV_HEADER, path)
    q = np.array([r[0] for r in rows])
    g = np.array([r[1] for r in rows])
    return BraggPeakList(material_id or _stem(path), q, g, q_max)


def load_attenuation_table(path, material_id: str | None = None) -> AttenuationTable:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = _read_csv(fh, ATTEN_CSV_HEADER, path)
    cols = np.array(rows).T
    return AttenuationTable(material_id or _stem(path), cols[0], cols[1], cols[2], cols[3])


def save_peak_list(path, peaks: BraggPeakList) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(PEAK_CSV_HEADER)
        for qj, gj in zip(peaks.q, peaks.g):
            w.writerow([repr(float(qj)), repr(float(gj))])


def _stem(path) -> str:
    import os

    return os.path.splitext(os.path.basename(str(path)))[0]


def _read_csv(fh, expected_header, path):
    reader = csv.reader(fh)
    try:
        header = next(reader)
    except StopIteration:
        raise ValueError(f"{path}: empty CSV") from None
    if [h.strip() for h in header] != expected_header:
        raise ValueError(f"{path}: expected header {','.join(expected_header)}")
    rows = []
    for ln, row in enumerate(reader, start=2):
        if not row:
            continue
        if len(row) != len(expected_header):
            raise ValueError(f"{path}:{ln}: expected {len(expected_header)} columns")
        try:
            rows.append([float(v) for v in row])
        except ValueError:
            raise ValueError(f"{path}:{ln}: non-numeric value") from None
    if not rows:
        raise ValueError(f"{path}: no data rows")
    return rows


# Built-in material registry. "clutter" is cellulose attenuation scaled by
# 0.1 with no Bragg peaks (amorphous filler, zero coherent signal).
_PEAK_FILES = {
    "nacl": "peaks_nacl.csv",
    "c_graphite": "peaks_c_graphite.csv",
    "c_diamond": "peaks_c_diamond.csv",
}
_ATTEN_FILES = {
    "nacl": "atten_nacl.csv",
    "c_graphite": "atten_c_graphite.csv",
    "c_diamond": "atten_c_diamond.csv",
    "cellulose": "atten_cellulose.csv",
}


def _data_path(name: str):
    return resources.files("braggtomo") / "data" / name


def builtin_peaks(material_id: str) -> BraggPeakList:
    try:
        fname = _PEAK_FILES[material_id]
    except KeyError:
        raise KeyError(f"no built-in peak list for {material_id!r}") from None
    return load_peak_list(_data_path(fname), material_id)


def builtin_attenuation(material_id: str) -> AttenuationTable:
    if material_id == "clutter":
        return builtin_attenuation("cellulose").scaled(0.1, "clutter")
    try:
        fname = _ATTEN_FILES[material_id]
    except KeyError:
        raise KeyError(f"no built-in attenuation table for {material_id!r}") from None
    return load_attenuation_table(_data_path(fname), material_id)
