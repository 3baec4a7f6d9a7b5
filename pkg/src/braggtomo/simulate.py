"""Phantom construction, analytic Poisson data and the single-scatter
Monte Carlo engine.

The Monte Carlo model follows the measurement chain of the scanner: photons
are launched from a source toward preselected scattering sites on the
collimation line L (the image-grid x1 pixels inside the fan window), survive
the incoming leg with probability (inverse-square falloff) x exp(-optical
depth), interact per the four-point law {NI, PE, INC, COH}, scatter, and
survive the outgoing leg to a detector. Coherent scatter keeps its energy;
Compton scatter follows the Klein-Nishina distribution with the usual energy
shift.

Two scoring modes:

* ``forced`` (default): every scattering event is force-scored to every
  detector with weight = (relative direction density of the sampled
  interaction at that detector) x (outgoing survival). Tallies are expected
  values in relative units; statistical noise enters through the Bernoulli
  survival and interaction draws. This is the low-variance mode used for
  experiments.
* ``literal``: the rejection reading of the same chain. One outgoing
  direction is sampled per scattering event and the photon is counted only
  if its ray lands inside a physical detector pixel. Tallies are integers.
  Kept for validating the scoring geometry at tiny scale.

Randomness is counter-based (a splitmix-style keyed generator): every trial
owns a fixed number of draws addressed by (seed, block, trial, draw), so
results are independent of scheduling and thread count.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from ._accel import USE_NUMBA, njit, prange
from .forward import BraggOperator, ImageGrid
from .geometry import ScannerConfig, detector_height, source_width
from .materials import (
    AttenuationTable,
    BraggPeakList,
    GaussianMixtureParams,
    builtin_attenuation,
    builtin_peaks,
    evaluate_F,
    interp_mu,
    normalized_peaks,
)
from .sinogram import Sinogram

ELECTRON_REST_KEV = 511.0


# ---------------------------------------------------------------------------
# phantoms


@dataclass(frozen=True)
class PhantomObject:
    """Interval (width, analytic phantoms) or sphere (radius, MC scenes)."""

    material_id: str
    center: float
    width: float | None = None
    radius: float | None = None

    def __post_init__(self):
        if (self.width is None) == (self.radius is None):
            raise ValueError("give exactly one of width (interval) or radius (sphere)")
        extent = self.width / 2.0 if self.width is not None else self.radius
        if extent <= 0:
            raise ValueError("object extent must be positive")
        if self.radius is not None and self.radius > 150.0:
            raise ValueError("sphere radius exceeds 150 mm")
        if abs(self.center) + extent > 200.0:
            raise ValueError("object leaves the scanning tunnel (|x1| <= 200 mm)")


@dataclass(frozen=True)
class ClutterBox:
    """Axis-aligned clutter box; attenuates but never scatters."""

    half_side: float = 150.0
    material_id: str = "clutter"


@dataclass(frozen=True)
class PhantomSpec:
    objects: tuple
    slice_x2: float = 0.0
    clutter: ClutterBox | None = None

    def __post_init__(self):
        object.__setattr__(self, "objects", tuple(self.objects))


def make_phantom_image(
    spec: PhantomSpec,
    grid: ImageGrid,
    peak_lists: dict[str, BraggPeakList] | None = None,
    gm: GaussianMixtureParams = GaussianMixtureParams(),
):
    """Analytic ground-truth image f(q, x1) = sum_obj F_mat(q) chi_obj(x1).

    Interval objects only. The assembled image is normalized to max 1; the
    returned per-object spectra carry the same scaling.
    """
    image = np.zeros((grid.n, grid.m))
    spectra = []
    for obj in spec.objects:
        if obj.width is None:
            raise ValueError("analytic phantoms use interval objects")
        peaks = (peak_lists or {}).get(obj.material_id) or builtin_peaks(obj.material_id)
        curve = evaluate_F(grid.q_values, normalized_peaks(peaks, gm, grid.q_values), gm)
        chi = (np.abs(grid.x1_values - obj.center) <= obj.width / 2.0 + 1e-9).astype(float)
        image += np.outer(curve, chi)
        spectra.append(curve)
    top = image.max()
    if top > 0:
        image /= top
        spectra = [c / top for c in spectra]
    return image, spectra


# ---------------------------------------------------------------------------
# analytic Poisson data


def analytic_mean(A: BraggOperator, y, eta_c: float) -> np.ndarray:
    """Scaled model eta_c * p * A y / ||A y||_1 used as the Poisson mean."""
    if eta_c <= 0:
        raise ValueError("eta_c must be positive")
    y = np.asarray(y, dtype=float)
    vec = A.grid.vec(y) if y.ndim == 2 else y.ravel()
    mu = A.matrix @ vec
    total = mu.sum()
    if total <= 0:
        raise ValueError("A y vanishes; cannot normalize the Poisson mean")
    return eta_c * mu.size * mu / total


def analytic_data(A: BraggOperator, y, eta_c: float, seed: int) -> Sinogram:
    """Independent Poisson draws around the scaled, matched model."""
    mean = analytic_mean(A, y, eta_c)
    rng = np.random.default_rng(seed)
    return Sinogram(
        rng.poisson(mean).astype(float),
        A.energies,
        A.source_x1,
        A.detector_x1,
        A.slice_x2,
        "analytic",
    )


# ---------------------------------------------------------------------------
# streaming forward mean (paper-scale row counts without storing the matrix)


@njit(cache=True, parallel=True)
def _mean_kernel(energies, spectrum, sources, detectors, q0, dq, nq, x10, dx1, m, x2, w_x2, eps, half_fan, det_area, hc, image_t, out):
    # image_t is the (m, n) transpose of the image, C-contiguous
    n_s = sources.size
    n_d = detectors.size
    q_last = q0 + dq * (nq - 1)
    for r in prange(out.size):
        e_idx = r // (n_s * n_d)
        rem = r - e_idx * (n_s * n_d)
        s_idx = rem // n_d
        d_idx = rem - s_idx * n_d
        E = energies[e_idx]
        scale = spectrum[e_idx] * dx1
        s1 = sources[s_idx]
        d1 = detectors[d_idx]
        lo = int(math.ceil((s1 - half_fan - x10) / dx1 - 1e-12))
        hi = int(math.floor((s1 + half_fan - x10) / dx1 + 1e-12))
        if lo < 0:
            lo = 0
        if hi > m - 1:
            hi = m - 1
        acc = 0.0
        for ix in range(lo, hi + 1):
            x1 = x10 + dx1 * ix
            vin_x = x1 - s1
            vin_y = x2 + w_x2
            nin2 = vin_x * vin_x + vin_y * vin_y
            vout_x = d1 - x1
            vout_y = w_x2 - x2
            nout2 = vout_x * vout_x + vout_y * vout_y + eps * eps
            nout = math.sqrt(nout2)
            cos2t = (vin_x * vout_x + vin_y * vout_y) / (math.sqrt(nin2) * nout)
            if cos2t > 1.0:
                cos2t = 1.0
            elif cos2t < -1.0:
                cos2t = -1.0
            theta = 0.5 * math.acos(cos2t)
            qstar = E / hc * math.sin(theta)
            if q0 <= qstar <= q_last:
                w = (1.0 / nin2) * 0.5 * (1.0 + cos2t * cos2t) * (det_area * vout_y / (nout2 * nout))
                iq = int((qstar - q0) / dq)
                if iq > nq - 2:
                    iq = nq - 2
                t = (qstar - (q0 + dq * iq)) / dq
                acc += w * ((1.0 - t) * image_t[ix, iq] + t * image_t[ix, iq + 1])
        out[r] = acc * scale


def forward_mean(cfg: ScannerConfig, grid: ImageGrid, x2: float, image: np.ndarray) -> np.ndarray:
    """Evaluate the Bragg model B f row by row without assembling the matrix.

    Matches ``apply(build_operator(cfg, grid, x2), grid.vec(image))`` up to
    summation order; intended for full-lattice noise studies where storing
    the operator is impractical.
    """
    image = np.asarray(image, dtype=float)
    if image.shape != (grid.n, grid.m):
        raise ValueError("image shape does not match the grid")
    eps = float(detector_height(x2, cfg))
    half_fan = float(source_width(x2, cfg))
    image_t = np.ascontiguousarray(image.T)
    out = np.zeros(cfg.n_rows)
    if USE_NUMBA:
        _mean_kernel(
            cfg.energies, cfg.spectrum, cfg.source_x1, cfg.detector_x1,
            float(grid.q_values[0]), grid.dq, grid.n,
            float(grid.x1_values[0]), grid.dx1, grid.m,
            float(x2), cfg.w_x2, eps, half_fan, cfg.detector_area, cfg.hc,
            image_t, out,
        )
        return out
    # numpy path: one (detector x window) block per (energy, source)
    from .forward import _kernel_point_np

    q0, dq, nq = float(grid.q_values[0]), grid.dq, grid.n
    x10, dx1, m = float(grid.x1_values[0]), grid.dx1, grid.m
    q_last = q0 + dq * (nq - 1)
    n_d = cfg.detector_x1.size
    k = 0
    for e_idx, E in enumerate(cfg.energies):
        scale = cfg.spectrum[e_idx] * dx1
        for s1 in cfg.source_x1:
            lo = max(int(math.ceil((s1 - half_fan - x10) / dx1 - 1e-12)), 0)
            hi = min(int(math.floor((s1 + half_fan - x10) / dx1 + 1e-12)), m - 1)
            if hi >= lo:
                ix = np.arange(lo, hi + 1)
                qstar, w = _kernel_point_np(
                    E, s1, cfg.detector_x1[:, None], x10 + dx1 * ix[None, :], x2, cfg.w_x2, eps, half_fan * 0 + cfg.detector_area, cfg.hc
                )
                ok = (qstar >= q0) & (qstar <= q_last)
                iq = np.minimum(((qstar - q0) / dq).astype(np.int64), nq - 2)
                t = (qstar - (q0 + dq * iq)) / dq
                vals = image.T[ix[None, :], iq] * (1.0 - t) + image.T[ix[None, :], iq + 1] * t
                out[k : k + n_d] = np.sum(np.where(ok, w * vals, 0.0), axis=1) * scale
            k += n_d
    return out


# ---------------------------------------------------------------------------
# scattering samplers (reference implementations; kernels inline the same math)


def klein_nishina_cross_section(energy: float, cos_omega):
    """Relative Klein-Nishina differential cross section per solid angle."""
    cos_omega = np.asarray(cos_omega, dtype=float)
    k = energy / ELECTRON_REST_KEV
    ratio = 1.0 / (1.0 + k * (1.0 - cos_omega))
    return 0.5 * ratio**2 * (ratio + 1.0 / ratio - (1.0 - cos_omega**2))


@lru_cache(maxsize=256)
def _kn_table(energy: float, size: int = 2048):
    """(cos_omega lattice, CDF, total) for inverse-CDF sampling at one energy."""
    c = np.linspace(-1.0, 1.0, size)
    pdf = klein_nishina_cross_section(energy, c)
    cdf = np.concatenate([[0.0], np.cumsum(0.5 * (pdf[1:] + pdf[:-1]) * np.diff(c))])
    total = cdf[-1] * 2.0 * np.pi
    return c, cdf / cdf[-1], total


def klein_nishina_total(energy: float) -> float:
    """Relative total cross section (solid-angle integral of the KN shape)."""
    return _kn_table(float(energy))[2]


def sample_klein_nishina(energy: float, rng: np.random.Generator, size=None):
    """Polar scattering angle(s) drawn from the Klein-Nishina distribution."""
    c, cdf, _ = _kn_table(float(energy))
    u = rng.random(size)
    return np.arccos(np.interp(u, cdf, c))


def compton_energy(energy: float, omega):
    """Compton-shifted energy E / (1 + (E / 511 keV)(1 - cos omega))."""
    return energy / (1.0 + energy / ELECTRON_REST_KEV * (1.0 - np.cos(omega)))


def coherent_direction_norm(q_lat, f_vals, energies, hc: float = 12.398):
    """Solid-angle integral of polarization x curve at each energy.

    Normalizes the coherent scattering shape into a direction density; the
    companion relation mu_coh(E) proportional to this integral makes a
    material's rate and shape mutually consistent.
    """
    q_lat = np.asarray(q_lat, dtype=float)
    f_vals = np.asarray(f_vals, dtype=float)
    c_lat = np.linspace(-1.0, 1.0, 16385)
    pol_lat = 0.5 * (1.0 + c_lat**2)
    out = np.zeros(np.asarray(energies).size)
    for j, E in enumerate(np.asarray(energies, dtype=float)):
        q_of_c = E / hc * np.sqrt((1.0 - c_lat) / 2.0)
        fv = np.interp(q_of_c, q_lat, f_vals)
        out[j] = 2.0 * np.pi * np.trapezoid(pol_lat * fv, c_lat)
    return out


def reachable_peaks(energy: float, peaks: BraggPeakList, hc: float = 12.398):
    """Indices of peaks whose Bragg cone exists at this energy (hc q_j / E <= 1)."""
    return np.nonzero(peaks.q * hc / energy <= 1.0)[0]


def sample_coherent_angle(energy: float, peaks: BraggPeakList, rng: np.random.Generator, hc: float = 12.398):
    """Scattering angle 2 arcsin(hc q_j / E) of a g-weighted reachable peak.

    Returns None when no peak is reachable at this energy.
    """
    idx = reachable_peaks(energy, peaks, hc)
    if idx.size == 0 or peaks.g[idx].sum() <= 0:
        return None
    w = peaks.g[idx] / peaks.g[idx].sum()
    j = idx[np.searchsorted(np.cumsum(w), rng.random(), side="right").clip(0, idx.size - 1)]
    return 2.0 * np.arcsin(peaks.q[j] * hc / energy)


def sample_interaction(energy: float, tbl: AttenuationTable, delta: float, rng: np.random.Generator) -> str:
    """One draw from the four-point interaction law at step length delta."""
    mu_pe, mu_inc, mu_coh = interp_mu(energy, tbl)
    mu = mu_pe + mu_inc + mu_coh
    if mu == 0.0:
        return "NI"
    p_ni = math.exp(-mu * delta)
    u = rng.random()
    if u < p_ni:
        return "NI"
    rest = (u - p_ni) / (1.0 - p_ni) * mu
    if rest < mu_pe:
        return "PE"
    if rest < mu_pe + mu_inc:
        return "INC"
    return "COH"


# ---------------------------------------------------------------------------
# ray tracing


def _segment_sphere(origin, direction, center, radius, t_max):
    oc = center - origin
    b = float(np.dot(direction, oc))
    disc = b * b - float(np.dot(oc, oc)) + radius * radius
    if disc <= 0.0:
        return 0.0
    root = math.sqrt(disc)
    t0 = max(b - root, 0.0)
    t1 = min(b + root, t_max)
    return max(t1 - t0, 0.0), max(t0, 0.0), min(t1, t_max)


def _segment_box(origin, direction, half, t_max):
    t0, t1 = 0.0, t_max
    for ax in range(3):
        o, u = origin[ax], direction[ax]
        if abs(u) < 1e-300:
            if abs(o) > half:
                return 0.0, 0.0, 0.0
            continue
        ta = (-half - o) / u
        tb = (half - o) / u
        if ta > tb:
            ta, tb = tb, ta
        t0 = max(t0, ta)
        t1 = min(t1, tb)
    return max(t1 - t0, 0.0), t0, t1


def ray_lengths(origin, direction, scene: PhantomSpec, t_max: float = np.inf):
    """Chord length of the forward ray inside each scene object.

    Returns (material_id, length) pairs for every sphere the ray crosses,
    plus the clutter box with the sphere overlaps subtracted. Interval
    objects (analytic phantoms) are not traceable and raise.
    """
    origin = np.asarray(origin, dtype=float)
    direction = np.asarray(direction, dtype=float)
    norm = np.linalg.norm(direction)
    if not np.isclose(norm, 1.0, rtol=1e-9):
        raise ValueError("direction must be a unit vector")
    out = []
    sphere_spans = []
    for obj in scene.objects:
        if obj.radius is None:
            raise ValueError("ray tracing needs sphere objects")
        center = np.array([obj.center, 0.0, 0.0])
        res = _segment_sphere(origin, direction, center, obj.radius, t_max)
        if res == 0.0:
            continue
        length, t0, t1 = res
        if length > 0.0:
            out.append((obj.material_id, length))
            sphere_spans.append((t0, t1))
    if scene.clutter is not None:
        length, t0, t1 = _segment_box(origin, direction, scene.clutter.half_side, t_max)
        for a, b in sphere_spans:
            length -= max(min(b, t1) - max(a, t0), 0.0)
        if length > 0.0:
            out.append((scene.clutter.material_id, length))
    return out


# ---------------------------------------------------------------------------
# Monte Carlo configuration and tally


@dataclass(frozen=True)
class McConfig:
    photons_per_projection_per_energy: int
    seed: int
    scene: PhantomSpec
    step_mm: float = 1.0
    mode: str = "forced"
    attenuate: bool = True
    enable_pe: bool = True
    enable_inc: bool = True
    enable_coh: bool = True
    # optional override of the coherent scoring curves: (q lattice, {material: values})
    scoring_tables: tuple | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.photons_per_projection_per_energy < 1:
            raise ValueError("photon budget must be at least 1")
        if self.step_mm <= 0:
            raise ValueError("interaction step must be positive")
        if self.mode not in ("forced", "literal"):
            raise ValueError("mode must be 'forced' or 'literal'")


@dataclass
class Tally:
    coherent: np.ndarray  # (n_E, n_src, n_det) scores
    compton: np.ndarray
    launched: int
    absorbed: int
    transmitted: int
    scattered: int
    escaped: int
    energies: np.ndarray
    source_x1: np.ndarray
    detector_x1: np.ndarray
    slice_x2: float
    mode: str

    def conserved(self) -> bool:
        return self.launched == self.absorbed + self.transmitted + self.scattered + self.escaped

    def to_sinogram(self) -> Sinogram:
        return Sinogram(
            (self.coherent + self.compton).ravel(),
            self.energies,
            self.source_x1,
            self.detector_x1,
            self.slice_x2,
            "monte_carlo",
        )


def _scene_arrays(scene: PhantomSpec, materials: list[str]):
    cx, rr, mat = [], [], []
    for obj in scene.objects:
        if obj.radius is None:
            raise ValueError("Monte Carlo scenes use sphere objects")
        cx.append(obj.center)
        rr.append(obj.radius)
        mat.append(materials.index(obj.material_id))
    return np.array(cx), np.array(rr), np.array(mat, dtype=np.int64)


def _resample_mu(tables, e_lat, enable):
    out = np.zeros((len(tables), e_lat.size))
    for i, tbl in enumerate(tables):
        for j, e in enumerate(e_lat):
            pe, inc, coh = interp_mu(float(e), tbl)
            out[i, j] = enable[0] * pe + enable[1] * inc + enable[2] * coh
    return out


def mc_materials(scene: PhantomSpec, peak_lists=None, atten=None):
    """Material ids, peak lists and attenuation tables for a scene."""
    ids = []
    for obj in scene.objects:
        if obj.material_id not in ids:
            ids.append(obj.material_id)
    peaks = {m: (peak_lists or {}).get(m) or builtin_peaks(m) for m in ids}
    tabs = {m: (atten or {}).get(m) or builtin_attenuation(m) for m in ids}
    clut = None
    if scene.clutter is not None:
        cid = scene.clutter.material_id
        clut = (atten or {}).get(cid) or builtin_attenuation(cid)
    return ids, peaks, tabs, clut


def mc_run(
    cfg: McConfig,
    scanner: ScannerConfig,
    grid: ImageGrid,
    peak_lists: dict[str, BraggPeakList] | None = None,
    atten: dict[str, AttenuationTable] | None = None,
    gm: GaussianMixtureParams = GaussianMixtureParams(),
) -> Tally:
    """Run the single-scatter engine over every (source, energy, site, trial)."""
    scene = cfg.scene
    x2 = scene.slice_x2
    eps = float(detector_height(x2, scanner))
    half_fan = float(source_width(x2, scanner))
    ids, peaks, tabs, clut_tbl = mc_materials(scene, peak_lists, atten)
    sph_cx, sph_r, sph_mat = _scene_arrays(scene, ids)

    energies = scanner.energies
    de = float(energies[1] - energies[0]) if energies.size > 1 else 1.0
    if energies.size > 1 and not np.allclose(np.diff(energies), de):
        raise ValueError("Monte Carlo binning needs a uniform energy lattice")

    # attenuation lattice covering Compton-shifted energies, with clutter last
    e_lo = max(float(energies[0]) * 0.9, float(min(t.energies[0] for t in tabs.values())))
    e_lat = np.linspace(e_lo, float(energies[-1]), 512)
    enable = (1.0 if cfg.enable_pe else 0.0, 1.0 if cfg.enable_inc else 0.0, 1.0 if cfg.enable_coh else 0.0)
    mu_rows = _resample_mu([tabs[m] for m in ids], e_lat, enable)
    if clut_tbl is not None:
        # clutter attenuates through every enabled channel but never scatters
        clut_row = _resample_mu([clut_tbl], e_lat, enable)
        mu_rows = np.vstack([mu_rows, clut_row])
    clut_half = scene.clutter.half_side if scene.clutter is not None else 0.0
    has_clutter = scene.clutter is not None

    # interaction law per (material, source energy)
    n_e = energies.size
    n_mat = len(ids)
    p_cat = np.zeros((n_mat, n_e, 4))  # NI, PE, INC, COH
    for i, m in enumerate(ids):
        for j, E in enumerate(energies):
            pe, inc, coh = interp_mu(float(E), tabs[m])
            pe, inc, coh = pe * enable[0], inc * enable[1], coh * enable[2]
            mu = pe + inc + coh
            if mu == 0.0:
                p_cat[i, j] = (1.0, 0.0, 0.0, 0.0)
            else:
                p_ni = math.exp(-mu * cfg.step_mm)
                p_cat[i, j] = (p_ni, (1 - p_ni) * pe / mu, (1 - p_ni) * inc / mu, (1 - p_ni) * coh / mu)

    # coherent scoring curves (forced) and peak CDFs (literal)
    if cfg.scoring_tables is not None:
        q_lat, curve_map = cfg.scoring_tables
        q_lat = np.asarray(q_lat, dtype=float)
        f_curves = np.vstack([np.asarray(curve_map[m], dtype=float) for m in ids])
    else:
        q_lat = np.linspace(0.0, 2.5, 4096)
        f_curves = np.vstack(
            [evaluate_F(q_lat, normalized_peaks(peaks[m], gm, q_lat), gm) for m in ids]
        )
    max_pk = max(p.q.size for p in peaks.values())
    pk_q = np.zeros((n_mat, max_pk))
    pk_cdf = np.zeros((n_mat, n_e, max_pk))
    pk_any = np.zeros((n_mat, n_e), dtype=np.bool_)
    for i, m in enumerate(ids):
        pk = peaks[m]
        pk_q[i, : pk.q.size] = pk.q
        for j, E in enumerate(energies):
            w = np.where(pk.q * scanner.hc / E <= 1.0, pk.g, 0.0)
            tot = w.sum()
            if tot > 0:
                pk_cdf[i, j, : pk.q.size] = np.cumsum(w) / tot
                pk_cdf[i, j, pk.q.size :] = 1.0
                pk_any[i, j] = True

    if q_lat.size < 2 or not np.allclose(np.diff(q_lat), q_lat[1] - q_lat[0], rtol=1e-9):
        raise ValueError("scoring q lattice must be uniform")

    coh_norm = np.ones((n_mat, n_e))
    for i in range(n_mat):
        coh_norm[i] = np.maximum(coherent_direction_norm(q_lat, f_curves[i], energies, scanner.hc), 1e-300)

    # Klein-Nishina tables per source energy
    kn_cos = np.linspace(-1.0, 1.0, 2048)
    kn_cdf = np.zeros((n_e, kn_cos.size))
    kn_tot = np.zeros(n_e)
    for j, E in enumerate(energies):
        c, cdf, tot = _kn_table(float(E), kn_cos.size)
        kn_cdf[j] = cdf
        kn_tot[j] = tot

    n_d = scanner.detector_x1.size
    n_s = scanner.source_x1.size
    tally_coh = np.zeros((n_e, n_s, n_d))
    tally_com = np.zeros((n_e, n_s, n_d))
    fates = np.zeros((n_s, 5), dtype=np.int64)  # launched, absorbed, transmitted, scattered, escaped

    x10, dx1, m_px = float(grid.x1_values[0]), grid.dx1, grid.m
    pitch_half = math.sqrt(scanner.detector_area) / 2.0
    args = (
        energies, scanner.source_x1, scanner.detector_x1,
        float(x2), scanner.w_x2, eps, half_fan, scanner.detector_area, scanner.hc, de,
        x10, dx1, m_px,
        sph_cx, sph_r, sph_mat, has_clutter, clut_half,
        e_lat, mu_rows, p_cat, q_lat, f_curves, coh_norm,
        pk_q, pk_cdf, pk_any, kn_cos, kn_cdf, kn_tot,
        int(cfg.photons_per_projection_per_energy), np.uint64(cfg.seed),
        cfg.mode == "literal", cfg.attenuate, pitch_half,
        tally_coh, tally_com, fates,
    )
    if USE_NUMBA:
        _mc_kernel(*args)
    else:
        _mc_numpy(*args)
    launched, absorbed, transmitted, scattered, escaped = fates.sum(axis=0)
    return Tally(
        tally_coh, tally_com,
        int(launched), int(absorbed), int(transmitted), int(scattered), int(escaped),
        energies.copy(), scanner.source_x1.copy(), scanner.detector_x1.copy(), float(x2), cfg.mode,
    )


# ---------------------------------------------------------------------------
# keyed counter RNG (splitmix-style finalizer over an indexed sequence)

_GAMMA = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB
_DRAWS_PER_TRIAL = 6
_INV_2_53 = 1.0 / 9007199254740992.0


@njit(inline="always")
def _mix64(x):
    x = (x ^ (x >> np.uint64(30))) * np.uint64(_MIX1)
    x = (x ^ (x >> np.uint64(27))) * np.uint64(_MIX2)
    return x ^ (x >> np.uint64(31))


@njit(inline="always")
def _u01(base, idx):
    z = _mix64(base + np.uint64(_GAMMA) * idx)
    return float(z >> np.uint64(11)) * _INV_2_53


def _u01_np(base, idx):
    z = base + np.uint64(_GAMMA) * idx.astype(np.uint64)
    z = (z ^ (z >> np.uint64(30))) * np.uint64(_MIX1)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(_MIX2)
    z = z ^ (z >> np.uint64(31))
    return (z >> np.uint64(11)) * _INV_2_53


def stream_base(seed: int, block: int) -> np.uint64:
    """Python-int mirror of the in-kernel stream keying (wrapping uint64)."""
    mask = (1 << 64) - 1
    x = int(seed) & mask
    x = ((x ^ (x >> 30)) * _MIX1) & mask
    x = ((x ^ (x >> 27)) * _MIX2) & mask
    x ^= x >> 31
    z = (x + ((int(block) & mask) * _GAMMA & mask)) & mask
    z = ((z ^ (z >> 30)) * _MIX1) & mask
    z = ((z ^ (z >> 27)) * _MIX2) & mask
    return np.uint64(z ^ (z >> 31))


@njit(inline="always")
def _stream_base_jit(seed, block):
    s = _mix64(seed)
    z = s + np.uint64(block) * np.uint64(_GAMMA)
    return _mix64(z)


# ---------------------------------------------------------------------------
# shared scalar helpers for the kernels


@njit(inline="always")
def _optical_depth(ox, oy, oz, ux, uy, uz, t_max, sph_cx, sph_r, sph_mat, has_clutter, clut_half, mu_vals):
    """Sum of mu * chord over scene objects along a segment; clutter chord
    excludes the sphere overlaps. mu_vals holds one mu per material row
    (clutter last when present)."""
    depth = 0.0
    clut_used = 0.0
    if has_clutter:
        t0, t1 = 0.0, t_max
        for ax in range(3):
            if ax == 0:
                o, u = ox, ux
            elif ax == 1:
                o, u = oy, uy
            else:
                o, u = oz, uz
            if abs(u) < 1e-300:
                if abs(o) > clut_half:
                    t1 = 0.0
                continue
            ta = (-clut_half - o) / u
            tb = (clut_half - o) / u
            if ta > tb:
                ta, tb = tb, ta
            if ta > t0:
                t0 = ta
            if tb < t1:
                t1 = tb
        box_t0, box_t1 = t0, t1
        box_len = box_t1 - box_t0
        if box_len < 0.0:
            box_len = 0.0
    else:
        box_t0, box_t1, box_len = 0.0, 0.0, 0.0
    for i in range(sph_cx.size):
        ocx = sph_cx[i] - ox
        ocy = -oy
        ocz = -oz
        b = ux * ocx + uy * ocy + uz * ocz
        disc = b * b - (ocx * ocx + ocy * ocy + ocz * ocz) + sph_r[i] * sph_r[i]
        if disc <= 0.0:
            continue
        root = math.sqrt(disc)
        t0 = b - root
        t1 = b + root
        if t0 < 0.0:
            t0 = 0.0
        if t1 > t_max:
            t1 = t_max
        if t1 > t0:
            depth += mu_vals[sph_mat[i]] * (t1 - t0)
            if has_clutter:
                a = t0 if t0 > box_t0 else box_t0
                bb = t1 if t1 < box_t1 else box_t1
                if bb > a:
                    clut_used += bb - a
    if has_clutter and box_len > clut_used:
        depth += mu_vals[mu_vals.size - 1] * (box_len - clut_used)
    return depth


@njit(inline="always")
def _interp_lat(x, lat0, dlat, n, row):
    t = (x - lat0) / dlat
    if t <= 0.0:
        return row[0]
    if t >= n - 1:
        return row[n - 1]
    i = int(t)
    f = t - i
    return (1.0 - f) * row[i] + f * row[i + 1]

@njit(cache=True, parallel=True)
def _mc_kernel(energies, sources, detectors, x2, w_x2, eps, half_fan, det_area, hc, de,
               x10, dx1, m_px, sph_cx, sph_r, sph_mat, has_clutter, clut_half,
               e_lat, mu_rows, p_cat, q_lat, f_curves, coh_norm,
               pk_q, pk_cdf, pk_any, kn_cos, kn_cdf, kn_tot,
               n_budget, seed, literal, attenuate, pitch_half,
               tally_coh, tally_com, fates):
    n_e = energies.size
    n_s = sources.size
    n_d = detectors.size
    lat0 = e_lat[0]
    dlat = e_lat[1] - e_lat[0]
    n_lat = e_lat.size
    q0 = q_lat[0]
    dq = q_lat[1] - q_lat[0]
    nq = q_lat.size
    d0 = detectors[0]
    n_rows_mu = mu_rows.shape[0]
    e0 = energies[0]
    for s_idx in prange(n_s):
        s1 = sources[s_idx]
        lo = int(math.ceil((s1 - half_fan - x10) / dx1 - 1e-12))
        hi = int(math.floor((s1 + half_fan - x10) / dx1 + 1e-12))
        if lo < 0:
            lo = 0
        if hi > m_px - 1:
            hi = m_px - 1
        if hi < lo:
            continue
        n_sites = hi - lo + 1
        n_per_site = n_budget // n_sites
        if n_per_site < 1:
            n_per_site = 1
        launched = 0
        absorbed = 0
        transmitted = 0
        scattered = 0
        escaped = 0
        mu_at = np.zeros(n_rows_mu)
        mu_at_s = np.zeros(n_rows_mu)
        for e_idx in range(n_e):
            E = energies[e_idx]
            for r in range(n_rows_mu):
                mu_at[r] = _interp_lat(E, lat0, dlat, n_lat, mu_rows[r])
            base = _stream_base_jit(seed, np.uint64(e_idx * n_s + s_idx))
            for site in range(lo, hi + 1):
                x1 = x10 + dx1 * site
                mat = -1
                for i in range(sph_cx.size):
                    dxs = x1 - sph_cx[i]
                    if dxs * dxs + x2 * x2 <= sph_r[i] * sph_r[i]:
                        mat = sph_mat[i]
                vin_x = x1 - s1
                vin_y = x2 + w_x2
                dist2 = vin_x * vin_x + vin_y * vin_y
                dist = math.sqrt(dist2)
                p1 = (vin_y * vin_y) / dist2
                if attenuate:
                    depth = _optical_depth(s1, -w_x2, 0.0, vin_x / dist, vin_y / dist, 0.0,
                                           dist, sph_cx, sph_r, sph_mat, has_clutter, clut_half, mu_at)
                    p1 *= math.exp(-depth)
                if mat >= 0:
                    p_ni = p_cat[mat, e_idx, 0]
                    c_pe = p_ni + p_cat[mat, e_idx, 1]
                    c_inc = c_pe + p_cat[mat, e_idx, 2]
                else:
                    p_ni = 1.0
                    c_pe = 1.0
                    c_inc = 1.0
                n_coh = 0
                n_inc = 0
                gid0 = np.uint64((site - lo) * n_per_site)
                for t in range(n_per_site):
                    launched += 1
                    gid = (gid0 + np.uint64(t)) * np.uint64(_DRAWS_PER_TRIAL)
                    u1 = _u01(base, gid)
                    if u1 >= p1:
                        absorbed += 1
                        continue
                    u2 = _u01(base, gid + np.uint64(1))
                    if u2 < p_ni:
                        transmitted += 1
                        continue
                    if u2 < c_pe:
                        absorbed += 1
                        continue
                    is_inc = u2 < c_inc
                    if not literal:
                        scattered += 1
                        if is_inc:
                            n_inc += 1
                        else:
                            n_coh += 1
                        continue
                    # literal: sample one outgoing direction and chase it
                    u3 = _u01(base, gid + np.uint64(2))
                    u4 = _u01(base, gid + np.uint64(3))
                    u5 = _u01(base, gid + np.uint64(4))
                    u6 = _u01(base, gid + np.uint64(5))
                    if is_inc:
                        # inverse CDF on the Klein-Nishina table
                        a = 0
                        b = kn_cos.size - 1
                        while b - a > 1:
                            mid = (a + b) // 2
                            if kn_cdf[e_idx, mid] < u3:
                                a = mid
                            else:
                                b = mid
                        seg = kn_cdf[e_idx, b] - kn_cdf[e_idx, a]
                        f = 0.0 if seg <= 0.0 else (u3 - kn_cdf[e_idx, a]) / seg
                        cosw = kn_cos[a] + f * (kn_cos[b] - kn_cos[a])
                        es = E / (1.0 + E / 511.0 * (1.0 - cosw))
                    else:
                        if not pk_any[mat, e_idx]:
                            escaped += 1
                            continue
                        k = 0
                        while pk_cdf[mat, e_idx, k] < u3:
                            k += 1
                        sin_th = pk_q[mat, k] * hc / E
                        cosw = 1.0 - 2.0 * sin_th * sin_th
                        es = E
                        # polarization thinning of the coherent channel
                        if u6 >= 0.5 * (1.0 + cosw * cosw):
                            escaped += 1
                            continue
                    phi = 2.0 * math.pi * u4
                    sinw = math.sqrt(max(1.0 - cosw * cosw, 0.0))
                    ux_in = vin_x / dist
                    uy_in = vin_y / dist
                    # orthonormal frame around the incoming direction (in-plane)
                    vx = cosw * ux_in + sinw * math.cos(phi) * (-uy_in)
                    vy = cosw * uy_in + sinw * math.cos(phi) * ux_in
                    vz = sinw * math.sin(phi)
                    if vy <= 1e-12:
                        escaped += 1
                        continue
                    t_hit = (w_x2 - x2) / vy
                    y1 = x1 + t_hit * vx
                    y3 = t_hit * vz
                    kd = int(math.floor((y1 - d0) / (detectors[1] - detectors[0]) + 0.5)) if n_d > 1 else 0
                    if kd < 0 or kd >= n_d:
                        escaped += 1
                        continue
                    if abs(y1 - detectors[kd]) > pitch_half or abs(y3 - eps) > pitch_half:
                        escaped += 1
                        continue
                    es_bin = int(math.floor((es - e0) / de + 0.5))
                    if es_bin < 0 or es_bin >= n_e or abs(es - energies[es_bin]) > de / 2.0 + 1e-9:
                        escaped += 1
                        continue
                    if attenuate:
                        for r in range(n_rows_mu):
                            mu_at_s[r] = _interp_lat(es, lat0, dlat, n_lat, mu_rows[r])
                        t_len = math.sqrt(t_hit * t_hit * (vx * vx + vy * vy + vz * vz))
                        depth2 = _optical_depth(x1, x2, 0.0, vx, vy, vz, t_len,
                                                sph_cx, sph_r, sph_mat, has_clutter, clut_half, mu_at_s)
                        if u5 >= math.exp(-depth2):
                            absorbed += 1
                            continue
                    scattered += 1
                    if is_inc:
                        tally_com[es_bin, s_idx, kd] += 1.0
                    else:
                        tally_coh[es_bin, s_idx, kd] += 1.0
                if literal or (n_coh == 0 and n_inc == 0) or mat < 0:
                    continue
                # forced scoring: expected deposit per detector
                inv_cnorm = 1.0 / coh_norm[mat, e_idx]
                for d_idx in range(n_d):
                    d1 = detectors[d_idx]
                    vout_x = d1 - x1
                    vout_y = w_x2 - x2
                    nout2 = vout_x * vout_x + vout_y * vout_y + eps * eps
                    nout = math.sqrt(nout2)
                    cos_om = (vin_x * vout_x + vin_y * vout_y) / (dist * nout)
                    if cos_om > 1.0:
                        cos_om = 1.0
                    elif cos_om < -1.0:
                        cos_om = -1.0
                    d_omega = det_area * vout_y / (nout2 * nout)
                    ux = vout_x / nout
                    uy = vout_y / nout
                    uz = eps / nout
                    if n_coh > 0:
                        qd = E / hc * math.sin(0.5 * math.acos(cos_om))
                        fval = _interp_lat(qd, q0, dq, nq, f_curves[mat])
                        if fval > 0.0:
                            w = 0.5 * (1.0 + cos_om * cos_om) * fval * inv_cnorm * d_omega
                            if attenuate:
                                depth2 = _optical_depth(x1, x2, 0.0, ux, uy, uz, nout,
                                                        sph_cx, sph_r, sph_mat, has_clutter, clut_half, mu_at)
                                w *= math.exp(-depth2)
                            tally_coh[e_idx, s_idx, d_idx] += n_coh * w
                    if n_inc > 0:
                        ratio = 1.0 / (1.0 + E / 511.0 * (1.0 - cos_om))
                        es = E * ratio
                        es_bin = int(math.floor((es - e0) / de + 0.5))
                        if 0 <= es_bin < n_e and abs(es - energies[es_bin]) <= de / 2.0 + 1e-9:
                            kn = 0.5 * ratio * ratio * (ratio + 1.0 / ratio - (1.0 - cos_om * cos_om))
                            w = kn / kn_tot[e_idx] * d_omega
                            if attenuate:
                                for r in range(n_rows_mu):
                                    mu_at_s[r] = _interp_lat(es, lat0, dlat, n_lat, mu_rows[r])
                                depth2 = _optical_depth(x1, x2, 0.0, ux, uy, uz, nout,
                                                        sph_cx, sph_r, sph_mat, has_clutter, clut_half, mu_at_s)
                                w *= math.exp(-depth2)
                            tally_com[es_bin, s_idx, d_idx] += n_inc * w
        fates[s_idx, 0] = launched
        fates[s_idx, 1] = absorbed
        fates[s_idx, 2] = transmitted
        fates[s_idx, 3] = scattered
        fates[s_idx, 4] = escaped

def _mc_numpy(energies, sources, detectors, x2, w_x2, eps, half_fan, det_area, hc, de,
              x10, dx1, m_px, sph_cx, sph_r, sph_mat, has_clutter, clut_half,
              e_lat, mu_rows, p_cat, q_lat, f_curves, coh_norm,
              pk_q, pk_cdf, pk_any, kn_cos, kn_cdf, kn_tot,
              n_budget, seed, literal, attenuate, pitch_half,
              tally_coh, tally_com, fates):
    """Vectorized fallback with the same trial addressing as the jit kernel."""
    n_e, n_s, n_d = energies.size, sources.size, detectors.size
    lat0, dlat, n_lat = e_lat[0], e_lat[1] - e_lat[0], e_lat.size
    d0 = detectors[0]
    dd = detectors[1] - detectors[0] if n_d > 1 else 1.0
    n_rows_mu = mu_rows.shape[0]
    e0 = energies[0]
    vout_y = w_x2 - x2
    six = np.uint64(_DRAWS_PER_TRIAL)

    def depth_at(ox, oy, oz, ux, uy, uz, t_max, mu_vals):
        return _optical_depth(ox, oy, oz, ux, uy, uz, t_max,
                              sph_cx, sph_r, sph_mat, has_clutter, clut_half, mu_vals)

    for s_idx in range(n_s):
        s1 = sources[s_idx]
        lo = max(int(math.ceil((s1 - half_fan - x10) / dx1 - 1e-12)), 0)
        hi = min(int(math.floor((s1 + half_fan - x10) / dx1 + 1e-12)), m_px - 1)
        if hi < lo:
            continue
        n_sites = hi - lo + 1
        n_per_site = max(n_budget // n_sites, 1)
        cnt = np.zeros(5, dtype=np.int64)
        for e_idx in range(n_e):
            E = float(energies[e_idx])
            mu_at = np.array([_interp_lat(E, lat0, dlat, n_lat, mu_rows[r]) for r in range(n_rows_mu)])
            base = stream_base(int(seed), e_idx * n_s + s_idx)
            # detector geometry shared by all sites at this energy
            for site in range(lo, hi + 1):
                x1 = x10 + dx1 * site
                mat = -1
                for i in range(sph_cx.size):
                    if (x1 - sph_cx[i]) ** 2 + x2 * x2 <= sph_r[i] ** 2:
                        mat = int(sph_mat[i])
                vin_x = x1 - s1
                vin_y = x2 + w_x2
                dist2 = vin_x * vin_x + vin_y * vin_y
                dist = math.sqrt(dist2)
                p1 = (vin_y * vin_y) / dist2
                if attenuate:
                    p1 *= math.exp(-depth_at(s1, -w_x2, 0.0, vin_x / dist, vin_y / dist, 0.0, dist, mu_at))
                if mat >= 0:
                    p_ni = p_cat[mat, e_idx, 0]
                    c_pe = p_ni + p_cat[mat, e_idx, 1]
                    c_inc = c_pe + p_cat[mat, e_idx, 2]
                else:
                    p_ni = c_pe = c_inc = 1.0
                gid = (np.uint64((site - lo) * n_per_site) + np.arange(n_per_site, dtype=np.uint64)) * six
                u1 = _u01_np(base, gid)
                u2 = _u01_np(base, gid + np.uint64(1))
                alive = u1 < p1
                cnt[0] += n_per_site
                cnt[1] += int(np.sum(~alive))
                ni = alive & (u2 < p_ni)
                cnt[2] += int(ni.sum())
                pe = alive & ~ni & (u2 < c_pe)
                cnt[1] += int(pe.sum())
                inc_mask = alive & (u2 >= c_pe) & (u2 < c_inc)
                coh_mask = alive & (u2 >= c_inc)
                n_inc = int(inc_mask.sum())
                n_coh = int(coh_mask.sum())
                if n_inc + n_coh == 0:
                    continue
                ux_in, uy_in = vin_x / dist, vin_y / dist
                if literal:
                    for t in np.nonzero(inc_mask | coh_mask)[0]:
                        g = gid[t]
                        us = _u01_np(base, g + np.arange(2, 6, dtype=np.uint64))
                        u3, u4, u5, u6 = us
                        if inc_mask[t]:
                            cosw = float(np.interp(u3, kn_cdf[e_idx], kn_cos))
                            es = E / (1.0 + E / 511.0 * (1.0 - cosw))
                        else:
                            if not pk_any[mat, e_idx]:
                                cnt[4] += 1
                                continue
                            k = int(np.searchsorted(pk_cdf[mat, e_idx], u3, side="left"))
                            k = min(k, pk_q.shape[1] - 1)
                            sin_th = pk_q[mat, k] * hc / E
                            cosw = 1.0 - 2.0 * sin_th * sin_th
                            es = E
                            if u6 >= 0.5 * (1.0 + cosw * cosw):
                                cnt[4] += 1
                                continue
                        phi = 2.0 * math.pi * u4
                        sinw = math.sqrt(max(1.0 - cosw * cosw, 0.0))
                        vx = cosw * ux_in - sinw * math.cos(phi) * uy_in
                        vy = cosw * uy_in + sinw * math.cos(phi) * ux_in
                        vz = sinw * math.sin(phi)
                        if vy <= 1e-12:
                            cnt[4] += 1
                            continue
                        t_hit = (w_x2 - x2) / vy
                        y1 = x1 + t_hit * vx
                        y3 = t_hit * vz
                        kd = int(math.floor((y1 - d0) / dd + 0.5)) if n_d > 1 else 0
                        if kd < 0 or kd >= n_d or abs(y1 - detectors[kd]) > pitch_half or abs(y3 - eps) > pitch_half:
                            cnt[4] += 1
                            continue
                        es_bin = int(math.floor((es - e0) / de + 0.5))
                        if es_bin < 0 or es_bin >= n_e or abs(es - energies[es_bin]) > de / 2.0 + 1e-9:
                            cnt[4] += 1
                            continue
                        if attenuate:
                            mu_s = np.array(
                                [_interp_lat(es, lat0, dlat, n_lat, mu_rows[r]) for r in range(n_rows_mu)]
                            )
                            t_len = t_hit * math.sqrt(vx * vx + vy * vy + vz * vz)
                            if u5 >= math.exp(-depth_at(x1, x2, 0.0, vx, vy, vz, t_len, mu_s)):
                                cnt[1] += 1
                                continue
                        cnt[3] += 1
                        if inc_mask[t]:
                            tally_com[es_bin, s_idx, kd] += 1.0
                        else:
                            tally_coh[es_bin, s_idx, kd] += 1.0
                    continue
                # forced scoring
                cnt[3] += n_inc + n_coh
                if mat < 0:
                    continue
                vout_x = detectors - x1
                nout2 = vout_x**2 + vout_y**2 + eps * eps
                nout = np.sqrt(nout2)
                cos_om = np.clip((vin_x * vout_x + vin_y * vout_y) / (dist * nout), -1.0, 1.0)
                d_omega = det_area * vout_y / (nout2 * nout)
                if n_coh > 0:
                    qd = E / hc * np.sin(0.5 * np.arccos(cos_om))
                    fval = np.interp(qd, q_lat, f_curves[mat])
                    w = 0.5 * (1.0 + cos_om**2) * fval / coh_norm[mat, e_idx] * d_omega
                    if attenuate:
                        for di in np.nonzero(w > 0)[0]:
                            w[di] *= math.exp(
                                -depth_at(x1, x2, 0.0, vout_x[di] / nout[di], vout_y / nout[di], eps / nout[di], nout[di], mu_at)
                            )
                    tally_coh[e_idx, s_idx, :] += n_coh * w
                if n_inc > 0:
                    ratio = 1.0 / (1.0 + E / 511.0 * (1.0 - cos_om))
                    es = E * ratio
                    es_bin = np.floor((es - e0) / de + 0.5).astype(np.int64)
                    ok = (es_bin >= 0) & (es_bin < n_e)
                    ok &= np.abs(es - energies[np.clip(es_bin, 0, n_e - 1)]) <= de / 2.0 + 1e-9
                    kn = 0.5 * ratio**2 * (ratio + 1.0 / ratio - (1.0 - cos_om**2))
                    w = kn / kn_tot[e_idx] * d_omega
                    if attenuate:
                        for di in np.nonzero(ok)[0]:
                            mu_s = np.array(
                                [_interp_lat(es[di], lat0, dlat, n_lat, mu_rows[r]) for r in range(n_rows_mu)]
                            )
                            w[di] *= math.exp(
                                -depth_at(x1, x2, 0.0, vout_x[di] / nout[di], vout_y / nout[di], eps / nout[di], nout[di], mu_s)
                            )
                    np.add.at(tally_com[:, s_idx, :], (es_bin[ok], np.nonzero(ok)[0]), n_inc * w[ok])
        fates[s_idx] = cnt
