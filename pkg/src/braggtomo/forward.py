"""Discretized Bragg forward operator and the characteristic dictionary.

The operator maps an n x m image f(q, x1) on a fixed scattering line
(height x2) to the p = |E| * |s1| * |d1| measurement lattice. Rows are
assembled independently; each (E, s1, d1, x1) sample deposits its kernel
weight into the two q bins bracketing the momentum transfer q* by linear
interpolation. Storage is CSR with a canonical per-row column order
(ascending x1, then lower/upper q bin), so rebuilds are bit-reproducible.

Image vectorization: column index = ix * n + iq, i.e. one length-n q-block
per x1 pixel.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from ._accel import USE_NUMBA, njit, prange
from .geometry import ScannerConfig, detector_height, source_width


@dataclass(frozen=True)
class ImageGrid:
    """Uniform (q, x1) sample lattice for the reconstruction image."""

    q_values: np.ndarray
    x1_values: np.ndarray

    def __post_init__(self):
        q = np.asarray(self.q_values, dtype=float)
        x1 = np.asarray(self.x1_values, dtype=float)
        object.__setattr__(self, "q_values", q)
        object.__setattr__(self, "x1_values", x1)
        if q.size < 2 or x1.size < 1:
            raise ValueError("grid needs at least 2 q samples and 1 x1 sample")
        if q[0] < 0:
            raise ValueError("q grid must be nonnegative")
        dq = np.diff(q)
        if np.any(dq <= 0) or not np.allclose(dq, dq[0], rtol=1e-9):
            raise ValueError("q grid must be uniformly increasing")
        if x1.size > 1:
            dx = np.diff(x1)
            if np.any(dx <= 0) or not np.allclose(dx, dx[0], rtol=1e-9):
                raise ValueError("x1 grid must be uniformly increasing")

    @property
    def n(self) -> int:
        return self.q_values.size

    @property
    def m(self) -> int:
        return self.x1_values.size

    @property
    def dq(self) -> float:
        return float(self.q_values[1] - self.q_values[0])

    @property
    def dx1(self) -> float:
        return float(self.x1_values[1] - self.x1_values[0]) if self.m > 1 else 1.0

    def vec(self, image: np.ndarray) -> np.ndarray:
        """Flatten an (n, m) image into the operator's column order."""
        if image.shape != (self.n, self.m):
            raise ValueError(f"expected image shape {(self.n, self.m)}, got {image.shape}")
        return np.ascontiguousarray(image.T).reshape(-1)

    def unvec(self, v: np.ndarray) -> np.ndarray:
        if v.size != self.n * self.m:
            raise ValueError("vector length does not match grid")
        return np.ascontiguousarray(v.reshape(self.m, self.n).T)


def uniform_grid(n: int, m: int, q_max: float = 2.0, x1_min: float = -300.0, x1_max: float = 300.0) -> ImageGrid:
    """Half-open lattices: q_i = q_max * i / n, x1_j = x1_min + j * (span / m)."""
    return ImageGrid(
        q_values=q_max * np.arange(n) / n,
        x1_values=x1_min + (x1_max - x1_min) / m * np.arange(m),
    )


@dataclass(frozen=True)
class CharacteristicLibrary:
    """Indicator dictionary over x1 intervals.

    Column j of Z marks the grid pixels with |x1 - center_j| <= width_j / 2.
    Entries whose interval misses the grid entirely are kept but flagged.
    """

    centers: np.ndarray
    widths: np.ndarray
    Z: np.ndarray  # (m, l) of 0.0 / 1.0
    grid: ImageGrid

    @property
    def l(self) -> int:
        return self.centers.size

    @property
    def empty(self) -> np.ndarray:
        return self.Z.sum(axis=0) == 0


def build_library(centers, widths, grid: ImageGrid) -> CharacteristicLibrary:
    """Cartesian product library: entry (iw * n_centers + ic) pairs centers[ic] with widths[iw]."""
    centers = np.asarray(centers, dtype=float)
    widths = np.asarray(widths, dtype=float)
    if centers.size == 0 or widths.size == 0:
        raise ValueError("centers and widths must be nonempty")
    all_c = np.tile(centers, widths.size)
    all_w = np.repeat(widths, centers.size)
    x1 = grid.x1_values
    tol = 1e-9
    Z = (np.abs(x1[:, None] - all_c[None, :]) <= all_w[None, :] / 2.0 + tol).astype(float)
    lib = CharacteristicLibrary(all_c, all_w, Z, grid)
    if np.any(lib.empty):
        warnings.warn(f"{int(lib.empty.sum())} library entries have empty support on this grid")
    return lib


def default_library(grid: ImageGrid) -> CharacteristicLibrary:
    """81 centers on [-200, 200] mm at 5 mm pitch x widths {10..30} mm: l = 405."""
    return build_library(np.arange(-200.0, 200.0 + 1e-9, 5.0), np.arange(10.0, 30.0 + 1e-9, 5.0), grid)


def gram(library: CharacteristicLibrary) -> np.ndarray:
    """G = Z^T Z; G_ij counts the x1 pixels shared by entries i and j."""
    return library.Z.T @ library.Z


@dataclass(frozen=True)
class BraggOperator:
    """Sparse forward matrix with its measurement lattice and image grid."""

    matrix: sp.csr_matrix
    energies: np.ndarray
    source_x1: np.ndarray
    detector_x1: np.ndarray
    grid: ImageGrid
    slice_x2: float

    @property
    def p(self) -> int:
        return self.matrix.shape[0]

    def row_of(self, e_idx, s_idx, d_idx):
        n_s = self.source_x1.size
        n_d = self.detector_x1.size
        return (np.asarray(e_idx) * n_s + np.asarray(s_idx)) * n_d + np.asarray(d_idx)

    def row_image(self, row: int) -> np.ndarray:
        """Reshape one operator row into an (n, m) weighted-curve image."""
        return self.grid.unvec(self.matrix.getrow(row).toarray().ravel())


# ---------------------------------------------------------------------------
# assembly kernels


@njit(inline="always")
def _kernel_point(E, s1, d1, x1, x2, w_x2, eps, det_area, hc):
    # incoming s -> x and outgoing x -> d legs; x = (x1, x2, 0), d carries the
    # collimation offset eps in x3
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
    pol = 0.5 * (1.0 + cos2t * cos2t)
    weight = (1.0 / nin2) * pol * (det_area * vout_y / (nout2 * nout))
    return qstar, weight


@njit(inline="always")
def _window_bounds(s1, half_fan, x10, dx1, m):
    lo = int(math.ceil((s1 - half_fan - x10) / dx1 - 1e-12))
    hi = int(math.floor((s1 + half_fan - x10) / dx1 + 1e-12))
    if lo < 0:
        lo = 0
    if hi > m - 1:
        hi = m - 1
    return lo, hi


@njit(cache=True, parallel=True)
def _count_kernel(energies, sources, detectors, q0, dq, nq, x10, dx1, m, x2, w_x2, eps, half_fan, det_area, hc, counts):
    n_s = sources.size
    n_d = detectors.size
    q_last = q0 + dq * (nq - 1)
    for r in prange(counts.size):
        e_idx = r // (n_s * n_d)
        rem = r - e_idx * (n_s * n_d)
        s_idx = rem // n_d
        d_idx = rem - s_idx * n_d
        E = energies[e_idx]
        s1 = sources[s_idx]
        d1 = detectors[d_idx]
        lo, hi = _window_bounds(s1, half_fan, x10, dx1, m)
        c = 0
        for ix in range(lo, hi + 1):
            qstar, _ = _kernel_point(E, s1, d1, x10 + dx1 * ix, x2, w_x2, eps, det_area, hc)
            if q0 <= qstar <= q_last:
                c += 2
        counts[r] = c


@njit(cache=True, parallel=True)
def _fill_kernel(
    energies, spectrum, sources, detectors, q0, dq, nq, x10, dx1, m, x2, w_x2, eps, half_fan, det_area, hc, indptr, indices, data
):
    n_s = sources.size
    n_d = detectors.size
    q_last = q0 + dq * (nq - 1)
    n_rows = indptr.size - 1
    for r in prange(n_rows):
        e_idx = r // (n_s * n_d)
        rem = r - e_idx * (n_s * n_d)
        s_idx = rem // n_d
        d_idx = rem - s_idx * n_d
        E = energies[e_idx]
        scale = spectrum[e_idx] * dx1
        s1 = sources[s_idx]
        d1 = detectors[d_idx]
        lo, hi = _window_bounds(s1, half_fan, x10, dx1, m)
        k = indptr[r]
        for ix in range(lo, hi + 1):
            qstar, w = _kernel_point(E, s1, d1, x10 + dx1 * ix, x2, w_x2, eps, det_area, hc)
            if q0 <= qstar <= q_last:
                iq = int((qstar - q0) / dq)
                if iq > nq - 2:
                    iq = nq - 2
                t = (qstar - (q0 + dq * iq)) / dq
                w_row = w * scale
                indices[k] = ix * nq + iq
                data[k] = (1.0 - t) * w_row
                indices[k + 1] = ix * nq + iq + 1
                data[k + 1] = t * w_row
                k += 2


def _kernel_point_np(E, s1, d1, x1, x2, w_x2, eps, det_area, hc):
    """Vectorized mirror of _kernel_point; broadcasts over d1 / x1 arrays."""
    vin_x = x1 - s1
    vin_y = x2 + w_x2
    nin2 = vin_x * vin_x + vin_y * vin_y
    vout_x = d1 - x1
    vout_y = w_x2 - x2
    nout2 = vout_x * vout_x + vout_y * vout_y + eps * eps
    nout = np.sqrt(nout2)
    cos2t = np.clip((vin_x * vout_x + vin_y * vout_y) / (np.sqrt(nin2) * nout), -1.0, 1.0)
    theta = 0.5 * np.arccos(cos2t)
    qstar = E / hc * np.sin(theta)
    weight = (1.0 / nin2) * 0.5 * (1.0 + cos2t * cos2t) * (det_area * vout_y / (nout2 * nout))
    return qstar, weight


def _assemble_numpy(energies, spectrum, sources, detectors, q0, dq, nq, x10, dx1, m, x2, w_x2, eps, half_fan, det_area, hc):
    q_last = q0 + dq * (nq - 1)
    n_d = detectors.size
    blocks_indptr = [np.zeros(1, dtype=np.int64)]
    blocks_indices = []
    blocks_data = []
    nnz = 0
    for e_idx, E in enumerate(energies):
        scale = spectrum[e_idx] * dx1
        for s1 in sources:
            lo = int(math.ceil((s1 - half_fan - x10) / dx1 - 1e-12))
            hi = int(math.floor((s1 + half_fan - x10) / dx1 + 1e-12))
            lo, hi = max(lo, 0), min(hi, m - 1)
            if hi < lo:
                blocks_indptr.append(np.full(n_d, nnz, dtype=np.int64))
                continue
            ix = np.arange(lo, hi + 1)
            x1 = x10 + dx1 * ix
            qstar, w = _kernel_point_np(E, s1, detectors[:, None], x1[None, :], x2, w_x2, eps, det_area, hc)
            ok = (qstar >= q0) & (qstar <= q_last)
            iq = np.minimum(((qstar - q0) / dq).astype(np.int64), nq - 2)
            t = (qstar - (q0 + dq * iq)) / dq
            w_row = w * scale
            cols = np.stack([ix[None, :] * nq + iq, ix[None, :] * nq + iq + 1], axis=-1)
            vals = np.stack([(1.0 - t) * w_row, t * w_row], axis=-1)
            keep = np.repeat(ok[:, :, None], 2, axis=2)
            blocks_indices.append(cols[keep])
            blocks_data.append(vals[keep])
            counts = 2 * ok.sum(axis=1)
            blocks_indptr.append(nnz + np.cumsum(counts))
            nnz += int(counts.sum())
    indptr = np.concatenate(blocks_indptr)
    indices = np.concatenate(blocks_indices) if blocks_indices else np.zeros(0, dtype=np.int64)
    data = np.concatenate(blocks_data) if blocks_data else np.zeros(0)
    return indptr, indices, data


def build_operator(cfg: ScannerConfig, grid: ImageGrid, x2: float) -> BraggOperator:
    """Assemble the sparse Bragg operator for the scattering line at height x2."""
    eps = float(detector_height(x2, cfg))
    half_fan = float(source_width(x2, cfg))
    args = (
        cfg.energies,
        cfg.spectrum,
        cfg.source_x1,
        cfg.detector_x1,
        float(grid.q_values[0]),
        grid.dq,
        grid.n,
        float(grid.x1_values[0]),
        grid.dx1,
        grid.m,
        float(x2),
        cfg.w_x2,
        eps,
        half_fan,
        cfg.detector_area,
        cfg.hc,
    )
    if USE_NUMBA:
        counts = np.zeros(cfg.n_rows, dtype=np.int64)
        a = args
        _count_kernel(a[0], a[2], a[3], *a[4:], counts)
        indptr = np.zeros(cfg.n_rows + 1, dtype=np.int64)
        np.cumsum(counts, out=indptr[1:])
        indices = np.zeros(indptr[-1], dtype=np.int64)
        data = np.zeros(indptr[-1])
        _fill_kernel(*args, indptr, indices, data)
    else:
        indptr, indices, data = _assemble_numpy(*args)
    mat = sp.csr_matrix((data, indices.astype(np.int32 if grid.n * grid.m < 2**31 else np.int64), indptr), shape=(cfg.n_rows, grid.n * grid.m))
    if mat.nnz == 0:
        warnings.warn("assembled operator is identically zero")
    return BraggOperator(mat, cfg.energies.copy(), cfg.source_x1.copy(), cfg.detector_x1.copy(), grid, float(x2))


# ---------------------------------------------------------------------------
# dictionary restriction and matrix-vector products


def restrict(A: BraggOperator, z_j: np.ndarray) -> sp.csr_matrix:
    """Restriction A_j = A C_j of the operator to one indicator column (p x n)."""
    z_j = np.asarray(z_j, dtype=float)
    n, m = A.grid.n, A.grid.m
    if z_j.shape != (m,):
        raise ValueError(f"indicator must have length m={m}")
    # C_j stacks z_j-scaled n x n identity blocks, one per x1 pixel
    ix = np.nonzero(z_j)[0]
    rows = (ix[:, None] * n + np.arange(n)[None, :]).ravel()
    cols = np.tile(np.arange(n), ix.size)
    c_j = sp.csr_matrix((np.ones(rows.size), (rows, cols)), shape=(n * m, n))
    return (A.matrix @ c_j).tocsr()


def normalized_operator(A: BraggOperator) -> tuple[BraggOperator, float]:
    """Rescale entries so the mean row sum is 1; returns (operator, factor).

    The physical kernel entries are ~1e-10 (inverse-square times solid angle
    in mm units), which puts the fitted image at ~1e10 counts and starves
    gradient methods. The Poisson data model is invariant under this rescale
    (means are normalized by total intensity), and the fitted image simply
    carries the inverse factor.
    """
    total = A.matrix.sum()
    if total <= 0:
        raise ValueError("cannot normalize an identically zero operator")
    factor = A.matrix.shape[0] / total
    mat = A.matrix.multiply(factor).tocsr()
    return BraggOperator(mat, A.energies, A.source_x1, A.detector_x1, A.grid, A.slice_x2), factor


def apply(A: BraggOperator, y: np.ndarray) -> np.ndarray:
    """Forward product A y on a vectorized image."""
    y = np.asarray(y, dtype=float).ravel()
    if y.size != A.matrix.shape[1]:
        raise ValueError("image vector length mismatch")
    return A.matrix @ y


def apply_transpose(A: BraggOperator, b: np.ndarray) -> np.ndarray:
    """Adjoint product A^T b back into image space."""
    b = np.asarray(b, dtype=float).ravel()
    if b.size != A.matrix.shape[0]:
        raise ValueError("data vector length mismatch")
    return A.matrix.T @ b
