"""Bit-exact artifact I/O.

Binary array format: magic ``BSTA``, format version u16, element-type code
u16 (1 = float64, 2 = uint64), rank u32, dims u64 x rank, then the payload
row-major. Everything little-endian. Multi-array artifacts (operator,
sinogram, tally, reconstruction) pair the arrays with a JSON sidecar that
holds the lattice metadata.
"""

from __future__ import annotations

import json
import os
import struct

import numpy as np
import scipy.sparse as sp

MAGIC = b"BSTA"
VERSION = 1
_CODES = {1: np.dtype("<f8"), 2: np.dtype("<u8")}


class ArrayFormatError(ValueError):
    """Malformed, truncated or unsupported array file."""


def write_array(path, array: np.ndarray) -> None:
    array = np.asarray(array)
    if array.ndim == 0 or 0 in array.shape:
        raise ArrayFormatError("arrays must have at least one dimension and no empty axes")
    if array.dtype.kind == "f":
        code, arr = 1, array.astype("<f8", copy=False)
    elif array.dtype.kind in "ui":
        if array.dtype.kind == "i" and np.any(array < 0):
            raise ArrayFormatError("negative integers do not fit the uint64 element type")
        code, arr = 2, array.astype("<u8")
    else:
        raise ArrayFormatError(f"unsupported dtype {array.dtype}")
    header = MAGIC + struct.pack("<HHI", VERSION, code, arr.ndim)
    header += struct.pack(f"<{arr.ndim}Q", *arr.shape)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(np.ascontiguousarray(arr).tobytes())


def read_array(path) -> np.ndarray:
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 12:
        raise ArrayFormatError(f"{path}: file shorter than the fixed header")
    if blob[:4] != MAGIC:
        raise ArrayFormatError(f"{path}: bad magic {blob[:4]!r}")
    version, code, rank = struct.unpack_from("<HHI", blob, 4)
    if version != VERSION:
        raise ArrayFormatError(f"{path}: unsupported format version {version}")
    if code not in _CODES:
        raise ArrayFormatError(f"{path}: unknown element-type code {code}")
    if rank == 0:
        raise ArrayFormatError(f"{path}: zero-rank arrays are not valid")
    head = 12 + 8 * rank
    if len(blob) < head:
        raise ArrayFormatError(f"{path}: truncated dimension list")
    dims = struct.unpack_from(f"<{rank}Q", blob, 12)
    if any(d == 0 for d in dims):
        raise ArrayFormatError(f"{path}: empty axis in dims {dims}")
    count = 1
    for d in dims:
        count *= d
        if count > 2**48:
            raise ArrayFormatError(f"{path}: dimension overflow in {dims}")
    expected = head + 8 * count
    if len(blob) < expected:
        raise ArrayFormatError(f"{path}: truncated payload ({len(blob)} of {expected} bytes)")
    if len(blob) > expected:
        raise ArrayFormatError(f"{path}: {len(blob) - expected} trailing bytes")
    return np.frombuffer(blob[head:], dtype=_CODES[code]).reshape(dims).copy()


def _write_json(path, obj) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, sort_keys=True, indent=1)
        fh.write("\n")


def _read_json(path):
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def save_operator(prefix, A) -> None:
    """Operator as CSR triplet arrays plus a sidecar with the row index map."""
    mat = A.matrix.tocsr()
    write_array(f"{prefix}.data.bsta", mat.data)
    write_array(f"{prefix}.indices.bsta", mat.indices.astype(np.uint64))
    write_array(f"{prefix}.indptr.bsta", mat.indptr.astype(np.uint64))
    _write_json(
        f"{prefix}.meta.json",
        {
            "kind": "bragg_operator",
            "row_order": "energy-major, then source, then detector",
            "energies_keV": A.energies.tolist(),
            "source_x1_mm": A.source_x1.tolist(),
            "detector_x1_mm": A.detector_x1.tolist(),
            "q_values_invA": A.grid.q_values.tolist(),
            "x1_values_mm": A.grid.x1_values.tolist(),
            "slice_x2_mm": A.slice_x2,
            "shape": list(mat.shape),
        },
    )


def load_operator(prefix):
    from .forward import BraggOperator, ImageGrid

    meta = _read_json(f"{prefix}.meta.json")
    data = read_array(f"{prefix}.data.bsta")
    indices = read_array(f"{prefix}.indices.bsta").astype(np.int64)
    indptr = read_array(f"{prefix}.indptr.bsta").astype(np.int64)
    mat = sp.csr_matrix((data, indices, indptr), shape=tuple(meta["shape"]))
    grid = ImageGrid(np.array(meta["q_values_invA"]), np.array(meta["x1_values_mm"]))
    return BraggOperator(
        mat,
        np.array(meta["energies_keV"]),
        np.array(meta["source_x1_mm"]),
        np.array(meta["detector_x1_mm"]),
        grid,
        float(meta["slice_x2_mm"]),
    )


def save_sinogram(prefix, s) -> None:
    write_array(f"{prefix}.values.bsta", s.values)
    _write_json(
        f"{prefix}.meta.json",
        {
            "kind": "sinogram",
            "provenance": s.provenance,
            "energies_keV": s.energies.tolist(),
            "source_x1_mm": s.source_x1.tolist(),
            "detector_x1_mm": s.detector_x1.tolist(),
            "slice_x2_mm": s.slice_x2,
        },
    )


def load_sinogram(prefix):
    from .sinogram import Sinogram

    meta = _read_json(f"{prefix}.meta.json")
    return Sinogram(
        read_array(f"{prefix}.values.bsta"),
        np.array(meta["energies_keV"]),
        np.array(meta["source_x1_mm"]),
        np.array(meta["detector_x1_mm"]),
        float(meta["slice_x2_mm"]),
        meta["provenance"],
    )


def save_tally(prefix, t) -> None:
    write_array(f"{prefix}.coherent.bsta", t.coherent)
    write_array(f"{prefix}.compton.bsta", t.compton)
    _write_json(
        f"{prefix}.meta.json",
        {
            "kind": "tally",
            "mode": t.mode,
            "launched": t.launched,
            "absorbed": t.absorbed,
            "transmitted": t.transmitted,
            "scattered": t.scattered,
            "escaped": t.escaped,
            "energies_keV": t.energies.tolist(),
            "source_x1_mm": t.source_x1.tolist(),
            "detector_x1_mm": t.detector_x1.tolist(),
            "slice_x2_mm": t.slice_x2,
        },
    )


def load_tally(prefix):
    from .simulate import Tally

    meta = _read_json(f"{prefix}.meta.json")
    return Tally(
        read_array(f"{prefix}.coherent.bsta"),
        read_array(f"{prefix}.compton.bsta"),
        meta["launched"],
        meta["absorbed"],
        meta["transmitted"],
        meta["scattered"],
        meta["escaped"],
        np.array(meta["energies_keV"]),
        np.array(meta["source_x1_mm"]),
        np.array(meta["detector_x1_mm"]),
        float(meta["slice_x2_mm"]),
        meta["mode"],
    )


def save_recon(prefix, result) -> None:
    write_array(f"{prefix}.image.bsta", result.image)
    if result.a is not None:
        write_array(f"{prefix}.a.bsta", result.a)
        write_array(f"{prefix}.Y.bsta", result.Y)
    with open(f"{prefix}.trace.csv", "w", encoding="utf-8", newline="") as fh:
        fh.write("iter,objective,stage\n")
        for it, stage, obj in result.objective_trace:
            fh.write(f"{int(it)},{obj!r},{int(stage)}\n")
    _write_json(f"{prefix}.meta.json", {"kind": "recon", "stage": result.stage, "status": result.status})


def ensure_dir(path) -> str:
    os.makedirs(path, exist_ok=True)
    return path
