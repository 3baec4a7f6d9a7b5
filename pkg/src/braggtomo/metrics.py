"""Edge-map scoring and noise-level measurement."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class EdgeMap:
    mask: np.ndarray  # binary, same shape as the source image
    threshold: float


_SOBEL_Q = np.array([[-1.0, -2.0, -1.0], [0.0, 0.0, 0.0], [1.0, 2.0, 1.0]])
_SOBEL_X = _SOBEL_Q.T


def _conv3(img: np.ndarray, k: np.ndarray) -> np.ndarray:
    pad = np.pad(img, 1, mode="edge")
    out = np.zeros_like(img)
    for di in range(3):
        for dj in range(3):
            out += k[di, dj] * pad[di : di + img.shape[0], dj : dj + img.shape[1]]
    return out


def edge_map(image: np.ndarray, tau: float = 0.2) -> EdgeMap:
    """Binarized gradient magnitude: Sobel stencils, relative high threshold.

    A simplified stand-in for a full Canny detector: no hysteresis and no
    non-maximum suppression, so results are deterministic and the threshold
    is the single knob. A constant image yields an empty mask.
    """
    if not 0.0 < tau < 1.0:
        raise ValueError("tau must lie in (0, 1)")
    image = np.asarray(image, dtype=float)
    mag = np.hypot(_conv3(image, _SOBEL_Q), _conv3(image, _SOBEL_X))
    top = mag.max()
    mask = np.zeros(image.shape, dtype=np.uint8) if top == 0 else (mag > tau * top).astype(np.uint8)
    return EdgeMap(mask, tau)


def f1_score(gt: EdgeMap, rec: EdgeMap) -> float:
    """2 TP / (2 TP + FP + FN) over the vectorized masks; 1.0 if both empty."""
    if gt.mask.shape != rec.mask.shape:
        raise ValueError("edge maps must share a shape")
    g = gt.mask.astype(bool).ravel()
    r = rec.mask.astype(bool).ravel()
    tp = int(np.sum(g & r))
    fp = int(np.sum(~g & r))
    fn = int(np.sum(g & ~r))
    if tp + fp + fn == 0:
        return 1.0
    return 2.0 * tp / (2.0 * tp + fp + fn)


def relative_ls_error(b_clean: np.ndarray, b_noisy: np.ndarray) -> float:
    """||b - b_eta||_2 / ||b||_2."""
    b_clean = np.asarray(b_clean, dtype=float).ravel()
    b_noisy = np.asarray(b_noisy, dtype=float).ravel()
    denom = np.linalg.norm(b_clean)
    if denom == 0:
        raise ValueError("clean data has zero norm")
    return float(np.linalg.norm(b_noisy - b_clean) / denom)
