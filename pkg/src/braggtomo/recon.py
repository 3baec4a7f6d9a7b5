"""Dictionary/multibang reconstruction and the filtered-TV baseline.

The main solver alternates two box-constrained subproblems: fit the per-entry
spectra Y >= 0 under a Poisson log-likelihood with an L1 sparsity weight,
then fit the activations a in [0,1]^l under a relaxed multibang penalty
alpha * sum a_j (1 - a_j) plus a Gram overlap penalty gamma * sum_{i<j}
G_ij a_i a_j. Both subproblems run a fixed number of L-BFGS-B iterations and
warm-start across outer sweeps.

Model intensities never see the operator directly per entry: the image
Y diag(a) Z^T is assembled first and pushed through the sparse operator
once, which is algebraically identical to sum_j a_j A_j y_j.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.optimize import Bounds, minimize

from .forward import BraggOperator, CharacteristicLibrary, gram
from .sinogram import Sinogram


@dataclass(frozen=True)
class ReconParams:
    lam: float = 1.0
    alpha: float = 1e6
    gamma: float = 1e10
    n1: int = 20
    n2: int = 50
    log_floor: float = 1e-12
    tv_beta: float = 1e-2
    memory: int = 10
    ftol: float = 1e-9  # per-solve relative objective decrease cutoff
    rel_tol: float = 1e-9  # outer-loop early exit on relative change

    def __post_init__(self):
        if min(self.lam, self.alpha, self.gamma) < 0:
            raise ValueError("penalty weights must be nonnegative")
        if self.log_floor <= 0 or self.tv_beta <= 0:
            raise ValueError("log_floor and tv_beta must be positive")
        if self.n1 < 1 or self.n2 < 1:
            raise ValueError("iteration budgets must be at least 1")


@dataclass(frozen=True)
class ReconResult:
    a: np.ndarray | None
    Y: np.ndarray | None
    image: np.ndarray
    objective_trace: np.ndarray  # rows (outer_iter, stage, objective)
    stage: int
    status: str = "ok"
    previous_stage: "ReconResult | None" = field(default=None, repr=False)

    def active_set(self, threshold: float = 0.5) -> np.ndarray:
        if self.a is None:
            raise ValueError("no activations on this result")
        return np.nonzero(self.a > threshold)[0]


def assemble_image(a: np.ndarray, Y: np.ndarray, Z: np.ndarray) -> np.ndarray:
    """f(q, x1) = sum_j a_j y_j(q) chi_j(x1) as an (n, m) array."""
    return (Y * a[None, :]) @ Z.T


def _poisson_value(mu: np.ndarray, b: np.ndarray, floor: float) -> float:
    return float(np.sum(mu - b * np.log(np.maximum(mu, floor))))


def _poisson_residual(mu: np.ndarray, b: np.ndarray, floor: float) -> np.ndarray:
    # 1 - b / (mu floored at eps): floored division rather than a flat cutoff,
    # so rows starved of model intensity keep their (large) restoring gradient
    return 1.0 - b / np.maximum(mu, floor)


def _offdiag(G: np.ndarray) -> np.ndarray:
    Gt = np.array(G, dtype=float, copy=True)
    np.fill_diagonal(Gt, 0.0)
    return Gt


def objective_total(a, Y, A: BraggOperator, Z, b, G, params: ReconParams) -> float:
    """Full objective: Poisson data term + L1(Y) + multibang(a) + Gram overlap."""
    a = np.asarray(a, dtype=float)
    Y = np.asarray(Y, dtype=float)
    b = np.asarray(b, dtype=float)
    if not (np.all(np.isfinite(a)) and np.all(np.isfinite(Y)) and np.all(np.isfinite(b))):
        raise ValueError("non-finite inputs to the objective")
    mu = A.matrix @ A.grid.vec(assemble_image(a, Y, Z))
    val = _poisson_value(mu, b, params.log_floor)
    val += params.lam * float(np.sum(np.abs(Y)))
    val += params.alpha * float(np.sum(a * (1.0 - a)))
    val += 0.5 * params.gamma * float(a @ _offdiag(G) @ a)
    return val


def grad_y(a, Y, A: BraggOperator, Z, b, params: ReconParams) -> np.ndarray:
    """d/dY of the stage-1 objective; shape (n, l).

    On the nonnegative orthant the L1 term differentiates to the all-ones
    array, so the gradient is a_j A_j^T (1 - b / mu) + lam per column.
    """
    a = np.asarray(a, dtype=float)
    Y = np.asarray(Y, dtype=float)
    mu = A.matrix @ A.grid.vec(assemble_image(a, Y, Z))
    g_img = A.grid.unvec(A.matrix.T @ _poisson_residual(mu, np.asarray(b, dtype=float), params.log_floor))
    return (g_img @ Z) * a[None, :] + params.lam


def grad_a(a, Y, A: BraggOperator, Z, b, G, params: ReconParams) -> np.ndarray:
    """d/da of the stage-2 objective; shape (l,)."""
    a = np.asarray(a, dtype=float)
    Y = np.asarray(Y, dtype=float)
    mu = A.matrix @ A.grid.vec(assemble_image(a, Y, Z))
    g_img = A.grid.unvec(A.matrix.T @ _poisson_residual(mu, np.asarray(b, dtype=float), params.log_floor))
    pois = np.einsum("ij,ij->j", Y, g_img @ Z)
    return pois + params.alpha * (1.0 - 2.0 * a) + params.gamma * (_offdiag(G) @ a)


def box_lbfgs(fun, grad, x0, lower, upper, max_iters: int, memory: int = 10, ftol: float = 1e-9):
    """Bound-constrained limited-memory quasi-Newton solve.

    ``grad=None`` means ``fun`` returns an (objective, gradient) pair, which
    lets callers share work between the two evaluations. Never returns a
    point worse than the start: on a failed line search the start point wins
    and the status flag says so.
    """
    x0 = np.asarray(x0, dtype=float)
    lo = np.broadcast_to(np.asarray(lower, dtype=float), x0.shape)
    hi = np.broadcast_to(np.asarray(upper, dtype=float), x0.shape)
    if np.any(x0 < lo) or np.any(x0 > hi):
        raise ValueError("x0 violates the box constraints")
    if grad is None:
        fg = fun
    else:
        def fg(x):
            return fun(x), grad(x)
    f0 = fg(x0)[0]
    if not np.isfinite(f0):
        raise ValueError("objective is not finite at x0")
    res = minimize(
        lambda x: fg(x),
        x0,
        jac=True,
        method="L-BFGS-B",
        bounds=Bounds(lo, hi),
        options={"maxiter": max_iters, "maxcor": memory, "ftol": ftol, "gtol": 1e-14},
    )
    x = np.clip(res.x, lo, hi)
    if res.fun > f0:
        return x0, f0, "no_decrease"
    status = "ok" if res.status in (0, 1) else "line_search_failed"
    return x, float(res.fun), status


def run_2dbsr(
    b: Sinogram,
    library: CharacteristicLibrary,
    A: BraggOperator,
    params: ReconParams,
    a0: np.ndarray | None = None,
    Y0: np.ndarray | None = None,
    stage: int = 1,
) -> ReconResult:
    """Alternate the Y and a subproblems n1 times from a warm startable state."""
    if b.provenance != "filtered":
        warnings.warn("reconstructing from unfiltered data; expect boundary artifacts")
    Z = library.Z
    G = gram(library)
    n, l = A.grid.n, library.l
    a = np.full(l, 0.5) if a0 is None else np.asarray(a0, dtype=float).copy()
    Y = np.full((n, l), 1e-3) if Y0 is None else np.asarray(Y0, dtype=float).copy()
    data = b.values
    status = "ok"
    trace = [(0, stage, objective_total(a, Y, A, Z, data, G, params))]

    def f_y(yflat, a_now):
        Ycur = yflat.reshape((n, l), order="F")
        mu = A.matrix @ A.grid.vec(assemble_image(a_now, Ycur, Z))
        val = _poisson_value(mu, data, params.log_floor) + params.lam * float(np.sum(yflat))
        g_img = A.grid.unvec(A.matrix.T @ _poisson_residual(mu, data, params.log_floor))
        g = (g_img @ Z) * a_now[None, :] + params.lam
        return val, g.ravel(order="F")

    Gt = _offdiag(G)

    def f_a(avec, Y_now):
        mu = A.matrix @ A.grid.vec(assemble_image(avec, Y_now, Z))
        val = _poisson_value(mu, data, params.log_floor)
        val += params.alpha * float(np.sum(avec * (1.0 - avec)))
        val += 0.5 * params.gamma * float(avec @ Gt @ avec)
        g_img = A.grid.unvec(A.matrix.T @ _poisson_residual(mu, data, params.log_floor))
        g = np.einsum("ij,ij->j", Y_now, g_img @ Z)
        g += params.alpha * (1.0 - 2.0 * avec) + params.gamma * (Gt @ avec)
        return val, g

    for outer in range(1, params.n1 + 1):
        yflat, _, st1 = box_lbfgs(
            lambda y: f_y(y, a), None, Y.ravel(order="F"), 0.0, np.inf, params.n2, params.memory, params.ftol
        )
        Y = yflat.reshape((n, l), order="F")
        a, _, st2 = box_lbfgs(lambda v: f_a(v, Y), None, a, 0.0, 1.0, params.n2, params.memory, params.ftol)
        if "line_search_failed" in (st1, st2):
            status = "line_search_failed"
        total = objective_total(a, Y, A, Z, data, G, params)
        trace.append((outer, stage, total))
        prev = trace[-2][2]
        if abs(prev - total) <= params.rel_tol * max(abs(prev), 1.0):
            break

    return ReconResult(a, Y, assemble_image(a, Y, Z), np.array(trace), stage, status)


def run_two_stage(
    b: Sinogram, library: CharacteristicLibrary, A: BraggOperator, params: ReconParams
) -> ReconResult:
    """Full 2DBSR pass at lam, then a second pass warm-started at 10 * lam.

    The heavier L1 weight on the second pass prunes background noise once the
    dominant structure is in place. The returned result is the second stage;
    the first lives on ``previous_stage``.
    """
    first = run_2dbsr(b, library, A, params, stage=1)
    second = run_2dbsr(
        b, library, A, replace(params, lam=10.0 * params.lam), a0=first.a, Y0=first.Y, stage=2
    )
    trace = np.vstack([first.objective_trace, second.objective_trace])
    return replace(second, objective_trace=trace, previous_stage=first)


# ---------------------------------------------------------------------------
# filtered total variation baseline


def tv_smoothed(Y: np.ndarray, beta: float) -> float:
    """Smoothed isotropic TV: sum sqrt(dq^2 + dx^2 + beta^2), forward
    differences with replicate boundary (one-sided zeros at the far edges)."""
    dq, dx = _tv_diffs(Y)
    return float(np.sum(np.sqrt(dq**2 + dx**2 + beta**2)))


def _tv_diffs(Y):
    dq = np.zeros_like(Y)
    dx = np.zeros_like(Y)
    dq[:-1, :] = Y[1:, :] - Y[:-1, :]
    dx[:, :-1] = Y[:, 1:] - Y[:, :-1]
    return dq, dx


def _tv_value_grad(Y: np.ndarray, beta: float):
    dq, dx = _tv_diffs(Y)
    R = np.sqrt(dq**2 + dx**2 + beta**2)
    val = float(np.sum(R))
    g = -(dq + dx) / R
    g[1:, :] += dq[:-1, :] / R[:-1, :]
    g[:, 1:] += dx[:, :-1] / R[:, :-1]
    return val, g


def ftv_objective_grad(y: np.ndarray, A: BraggOperator, b: np.ndarray, lam: float, beta: float, log_floor: float = 1e-12):
    """Poisson data term plus lam * TV_beta of the image, with its gradient."""
    y = np.asarray(y, dtype=float).ravel()
    b = np.asarray(b, dtype=float)
    mu = A.matrix @ y
    Yimg = A.grid.unvec(y)
    tv_val, tv_g = _tv_value_grad(Yimg, beta)
    val = _poisson_value(mu, b, log_floor) + lam * tv_val
    g = A.matrix.T @ _poisson_residual(mu, b, log_floor) + lam * A.grid.vec(tv_g)
    return val, g


def run_ftv(
    b: Sinogram, A: BraggOperator, params: ReconParams, y0: np.ndarray | None = None
) -> ReconResult:
    """Single-stage TV-regularized solve over the nonnegative orthant."""
    if b.provenance != "filtered":
        warnings.warn("reconstructing from unfiltered data; expect boundary artifacts")
    nm = A.grid.n * A.grid.m
    y0 = np.full(nm, 1e-3) if y0 is None else np.asarray(y0, dtype=float).ravel().copy()
    data = b.values

    def fg(y):
        return ftv_objective_grad(y, A, data, params.lam, params.tv_beta, params.log_floor)

    f_start = fg(y0)[0]
    y, f_end, status = box_lbfgs(fg, None, y0, 0.0, np.inf, params.n1 * params.n2, params.memory, params.ftol)
    trace = np.array([(0, 1, f_start), (params.n1 * params.n2, 1, f_end)])
    return ReconResult(None, None, A.grid.unvec(y), trace, 1, status)
