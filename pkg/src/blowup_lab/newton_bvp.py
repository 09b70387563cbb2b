"""Damped Newton solver for radial two-point problems on graded meshes.

Discretizes u'' + (N-1)/r u' = f(u) with second-order central
differences on a nonuniform mesh.  The inner boundary carries either a
Dirichlet value or a prescribed radial flux -r^(N-1) u'(r) = phi
(three-point one-sided derivative, so the matrix is banded with two
upper diagonals).  Convergence is judged on the residual scaled by
1 + |f(u)| per row: the absolute residual near a blow-up boundary grows
with f while the scheme's information content does not.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Tuple

import numpy as np
from scipy.linalg import solve_banded

from .errors import ConfigError, NewtonDiverged, NonFinite
from .nonlinearity import Nonlinearity

NEWTON_TOL = 1e-10
STALL_ACCEPT = 1e-8
MAX_ITER = 50
DAMP_FLOOR = 2.0**-20


@dataclass(frozen=True)
class BVPResult:
    u: np.ndarray
    newton_iters: int
    residual_sup: float  # scaled, over interior rows
    trace: Tuple[float, ...]


def _first_derivative_weights(h1: float, h2: float) -> Tuple[float, float, float]:
    # centered three-point weights for u'(r_i) with spacings h1, h2
    return (
        -h2 / (h1 * (h1 + h2)),
        (h2 - h1) / (h1 * h2),
        h1 / (h2 * (h1 + h2)),
    )


def _row_weights(mesh: np.ndarray, dim_N: int, i: int) -> Tuple[float, float, float]:
    """Weights (a, b, c) so that a u_{i-1} + b u_i + c u_{i+1} approximates
    u'' + (N-1)/r u' at mesh[i]."""
    h1 = mesh[i] - mesh[i - 1]
    h2 = mesh[i + 1] - mesh[i]
    a2 = 2.0 / (h1 * (h1 + h2))
    b2 = -2.0 / (h1 * h2)
    c2 = 2.0 / (h2 * (h1 + h2))
    cr = (dim_N - 1) / mesh[i]
    if i == 1:
        # first interior node: blend the one-sided slopes through the
        # wide difference; the short central formula puts its largest
        # weight on the coarse side of a strongly graded mesh
        a1, b1, c1 = -1.0 / (h1 + h2), 0.0, 1.0 / (h1 + h2)
    else:
        a1, b1, c1 = _first_derivative_weights(h1, h2)
    return a2 + cr * a1, b2 + cr * b1, c2 + cr * c1


def solve_radial_bvp(
    nl: Nonlinearity,
    dim_N: int,
    mesh: np.ndarray,
    inner_bc: Tuple[str, float],
    outer_value: float,
    u_init: np.ndarray,
    newton_tol: float = NEWTON_TOL,
    max_iter: int = MAX_ITER,
) -> BVPResult:
    """Newton iteration with halving line search on the scaled residual.

    ``inner_bc`` is ("dirichlet", value) or ("flux", phi) with phi the
    prescribed value of -r^(N-1) u'(r) at the inner mesh point.  The
    outer boundary is always Dirichlet.  Raises NewtonDiverged with the
    residual trace when the line search stalls or the budget runs out.
    """
    mesh = np.asarray(mesh, dtype=float)
    if mesh.ndim != 1 or mesh.size < 5:
        raise ConfigError("mesh must be a 1-d array with at least 5 nodes")
    if np.any(np.diff(mesh) <= 0) or mesh[0] <= 0:
        raise ConfigError("mesh must be positive and strictly increasing")
    kind, bc_val = inner_bc
    if kind not in ("dirichlet", "flux"):
        raise ConfigError(f"unknown inner boundary kind '{kind}'")
    M = mesh.size - 1
    u = np.asarray(u_init, dtype=float).copy()
    if u.shape != mesh.shape:
        raise ConfigError("initial iterate must live on the mesh")
    u[M] = outer_value
    if kind == "dirichlet":
        u[0] = bc_val
    free_lo = 0 if kind == "flux" else 1

    # precompute interior operator weights
    W = np.array([_row_weights(mesh, dim_N, i) for i in range(1, M)])

    def scaled_residual(uv: np.ndarray) -> np.ndarray:
        fu = np.asarray(nl.f(uv[1:M]), dtype=float)
        res = W[:, 0] * uv[0:M - 1] + W[:, 1] * uv[1:M] + W[:, 2] * uv[2:M + 1] - fu
        out = res / (1.0 + np.abs(fu))
        if kind == "flux":
            h1 = mesh[1] - mesh[0]
            h2 = mesh[2] - mesh[1]
            d0 = -(2.0 * h1 + h2) / (h1 * (h1 + h2))
            d1 = (h1 + h2) / (h1 * h2)
            d2 = -h1 / (h2 * (h1 + h2))
            flux = -mesh[0] ** (dim_N - 1) * (d0 * uv[0] + d1 * uv[1] + d2 * uv[2])
            out = np.concatenate(([(flux - bc_val) / (1.0 + abs(bc_val))], out))
        return out

    def rounding_floor(uv: np.ndarray) -> float:
        # rounding noise of the scaled residual rows: the operator weights
        # acting on ulp-sized height perturbations.  Solves on meshes much
        # finer than their own layer cannot do better than this.
        fu = np.asarray(nl.f(uv[1:M]), dtype=float)
        au = 1.0 + np.abs(uv)
        row = (
            np.abs(W[:, 0]) * au[0:M - 1]
            + np.abs(W[:, 1]) * au[1:M]
            + np.abs(W[:, 2]) * au[2:M + 1]
        )
        eps_m = np.finfo(float).eps
        return float(np.max(eps_m * row / (1.0 + np.abs(fu))))

    def jacobian_banded(uv: np.ndarray) -> np.ndarray:
        # rows free_lo..M-1 of the full system, banded storage (2, 1)
        n = M - free_lo
        ab = np.zeros((4, n))
        fp = np.asarray(nl.fprime(uv[1:M]), dtype=float)
        fu = np.asarray(nl.f(uv[1:M]), dtype=float)
        scale = 1.0 + np.abs(fu)
        for row, i in enumerate(range(1, M)):
            j = row + (1 - free_lo)  # column of u_i within the free block
            a, b, c = W[row]
            ab[2, j] = (b - fp[row]) / scale[row]
            if i - 1 >= free_lo:
                ab[3, j - 1] = a / scale[row]
            # the outer value is pinned, so skip i+1 == M
            if i + 1 <= M - 1:
                ab[1, j + 1] = c / scale[row]
        if kind == "flux":
            h1 = mesh[1] - mesh[0]
            h2 = mesh[2] - mesh[1]
            d0 = -(2.0 * h1 + h2) / (h1 * (h1 + h2))
            d1 = (h1 + h2) / (h1 * h2)
            d2 = -h1 / (h2 * (h1 + h2))
            s = -mesh[0] ** (dim_N - 1) / (1.0 + abs(bc_val))
            ab[2, 0] = s * d0
            ab[1, 1] = s * d1
            ab[0, 2] = s * d2
        return ab

    res = scaled_residual(u)
    norm = float(np.max(np.abs(res)))
    trace = [norm]
    iters = 0
    while norm > max(newton_tol, 2.0 * rounding_floor(u)):
        if iters >= max_iter:
            raise NewtonDiverged(
                f"no contraction after {max_iter} iterations", trace=tuple(trace)
            )
        ab = jacobian_banded(u)
        try:
            step = solve_banded((1, 2), ab, -res)
        except np.linalg.LinAlgError as exc:
            raise NewtonDiverged(f"singular Jacobian: {exc}", trace=tuple(trace))
        lam = 1.0
        stalled = False
        while True:
            trial = u.copy()
            trial[free_lo:M] += lam * step
            try:
                new_res = scaled_residual(trial)
                new_norm = float(np.max(np.abs(new_res)))
            except (NonFinite, FloatingPointError):
                new_norm = np.inf
            if not np.isfinite(new_norm):
                new_norm = np.inf
            if new_norm < norm * (1.0 - 1e-4 * lam) or new_norm <= newton_tol:
                break
            lam *= 0.5
            if lam < DAMP_FLOOR:
                # On fine meshes the rounding floor of the scaled residual
                # can sit above newton_tol; a stall there is convergence,
                # not divergence.
                if norm <= max(STALL_ACCEPT, 8.0 * rounding_floor(u)):
                    stalled = True
                    break
                raise NewtonDiverged(
                    "line search stalled at the damping floor", trace=tuple(trace)
                )
        if stalled:
            break
        u, res, norm = trial, new_res, new_norm
        trace.append(norm)
        iters += 1
    return BVPResult(u=u, newton_iters=iters, residual_sup=norm, trace=tuple(trace))
