"""Large solutions on the punctured ball: non-uniqueness made concrete.

Two families blow up at the unit sphere but differ at the excised
origin.  The point-mass family carries a prescribed flux through a small
core sphere, -r^(N-1) u'(r_core) = lam / |S^(N-1)|, which is exact for a
multiple of the fundamental solution; the core volume integral of u^p it
neglects is finite precisely in the subcritical window p < N/(N-2), and
of relative size O(core_radius) there.  The second solution is separable,
c r^(-2/(p-1)), squeezed between max(u1, u2) and u1 + u2 where u2 is the
ball's unique large solution; a weighted Jacobi sweep climbs from the
lower envelope and stays under the upper one, mirroring how the ordered
pair proves existence.

Origin behavior is fitted on first differences of u over the core nodes:
differencing removes the bounded part of the solution, which otherwise
pollutes a log-log fit at any reachable core radius.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np
from scipy.interpolate import PchipInterpolator
from scipy.linalg import solve_banded

from .errors import (
    ConfigError,
    IterationStall,
    MonotonicityViolation,
    SupercriticalP,
    WindowViolation,
)
from .layer import layer_mesh
from .newton_bvp import NEWTON_TOL, _row_weights, solve_radial_bvp
from .nonlinearity import Nonlinearity, Primitive, power_nonlinearity
from .shooting import solve_large_ball

__all__ = [
    "PuncturedSolution",
    "NonuniquenessReport",
    "solve_u_lambda",
    "solve_u_infinity",
    "demonstrate_nonuniqueness",
    "surface_area",
]

DISTINCT_TOL = 1e-2
# Probe annulus for distinctness: far enough in for the origin behavior
# to separate the family, far enough out to sit on every mesh.
PROBE_LO, PROBE_HI = 0.01, 0.5
SWEEP_BUDGET = 500
SWEEP_TOL = 1e-12
_JOIN = 0.5  # handoff radius between the core and collar mesh pieces


def surface_area(dim_N: int) -> float:
    """|S^(N-1)|, the area of the unit sphere in R^N."""
    return 2.0 * math.pi ** (dim_N / 2.0) / math.gamma(dim_N / 2.0)


@dataclass(frozen=True)
class PuncturedSolution:
    """Radial large solution on the punctured ball.

    ``lam`` is the point mass at the origin, ``math.inf`` for the
    separable strongly singular solution.  ``origin_strength`` is the
    fitted coefficient of the singular basis function: r^(2-N) (log(1/r)
    when N = 2) for the fundamental type, r^(-2/(p-1)) for the strong
    type.  ``fitted_exponent`` is the difference-regression slope that
    classified it.
    """

    dim_N: int
    p_exponent: float
    lam: float
    mesh: np.ndarray
    u: np.ndarray
    origin_strength: float
    fitted_exponent: float
    singularity_type: str  # fundamental | strong
    residual_sup: float
    iterations: int


@dataclass(frozen=True)
class NonuniquenessReport:
    solutions: Tuple[PuncturedSolution, ...]
    probe_radii: np.ndarray
    distances: np.ndarray  # pairwise sup distances on the probe annulus
    distinct_ok: bool
    distinct_tol: float
    ordered_ok: bool  # u_lam nondecreasing in lam on the probe annulus
    strong_dominates_ok: bool  # u_inf above every u_lam near the origin
    boundary_match_sup: float  # worst relative gap to the ball layer
    boundary_match_ok: bool


def _require_window(dim_N: int, p: float) -> None:
    if dim_N < 2:
        raise ConfigError("the punctured-ball construction needs dimension >= 2")
    if not p > 1.0:
        raise WindowViolation(f"exponent p = {p:g} must exceed 1")
    if dim_N >= 3 and p >= dim_N / (dim_N - 2):
        raise SupercriticalP(
            f"p = {p:g} >= N/(N-2) = {dim_N / (dim_N - 2):g}: the point-mass "
            "problem has no solution in dimension "
            f"{dim_N}"
        )


def _smoothstep(x: np.ndarray) -> np.ndarray:
    x = np.clip(x, 0.0, 1.0)
    return x * x * x * (x * (6.0 * x - 15.0) + 10.0)


def _punctured_mesh(
    prim: Primitive,
    core_radius: float,
    outer_radius: float,
    outer_value: float,
    n_core: int,
    n_outer: int,
) -> np.ndarray:
    """Log-uniform cells through the core singularity, collar-graded
    cells through the boundary layer.

    Both regimes have log-linear cell widths; a hard splice would jump
    the width by an O(1) factor at one cell and pin a first-order
    truncation spike there, so the two log-width lines are blended over
    a window that grows with the cell count, keeping the width profile
    smooth and the scheme second order.
    """
    eps = outer_radius - _JOIN
    q_c = (_JOIN / core_radius) ** (1.0 / n_core)
    collar_w = np.diff(layer_mesh(prim, eps, outer_value, n_outer))
    k = np.arange(n_core + n_outer, dtype=float)
    l1 = math.log(core_radius * (q_c - 1.0)) + k * math.log(q_c)
    lw = np.log(collar_w)
    l2 = lw[0] + (k - n_core) * (lw[-1] - lw[0]) / max(1, n_outer - 1)
    win = max(8.0, (n_core + n_outer) / 6.0)
    sig = _smoothstep((k - n_core) / win + 0.5)
    w = np.exp((1.0 - sig) * l1 + sig * l2)
    w *= (outer_radius - core_radius) / w.sum()
    mesh = np.empty(w.size + 1)
    mesh[0] = core_radius
    mesh[1:] = core_radius + np.cumsum(w)
    mesh[-1] = outer_radius
    return mesh


def _scaled_residual(
    nl: Nonlinearity, dim_N: int, mesh: np.ndarray, u: np.ndarray
) -> np.ndarray:
    """Interior residual of the radial operator against f, row-scaled by
    1 + |f(u)| (same convention as the Newton solver)."""
    M = mesh.size - 1
    W = np.array([_row_weights(mesh, dim_N, i) for i in range(1, M)])
    fu = np.asarray(nl.f(u[1:M]), dtype=float)
    res = W[:, 0] * u[0 : M - 1] + W[:, 1] * u[1:M] + W[:, 2] * u[2 : M + 1] - fu
    return np.abs(res) / (1.0 + np.abs(fu))


def _origin_fit(
    mesh: np.ndarray, u: np.ndarray, basis_exponent: Optional[float], window: float = 2.5
) -> Tuple[float, float]:
    """(difference slope, fitted coefficient) over the core window.

    ``basis_exponent`` is the exponent of the singular basis r^s, or
    None for log(1/r).  First differences cancel the bounded part of u,
    so the regression sees the singular term alone: the difference
    quotient scales like s r^(s-1) whatever the cell widths do, so the
    log-log slope plus one recovers s (0 for the log case).  The window
    stays tight because the smooth remainder grows like r relative to
    the singular term and bends the slope past its tolerance by
    mid-radius.
    """
    sel = mesh <= window * mesh[0]
    if np.count_nonzero(sel) < 4:
        raise ConfigError("core window holds fewer than 4 nodes; refine the mesh")
    rr, uu = mesh[sel], u[sel]
    du = np.diff(uu)
    rmid = np.sqrt(rr[:-1] * rr[1:])
    quot = np.abs(du) / np.diff(rr)
    slope = 1.0 + float(np.polyfit(np.log(rmid), np.log(quot), 1)[0])
    if basis_exponent is None:
        db = np.diff(np.log(1.0 / rr))
    else:
        db = np.diff(rr**basis_exponent)
    coeff = float(np.dot(du, db) / np.dot(db, db))
    return slope, coeff


def solve_u_lambda(
    dim_N: int,
    p: float,
    lam: float,
    k_boundary: float = 1e9,
    core_radius: float = 5e-3,
    n_core: int = 200,
    n_outer: int = 400,
    newton_tol: float = NEWTON_TOL,
) -> PuncturedSolution:
    """Point-mass solution: flux lam through the core sphere, boundary
    datum grown geometrically to ``k_boundary``.

    The boundary sweep must be nondecreasing node by node; the top
    member stands in for its limit, from which it differs at radius r by
    about psi(k_boundary) * |u'|, so certifying the shared boundary
    layer at r = 0.95 needs the default datum as large as 1e9.  Members
    below k_boundary/1e4 are solved only as continuation seeds: on a
    mesh collar-graded for the top datum their scaled residual floor
    (ulp of u against the squared cell width) can exceed any meaningful
    tolerance, so they carry no certificate.
    """
    _require_window(dim_N, p)
    if not lam > 0.0 or not math.isfinite(lam):
        raise ConfigError(f"point mass lam = {lam:g} must be positive and finite")
    if not 1e-4 < core_radius < 0.1:
        raise ConfigError(f"core radius {core_radius:g} outside (1e-4, 0.1)")
    if k_boundary < 1e4:
        raise ConfigError(
            f"boundary datum {k_boundary:g} too small to certify blow-up; need >= 1e4"
        )
    nl = power_nonlinearity(p)
    prim = Primitive(nl)
    phi = lam / surface_area(dim_N)
    mesh = _punctured_mesh(prim, core_radius, 1.0, k_boundary, n_core, n_outer)

    # fundamental-solution ramp plus a collar bump for the first datum
    if dim_N == 2:
        fund = phi * np.log(1.0 / mesh)
    else:
        fund = phi / (dim_N - 2.0) * (mesh ** (2 - dim_N) - 1.0)
    ks = [k_boundary / 10.0**j for j in range(4, -1, -1)]
    warm = sorted({max(2.0, ks[0] / 100.0), max(2.0, ks[0] / 10.0)})
    bump = np.where(mesh > _JOIN, ((mesh - _JOIN) / (1.0 - _JOIN)) ** 6, 0.0)
    u = fund + warm[0] * bump
    iters = 0
    for k in warm:
        u[-1] = k
        seed = solve_radial_bvp(nl, dim_N, mesh, ("flux", phi), k, u,
                                newton_tol=newton_tol)
        u = seed.u.copy()
        iters += seed.newton_iters
    prev = None
    result = None
    for k in ks:
        u[-1] = k
        result = solve_radial_bvp(nl, dim_N, mesh, ("flux", phi), k, u,
                                  newton_tol=newton_tol)
        u = result.u.copy()
        iters += result.newton_iters
        if prev is not None:
            slack = 1e-9 * (1.0 + np.abs(prev))
            if np.any(u < prev - slack):
                worst = float(np.max(prev - u))
                raise MonotonicityViolation(
                    f"boundary sweep lost monotonicity by {worst:.3e} "
                    f"raising the datum to {k:g}"
                )
        prev = u

    s_basis = None if dim_N == 2 else float(2 - dim_N)
    slope, coeff = _origin_fit(mesh, u, s_basis)
    return PuncturedSolution(
        dim_N=dim_N,
        p_exponent=p,
        lam=lam,
        mesh=mesh,
        u=u,
        origin_strength=coeff,
        fitted_exponent=slope,
        singularity_type="fundamental",
        residual_sup=result.residual_sup,
        iterations=iters,
    )


def separable_coefficient(dim_N: int, p: float) -> float:
    """c with c r^(-2/(p-1)) an exact solution off the origin."""
    _require_window(dim_N, p)
    m = 2.0 / (p - 1.0)
    return (m * (m + 2.0 - dim_N)) ** (1.0 / (p - 1.0))


def solve_u_infinity(
    dim_N: int,
    p: float,
    core_radius: float = 1e-3,
    outer_gap: float = 0.02,
    n_core: int = 300,
    n_outer: int = 300,
    max_sweeps: int = SWEEP_BUDGET,
    tol: float = SWEEP_TOL,
    newton_tol: float = NEWTON_TOL,
) -> PuncturedSolution:
    """Strongly singular solution squeezed between the separable profile
    and the ball's large solution.

    Each sweep solves the linear problem with local weights
    p * (u1 + u2)^(p-1), a Lipschitz bound on [max(u1,u2), u1 + u2], so
    the iterates climb monotonically from the lower envelope and never
    cross the upper one; both facts are asserted per sweep.
    """
    _require_window(dim_N, p)
    if not 1e-4 <= core_radius <= 0.01:
        raise ConfigError(f"core radius {core_radius:g} outside [1e-4, 0.01]")
    if not 0.005 <= outer_gap <= 0.05:
        raise ConfigError(f"outer gap {outer_gap:g} outside [0.005, 0.05]")
    nl = power_nonlinearity(p)
    prim = Primitive(nl)
    m = 2.0 / (p - 1.0)
    c = separable_coefficient(dim_N, p)

    ball = solve_large_ball(nl, dim_N, prim=prim)
    ball_interp = PchipInterpolator(ball.samples[:, 0], ball.samples[:, 1])
    r_b = 1.0 - outer_gap
    if r_b >= ball.samples[-1, 0]:
        raise ConfigError("outer gap smaller than the ball profile's last sample")

    u2_out = float(ball_interp(r_b))
    mesh = _punctured_mesh(prim, core_radius, r_b, u2_out, n_core, n_outer)
    u1 = c * mesh ** (-m)
    # restrict the ball solution to the mesh by a solve of its own, so the
    # envelopes are discrete sub/supersolutions up to scheme truncation
    # rather than interpolation kinks
    ball_restrict = solve_radial_bvp(
        nl,
        dim_N,
        mesh,
        ("dirichlet", float(ball_interp(core_radius))),
        u2_out,
        np.asarray(ball_interp(mesh), dtype=float),
        newton_tol=newton_tol,
    )
    u2 = ball_restrict.u
    lower = np.maximum(u1, u2)
    upper = u1 + u2

    M = mesh.size - 1
    W = np.array([_row_weights(mesh, dim_N, i) for i in range(1, M)])
    lam_w = p * upper[1:M] ** (p - 1.0)  # local Lipschitz weights
    ab = np.zeros((3, mesh.size))
    ab[1, 0] = ab[1, M] = 1.0
    ab[1, 1:M] = W[:, 1] - lam_w
    ab[0, 2 : M + 1] = W[:, 2]
    ab[0, 1] = 0.0
    ab[2, 0 : M - 1] = W[:, 0]

    u = lower.copy()
    cap_slack = 1e-9 * (1.0 + np.abs(upper))
    sweeps = 0
    while True:
        rhs = np.empty_like(u)
        rhs[0], rhs[M] = lower[0], lower[M]
        fu = np.asarray(nl.f(u[1:M]), dtype=float)
        rhs[1:M] = fu - lam_w * u[1:M]
        new = solve_banded((1, 1), ab, rhs)
        sweeps += 1
        if np.any(new > upper + cap_slack):
            raise IterationStall(f"sweep {sweeps} crossed the upper envelope")
        # the seed fails discrete subsolutionhood by O(h^2) truncation
        # near the core (about 1e-3 relative at default meshes), so the
        # first sweep may dip; the sweep map is monotone, so order is
        # restored and enforced from then on
        if sweeps > 1 and np.any(new < u - 1e-5 * (1.0 + np.abs(new))):
            raise IterationStall(f"sweep {sweeps} lost the monotone climb")
        delta = float(np.max(np.abs(new - u) / (1.0 + np.abs(new))))
        u = new
        if delta <= tol:
            break
        if sweeps >= max_sweeps:
            raise IterationStall(
                f"no Cauchy stop after {max_sweeps} sweeps; last delta {delta:.3e}"
            )
    if np.any(u < lower - 5e-3 * (1.0 + np.abs(u))):
        raise IterationStall(
            "fixed point fell below the lower envelope past its own "
            "discretization allowance"
        )

    resid = float(_scaled_residual(nl, dim_N, mesh, u).max())
    slope, coeff = _origin_fit(mesh, u, -m)
    return PuncturedSolution(
        dim_N=dim_N,
        p_exponent=p,
        lam=math.inf,
        mesh=mesh,
        u=u,
        origin_strength=coeff,
        fitted_exponent=slope,
        singularity_type="strong",
        residual_sup=resid,
        iterations=sweeps,
    )


def demonstrate_nonuniqueness(
    dim_N: int,
    p: float,
    lambdas: Sequence[float],
    k_boundary: float = 1e9,
    core_radius: float = 5e-3,
    distinct_tol: float = DISTINCT_TOL,
    newton_tol: float = NEWTON_TOL,
) -> NonuniquenessReport:
    """Point-mass family plus the strong solution, checked pairwise
    distinct on the probe annulus while sharing the boundary layer of
    the smooth ball's large solution."""
    _require_window(dim_N, p)
    if len(lambdas) == 0:
        raise ConfigError("need at least one point mass")
    sols = [
        solve_u_lambda(dim_N, p, lam, k_boundary=k_boundary,
                       core_radius=core_radius, newton_tol=newton_tol)
        for lam in lambdas
    ]
    sols.append(solve_u_infinity(dim_N, p, newton_tol=newton_tol))

    probe = np.geomspace(PROBE_LO, PROBE_HI, 200)
    vals = np.vstack([PchipInterpolator(s.mesh, s.u)(probe) for s in sols])
    n = len(sols)
    dist = np.zeros((n, n))
    for i in range(n):
        for j in range(i + 1, n):
            dist[i, j] = dist[j, i] = float(np.abs(vals[i] - vals[j]).max())
    off = dist[~np.eye(n, dtype=bool)]
    distinct_ok = bool(off.min() >= distinct_tol)

    order = np.argsort([s.lam for s in sols[:-1]])
    ordered_ok = True
    for a, b in zip(order[:-1], order[1:]):
        if sols[a].lam == sols[b].lam:
            continue
        if np.any(vals[b] < vals[a] - 1e-6 * (1.0 + np.abs(vals[a]))):
            ordered_ok = False

    near = probe[probe <= 2e-2]
    strong = vals[-1][: near.size]
    strong_ok = bool(np.all(strong >= vals[:-1, : near.size].max(axis=0)))

    nl = power_nonlinearity(p)
    ball = solve_large_ball(nl, dim_N)
    ball_interp = PchipInterpolator(ball.samples[:, 0], ball.samples[:, 1])
    match_lo, match_hi = 0.95, 0.975
    worst = 0.0
    for s in sols:
        rr = s.mesh[(s.mesh >= match_lo) & (s.mesh <= match_hi)]
        uu = PchipInterpolator(s.mesh, s.u)(rr)
        gap = np.abs(uu - ball_interp(rr)) / ball_interp(rr)
        worst = max(worst, float(gap.max()))
    return NonuniquenessReport(
        solutions=tuple(sols),
        probe_radii=probe,
        distances=dist,
        distinct_ok=distinct_ok,
        distinct_tol=distinct_tol,
        ordered_ok=ordered_ok,
        strong_dominates_ok=strong_ok,
        boundary_match_sup=worst,
        boundary_match_ok=bool(worst <= 1e-2),
    )
