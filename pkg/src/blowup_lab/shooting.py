"""Radial blow-up profiles on balls by outward shooting.

The solver integrates u'' + (N-1)/r u' = f(u) from a series start at the
center, switches the independent variable from radius to height once
(u')^2 >= F(u) (steps in u stay O(1) while steps in r underflow near the
pole), and converts the hard stop at ``u_cap`` into a blow-up radius via
the boundary-layer extrapolation R = r(u_cap) + psi(u_cap).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy.integrate import solve_ivp

from .errors import (
    BoundsNeverHold,
    BracketFailure,
    ConfigError,
    KOViolation,
    NoBlowup,
    SolverError,
    StepUnderflow,
)
from .nonlinearity import Nonlinearity, Primitive, psi

__all__ = [
    "Profile",
    "KellerBoundsReport",
    "shoot",
    "solve_large_ball",
    "verify_keller_bounds",
]

R_MAX_GUARD = 20.0
SERIES_START = 1e-4
RTOL = 1e-10
ATOL = 1e-12

# Residual target for the stored samples: the discrete second difference
# of u over each interior triple must track f(u) - (N-1)/r u' to within
# RESID_TOL * (1 + |f(u)|).  Spacing is sized to the local fourth
# derivative with this safety factor.
RESID_TOL = 1e-6
_SAFETY = 0.22
# Pointwise ceiling for stored triples; see _fd_noise_floor.
POINTWISE_CEIL = 2e-5

# Exponential sources overflow float64 near u ~ 710; stop the climb at a
# height where F is still comfortably representable.  psi at this height
# is ~1e-150, so the extrapolated radius loses nothing measurable.
EXP_HEIGHT_CLAMP = 690.0


@dataclass(frozen=True)
class Profile:
    """Radial profile with blow-up metadata.

    ``samples`` columns are (r, u, du_dr), r strictly increasing from 0.
    """

    dim_N: int
    samples: np.ndarray
    blowup_radius: float
    center_value_alpha: float
    mesh_note: str
    nl_id: str
    u_cap: float

    @property
    def r(self) -> np.ndarray:
        return self.samples[:, 0]

    @property
    def u(self) -> np.ndarray:
        return self.samples[:, 1]

    @property
    def du_dr(self) -> np.ndarray:
        return self.samples[:, 2]

    def interior_residuals(self, nl: Nonlinearity) -> np.ndarray:
        """Weighted residual of the radial equation on sample triples."""
        r, u = self.r, self.u
        h1 = r[1:-1] - r[:-2]
        h2 = r[2:] - r[1:-1]
        upp = 2.0 * ((u[2:] - u[1:-1]) / h2 - (u[1:-1] - u[:-2]) / h1) / (h1 + h2)
        up = self.du_dr[1:-1]
        fu = np.asarray(nl.f(u[1:-1]), dtype=float)
        res = upp + (self.dim_N - 1) / r[1:-1] * up - fu
        return np.abs(res) / (1.0 + np.abs(fu))

    def residual_norm(self, nl: Nonlinearity) -> float:
        """Mesh-weighted L2 norm of the weighted residuals.

        Pointwise values at the thinnest stencils are dominated by the
        float64 rounding of radii near 1, so the certified quantity is
        the integral-type norm with stencil widths as weights.
        """
        rho = self.interior_residuals(nl)
        w = 0.5 * (self.r[2:] - self.r[:-2])
        return float(math.sqrt(np.sum(w * rho * rho) / np.sum(w)))


@dataclass(frozen=True)
class KellerBoundsReport:
    """Window past which (1/2N) F <= (du/dr)^2 <= 4 F holds on the mesh."""

    r_lo: float
    margin_lower: float
    margin_upper: float


def _require_admissible(nl: Nonlinearity, alpha: float) -> None:
    if nl.monotone_from is None:
        raise ConfigError(
            f"'{nl.id}' carries no monotonicity certificate; shooting needs "
            "a nondecreasing source term along the trajectory"
        )
    if not alpha > nl.anchor:
        raise ConfigError(f"center value {alpha:g} must exceed the anchor {nl.anchor:g}")
    if nl.monotone_from > alpha:
        raise ConfigError(
            f"f is only certified nondecreasing from {nl.monotone_from:g}; "
            f"center value {alpha:g} starts below that"
        )
    if not nl.f_scalar(alpha) > 0.0:
        raise ConfigError(f"f({alpha:g}) must be positive to leave the center")


def _effective_cap(nl: Nonlinearity, u_cap: float) -> float:
    if nl.growth_class == "exponential":
        return min(u_cap, EXP_HEIGHT_CLAMP)
    return u_cap


def _fourth_scale(nl: Nonlinearity, u: float, V: float) -> float:
    # u'''' ~ f'' V^2 + f' f along the orbit; f'' via a centered stencil.
    # The last term charges the first-order error of the nonuniform
    # stencil, which scales like the square of u''' over the weight.
    d = 1e-3 * (1.0 + abs(u))
    fp = float(np.asarray(nl.fprime(u), dtype=float))
    fpp = (
        float(np.asarray(nl.fprime(u + d), dtype=float))
        - float(np.asarray(nl.fprime(u - d), dtype=float))
    ) / (2.0 * d)
    fu = nl.f_scalar(u)
    grading = (4.0 / 3.0) * (fp * V) ** 2 / (1.0 + abs(fu))
    return abs(fpp) * V * V + abs(fp * fu) + grading + 1e-30


def _h_rule(nl: Nonlinearity, u: float, V: float) -> float:
    fu = abs(nl.f_scalar(u))
    q = _fourth_scale(nl, u, V)
    h = math.sqrt(12.0 * RESID_TOL * (1.0 + fu) / q)
    return _SAFETY * min(h, 0.05)


def _fd_noise_floor(nl: Nonlinearity, u: float, V: float, h: float, r: float) -> bool:
    # Radial samples carry ~ulp(r) of absolute rounding; a second
    # difference over stencils of width h amplifies that to
    # ~2 V ulp / h^2.  Past the point where this noise floor reaches
    # POINTWISE_CEIL of the weighted scale, stored triples would be
    # noise, so the mesh stops there (the integration itself still runs
    # to the height cap).
    noise = 2.0 * V * 2.2e-16 * max(1.0, abs(r)) / (h * h)
    return noise > POINTWISE_CEIL * (1.0 + abs(nl.f_scalar(u)))


def _raise_for_status(sol, what: str) -> None:
    if sol.status == -1:
        raise StepUnderflow(f"integrator failed during {what}: {sol.message}")


class _Phases:
    """Two-phase integration: radius-stepping, then height-stepping."""

    def __init__(
        self,
        nl: Nonlinearity,
        prim: Primitive,
        dim_N: int,
        alpha: float,
        u_cap: float,
        rtol: float = RTOL,
    ):
        self.nl, self.prim, self.N, self.alpha = nl, prim, dim_N, alpha
        self.u_cap = _effective_cap(nl, u_cap)
        self.rtol = rtol
        self._run()

    def _run(self) -> None:
        nl, prim, N, alpha = self.nl, self.prim, self.N, self.alpha
        fa = nl.f_scalar(alpha)
        rs = SERIES_START
        y0 = [alpha + fa * rs * rs / (2 * N), fa * rs / N]

        def rhs_r(r, y):
            return [y[1], nl.f_scalar(y[0]) - (N - 1) / r * y[1]]

        def switch(r, y):
            # past this point (u')^2 >= F and height-stepping is stable
            return y[1] * y[1] - max(prim.F(y[0]), 0.0)

        switch.terminal = True
        switch.direction = 1

        def capped(r, y):
            return y[0] - self.u_cap

        capped.terminal = True
        capped.direction = 1

        sol1 = solve_ivp(
            rhs_r, (rs, R_MAX_GUARD), y0, method="DOP853", rtol=self.rtol, atol=ATOL,
            events=(switch, capped), dense_output=True,
        )
        _raise_for_status(sol1, "radius-stepping")
        self.sol1 = sol1
        if sol1.t_events[1].size:  # reached the cap while still r-stepping
            self.r_switch = float(sol1.t_events[1][0])
            self.u_switch, self.V_switch = (float(v) for v in sol1.y_events[1][0])
            self.sol2 = None
            self.r_cap, self.V_cap = self.r_switch, self.V_switch
            return
        if not sol1.t_events[0].size:
            raise NoBlowup(
                f"height stayed below the cap out to r = {R_MAX_GUARD:g} "
                f"(last u = {sol1.y[0, -1]:.3g})"
            )
        self.r_switch = float(sol1.t_events[0][0])
        self.u_switch, self.V_switch = (float(v) for v in sol1.y_events[0][0])

        def rhs_u(u, y):
            V, r = y
            return [nl.f_scalar(u) / V - (N - 1) / r, 1.0 / V]

        def guard(u, y):
            return y[1] - R_MAX_GUARD

        guard.terminal = True
        guard.direction = 1

        sol2 = solve_ivp(
            rhs_u, (self.u_switch, self.u_cap), [self.V_switch, self.r_switch],
            method="DOP853", rtol=self.rtol, atol=ATOL, events=(guard,), dense_output=True,
        )
        _raise_for_status(sol2, "height-stepping")
        if sol2.t_events[0].size or sol2.t[-1] < self.u_cap:
            raise NoBlowup(
                f"radius passed {R_MAX_GUARD:g} at height {sol2.t[-1]:.3g}; "
                "no finite blow-up radius in range"
            )
        self.sol2 = sol2
        self.V_cap, self.r_cap = (float(v) for v in sol2.y[:, -1])

    def blowup_radius(self) -> float:
        try:
            tail = psi(self.prim, self.u_cap)
        except KOViolation as exc:
            raise NoBlowup(
                f"'{self.nl.id}' fails the blow-up tail criterion: {exc}"
            ) from exc
        return self.r_cap + tail


def _radius_only(nl: Nonlinearity, prim: Primitive, dim_N: int, alpha: float, u_cap: float) -> float:
    return _Phases(nl, prim, dim_N, alpha, u_cap).blowup_radius()


def _collect_samples(ph: _Phases) -> np.ndarray:
    nl, N, alpha = ph.nl, ph.N, ph.alpha
    fa = nl.f_scalar(alpha)
    rows = [(0.0, alpha, 0.0)]
    # series zone: quadratic in r below the integrator start
    h0 = _h_rule(nl, alpha, 0.0)
    r = h0
    while r < SERIES_START:
        rows.append((r, alpha + fa * r * r / (2 * N), fa * r / N))
        r += h0
    # phase 1: walk the dense solution with the fourth-derivative rule
    r = SERIES_START
    u_last, V_last = ph.sol1.sol(r)
    while r < ph.r_switch:
        u, V = ph.sol1.sol(r)
        rows.append((float(r), float(u), float(V)))
        u_last, V_last = float(u), float(V)
        r += _h_rule(nl, u_last, V_last)
    # phase 2: walk in height; du = V * h keeps the radial spacing rule.
    # The first height continues the phase-1 rhythm so the junction
    # triple sees no spacing jump (a switch-point row would break it).
    if ph.sol2 is None:
        rows.append((ph.r_switch, ph.u_switch, ph.V_switch))
    else:
        u = max(u_last + V_last * _h_rule(nl, u_last, V_last), ph.u_switch * (1 + 1e-15))
        while u < ph.u_cap:
            V, rr = (float(v) for v in ph.sol2.sol(u))
            h = _h_rule(nl, u, V)
            if _fd_noise_floor(nl, u, V, h, rr):
                break
            rows.append((rr, u, V))
            u = u + max(V * h, 1e-12 * u)
    out = np.asarray(rows, dtype=float)
    keep = np.concatenate(([True], np.diff(out[:, 0]) > 0.0))
    return out[keep]


def shoot(
    nl: Nonlinearity,
    dim_N: int,
    alpha: float,
    u_cap: float = 1e8,
    prim: Optional[Primitive] = None,
    rtol: float = RTOL,
) -> Profile:
    """Shoot outward from u(0) = alpha until the height cap, then extrapolate.

    Raises NoBlowup when the trajectory exhausts the radial guard, which
    covers both undersized center values and tails failing the blow-up
    criterion.
    """
    if dim_N < 1:
        raise ConfigError("dimension must be a positive integer")
    if u_cap < 1e6:
        raise ConfigError("u_cap below 1e6 leaves too much boundary layer unresolved")
    _require_admissible(nl, alpha)
    if prim is None:
        prim = Primitive(nl)
    ph = _Phases(nl, prim, dim_N, alpha, u_cap, rtol=rtol)
    R = ph.blowup_radius()
    samples = _collect_samples(ph)
    note = (
        "adaptive radial spacing sized to the local fourth derivative "
        f"(weighted residual target {RESID_TOL:g}); height-stepping past "
        f"r = {ph.r_switch:.6g}"
    )
    return Profile(
        dim_N=dim_N,
        samples=samples,
        blowup_radius=R,
        center_value_alpha=alpha,
        mesh_note=note,
        nl_id=nl.id,
        u_cap=ph.u_cap,
    )


def shoot_from_state(
    nl: Nonlinearity,
    dim_N: int,
    r0: float,
    u0: float,
    V0: float,
    u_cap: float = 1e8,
    prim: Optional[Primitive] = None,
    rtol: float = RTOL,
) -> Profile:
    """Continue a known interior state (r0, u0, du/dr = V0) outward.

    Height-stepping only: the state must already be past the gradient
    switch, V0^2 >= F(u0), so 1/V stays integrable.  Use shoot() for
    center starts.  The profile's first row is the seed state and
    ``center_value_alpha`` is NaN — there is no center in this chart.
    Small height caps trade blow-up radius accuracy for speed; the
    extrapolation tail psi(u_cap) is exact only in the limit.
    """
    if dim_N < 1:
        raise ConfigError("dimension must be a positive integer")
    if r0 < 0.0 or (r0 == 0.0 and dim_N != 1):
        raise ConfigError("r0 = 0 is only a regular start in dimension 1")
    if not V0 > 0.0:
        raise ConfigError("the state slope must be positive to move outward")
    _require_admissible(nl, u0)
    if not u_cap > 2.0 * u0:
        raise ConfigError("u_cap must leave room above the seed height")
    if prim is None:
        prim = Primitive(nl)
    if V0 * V0 < prim.F(u0):
        raise ConfigError(
            "state is before the gradient switch ((du/dr)^2 < F); "
            "height-stepping is not stable there"
        )
    cap = _effective_cap(nl, u_cap)

    def rhs_u(u, y):
        V, r = y
        curv = 0.0 if dim_N == 1 else (dim_N - 1) / r
        return [nl.f_scalar(u) / V - curv, 1.0 / V]

    def guard(u, y):
        return y[1] - R_MAX_GUARD

    guard.terminal = True
    guard.direction = 1

    sol = solve_ivp(
        rhs_u, (u0, cap), [V0, r0], method="DOP853", rtol=rtol, atol=ATOL,
        events=(guard,), dense_output=True,
    )
    _raise_for_status(sol, "height-stepping")
    if sol.t_events[0].size or sol.t[-1] < cap:
        raise NoBlowup(
            f"radius passed {R_MAX_GUARD:g} at height {sol.t[-1]:.3g}; "
            "no finite blow-up radius in range"
        )
    r_cap = float(sol.y[1, -1])
    try:
        tail = psi(prim, cap)
    except KOViolation as exc:
        raise NoBlowup(f"'{nl.id}' fails the blow-up tail criterion: {exc}") from exc

    rows = [(r0, u0, V0)]
    u = u0 + max(V0 * _h_rule(nl, u0, V0), 1e-12 * u0)
    while u < cap:
        V, rr = (float(v) for v in sol.sol(u))
        h = _h_rule(nl, u, V)
        if _fd_noise_floor(nl, u, V, h, rr):
            break
        rows.append((rr, u, V))
        u = u + max(V * h, 1e-12 * u)
    out = np.asarray(rows, dtype=float)
    keep = np.concatenate(([True], np.diff(out[:, 0]) > 0.0))
    return Profile(
        dim_N=dim_N,
        samples=out[keep],
        blowup_radius=r_cap + tail,
        center_value_alpha=math.nan,
        mesh_note="height-stepping continuation from a seed state",
        nl_id=nl.id,
        u_cap=cap,
    )


def solve_large_ball(
    nl: Nonlinearity,
    dim_N: int,
    u_cap: float = 1e8,
    prim: Optional[Primitive] = None,
    radius_tol: float = 1e-8,
) -> Profile:
    """Bisect the center value until the blow-up radius equals 1.

    The tail decision must be affirmative before any shooting starts; the
    returned profile carries the tuned center value.
    """
    if prim is None:
        prim = Primitive(nl)
    report = prim.ko()
    if not report.satisfied:
        raise KOViolation(f"'{nl.id}' has a divergent tail: {report.certificate}")
    a = nl.anchor
    alpha = max(a + 1.0, (nl.monotone_from or a) + 1e-12)

    def R_of(al: float) -> float:
        return _radius_only(nl, prim, dim_N, al, u_cap)

    # scan geometrically for a bracket R(lo) > 1 > R(hi)
    lo = hi = None
    al = alpha
    for _ in range(60):
        try:
            R = R_of(al)
        except NoBlowup:
            R = math.inf
        if R > 1.0:
            lo = al
            break
        hi = al
        al = a + (al - a) / 2.0
    if lo is None:
        raise BracketFailure("no center value with blow-up radius above 1 in scan range")
    if hi is None:
        al = lo
        for _ in range(60):
            al = a + (al - a) * 2.0
            if R_of(al) < 1.0:
                hi = al
                break
        if hi is None:
            raise BracketFailure("no center value with blow-up radius below 1 in scan range")

    R_lo = R_of(lo)
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        R_mid = R_of(mid)
        if abs(R_mid - 1.0) <= radius_tol:
            lo = mid
            break
        if R_mid > 1.0:
            lo, R_lo = mid, R_mid
        else:
            hi = mid
        if hi - lo < 1e-15 * max(1.0, abs(lo)):
            break
    return shoot(nl, dim_N, lo, u_cap, prim=prim)


def verify_keller_bounds(p: Profile, prim: Primitive) -> KellerBoundsReport:
    """Smallest sampled radius past which the two-sided envelope holds.

    The lower constant 1/(2N) degenerates to 1/2 at N = 1, which is the
    same expression, so a single formula covers every dimension.
    """
    a = prim.nl.anchor
    if p.u[-1] < 100.0 * max(1.0, a):
        raise ConfigError("profile too short: the envelope is asymptotic")
    mask = p.u > a
    r = p.r[mask]
    V2 = p.du_dr[mask] ** 2
    F = prim.F_grid(p.u[mask])
    ok = F > 0.0
    r, V2, F = r[ok], V2[ok], F[ok]
    if r.size == 0:
        raise BoundsNeverHold("no samples above the anchor with positive F")
    ml = V2 * (2.0 * p.dim_N) / F - 1.0
    mu = 4.0 - V2 / F
    good = (ml >= 0.0) & (mu >= 0.0)
    # suffix scan: find the earliest index from which both hold to the end
    idx = None
    run_ok = True
    for i in range(r.size - 1, -1, -1):
        if not good[i]:
            break
        idx = i
    if idx is None:
        raise BoundsNeverHold(
            "the envelope never holds through the far end of the mesh"
        )
    return KellerBoundsReport(
        r_lo=float(r[idx]),
        margin_lower=float(np.min(ml[idx:])),
        margin_upper=float(np.min(mu[idx:])),
    )
