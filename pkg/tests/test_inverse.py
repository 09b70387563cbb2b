"""Height parametrization: inversion, downward integration, pair reports."""

import math

import numpy as np
import pytest

from blowup_lab.errors import (
    ConfigError,
    KOViolation,
    NoOverlap,
    NotMonotone,
    VCollapse,
)
from blowup_lab.inverse import (
    InverseProfile,
    compare_pair,
    height_at_radius,
    integrate_down,
    invert,
)
from blowup_lab.nonlinearity import Primitive, catalog
from blowup_lab.shooting import Profile, solve_large_ball

TIME_MAP_K = 1.3110287771460598
SQRT2 = math.sqrt(2.0)


def pole_samples(u_lo, u_hi, n):
    us = np.geomspace(u_lo, u_hi, n)
    return np.column_stack([1.0 - SQRT2 / us, us, us**2 / SQRT2])


@pytest.fixture(scope="module")
def cubic():
    nl = catalog("power:3")
    return nl, Primitive(nl)


@pytest.fixture(scope="module")
def pole_chart(cubic):
    nl, prim = cubic
    p = Profile(
        dim_N=1,
        samples=pole_samples(1.5, 3e4, 4000),
        blowup_radius=1.0,
        center_value_alpha=1.5,
        mesh_note="closed form",
        nl_id=nl.id,
        u_cap=3e4,
    )
    return invert(p, prim)


@pytest.fixture(scope="module")
def pole_down(cubic):
    nl, prim = cubic
    return integrate_down(nl, prim, 1, 1e4, 2.0)


@pytest.fixture(scope="module")
def ball_chart_1d(cubic):
    nl, prim = cubic
    # the distance identity compares against radius exactly 1, so solve
    # deeper than the default: the solver offset enters the defect as
    # |R - 1| / (1 - r) and peaks at the top height
    ball = solve_large_ball(nl, 1, prim=prim, radius_tol=1e-9)
    return invert(ball, prim)


@pytest.fixture(scope="module")
def ball_chart_3d(cubic):
    nl, prim = cubic
    return invert(solve_large_ball(nl, 3, prim=prim), prim)


def test_invert_exact_pole_solution(cubic, pole_chart):
    nl, _ = cubic
    ip = pole_chart
    assert np.max(np.abs(ip.r_of_u - (1.0 - SQRT2 / ip.u_grid))) < 1e-8
    assert np.max(np.abs(ip.V_of_u / (ip.u_grid**2 / SQRT2) - 1.0)) < 1e-8
    assert ip.chain_rule_residuals(nl).max() < 1e-5
    assert ip.distance_residuals().max() < 1e-5
    assert ip.source == "from_shooting"


def test_reinversion_roundtrip(pole_chart):
    # inverse of the inverse: u(r) from the chart matches the original
    from scipy.interpolate import PchipInterpolator

    u_of_r = PchipInterpolator(pole_chart.r_of_u, pole_chart.u_grid)
    rs = np.linspace(pole_chart.r_of_u[0], pole_chart.r_of_u[-1], 500)
    back = u_of_r(rs)
    want = SQRT2 / (1.0 - rs)
    # ratio-1.02 chart grid: monotone-cubic slope estimates are second
    # order, so the round trip carries a few 1e-6 of interpolation error
    assert np.max(np.abs(back / want - 1.0)) < 1e-5


def test_invert_rejects_flat_and_short(cubic):
    nl, prim = cubic
    flat = Profile(
        dim_N=1,
        samples=np.column_stack(
            [np.linspace(0, 1, 50), np.full(50, 2.0), np.zeros(50)]
        ),
        blowup_radius=2.0,
        center_value_alpha=2.0,
        mesh_note="flat",
        nl_id=nl.id,
        u_cap=2.0,
    )
    with pytest.raises(NotMonotone):
        invert(flat, prim)
    stub = Profile(
        dim_N=1,
        samples=pole_samples(1.5, 50.0, 200),
        blowup_radius=1.0,
        center_value_alpha=1.5,
        mesh_note="stub",
        nl_id=nl.id,
        u_cap=50.0,
    )
    with pytest.raises(ConfigError):
        invert(stub, prim)


def test_downward_reproduces_pole(cubic, pole_down):
    nl, _ = cubic
    ip = pole_down
    # the energy defect W = V^2 - 2F is conserved in 1D, so the seed
    # W = 0 makes the pole solution exact up to solver tolerance
    assert np.max(np.abs(ip.r_of_u - (1.0 - SQRT2 / ip.u_grid))) < 1e-8
    assert np.max(np.abs(ip.V_of_u / (ip.u_grid**2 / SQRT2) - 1.0)) < 1e-12
    assert ip.chain_rule_residuals(nl).max() < 1e-5
    assert ip.distance_residuals().max() < 1e-5
    assert ip.source == "from_asymptotics"


def test_downward_error_shrinks_with_seed_height(cubic):
    nl, prim = cubic
    errs = []
    for u_top in (1e3, 1e4):
        ip = integrate_down(nl, prim, 1, u_top, 3.0)
        errs.append(np.max(np.abs(ip.r_of_u - (1.0 - SQRT2 / ip.u_grid))))
    assert errs[0] < 1e-8 and errs[1] < 1e-8


def test_downward_preconditions(cubic):
    nl, prim = cubic
    with pytest.raises(ConfigError):
        integrate_down(nl, prim, 1, 1e4, 1e4)
    with pytest.raises(ConfigError):
        integrate_down(nl, prim, 1, 1e4, 0.0)
    with pytest.raises(ConfigError):
        integrate_down(nl, prim, 1, 10.0, 2.0)  # psi(10) ~ 0.14
    lin = catalog("power:1")
    with pytest.raises(KOViolation):
        integrate_down(lin, Primitive(lin), 1, 1e4, 2.0)


def test_downward_collapse_events(cubic):
    nl, prim = cubic
    # seed energy pushed below the pole level: V^2 = 2F(u) - 2F(5)
    # vanishes at u = 5, above the requested bottom
    with pytest.raises(VCollapse):
        integrate_down(nl, prim, 1, 1e4, 2.0, w_top=-2.0 * prim.F(5.0))
    # bottom below the profile minimum: the radius reaches the center
    with pytest.raises(VCollapse):
        integrate_down(nl, prim, 1, 1e4, 1.0)


def test_ball_chart_identities_1d(cubic, ball_chart_1d):
    nl, _ = cubic
    assert ball_chart_1d.chain_rule_residuals(nl).max() < 1e-5
    assert ball_chart_1d.distance_residuals().max() < 1e-5


def test_ball_chart_identities_3d(cubic, ball_chart_3d):
    nl, _ = cubic
    ip = ball_chart_3d
    assert ip.chain_rule_residuals(nl).max() < 1e-5
    res = ip.distance_residuals()
    bulk = res[1.0 - ip.r_of_u >= 1e-2]
    assert bulk.max() < 1e-5
    # near the top the envelope closure carries the curvature deficit
    # ~ (N-1)/(3 R u_top^2), which decays with the sample reach but is
    # genuinely above the bulk tolerance at default caps
    assert res.max() < 5e-4


def test_slope_envelope_ratio_bands(cubic, pole_down, ball_chart_1d):
    nl, prim = cubic
    ratio = pole_down.V_of_u / np.sqrt(2.0 * prim.F_grid(pole_down.u_grid))
    assert np.max(np.abs(ratio - 1.0)) < 1e-10
    rb = ball_chart_1d.V_of_u / np.sqrt(2.0 * prim.F_grid(ball_chart_1d.u_grid))
    assert np.all(rb <= 1.0 + 1e-9)
    assert np.all(rb >= 0.5)
    # seeded downward charts ride above the envelope; trusted near the
    # seed where the deficit has not yet amplified
    ip = integrate_down(nl, prim, 3, 1e4, 50.0)
    band = ip.u_grid >= 1e4 / 6.0
    rd = ip.V_of_u[band] / np.sqrt(2.0 * prim.F_grid(ip.u_grid)[band])
    assert np.all(rd >= 1.0 - 1e-12)
    assert np.all(rd <= SQRT2)


def test_compare_identical(pole_down):
    rep = compare_pair(pole_down, pole_down)
    assert rep.ordering_ok
    assert rep.u0_hat == pytest.approx(pole_down.u_bottom)
    assert np.all(rep.w_of_u == 0.0)
    assert rep.w_sup == 0.0
    assert rep.gap_limit < 1e-9


def test_compare_ball_against_pole(cubic, pole_down, ball_chart_1d):
    rep = compare_pair(pole_down, ball_chart_1d)
    assert rep.ordering_ok
    assert rep.u0_hat <= 1.05 * max(pole_down.u_bottom, ball_chart_1d.u_bottom)
    # in 1D the weighted gap is exactly the center energy 2F(alpha*),
    # with alpha* = sqrt(2) K: w = 2 K^4
    want = 2.0 * TIME_MAP_K**4
    clean = rep.u_common <= 33.0  # beyond, V^2 noise drowns the signal
    assert np.max(np.abs(rep.w_of_u[clean] - want)) < 0.05 * want
    assert 0.85 * want <= rep.w_sup <= 2.1 * want
    assert np.all(np.diff(rep.w_of_u[clean]) >= -0.01 * want)
    assert rep.gap_limit < 1e-3


def test_compare_seed_height_pair_3d(cubic):
    nl, prim = cubic
    ip_hi = integrate_down(nl, prim, 3, 4e3, 30.0)
    ip_lo = integrate_down(nl, prim, 3, 1e3, 30.0)
    rep = compare_pair(ip_hi, ip_lo)
    assert rep.ordering_ok
    us, w, wn = rep.u_common, rep.w_of_u, rep.w_noise_of_u
    assert np.all(w >= -wn)
    assert np.all(np.diff(w) >= -(wn[1:] + wn[:-1]))
    assert math.isfinite(rep.w_sup)
    # discrete dw/du against 2 (r1^(2N-2) - r2^(2N-2)) f
    h1 = us[1:-1] - us[:-2]
    h2 = us[2:] - us[1:-1]
    dw = (
        -h2 / (h1 * (h1 + h2)) * w[:-2]
        + (h2 - h1) / (h1 * h2) * w[1:-1]
        + h1 / (h2 * (h1 + h2)) * w[2:]
    )
    r1 = np.interp(us, ip_hi.u_grid, ip_hi.r_of_u)
    r2 = np.interp(us, ip_lo.u_grid, ip_lo.r_of_u)
    rhs = 2.0 * (r1**4 - r2**4)[1:-1] * np.asarray(nl.f(us[1:-1]))
    assert np.max(np.abs(dw - rhs)) < 1e-2 * np.max(np.abs(rhs))


def test_compare_rejections(cubic, pole_down):
    nl, prim = cubic
    far = integrate_down(nl, prim, 1, 1e4, 5e3)
    near = integrate_down(nl, prim, 1, 100.0, 50.0)
    with pytest.raises(NoOverlap):
        compare_pair(far, near)
    other_dim = integrate_down(nl, prim, 3, 1e4, 50.0)
    with pytest.raises(ConfigError):
        compare_pair(pole_down, other_dim)


def test_height_at_radius(pole_down):
    got = height_at_radius(pole_down, 1.0 - SQRT2 / 100.0)
    assert got == pytest.approx(100.0, rel=1e-6)
    with pytest.raises(ConfigError):
        height_at_radius(pole_down, 0.99999)  # inside the closed tail
    with pytest.raises(ConfigError):
        height_at_radius(pole_down, 0.1)  # below the chart bottom
