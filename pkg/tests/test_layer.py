"""Shell (boundary-layer) solver tests.

The workhorse oracle is the cubic half-line solution sqrt(2)/(1-r): a
shell matched to it at r = 0.9 with a finite outer value K solves the
same interval equation with energy E = -psi(K) * 5 g^5 / 2^(3/2), which
for g = sqrt(2)/0.1 and K = 1e4 collapses to E = -100 sqrt(2).  That
fixes the inner-boundary gradient excess M_N = 2E = -200 sqrt(2) and
the chart displacement (radius at height) at psi(K), both checked below
against the solve.
"""

import dataclasses

import numpy as np
import pytest
from scipy.interpolate import PchipInterpolator

from blowup_lab.errors import ConfigError, NewtonDiverged
from blowup_lab.layer import (
    GapReport,
    LayerProblem,
    LayerSolution,
    check_constant_gap,
    check_nirenberg_contraction,
    check_p_function,
    layer_mesh,
    run_monotone_limit,
    solve_layer,
)
from blowup_lab.newton_bvp import solve_radial_bvp
from blowup_lab.nonlinearity import Primitive, catalog, clamp_below_anchor
from blowup_lab.shooting import solve_large_ball

S2 = np.sqrt(2.0)
POLE_G = S2 / 0.1  # half-line solution at r = 0.9
M_N_EXACT_MATCH = -200.0 * S2  # energy bookkeeping, see module docstring


@pytest.fixture(scope="module")
def cubic():
    nl = catalog("power:3")
    return nl, Primitive(nl)


@pytest.fixture(scope="module")
def pole_problem(cubic):
    nl, _ = cubic
    return LayerProblem(
        dim_N=1, eps=0.1, inner_datum_g=POLE_G, boundary_value_N=1e4, nl=nl
    )


@pytest.fixture(scope="module")
def pole_layer(cubic, pole_problem):
    _, prim = cubic
    return solve_layer(pole_problem, mesh_size=400, prim=prim)


@pytest.fixture(scope="module")
def ball3(cubic):
    nl, _ = cubic
    return solve_large_ball(nl, 3)


@pytest.fixture(scope="module")
def sweep3(cubic, ball3):
    nl, prim = cubic
    g3 = float(PchipInterpolator(ball3.samples[:, 0], ball3.samples[:, 1])(0.9))
    lp = LayerProblem(dim_N=3, eps=0.1, inner_datum_g=g3, boundary_value_N=1e6, nl=nl)
    return run_monotone_limit(
        lp, [100.0, 1e3, 1e4, 1e5, 1e6], mesh_size=600,
        probe_radii=[0.95, 0.99], prim=prim,
    )


def test_mesh_grading(cubic):
    _, prim = cubic
    mesh = layer_mesh(prim, 0.1, 1e4, 400)
    assert mesh.size == 401
    assert mesh[0] == pytest.approx(0.9, abs=1e-15)
    assert mesh[-1] == 1.0
    assert np.all(np.diff(mesh) > 0)
    w_last = mesh[-1] - mesh[-2]
    # quarter-layer collar at the reference size
    assert w_last == pytest.approx(prim.psi(1e4) / 4.0, rel=0.05)
    widths = np.diff(mesh)
    assert np.all(widths[:-1] / widths[1:] > 1.0)  # graded toward r = 1


def test_pole_layer_converges(pole_layer):
    assert pole_layer.newton_iters <= 6
    assert pole_layer.residual_sup <= 1e-8
    assert pole_layer.u[0] == POLE_G
    assert pole_layer.u[-1] == 1e4
    assert np.all(np.diff(pole_layer.u) > 0)


def test_pole_layer_matches_half_line(cubic, pole_layer):
    # the chart displacement (radius at height) is psi(K) up to the
    # (g/K)^5 correction; the height deficit at fixed radius amplifies
    # it by u', so only the chart metric is meaningful near r = 1
    _, prim = cubic
    r, u = pole_layer.mesh, pole_layer.u
    disp = np.abs(r[1:-1] - (1.0 - S2 / u[1:-1]))
    psiK = prim.psi(1e4)
    assert disp.max() <= 1.01 * psiK
    assert disp.max() >= 0.85 * psiK
    inner = r[:-1] <= 0.99
    rel = np.abs(u[:-1] - S2 / (1.0 - r[:-1])) / (S2 / (1.0 - r[:-1]))
    assert 1.2e-2 <= rel[inner].max() <= 1.5e-2


def test_pole_layer_energy(pole_layer):
    assert pole_layer.M_N == pytest.approx(M_N_EXACT_MATCH, rel=0.025)


def test_mesh_doubling_second_order(cubic, pole_problem):
    _, prim = cubic
    ref = solve_layer(pole_problem, mesh_size=3200, prim=prim)
    interp_ref = PchipInterpolator(ref.mesh, ref.u)
    errs = []
    for ms in (200, 400, 800):
        s = solve_layer(pole_problem, mesh_size=ms, prim=prim)
        grid = s.mesh[s.mesh <= 0.999]
        err = np.abs(PchipInterpolator(s.mesh, s.u)(grid) - interp_ref(grid))
        errs.append(float((err / interp_ref(grid)).max()))
    assert errs[0] / errs[1] >= 3.0
    assert errs[1] / errs[2] >= 3.0


def test_p_function_flat_for_interval(pole_layer):
    # dimension 1 has no curvature term: P is constant, so the trusted
    # maximum must agree with the inner value within the local tolerance
    rep = check_p_function(pole_layer)
    assert rep.ok
    assert rep.max_location == "inner_boundary"
    assert rep.margin > 0.0
    assert abs(rep.p_max - rep.m_n) <= rep.p_tol_at_max
    assert 0.1 <= rep.trusted_fraction <= 0.5


def test_monotone_sweep_structure(sweep3):
    vals = sweep3.probe_values
    assert vals.shape == (5, 2)
    assert np.all(np.diff(vals, axis=0) > 0)
    assert np.all(sweep3.increments > 0)
    # increments at the first probe scale like psi(K) within a factor 2
    assert sweep3.ratio_spread <= 2.0
    assert 300.0 <= sweep3.ratios.min() <= sweep3.ratios.max() <= 600.0


def test_sweep_limit_matches_ball(sweep3, ball3):
    ub = PchipInterpolator(ball3.samples[:, 0], ball3.samples[:, 1])
    rel = np.abs(sweep3.limit_values - ub(sweep3.probe_radii)) / ub(sweep3.probe_radii)
    assert rel.max() <= 2e-5


def test_sweep_below_large_solution(sweep3, ball3):
    ub = PchipInterpolator(ball3.samples[:, 0], ball3.samples[:, 1])
    mesh = sweep3.solutions[0].mesh
    sel = mesh <= 0.9995
    bound = ub(mesh[sel]) * (1.0 + 1e-4)
    for s in sweep3.solutions:
        assert np.all(s.u[sel] <= bound)


def test_sweep_newton_budget(sweep3):
    # small outer values sit on a mesh graded for the largest one, so
    # their scaled-residual rounding floor is the binding limit
    for s in sweep3.solutions:
        assert s.newton_iters <= 12
        assert s.residual_sup <= 1e-6


def test_p_function_across_sweep(sweep3):
    for s in sweep3.solutions:
        rep = check_p_function(s)
        assert rep.ok
        assert rep.max_location == "inner_boundary"
        assert rep.margin > 0.0


def test_nirenberg_on_sweep_pair(cubic, sweep3):
    _, prim = cubic
    rep = check_nirenberg_contraction(sweep3.solutions[-1], sweep3.solutions[-2], prim=prim)
    assert rep.contraction_ok
    assert 0.999 <= rep.dv_sup_a <= 1.0 + 1e-6
    assert 0.999 <= rep.dv_sup_b <= 1.0 + 1e-6
    assert rep.M_bound == 0.0
    assert rep.w_sup <= 1e-4
    assert not rep.negative_interior_min


def test_nirenberg_exact_chart_attains_slope_one(cubic):
    # the half-line solution turns the chart into v = 1 - r exactly, so
    # every difference quotient sits on the contraction bound
    nl, prim = cubic
    r = np.linspace(0.9, 0.999, 400)
    u = S2 / (1.0 - r)
    lp = LayerProblem(
        dim_N=1, eps=0.1, inner_datum_g=POLE_G, boundary_value_N=float(u[-1]), nl=nl
    )
    exact = LayerSolution(
        problem=lp, mesh=r, u=u, du=u * u / S2, P=np.zeros_like(u),
        M_N=0.0, newton_iters=0, residual_sup=0.0,
    )
    rep = check_nirenberg_contraction(exact, exact, prim=prim)
    assert abs(rep.dv_sup_a - 1.0) <= 1e-8
    assert rep.contraction_ok
    assert rep.w_sup == 0.0


def test_nirenberg_rejects_mismatched_meshes(cubic, sweep3, pole_layer):
    _, prim = cubic
    with pytest.raises(ConfigError):
        check_nirenberg_contraction(sweep3.solutions[0], pole_layer, prim=prim)


def test_exp_layer_with_raised_clamp(cubic):
    # f(0) = 0 needs the clamp window to reach zero, hence the raised
    # anchor; the steep inner slope makes M_N positive, exercising the
    # offset chart with M_bound > 0
    nl_exp = clamp_below_anchor(dataclasses.replace(catalog("exp"), anchor=1.5))
    prim = Primitive(nl_exp)
    lp = LayerProblem(dim_N=2, eps=0.1, inner_datum_g=4.0, boundary_value_N=50.0, nl=nl_exp)
    sol = solve_layer(lp, mesh_size=300, prim=prim)
    assert sol.residual_sup <= 1e-8
    assert sol.newton_iters <= 12
    assert sol.M_N == pytest.approx(1938.2862, abs=1.0)
    rep = check_p_function(sol)
    assert rep.ok and rep.max_location == "inner_boundary"

    other = solve_layer(
        dataclasses.replace(lp, boundary_value_N=60.0),
        prim=prim, mesh=sol.mesh.copy(),
    )
    # the offset-chart quotient overshoots 1 by a scheme artifact
    # (h^2 f is a constant of this grading, measured 4.0e-4 at 300
    # cells) and must decay at second order under refinement
    nr = check_nirenberg_contraction(other, sol, prim=prim, tol=5e-4)
    assert nr.M_bound > 0.0
    assert nr.contraction_ok
    assert not nr.negative_interior_min
    assert nr.dv_sup_a > 1.0

    fine = solve_layer(lp, mesh_size=600, prim=prim)
    fine_other = solve_layer(
        dataclasses.replace(lp, boundary_value_N=60.0),
        prim=prim, mesh=fine.mesh.copy(),
    )
    nr_fine = check_nirenberg_contraction(fine_other, fine, prim=prim, tol=1.3e-4)
    assert nr_fine.contraction_ok
    assert (nr.dv_sup_a - 1.0) / (nr_fine.dv_sup_a - 1.0) >= 3.0


def test_raw_exp_rejected(cubic):
    nl_exp = catalog("exp")
    lp = LayerProblem(dim_N=2, eps=0.1, inner_datum_g=4.0, boundary_value_N=50.0, nl=nl_exp)
    with pytest.raises(ConfigError, match="clamp_below_anchor"):
        solve_layer(lp, mesh_size=100)


def test_problem_validation(cubic):
    nl, _ = cubic
    with pytest.raises(ConfigError):
        LayerProblem(dim_N=1, eps=0.6, inner_datum_g=2.0, boundary_value_N=10.0, nl=nl)
    with pytest.raises(ConfigError):
        LayerProblem(dim_N=1, eps=0.1, inner_datum_g=20.0, boundary_value_N=10.0, nl=nl)
    with pytest.raises(ConfigError):
        LayerProblem(dim_N=1, eps=0.1, inner_datum_g=-1.0, boundary_value_N=10.0, nl=nl)
    with pytest.raises(ConfigError):
        LayerProblem(dim_N=0, eps=0.1, inner_datum_g=2.0, boundary_value_N=10.0, nl=nl)
    osc = catalog("osc-square-sine")
    with pytest.raises(ConfigError, match="monotone"):
        solve_layer(
            LayerProblem(dim_N=1, eps=0.1, inner_datum_g=2.0, boundary_value_N=10.0, nl=osc),
            mesh_size=100,
        )


def test_sweep_validation(cubic, pole_problem):
    _, prim = cubic
    with pytest.raises(ConfigError):
        run_monotone_limit(pole_problem, [100.0], prim=prim)
    with pytest.raises(ConfigError):
        run_monotone_limit(pole_problem, [100.0, 50.0], prim=prim)
    with pytest.raises(ConfigError):
        run_monotone_limit(pole_problem, [100.0, 1e3], probe_radii=[0.5], prim=prim)
    with pytest.raises(ConfigError):
        solve_layer(pole_problem, mesh=np.linspace(0.8, 1.0, 50))


def test_newton_budget_exhaustion(cubic, pole_problem):
    nl, prim = cubic
    mesh = layer_mesh(prim, 0.1, 1e4, 200)
    init = np.full(mesh.shape, POLE_G)
    init[-1] = 1e4
    with pytest.raises(NewtonDiverged) as exc:
        solve_radial_bvp(
            nl, 1, mesh, ("dirichlet", POLE_G), 1e4, init, max_iter=1
        )
    assert len(exc.value.trace) >= 1


def test_constant_gap_twin_routes(cubic, ball3):
    nl, _ = cubic
    twin = solve_large_ball(nl, 3, u_cap=3e8, radius_tol=1e-9)
    rep = check_constant_gap(ball3, twin, 0.1, nl)
    assert isinstance(rep, GapReport)
    assert rep.comparable
    assert rep.gap_ok
    assert rep.attained_on_circle
    assert abs(rep.sup_gap) <= 1e-5


def test_constant_gap_flags_shifted_profile(cubic, ball3):
    nl, _ = cubic
    shifted = ball3.samples.copy()
    shifted[:, 1] += 0.1
    fake = dataclasses.replace(ball3, samples=shifted)
    rep = check_constant_gap(ball3, fake, 0.1, nl)
    assert not rep.residual_ok_upper
    assert not rep.comparable
    assert rep.residual_ok_lower
    # the shifted profile is *above* u everywhere: no gap counterexample,
    # just an invalid comparison partner
    assert rep.sup_gap < 0.0
