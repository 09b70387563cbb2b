"""Source-term catalog, cached primitive, tail certification, boundary layer."""

import math

import numpy as np
import pytest

from blowup_lab.errors import ConfigError, InconclusiveTail, KOViolation, NonFinite
from blowup_lab.nonlinearity import (
    Nonlinearity,
    Primitive,
    catalog,
    check_positivity,
    clamp_below_anchor,
    custom_from_file,
    ko_check,
    psi,
    sqrtF_convexity_threshold,
)

# Tail values of int_t0^inf dt/sqrt(F) frozen against closed forms where
# they exist (power family, exp) and against a chunked long-range
# quadrature of the closed-form primitive for the oscillatory entry.
FROZEN_TAILS = {
    ("power:1.5", 1.0): 6.324555320336759,
    ("power:2", 1.0): 3.4641016151377544,
    ("power:3", 1.0): 2.0,
    ("power:5", 1.0): 1.224744871391589,
    ("exp", 1.0): 1.3033793390026165,
    ("osc-square-sine", None): 3.232145456786021,
    ("osc-square-sine", 10.0): 1.5525361660386234,
}


@pytest.fixture(scope="module")
def prims():
    cache = {}

    def get(spec):
        if spec not in cache:
            cache[spec] = Primitive(catalog(spec))
        return cache[spec]

    return get


# ---------------------------------------------------------------- catalog


def test_catalog_ids_and_anchors():
    for spec, anchor in [("power:3", 0.0), ("exp", 0.0), ("osc-square-sine", math.pi / 2)]:
        entry = catalog(spec)
        assert entry.id == spec
        assert entry.anchor == pytest.approx(anchor, abs=0.0)


def test_catalog_rejects_unknown_and_subunit_power():
    with pytest.raises(ConfigError):
        catalog("power:0.5")
    with pytest.raises(ConfigError):
        catalog("gaussian")


def test_power_is_odd_extension():
    entry = catalog("power:2")
    assert entry.f_scalar(-3.0) == pytest.approx(-9.0, rel=1e-15)
    assert entry.f_scalar(3.0) == pytest.approx(9.0, rel=1e-15)


@pytest.mark.parametrize("spec", ["power:1.5", "power:3", "exp", "osc-square-sine"])
def test_primitive_matches_closed_form(spec, prims):
    prim = prims(spec)
    entry = prim.nl
    a = entry.anchor
    ts = a + np.geomspace(1e-3, 40.0, 32)
    want = np.asarray(entry.closed_form_F(ts), dtype=float)
    got = np.array([prim.F(t) for t in ts])
    scale = np.maximum(np.abs(want), 1e-12)
    assert np.max(np.abs(got - want) / scale) < 1e-9


@pytest.mark.parametrize("spec", ["power:1.5", "power:3", "exp", "osc-square-sine"])
def test_derivative_of_F_is_f(spec, prims):
    prim = prims(spec)
    a = prim.nl.anchor
    h = 1e-5
    for t in a + np.linspace(0.5, 8.0, 16):
        fd = (prim.F(t + h) - prim.F(t - h)) / (2 * h)
        want = prim.nl.f_scalar(t)
        assert fd == pytest.approx(want, rel=1e-6, abs=1e-8)


@pytest.mark.parametrize("spec", ["power:2", "exp", "osc-square-sine"])
def test_fprime_matches_difference_quotient(spec):
    entry = catalog(spec)
    h = 1e-6
    for t in entry.anchor + np.linspace(0.3, 6.0, 9):
        fd = (entry.f_scalar(t + h) - entry.f_scalar(t - h)) / (2 * h)
        want = float(np.asarray(entry.fprime(t), dtype=float))
        assert fd == pytest.approx(want, rel=1e-5, abs=1e-6)


def test_F_vanishes_at_anchor_and_is_nondecreasing(prims):
    for spec in ("power:3", "exp", "osc-square-sine"):
        prim = prims(spec)
        a = prim.nl.anchor
        assert prim.F(a) == 0.0
        vals = prim.F_grid(a + np.linspace(0.0, 6.0, 200))
        assert np.all(np.diff(vals) >= -1e-12)


def test_F_grid_agrees_with_pointwise(prims):
    prim = prims("exp")
    ts = np.linspace(0.0, 12.0, 97)
    grid = prim.F_grid(ts)
    point = np.array([prim.F(t) for t in ts])
    assert np.allclose(grid, point, rtol=1e-9, atol=1e-12)


def test_osc_segment_integral_covers_many_periods():
    entry = catalog("osc-square-sine")
    G = entry.closed_form_F
    for lo, hi in [(2.5708, 9.0), (10.0, 1e4), (100.0, 1e7)]:
        v, e = entry.segment_integral(lo, hi)
        want = float(G(hi) - G(lo))
        assert v == pytest.approx(want, rel=1e-9)
        assert e < 1e-6 * abs(want) + 1e-9


def test_overflowed_primitive_raises_nonfinite(prims):
    with pytest.raises(NonFinite):
        prims("exp").F(1e4)


# ---------------------------------------------------------- tail decision


@pytest.mark.parametrize("key", sorted(FROZEN_TAILS, key=str))
def test_frozen_tail_values(key, prims):
    spec, t0 = key
    report = prims(spec).ko(t0)
    assert report.satisfied
    want = FROZEN_TAILS[key]
    assert report.tail_value == pytest.approx(want, rel=1e-8)
    assert report.err_estimate <= 1e-8 * want
    assert report.t_cut is None or report.t_cut > report.t0


def test_linear_growth_is_rejected_with_witness(prims):
    report = prims("power:1").ko(1.0)
    assert not report.satisfied
    assert report.tail_value == math.inf
    assert report.divergence_witness is not None
    qs = np.asarray(report.doubling_exponents)
    assert np.all(qs <= 2.0 + 1e-6)
    assert "2" in report.certificate


def test_near_critical_power_uses_class_fallback(prims):
    # Doubling exponent 2.2 sits inside the undecidable band; the
    # declared polynomial exponent settles it.
    report = prims("power:1.2").ko(1.0)
    assert report.satisfied
    want = math.sqrt(2.2) * 10.0
    assert report.tail_value == pytest.approx(want, rel=1e-8)
    assert "exponent" in report.certificate


def test_undeclared_near_critical_growth_is_inconclusive():
    gray = Nonlinearity(
        id="gray",
        f=lambda t: np.maximum(np.asarray(t, dtype=float), 0.0) ** 1.1,
        fprime=lambda t: 1.1 * np.maximum(np.asarray(t, dtype=float), 1e-300) ** 0.1,
        anchor=1.0,
        growth_class="custom",
        monotone_from=1.0,
    )
    with pytest.raises(InconclusiveTail):
        Primitive(gray).ko()


def test_tail_monotone_in_integrand(prims):
    # F_small <= F_big pointwise forces tail_small >= tail_big.
    t0 = 2.0
    pairs = [("power:2", "power:3"), ("power:3", "power:5"), ("power:3", "exp")]
    for small, big in pairs:
        ts = np.linspace(t0, 400.0, 64)
        Fs = np.asarray(catalog(small).closed_form_F(ts), dtype=float)
        Fb = np.asarray(catalog(big).closed_form_F(ts), dtype=float)
        assert np.all(Fs <= Fb * (1 + 1e-12)), (small, big)
        assert prims(small).ko(t0).tail_value >= prims(big).ko(t0).tail_value


def test_ko_report_is_cached(prims):
    prim = prims("power:3")
    assert prim.ko(1.0) is prim.ko(1.0)


def test_ko_rejects_bad_base_point(prims):
    with pytest.raises(ConfigError):
        prims("power:3").ko(-1.0)
    with pytest.raises(ConfigError):
        # F vanishes at the anchor, so no positive mass to scan from.
        ko_check(Primitive(catalog("osc-square-sine")), math.pi / 2)


def test_osc_tail_against_independent_route(prims):
    # Second route: chunked quadrature of the closed-form primitive out
    # to T, plus the leading envelope term of the remainder.
    import warnings

    from scipy.integrate import IntegrationWarning, quad

    G = catalog("osc-square-sine").closed_form_F
    t0, T = 2.5707963267948966, 2.0e5
    total = 0.0
    lo = t0
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", IntegrationWarning)
        while lo < T:
            hi = min(lo * 1.35 + 1.0, T)
            v, _ = quad(lambda t: 1.0 / math.sqrt(G(t)), lo, hi, limit=400)
            total += v
            lo = hi
    total += 2.0 * math.sqrt(6.0) / math.sqrt(T)
    assert prims("osc-square-sine").ko().tail_value == pytest.approx(total, rel=1e-5)


# -------------------------------------------------------- boundary layer


def test_psi_power_closed_form(prims):
    prim = prims("power:3")
    for u in (1.0, 10.0, 1e4, 1e8):
        assert psi(prim, u) == pytest.approx(math.sqrt(2.0) / u, rel=1e-8)


def test_psi_exp_closed_form(prims):
    prim = prims("exp")
    for u in (1.0, 5.0, 20.0, 100.0):
        want = math.sqrt(2.0) * math.atan(1.0 / math.sqrt(math.expm1(u)))
        assert psi(prim, u) == pytest.approx(want, rel=1e-8)


def test_psi_handles_overflowing_argument(prims):
    # e^690 is representable but e^t overflows inside the tail windows.
    val = psi(prims("exp"), 690.0)
    want = math.sqrt(2.0) * math.exp(-345.0)
    assert val == pytest.approx(want, rel=1e-6)


def test_psi_strictly_decreasing(prims):
    prim = prims("power:1.5")
    us = np.geomspace(0.5, 200.0, 24)
    vals = [psi(prim, u) for u in us]
    assert all(a > b for a, b in zip(vals, vals[1:]))


@pytest.mark.parametrize("spec", ["power:3", "exp"])
def test_psi_slope_is_layer_integrand(spec, prims):
    prim = prims(spec)
    h = 1e-4
    for u in (1.0, 3.0, 7.0):
        fd = (psi(prim, u + h) - psi(prim, u - h)) / (2 * h)
        want = -1.0 / math.sqrt(2.0 * prim.F(u))
        assert fd == pytest.approx(want, rel=1e-6)


def test_psi_refuses_divergent_tail(prims):
    with pytest.raises(KOViolation):
        psi(prims("power:1"), 5.0)


def test_psi_refuses_heights_at_or_below_anchor(prims):
    with pytest.raises(ConfigError):
        psi(prims("power:3"), 0.0)
    with pytest.raises(ConfigError):
        psi(prims("exp"), -2.0)


def test_psi_of_primitive_method_matches_function(prims):
    prim = prims("power:3")
    assert prim.psi(4.0) == psi(prim, 4.0)


# ------------------------------------------------------------- positivity


def test_positivity_accepts_shifted_cubic():
    entry = Nonlinearity(
        id="cubic-from-1",
        f=lambda t: np.asarray(t, dtype=float) ** 3,
        fprime=lambda t: 3.0 * np.asarray(t, dtype=float) ** 2,
        anchor=1.0,
        growth_class="polynomial",
        growth_exponent=3.0,
        monotone_from=0.0,
    )
    report = check_positivity(entry, 50.0)
    assert report.ok and report.violation_at is None


def test_positivity_tolerates_interior_zeros(prims):
    # t^2 sin^2 t touches zero at every multiple of pi but never dips
    # below; the gate must not flag it.
    report = check_positivity(catalog("osc-square-sine"), 40.0)
    assert report.ok


def test_positivity_flags_first_sign_change():
    entry = Nonlinearity(
        id="sin",
        f=np.sin,
        fprime=np.cos,
        anchor=math.pi / 2,
        growth_class="custom",
        monotone_from=None,
    )
    report = check_positivity(entry, 20.0)
    assert not report.ok
    assert report.violation_at == pytest.approx(math.pi, abs=1e-6)


def test_positivity_rejects_nonpositive_anchor_value():
    entry = Nonlinearity(
        id="neg",
        f=lambda t: -np.ones_like(np.asarray(t, dtype=float)),
        fprime=lambda t: np.zeros_like(np.asarray(t, dtype=float)),
        anchor=0.0,
        growth_class="custom",
        monotone_from=None,
    )
    report = check_positivity(entry, 5.0)
    assert not report.ok
    assert report.violation_at == 0.0


# -------------------------------------------------- convexity of sqrt(F)


def test_convexity_threshold_power_is_at_anchor(prims):
    thr = sqrtF_convexity_threshold(prims("power:3"), 10.0)
    assert thr is not None and thr < 1e-3


def test_convexity_threshold_exp_is_log_two(prims):
    thr = sqrtF_convexity_threshold(prims("exp"), 4.0)
    assert thr == pytest.approx(math.log(2.0), abs=1e-2)


def test_convexity_threshold_oscillatory_never_settles(prims):
    assert sqrtF_convexity_threshold(prims("osc-square-sine"), 60.0) is None


# ------------------------------------------------------------ custom file


def test_custom_file_round_trip(tmp_path):
    # Coefficients are ascending powers of (t - breakpoint).
    path = tmp_path / "pw.txt"
    path.write_text(
        "# piecewise polynomial source term\n"
        "1.0  0.0 0.0 2.0\n"      # 2 (t-1)^2 on [1, 3)
        "3.0  8.0 0.0 0.0 6.0\n"  # 8 + 6 (t-3)^3 beyond 3
        "\n"
    )
    entry = custom_from_file(str(path))
    assert entry.anchor == 1.0
    assert entry.f_scalar(2.0) == pytest.approx(2.0)
    assert entry.f_scalar(4.0) == pytest.approx(14.0)
    # constant extension below the first breakpoint
    assert entry.f_scalar(0.0) == 0.0
    prim = Primitive(entry)
    # exact piecewise antiderivative carried as the oracle
    for t in (1.5, 2.5, 3.5, 6.0):
        assert prim.F(t) == pytest.approx(float(entry.closed_form_F(t)), rel=1e-9)
    assert prim.F(2.0) == pytest.approx(2.0 / 3.0, rel=1e-9)
    report = prim.ko()
    assert report.satisfied


def test_custom_file_bad_lines(tmp_path):
    bad = tmp_path / "bad.txt"
    bad.write_text("1.0 1.0\nnot-a-number 2.0\n")
    with pytest.raises(ConfigError):
        custom_from_file(str(bad))
    dup = tmp_path / "dup.txt"
    dup.write_text("1.0 1.0\n1.0 2.0\n")
    with pytest.raises(ConfigError):
        custom_from_file(str(dup))
    empty = tmp_path / "empty.txt"
    empty.write_text("# nothing\n")
    with pytest.raises(ConfigError):
        custom_from_file(str(empty))


def test_catalog_custom_spec(tmp_path):
    path = tmp_path / "lin.txt"
    path.write_text("0.0  1.0 3.0\n")
    entry = catalog(f"custom:{path}")
    assert entry.f_scalar(2.0) == pytest.approx(7.0)
    assert entry.monotone_from is not None


# ------------------------------------------------------------------ clamp


def test_clamp_below_anchor_shape():
    entry = clamp_below_anchor(catalog("exp"))
    assert entry.id.endswith("~clamped")
    assert entry.f_scalar(-1.5) == 0.0
    assert entry.f_scalar(0.0) == pytest.approx(1.0)
    assert entry.f_scalar(2.0) == pytest.approx(math.exp(2.0))
    # C^1 at both junction points
    h = 1e-6
    for t in (-1.0, 0.0):
        fd = (entry.f_scalar(t + h) - entry.f_scalar(t - h)) / (2 * h)
        want = float(np.asarray(entry.fprime(t), dtype=float))
        assert fd == pytest.approx(want, abs=1e-4)


def test_clamp_keeps_upper_tail(prims):
    entry = clamp_below_anchor(catalog("power:3"))
    ts = np.linspace(0.0, 5.0, 64)
    raw = np.asarray(catalog("power:3").f(ts), dtype=float)
    assert np.allclose(np.asarray(entry.f(ts), dtype=float), raw)
