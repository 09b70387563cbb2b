"""Command-line front end: configuration, orchestration, artifact emission.

This is the only module with side effects.  Every subcommand resolves a
flat configuration (defaults < config file < explicit flags), validates
it against the nonlinearity catalog before any solve, runs the requested
computation, writes CSV/JSON artifacts into the output directory, and
prints a one-line summary per invoked check.

Exit codes: 0 when every invoked check passes, 1 when a check fails,
2 for configuration errors, 3 for solver errors.  In the error cases the
originating message is printed to stderr verbatim.  Argument-parsing
errors also exit 2.

Config files are ``key=value`` text, one entry per line; ``#`` starts a
comment and blank lines are ignored.  Keys use the underscore form of
the corresponding flag (``inner_g`` for ``--inner-g``); unknown keys are
rejected.  Explicit flags always win over file entries.

All computations are deterministic and seed-free: rerunning a subcommand
with an identical configuration reproduces every CSV byte for byte.
``BLOWUP_LAB_THREADS`` (an integer >= 1) caps worker parallelism; the
current dispatch is sequential, so any positive cap is honoured, and the
value is echoed into artifact sidecars for provenance.
"""

from __future__ import annotations

import argparse
import math
import os
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Optional, Sequence

import numpy as np

from . import io as _io
from .errors import ConfigError, SolverError
from .inverse import invert
from .layer import LayerProblem, check_p_function, solve_layer
from .multiplicity import demonstrate_nonuniqueness
from .newton_bvp import NEWTON_TOL
from .nonlinearity import Primitive, catalog, ko_check
from .shooting import RESID_TOL, RTOL, shoot, solve_large_ball, verify_keller_bounds
from .verify import run_verify_all, verify_report_json


# ----------------------------------------------------------------- config

class _Required:
    """Sentinel for options that must be supplied."""


_REQUIRED = _Required()


def _cast_float(text: str) -> float:
    try:
        value = float(text)
    except ValueError:
        raise ConfigError(f"expected a number, got {text!r}") from None
    if math.isnan(value):
        raise ConfigError("nan is not a valid option value")
    return value


def _cast_int(text: str) -> int:
    try:
        return int(text)
    except ValueError:
        raise ConfigError(f"expected an integer, got {text!r}") from None


def _cast_str(text: str) -> str:
    return text


def _cast_float_list(text: str) -> tuple[float, ...]:
    items = [piece.strip() for piece in text.split(",") if piece.strip()]
    if not items:
        raise ConfigError("expected a comma-separated list of numbers")
    return tuple(_cast_float(piece) for piece in items)


# Per-subcommand option schema: name -> (caster, default).  ``out`` is
# common to every subcommand; required options default to the sentinel.
_SCHEMA: dict[str, dict[str, tuple[Callable[[str], Any], Any]]] = {
    "ko": {
        "nl": (_cast_str, _REQUIRED),
        "t0": (_cast_float, None),  # None: canonical point above the anchor
        "rel_err": (_cast_float, 1e-8),
    },
    "shoot": {
        "nl": (_cast_str, _REQUIRED),
        "dim": (_cast_int, _REQUIRED),
        "alpha": (_cast_float, _REQUIRED),
        "u_cap": (_cast_float, 1e8),
        "rtol": (_cast_float, RTOL),
    },
    "large": {
        "nl": (_cast_str, _REQUIRED),
        "dim": (_cast_int, _REQUIRED),
        "u_cap": (_cast_float, 1e8),
        "radius_tol": (_cast_float, 1e-8),
    },
    "invert": {
        "nl": (_cast_str, _REQUIRED),
        "dim": (_cast_int, _REQUIRED),
        "u_cap": (_cast_float, 1e8),
        "radius_tol": (_cast_float, 1e-8),
    },
    "layer": {
        "nl": (_cast_str, _REQUIRED),
        "dim": (_cast_int, _REQUIRED),
        "eps": (_cast_float, _REQUIRED),
        "inner_g": (_cast_float, _REQUIRED),
        "boundary_n": (_cast_float, _REQUIRED),
        "mesh_size": (_cast_int, 400),
        "newton_tol": (_cast_float, NEWTON_TOL),
    },
    "punctured": {
        "dim": (_cast_int, 3),
        "p": (_cast_float, 2.0),
        "lambdas": (_cast_float_list, (0.5, 1.0, 2.0)),
        "k_boundary": (_cast_float, 1e9),
        "core_radius": (_cast_float, 5e-3),
        "distinct_tol": (_cast_float, 1e-2),
        "newton_tol": (_cast_float, NEWTON_TOL),
    },
    "verify-all": {
        "nl": (_cast_str, "power:3"),
        "dim": (_cast_int, 3),
        "tolerance_scale": (_cast_float, 1.0),
    },
}

for _schema in _SCHEMA.values():
    _schema["out"] = (_cast_str, ".")


@dataclass
class RunConfig:
    """Fully resolved, validated invocation of one subcommand."""

    subcommand: str
    options: dict[str, Any]
    output_dir: Path

    def echo(self) -> dict[str, Any]:
        """Sidecar payload: every resolved option, JSON-friendly."""
        out: dict[str, Any] = {"subcommand": self.subcommand}
        for key, value in sorted(self.options.items()):
            out[key] = list(value) if isinstance(value, tuple) else value
        return out


def _parse_config_file(path: str) -> dict[str, str]:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from None
    entries: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(
                f"{path}:{lineno}: expected key=value, got {raw.strip()!r}"
            )
        key, value = line.split("=", 1)
        entries[key.strip()] = value.strip()  # last duplicate wins
    return entries


def _read_threads(raw: Optional[str]) -> Optional[int]:
    if raw is None or raw == "":
        return None
    try:
        threads = int(raw)
    except ValueError:
        raise ConfigError(
            f"BLOWUP_LAB_THREADS must be an integer >= 1, got {raw!r}"
        ) from None
    if threads < 1:
        raise ConfigError(
            f"BLOWUP_LAB_THREADS must be an integer >= 1, got {threads}"
        )
    return threads


def resolve_config(subcommand: str, flag_values: dict[str, Optional[str]],
                   config_path: Optional[str] = None) -> RunConfig:
    """Merge defaults, config-file entries, and explicit flags.

    ``flag_values`` holds raw flag strings (None when the flag was not
    given).  Both sources pass through the same casters so malformed
    values produce identical errors either way.
    """
    schema = _SCHEMA[subcommand]
    resolved: dict[str, Any] = {
        name: default for name, (_, default) in schema.items()
    }
    if config_path is not None:
        for key, raw in _parse_config_file(config_path).items():
            if key not in schema:
                raise ConfigError(
                    f"unknown config key {key!r} for subcommand {subcommand!r}"
                )
            resolved[key] = schema[key][0](raw)
    for key, raw in flag_values.items():
        if raw is None:
            continue
        resolved[key] = schema[key][0](raw)

    missing = [name for name, value in resolved.items()
               if isinstance(value, _Required)]
    if missing:
        raise ConfigError(
            "missing required option(s): " + ", ".join(sorted(missing))
        )

    # catalog validation happens before any solve
    if "nl" in resolved:
        catalog(resolved["nl"])

    threads = _read_threads(os.environ.get("BLOWUP_LAB_THREADS"))
    if threads is not None:
        resolved["threads"] = threads

    out_dir = Path(resolved["out"])
    return RunConfig(subcommand=subcommand, options=resolved,
                     output_dir=out_dir)


# ----------------------------------------------------------------- checks

def _print_check(name: str, ok: bool, margin: float) -> None:
    status = "pass" if ok else "FAIL"
    print(f"[{status}] {name:<34} margin={margin:.17e}")


def _emit(checks: Sequence[tuple[str, bool, float]]) -> bool:
    for name, ok, margin in checks:
        _print_check(name, ok, margin)
    return all(ok for _, ok, _ in checks)


def _ensure_outdir(cfg: RunConfig) -> None:
    try:
        cfg.output_dir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ConfigError(f"cannot create output dir {cfg.output_dir}: {exc}")


def _art(cfg: RunConfig, filename: str) -> str:
    return str(cfg.output_dir / filename)


# ------------------------------------------------------------- subcommands

def _run_ko(cfg: RunConfig) -> bool:
    opt = cfg.options
    prim = Primitive(catalog(opt["nl"]))
    t0 = opt["t0"] if opt["t0"] is not None else prim.canonical_t0()
    rep = ko_check(prim, t0, rel_err=opt["rel_err"])
    print("satisfied=" + ("true" if rep.satisfied else "false"))
    _ensure_outdir(cfg)
    _io.ko_report_json(rep, _art(cfg, "ko_report.json"), config=cfg.echo())
    margin = (opt["rel_err"] - rep.err_estimate) / opt["rel_err"]
    return _emit([("growth_condition_certified", True, margin)])


def _run_shoot(cfg: RunConfig) -> bool:
    opt = cfg.options
    nl = catalog(opt["nl"])
    prim = Primitive(nl)
    profile = shoot(nl, opt["dim"], opt["alpha"], u_cap=opt["u_cap"],
                    prim=prim, rtol=opt["rtol"])
    _ensure_outdir(cfg)
    _io.profile_csv(profile, _art(cfg, "profile.csv"), config=cfg.echo())
    resid = profile.residual_norm(nl)
    margin = (RESID_TOL - resid) / RESID_TOL
    return _emit([("interior_residual", resid <= RESID_TOL, margin)])


def _run_large(cfg: RunConfig) -> bool:
    opt = cfg.options
    nl = catalog(opt["nl"])
    prim = Primitive(nl)
    profile = solve_large_ball(nl, opt["dim"], u_cap=opt["u_cap"], prim=prim,
                               radius_tol=opt["radius_tol"])
    _ensure_outdir(cfg)
    _io.profile_csv(profile, _art(cfg, "profile.csv"), config=cfg.echo())
    resid = profile.residual_norm(nl)
    bounds = verify_keller_bounds(profile, prim)
    env_ok = (bounds.margin_lower >= 0.0 and bounds.margin_upper >= 0.0
              and bounds.r_lo < 1.0)
    return _emit([
        ("interior_residual", resid <= RESID_TOL,
         (RESID_TOL - resid) / RESID_TOL),
        ("distance_envelope_sandwich", env_ok,
         min(bounds.margin_lower, bounds.margin_upper)),
    ])


def _run_invert(cfg: RunConfig) -> bool:
    opt = cfg.options
    nl = catalog(opt["nl"])
    prim = Primitive(nl)
    profile = solve_large_ball(nl, opt["dim"], u_cap=opt["u_cap"], prim=prim,
                               radius_tol=opt["radius_tol"])
    chart = invert(profile, prim)
    _ensure_outdir(cfg)
    _io.profile_csv(profile, _art(cfg, "profile.csv"), config=cfg.echo())
    _io.inverse_csv(chart, _art(cfg, "inverse_chart.csv"), config=cfg.echo())
    # smallest radial step of the chart; strict monotonicity means > 0
    step = float(np.min(np.diff(chart.r_of_u)))
    return _emit([("chart_strictly_monotone", step > 0.0, step)])


def _run_layer(cfg: RunConfig) -> bool:
    opt = cfg.options
    nl = catalog(opt["nl"])
    prim = Primitive(nl)
    lp = LayerProblem(dim_N=opt["dim"], eps=opt["eps"],
                      inner_datum_g=opt["inner_g"],
                      boundary_value_N=opt["boundary_n"], nl=nl)
    sol = solve_layer(lp, mesh_size=opt["mesh_size"], prim=prim,
                      newton_tol=opt["newton_tol"])
    _ensure_outdir(cfg)
    _io.layer_csv(sol, _art(cfg, "layer.csv"), config=cfg.echo())
    pf = check_p_function(sol)
    ntol = opt["newton_tol"]
    return _emit([
        ("newton_residual", sol.residual_sup <= ntol,
         (ntol - sol.residual_sup) / ntol),
        ("gradient_functional_bound",
         pf.ok and pf.max_location != "outer_boundary", pf.margin),
    ])


def _run_punctured(cfg: RunConfig) -> bool:
    opt = cfg.options
    rep = demonstrate_nonuniqueness(
        opt["dim"], opt["p"], list(opt["lambdas"]),
        k_boundary=opt["k_boundary"], core_radius=opt["core_radius"],
        distinct_tol=opt["distinct_tol"], newton_tol=opt["newton_tol"],
    )
    _ensure_outdir(cfg)
    echo = cfg.echo()
    for sol in rep.solutions:
        tag = "inf" if math.isinf(sol.lam) else f"{sol.lam:g}"
        _io.punctured_csv(sol, _art(cfg, f"punctured_lam_{tag}.csv"),
                          config=echo)
    _io.punctured_family_json(rep, _art(cfg, "punctured_family.json"),
                              config=echo)
    dist = np.asarray(rep.distances)
    off = dist[~np.eye(dist.shape[0], dtype=bool)]
    min_off = float(off.min()) if off.size else 0.0
    return _emit([
        ("pairwise_distinct", rep.distinct_ok,
         (min_off - rep.distinct_tol) / rep.distinct_tol),
        ("ordered_in_lambda", rep.ordered_ok, 1.0 if rep.ordered_ok else -1.0),
        ("strong_singularity_dominates", rep.strong_dominates_ok,
         1.0 if rep.strong_dominates_ok else -1.0),
        ("shared_boundary_layer", rep.boundary_match_ok,
         (1e-2 - rep.boundary_match_sup) / 1e-2),
    ])


def _run_verify_all(cfg: RunConfig) -> bool:
    opt = cfg.options
    report = run_verify_all(nl_id=opt["nl"], dim_N=opt["dim"],
                            tolerance_scale=opt["tolerance_scale"])
    _ensure_outdir(cfg)
    verify_report_json(report, _art(cfg, "verify_report.json"),
                       config=cfg.echo())
    for check in report.checks:
        status = "pass" if check.status == "pass" else "FAIL"
        print(f"[{status}] {check.name:<34} margin={check.margin:.17e} "
              f"({check.runtime_s:.3f}s)")
    return report.all_pass


_HANDLERS: dict[str, Callable[[RunConfig], bool]] = {
    "ko": _run_ko,
    "shoot": _run_shoot,
    "large": _run_large,
    "invert": _run_invert,
    "layer": _run_layer,
    "punctured": _run_punctured,
    "verify-all": _run_verify_all,
}


# ----------------------------------------------------------------- parser

def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="blowup-lab",
        description=("Radial blow-up boundary solutions: growth-condition "
                     "decisions, shooting and inverse charts, boundary "
                     "layers, punctured-ball families, and the "
                     "certification battery."),
    )
    sub = parser.add_subparsers(dest="subcommand", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="FILE",
                        help="key=value config file (flags win)")
    common.add_argument("--out", metavar="DIR",
                        help="output directory for artifacts (default .)")

    p = sub.add_parser("ko", parents=[common],
                       help="decide the superlinear growth condition")
    p.add_argument("--nl", help="catalog id, e.g. power:3")
    p.add_argument("--t0", help="tail integration start "
                                "(default: canonical point above the anchor)")
    p.add_argument("--rel-err", dest="rel_err",
                   help="relative error budget (default 1e-8)")

    p = sub.add_parser("shoot", parents=[common],
                       help="integrate one radial profile from the center")
    p.add_argument("--nl")
    p.add_argument("--dim", help="space dimension N")
    p.add_argument("--alpha", help="center value u(0)")
    p.add_argument("--u-cap", dest="u_cap")
    p.add_argument("--rtol")

    p = sub.add_parser("large", parents=[common],
                       help="boundary blow-up solution on the unit ball")
    p.add_argument("--nl")
    p.add_argument("--dim")
    p.add_argument("--u-cap", dest="u_cap")
    p.add_argument("--radius-tol", dest="radius_tol")

    p = sub.add_parser("invert", parents=[common],
                       help="height-parametrized inverse chart of the "
                            "unit-ball solution")
    p.add_argument("--nl")
    p.add_argument("--dim")
    p.add_argument("--u-cap", dest="u_cap")
    p.add_argument("--radius-tol", dest="radius_tol")

    p = sub.add_parser("layer", parents=[common],
                       help="annular boundary-layer solve with gradient "
                            "functional")
    p.add_argument("--nl")
    p.add_argument("--dim")
    p.add_argument("--eps", help="annulus width parameter in (0, 0.5)")
    p.add_argument("--inner-g", dest="inner_g", help="inner boundary value")
    p.add_argument("--boundary-n", dest="boundary_n",
                   help="outer boundary value")
    p.add_argument("--mesh-size", dest="mesh_size")
    p.add_argument("--newton-tol", dest="newton_tol")

    p = sub.add_parser("punctured", parents=[common],
                       help="isolated-singularity family on the punctured "
                            "ball")
    p.add_argument("--dim")
    p.add_argument("--p", help="power exponent inside the window")
    p.add_argument("--lambdas", help="comma-separated source strengths")
    p.add_argument("--k-boundary", dest="k_boundary")
    p.add_argument("--core-radius", dest="core_radius")
    p.add_argument("--distinct-tol", dest="distinct_tol")
    p.add_argument("--newton-tol", dest="newton_tol")

    p = sub.add_parser("verify-all", parents=[common],
                       help="run the full certification battery")
    p.add_argument("--nl")
    p.add_argument("--dim")
    p.add_argument("--tolerance-scale", dest="tolerance_scale")

    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = _build_parser().parse_args(argv)
    subcommand = args.subcommand
    flag_values = {
        name: getattr(args, name)
        for name in _SCHEMA[subcommand]
        if hasattr(args, name)
    }
    try:
        cfg = resolve_config(subcommand, flag_values,
                             config_path=args.config)
        ok = _HANDLERS[subcommand](cfg)
    except ConfigError as exc:
        print(f"ConfigError: {exc}", file=sys.stderr)
        return 2
    except SolverError as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return 3
    return 0 if ok else 1


if __name__ == "__main__":
    raise SystemExit(main())
