"""CSV and JSON emission for solver artifacts.

Every CSV cell is printed with ``%.17e`` so a float64 round-trips exactly
and two runs with the same configuration produce byte-identical files.
Each CSV gets a JSON sidecar (same stem, ``.json``) carrying the
generating configuration, solver metadata, and the library version; the
sidecars contain no timestamps or other volatile fields, so they are
byte-identical across reruns as well.  JSON is written with sorted keys
and a trailing newline.  Non-finite floats are encoded as strings
("inf", "-inf", "nan") because strict JSON has no literal for them.
"""

from __future__ import annotations

import json
import math
import os
from typing import Any, Mapping, Sequence

import numpy as np

from .errors import ConfigError
from .inverse import InverseProfile, PairReport
from .layer import LayerSolution, MonotoneLimitReport, check_p_function
from .multiplicity import NonuniquenessReport, PuncturedSolution
from .nonlinearity import KOReport
from .shooting import ATOL, RESID_TOL, RTOL, Profile

try:  # editable installs expose the distribution version
    from importlib.metadata import version as _dist_version

    LIBRARY_VERSION = _dist_version("blowup-lab")
except Exception:  # pragma: no cover - fallback for source checkouts
    LIBRARY_VERSION = "0.1.0"

__all__ = [
    "LIBRARY_VERSION",
    "inverse_csv",
    "ko_report_json",
    "layer_csv",
    "pair_report_json",
    "punctured_csv",
    "punctured_family_json",
    "profile_csv",
    "sweep_summary_json",
    "write_json",
]

_CELL = "%.17e"


def _jsonable(value: Any) -> Any:
    """Recursively convert to something json.dump can serialize losslessly."""
    if isinstance(value, (np.floating, float)):
        v = float(value)
        if math.isfinite(v):
            return v
        return "nan" if math.isnan(v) else ("inf" if v > 0 else "-inf")
    if isinstance(value, (np.integer, int)):
        return int(value)
    if isinstance(value, (np.bool_, bool)):
        return bool(value)
    if isinstance(value, np.ndarray):
        return [_jsonable(x) for x in value.tolist()]
    if isinstance(value, Mapping):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    return value


def write_json(path: str, payload: Mapping[str, Any]) -> None:
    """Write a sorted-key JSON document with the library version stamped in."""
    doc = dict(payload)
    doc.setdefault("library_version", LIBRARY_VERSION)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(_jsonable(doc), fh, sort_keys=True, indent=2)
        fh.write("\n")


def _write_csv(path: str, header: Sequence[str], columns: Sequence[np.ndarray]) -> None:
    cols = [np.asarray(c, dtype=float) for c in columns]
    n = cols[0].size
    if any(c.size != n for c in cols):
        raise ConfigError("csv columns must share a length")
    # newline="" + explicit \n keeps output identical across platforms
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(",".join(header) + "\n")
        for i in range(n):
            fh.write(",".join(_CELL % c[i] for c in cols) + "\n")


def _sidecar_path(csv_path: str) -> str:
    stem, _ = os.path.splitext(csv_path)
    return stem + ".json"


def _base_meta(config: Mapping[str, Any] | None) -> dict[str, Any]:
    return {"config": dict(config) if config else {}}


def profile_csv(profile: Profile, path: str,
                config: Mapping[str, Any] | None = None) -> str:
    """Write a radial profile as ``r,u,du_dr`` plus its sidecar.

    Returns the sidecar path.
    """
    _write_csv(path, ("r", "u", "du_dr"),
               (profile.r, profile.u, profile.du_dr))
    meta = _base_meta(config)
    meta.update(
        artifact="radial_profile",
        dim_N=profile.dim_N,
        nl_id=profile.nl_id,
        center_value_alpha=profile.center_value_alpha,
        blowup_radius=profile.blowup_radius,
        u_cap=profile.u_cap,
        mesh_note=profile.mesh_note,
        tolerances={"rtol": RTOL, "atol": ATOL, "residual": RESID_TOL},
    )
    side = _sidecar_path(path)
    write_json(side, meta)
    return side


def inverse_csv(ip: InverseProfile, path: str,
                config: Mapping[str, Any] | None = None) -> str:
    """Write an inverse-variable profile as ``u,r,V`` plus its sidecar."""
    _write_csv(path, ("u", "r", "V"), (ip.u_grid, ip.r_of_u, ip.V_of_u))
    meta = _base_meta(config)
    meta.update(
        artifact="inverse_profile",
        dim_N=ip.dim_N,
        nl_id=ip.nl_id,
        source=ip.source,
        psi_top=ip.psi_top,
        u_top=ip.u_top,
        u_bottom=ip.u_bottom,
    )
    side = _sidecar_path(path)
    write_json(side, meta)
    return side


def pair_report_json(rep: PairReport, path: str,
                     config: Mapping[str, Any] | None = None) -> None:
    """Serialize a two-route comparison with all of its margins."""
    meta = _base_meta(config)
    meta.update(
        artifact="inverse_pair_report",
        u0_hat=rep.u0_hat,
        ordering_ok=rep.ordering_ok,
        w_sup=rep.w_sup,
        gap_limit=rep.gap_limit,
        u_common=rep.u_common,
        w_of_u=rep.w_of_u,
        w_noise_of_u=rep.w_noise_of_u,
        gap_radii=rep.gap_radii,
        gap_values=rep.gap_values,
    )
    write_json(path, meta)


def layer_csv(sol: LayerSolution, path: str,
              config: Mapping[str, Any] | None = None) -> str:
    """Write a boundary-layer solve as ``r,u,P`` plus its sidecar."""
    _write_csv(path, ("r", "u", "P"), (sol.mesh, sol.u, sol.P))
    lp = sol.problem
    meta = _base_meta(config)
    meta.update(
        artifact="layer_solution",
        dim_N=lp.dim_N,
        nl_id=lp.nl.id,
        eps=lp.eps,
        inner_datum_g=lp.inner_datum_g,
        boundary_value_N=lp.boundary_value_N,
        outer_radius=lp.outer_radius,
        M_N=sol.M_N,
        newton_iters=sol.newton_iters,
        residual_sup=sol.residual_sup,
        mesh_size=int(sol.mesh.size),
    )
    side = _sidecar_path(path)
    write_json(side, meta)
    return side


def sweep_summary_json(report: MonotoneLimitReport, path: str,
                       config: Mapping[str, Any] | None = None) -> None:
    """Summary of a monotone boundary-value sweep.

    Per member: boundary value, gradient-bound energy, trusted maximum of
    the gradient functional.  Sweep-wide: probe increments, their scaled
    ratios, and the extrapolated limits.
    """
    members = []
    for n_k, sol in zip(report.boundary_values, report.solutions):
        p_rep = check_p_function(sol)
        members.append({
            "boundary_value": n_k,
            "M_N": sol.M_N,
            "p_max": p_rep.p_max,
            "p_ok": p_rep.ok,
            "newton_iters": sol.newton_iters,
            "residual_sup": sol.residual_sup,
        })
    meta = _base_meta(config)
    meta.update(
        artifact="monotone_sweep_summary",
        members=members,
        probe_radii=report.probe_radii,
        probe_values=report.probe_values,
        increments=report.increments,
        psi_scales=report.psi_scales,
        ratios=report.ratios,
        ratio_spread=report.ratio_spread,
        limit_values=report.limit_values,
    )
    write_json(path, meta)


def punctured_csv(sol: PuncturedSolution, path: str,
                  config: Mapping[str, Any] | None = None) -> str:
    """Write a punctured-ball solution as ``r,u`` plus its sidecar."""
    _write_csv(path, ("r", "u"), (sol.mesh, sol.u))
    meta = _base_meta(config)
    meta.update(
        artifact="punctured_solution",
        dim_N=sol.dim_N,
        p_exponent=sol.p_exponent,
        lam=sol.lam,
        singularity_type=sol.singularity_type,
        origin_strength=sol.origin_strength,
        fitted_exponent=sol.fitted_exponent,
        residual_sup=sol.residual_sup,
        iterations=sol.iterations,
    )
    side = _sidecar_path(path)
    write_json(side, meta)
    return side


def punctured_family_json(report: NonuniquenessReport, path: str,
                          config: Mapping[str, Any] | None = None) -> None:
    """Family summary: origin data per member plus pairwise separations."""
    members = []
    for sol in report.solutions:
        members.append({
            "lam": sol.lam,
            "singularity_type": sol.singularity_type,
            "origin_strength": sol.origin_strength,
            "fitted_exponent": sol.fitted_exponent,
            "residual_sup": sol.residual_sup,
        })
    meta = _base_meta(config)
    meta.update(
        artifact="punctured_family_summary",
        members=members,
        probe_radii=report.probe_radii,
        pairwise_sup_distances=report.distances,
        distinct_ok=report.distinct_ok,
        distinct_tol=report.distinct_tol,
        ordered_ok=report.ordered_ok,
        strong_dominates_ok=report.strong_dominates_ok,
        boundary_match_sup=report.boundary_match_sup,
        boundary_match_ok=report.boundary_match_ok,
    )
    write_json(path, meta)


def ko_report_json(rep: KOReport, path: str,
                   config: Mapping[str, Any] | None = None) -> None:
    """Serialize a growth-condition decision."""
    meta = _base_meta(config)
    meta.update(
        artifact="growth_condition_report",
        satisfied=rep.satisfied,
        t0=rep.t0,
        tail_value=rep.tail_value,
        divergence_witness=rep.divergence_witness,
        doubling_heights=rep.doubling_heights,
        doubling_exponents=rep.doubling_exponents,
        t_cut=rep.t_cut,
        tail_bound=rep.tail_bound,
        err_estimate=rep.err_estimate,
        certificate=rep.certificate,
    )
    write_json(path, meta)
