"""
Manufactured elasto-plastic torsion problem on a disk and the a priori /
a posteriori convergence studies built on it.

With load ``f = C``, bound ``zeta = 1`` and zero boundary values on the
circle of radius ``r``, the exact solution is radial: a paraboloid when
``C <= 2/r`` and otherwise a cone ``r - |x|`` outside the radius ``2/C``
glued to a paraboloid inside.  The dual solution is ``z = -C x / 2``.
"""

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
import csv
import io
import math

import numpy as np

from .dual_solver import FlowParams, run_flow
from .duality import (conforming_postprocess, continuous_gap_estimator, continuous_total_error,
                      discrete_convexity_measures, discrete_gap_estimator, eoc, marini_reconstruct)
from .errors import NonConvergenceError, ParameterError
from .mesh import MAX_DISK_LEVEL, atomic_write_text, build_disk_mesh
from .spaces import cr_gradient, cr_interpolate, project_data, rt_element_mean, rt_interpolate

CSV_COLUMNS = ["level", "h", "N", "e_tot", "e_gap", "eoc_tot", "eoc_gap", "identity_gap"]


@dataclass(frozen=True)
class ManufacturedCase:
    """Load constant ``C`` and disk radius ``r``."""

    C: float
    r: float = 1.0

    def __post_init__(self):
        for name in ("C", "r"):
            val = getattr(self, name)
            if not (isinstance(val, (int, float)) and math.isfinite(val) and val > 0):
                raise ParameterError(f"{name} must be a positive number, got {val!r}")

    @property
    def inactive(self):
        return self.C <= 2.0 / self.r

    @property
    def kink_radius(self):
        return math.inf if self.inactive else 2.0 / self.C

    def u(self, x):
        x = np.asarray(x, dtype=float)
        rad = np.linalg.norm(x, axis=-1)
        C, r = self.C, self.r
        if self.inactive:
            return C / 4.0 * (r * r - rad * rad)
        return np.where(rad >= 2.0 / C, r - rad, -C / 4.0 * rad * rad + r - 1.0 / C)

    def grad_u(self, x):
        x = np.asarray(x, dtype=float)
        rad = np.linalg.norm(x, axis=-1)[..., None]
        inner = -self.C / 2.0 * x
        if self.inactive:
            return inner
        outer = -x / np.where(rad > 0.0, rad, 1.0)
        return np.where(rad >= 2.0 / self.C, outer, inner)

    def z(self, x):
        return -self.C / 2.0 * np.asarray(x, dtype=float)

    def active(self, x):
        rad = np.linalg.norm(np.asarray(x, dtype=float), axis=-1)
        return rad >= self.kink_radius

    def data(self, mesh):
        return project_data(self.C, 0.0, self.u, 1.0, mesh)


def exact_solution(case):
    """``(u, grad_u, z)`` callables of the manufactured solution."""
    return case.u, case.grad_u, case.z


def default_study_flow():
    return FlowParams(tau=1.0, eps_stop=1e-8, max_iter=10000, warm_start=True)


@dataclass(frozen=True)
class StudyConfig:
    case: ManufacturedCase
    levels: tuple = (1, 2, 3, 4, 5)
    flow: FlowParams = field(default_factory=default_study_flow)
    study: str = "apriori"
    out: str = None
    jobs: int = 1

    def __post_init__(self):
        levels = tuple(int(v) for v in self.levels)
        if not levels:
            raise ParameterError("at least one level is required")
        if any(b <= a for a, b in zip(levels, levels[1:])):
            raise ParameterError("levels must be strictly increasing")
        if levels[0] < 0 or levels[-1] > MAX_DISK_LEVEL:
            raise ParameterError(f"levels must lie in [0, {MAX_DISK_LEVEL}]")
        if self.study not in ("apriori", "aposteriori"):
            raise ParameterError(f"unknown study {self.study!r}")
        if int(self.jobs) < 1:
            raise ParameterError("jobs must be a positive integer")
        object.__setattr__(self, "levels", levels)

    @classmethod
    def from_dict(cls, raw):
        """Build from the JSON schema ``{case, levels, flow, study, out}``."""
        case = raw.get("case", {})
        flow = dict(raw.get("flow", {}))
        params = default_study_flow()
        mapping = {"tau": "tau", "eps_stop": "eps_stop", "max_iter": "max_iter",
                   "linear_tol": "linear_tol", "warm_start": "warm_start"}
        unknown = set(flow) - set(mapping)
        if unknown:
            raise ParameterError(f"unknown flow options {sorted(unknown)}")
        params = replace(params, **{mapping[k]: v for k, v in flow.items()})
        kwargs = {}
        for key in ("levels", "study", "out", "jobs"):
            if key in raw:
                kwargs[key] = raw[key]
        return cls(ManufacturedCase(float(case.get("C", 10.0)), float(case.get("r", 1.0))),
                   flow=params, **kwargs)


class ConvergenceTable:
    """Per-level errors with EOC columns and extra diagnostics per row."""

    def __init__(self, rows):
        self.rows = [dict(r) for r in rows]
        hs = [r["h"] for r in self.rows]
        if any(b >= a for a, b in zip(hs, hs[1:])):
            raise ParameterError("mesh sizes must decrease down the table")
        for key in ("tot", "gap"):
            col = [r[f"e_{key}"] for r in self.rows]
            rates = [None] * len(col)
            if len(col) >= 2 and min(col) > 0:
                rates[1:] = eoc(col, hs)
            for r, val in zip(self.rows, rates):
                r[f"eoc_{key}"] = val
        for r in self.rows:
            r["identity_gap"] = (abs(r["e_tot"] - r["e_gap"]) / r["e_gap"]
                                 if r["e_gap"] > 0 else abs(r["e_tot"] - r["e_gap"]))

    def column(self, name):
        return [r[name] for r in self.rows]

    def mean_eoc(self, name, last=3):
        vals = [v for v in self.column(name) if v is not None][-last:]
        return float(np.mean(vals))

    def to_csv(self):
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        for r in self.rows:
            writer.writerow(["" if r[c] is None else (repr(r[c]) if isinstance(r[c], float) else r[c])
                             for c in CSV_COLUMNS])
        return buf.getvalue()

    def write_csv(self, path):
        atomic_write_text(path, self.to_csv())


def _flow_or_raise(data, params, level):
    try:
        return run_flow(data, params)
    except NonConvergenceError as exc:
        raise NonConvergenceError(f"level {level}: {exc}", exc.report) from exc


def apriori_level(case, level, flow):
    """One row of the a priori study."""
    mesh = build_disk_mesh(case.r, level)
    data = case.data(mesh)
    u_int = cr_interpolate(case.u, mesh)
    z_int = rt_interpolate(case.z, mesh)
    gap = discrete_gap_estimator(u_int, z_int, data)
    report = _flow_or_raise(data, flow, level)
    u_h, defect = marini_reconstruct(report.z, report.lam, data)
    measures = discrete_convexity_measures(u_int, z_int, u_h, report.z, data)
    return {
        "level": level, "h": mesh.h, "N": mesh.n_sides + mesh.n_elements,
        "e_tot": measures.total, "e_gap": gap.total,
        "iterations": report.iterations, "residual_norm": report.residual_norm,
        "conformity_defect": defect, "flags": gap.infeasibility_flags,
        "dual_energy_history": report.dual_energy_history,
        "step_norm_history": report.step_norm_history,
    }


def aposteriori_level(case, level, flow):
    """One row of the a posteriori study."""
    mesh = build_disk_mesh(case.r, level)
    data = case.data(mesh)
    report = _flow_or_raise(data, flow, level)
    u_h, defect = marini_reconstruct(report.z, report.lam, data)
    v = conforming_postprocess(u_h, data, case.u)
    e_gap = continuous_gap_estimator(v, report.z, data, case)
    e_tot, parts = continuous_total_error(v, report.z, data, case, parts=True)
    return {
        "level": level, "h": mesh.h, "N": mesh.n_sides + mesh.n_elements,
        "e_tot": e_tot, "e_gap": e_gap, "eta_gap_B": 0.0,
        "iterations": report.iterations, "residual_norm": report.residual_norm,
        "conformity_defect": defect, "scale": v.scale, "boundary_defect": v.boundary_defect,
        "parts": parts,
        "dual_energy_history": report.dual_energy_history,
        "step_norm_history": report.step_norm_history,
    }


def _run(level_fn, config):
    args = [(config.case, lv, config.flow) for lv in config.levels]
    if config.jobs > 1 and len(args) > 1:
        with ProcessPoolExecutor(max_workers=int(config.jobs)) as pool:
            rows = list(pool.map(level_fn, *zip(*args)))
    else:
        rows = [level_fn(*a) for a in args]
    table = ConvergenceTable(rows)
    if config.out:
        table.write_csv(config.out)
    return table


def run_apriori_study(config):
    """Errors of the interpolated exact pair against the discrete solution."""
    return _run(apriori_level, config)


def run_aposteriori_study(config):
    """Continuous errors of the post-processed discrete solution."""
    return _run(aposteriori_level, config)


def run_study(config):
    return run_apriori_study(config) if config.study == "apriori" else run_aposteriori_study(config)


def active_set_report(u_cr, z_rt, data, tol=1e-6):
    """Element counts of the primal and dual active sets and their disagreement."""
    primal = np.linalg.norm(cr_gradient(u_cr), axis=1) >= data.zeta * (1.0 - tol)
    dual = np.linalg.norm(rt_element_mean(z_rt), axis=1) >= data.zeta * (1.0 - tol)
    return {"n_active_primal": int(primal.sum()), "n_active_dual": int(dual.sum()),
            "n_disagree": int(np.sum(primal != dual)), "n_elements": int(len(primal))}
