"""
Primal reconstruction, primal-dual gap estimators and the strong convexity
error measures, at the discrete level (CR/RT pairs) and at the continuous
level (conforming P1 functions against a known exact solution).
"""

from dataclasses import dataclass, field
import math

import numpy as np

from .energy import dphi_star, dual_energy_h, phi_star, primal_energy_h
from .errors import FeasibilityError, ParameterError
from .mesh import atomic_write_text, quadrature_rule, triangle_points
from .spaces import CRFunction, cr_gradient, rt_element_mean, rt_eval_points

ACTIVE_TOL = 1e-8
CONTINUOUS_DEGREE = 4


@dataclass(frozen=True)
class GapBreakdown:
    """Gap estimator with per-element contributions and admissibility flags."""

    total: float
    per_element: np.ndarray
    infeasibility_flags: tuple = ()

    @property
    def feasible(self):
        return not self.infeasibility_flags


@dataclass(frozen=True)
class ConvexityMeasures:
    """
    Primal and dual strong convexity measures.

    ``parts`` holds ``gradient`` and ``active`` (the two primal summands)
    and ``hessian`` (the dual one).
    """

    rho_primal_sq: float
    rho_dual_sq: float
    parts: dict = field(default_factory=dict)

    @property
    def total(self):
        return self.rho_primal_sq + self.rho_dual_sq


# ---------------------------------------------------------------------------
# Reconstruction
# ---------------------------------------------------------------------------

def marini_reconstruct(z, lam, data):
    """
    CR function with element means ``lam`` and gradients ``Dphi*(Pi z)``.

    The element-wise affine field ``lam_T + Dphi*(Pi z|_T) . (x - x_T)`` is
    evaluated at the side midpoints; interior dofs average the two traces.

    Returns
    -------
    u : CRFunction
    defect : float
        Largest midpoint trace mismatch over interior sides.
    """
    mesh = data.mesh
    geo = mesh.geometry
    grad = dphi_star(rt_element_mean(z), data.zeta)
    mids = geo.side_midpoint[mesh.element_sides]                  # (NT, 3, 2)
    traces = np.asarray(lam)[:, None] + np.einsum(
        "td,tkd->tk", grad, mids - geo.centroid[:, None, :])
    ns = mesh.n_sides
    total = np.zeros(ns)
    count = np.zeros(ns)
    np.add.at(total, mesh.element_sides.ravel(), traces.ravel())
    np.add.at(count, mesh.element_sides.ravel(), 1.0)
    dofs = total / count

    interior = mesh.side_elements[:, 1] >= 0
    defect = 0.0
    if np.any(interior):
        lo, hi = mesh.side_elements[interior].T
        local = np.argmax(mesh.element_sides[lo] == np.flatnonzero(interior)[:, None], axis=1)
        local_hi = np.argmax(mesh.element_sides[hi] == np.flatnonzero(interior)[:, None], axis=1)
        defect = float(np.max(np.abs(traces[lo, local] - traces[hi, local_hi])))
    return CRFunction(mesh, dofs), defect


# ---------------------------------------------------------------------------
# Discrete estimators
# ---------------------------------------------------------------------------

def _gap_density(grad_v, y_val, zeta):
    return phi_star(y_val, zeta) - np.sum(y_val * grad_v, axis=-1) + 0.5 * np.sum(grad_v ** 2, axis=-1)


def discrete_gap_estimator(v, y, data):
    """
    Element contributions ``|T| (phi*(Pi y) - Pi y . grad v + phi(grad v))``.

    The quadratic branch of ``phi`` is used regardless of the bound; a
    violated primal or dual constraint is reported in the flags.
    """
    geo = data.mesh.geometry
    per = geo.area * _gap_density(cr_gradient(v), rt_element_mean(y), data.zeta)
    flags = primal_energy_h(v, data).violations + dual_energy_h(y, data).violations
    return GapBreakdown(float(per.sum()), per, flags)


def averaged_hessian_form(t, s, zeta, weighted=True):
    """
    ``d . Hbar d`` with ``d = t - s`` and
    ``Hbar = int_0^1 w(l) D^2 phi*(s + l d) dl``.

    With ``weighted=True`` the weight is ``w(l) = 2 (1 - l)``, for which
    ``d . Hbar d / 2`` equals the Bregman distance of ``phi*`` at ``s``;
    otherwise ``w = 1``.

    The segment is split where it crosses ``|p| = zeta``.  Inside the ball
    the Hessian is the identity.  Outside, ``d . D^2 phi*(p) d`` equals
    ``zeta (p x d)^2 / |p|^3`` with the constant cross product ``s x d``,
    which has elementary antiderivatives; every piece is integrated
    exactly.
    """
    t = np.asarray(t, dtype=float)
    s = np.asarray(s, dtype=float)
    d = t - s
    zeta = np.broadcast_to(np.asarray(zeta, dtype=float), t.shape[:-1])
    a = np.sum(d * d, axis=-1)
    b = 2.0 * np.sum(s * d, axis=-1)
    c0 = np.sum(s * s, axis=-1)

    # roots of a l^2 + b l + c0 = zeta^2 inside (0, 1)
    disc = b * b - 4.0 * a * (c0 - zeta ** 2)
    sq = np.sqrt(np.maximum(disc, 0.0))
    safe_a = np.where(a > 0.0, a, 1.0)
    r1 = np.where((a > 0.0) & (disc > 0.0), (-b - sq) / (2.0 * safe_a), 0.0)
    r2 = np.where((a > 0.0) & (disc > 0.0), (-b + sq) / (2.0 * safe_a), 0.0)
    knots = np.stack([np.zeros_like(a), np.clip(r1, 0.0, 1.0), np.clip(r2, 0.0, 1.0),
                      np.ones_like(a)], axis=-1)
    knots.sort(axis=-1)

    def norm_p(lam):
        return np.sqrt(np.maximum(a * lam * lam + b * lam + c0, 0.0))

    def outside_prim(lam):
        # antiderivatives of zeta c^2/|p|^3 and of lam zeta c^2/|p|^3
        n = np.maximum(norm_p(lam), 1e-300)
        f0 = zeta * (2.0 * a * lam + b) / (2.0 * n)
        f1 = -zeta * (b * lam + 2.0 * c0) / (2.0 * n)
        return f0, f1

    total = np.zeros_like(a)
    for i in range(3):
        lo, hi = knots[..., i], knots[..., i + 1]
        mid = 0.5 * (lo + hi)
        inside = norm_p(mid) <= zeta
        if weighted:
            in_val = a * ((2.0 * hi - hi * hi) - (2.0 * lo - lo * lo))
        else:
            in_val = a * (hi - lo)
        f0h, f1h = outside_prim(hi)
        f0l, f1l = outside_prim(lo)
        if weighted:
            out_val = 2.0 * ((f0h - f0l) - (f1h - f1l))
        else:
            out_val = f0h - f0l
        total += np.where(hi > lo, np.where(inside, in_val, out_val), 0.0)
    return total


def bregman_phi_star(t, s, zeta):
    """``phi*(t) - phi*(s) - Dphi*(s) . (t - s)``."""
    t = np.asarray(t, dtype=float)
    s = np.asarray(s, dtype=float)
    return phi_star(t, zeta) - phi_star(s, zeta) - np.sum(dphi_star(s, zeta) * (t - s), axis=-1)


def _primal_measure_parts(grad_v, grad_u, z_val, zeta, active):
    diff = grad_v - grad_u
    gradient = 0.5 * np.sum(diff * diff, axis=-1)
    znorm = np.sqrt(np.sum(z_val * z_val, axis=-1))
    act = (znorm / zeta - 1.0) * (zeta ** 2 - np.sum(grad_u * grad_v, axis=-1))
    return gradient, np.where(active, act, 0.0)


def discrete_convexity_measures(v, y, u_cr, z_rt, data, active_tol=ACTIVE_TOL):
    """
    Strong convexity measures of ``(v, y)`` relative to the discrete
    solution pair ``(u_cr, z_rt)``.

    The primal measure is the gradient distance plus the active-set term on
    ``{|grad_h u_cr| >= zeta (1 - active_tol)}``; the dual measure is half
    the averaged-Hessian quadratic form of ``Pi y - Pi z_rt``.
    """
    geo = data.mesh.geometry
    grad_u = cr_gradient(u_cr)
    mean_z = rt_element_mean(z_rt)
    active = np.linalg.norm(grad_u, axis=1) >= data.zeta * (1.0 - active_tol)
    gradient, act = _primal_measure_parts(cr_gradient(v), grad_u, mean_z, data.zeta, active)
    hess = 0.5 * averaged_hessian_form(rt_element_mean(y), mean_z, data.zeta)
    parts = {
        "gradient": float(np.dot(geo.area, gradient)),
        "active": float(np.dot(geo.area, act)),
        "hessian": float(np.dot(geo.area, hess)),
    }
    return ConvexityMeasures(parts["gradient"] + parts["active"], parts["hessian"], parts)


# ---------------------------------------------------------------------------
# Conforming post-processing and continuous estimators
# ---------------------------------------------------------------------------

class P1Field:
    """Continuous piecewise affine function given by its vertex values."""

    def __init__(self, mesh, values, scale=1.0, boundary_defect=0.0):
        values = np.asarray(values, dtype=float)
        if values.shape != (mesh.n_vertices,):
            raise ParameterError(f"expected {mesh.n_vertices} vertex values")
        self.mesh = mesh
        self.values = values
        self.scale = scale
        self.boundary_defect = boundary_defect

    def gradient(self):
        geo = self.mesh.geometry
        # grad of barycentric coordinate k is -|S_k| n_k / (2|T|)
        coef = -geo.element_side_length / (2.0 * geo.area[:, None])
        vals = self.values[self.mesh.triangles]
        return np.einsum("tk,tk,tkd->td", vals, coef, geo.element_normal)


def p1_gradient_bound_ratio(grad, zeta):
    return float(np.max(np.linalg.norm(grad, axis=1) / zeta))


def conforming_postprocess(u_cr, data, exact_boundary):
    """
    Node-averaged P1 function scaled to satisfy the gradient bound.

    Interior vertex values average the adjacent element traces; boundary
    vertices take ``exact_boundary``.  The result is divided by
    ``max(1, max_T |grad|/zeta_T)``; the change this causes at boundary
    vertices is stored as ``boundary_defect``.
    """
    mesh = u_cr.mesh
    traces = u_cr.vertex_traces()
    total = np.zeros(mesh.n_vertices)
    count = np.zeros(mesh.n_vertices)
    np.add.at(total, mesh.triangles.ravel(), traces.ravel())
    np.add.at(count, mesh.triangles.ravel(), 1.0)
    values = total / count
    bv = mesh.boundary_vertices
    target = np.asarray(exact_boundary(mesh.vertices[bv]), dtype=float)
    values[bv] = target
    raw = P1Field(mesh, values)
    scale = max(1.0, p1_gradient_bound_ratio(raw.gradient(), data.zeta))
    values = values / scale
    defect = float(np.max(np.abs(values[bv] - target))) if bv.size else 0.0
    return P1Field(mesh, values, scale, defect)


def _continuous_setup(v_conf, y, data):
    mesh = data.mesh
    grad_v = v_conf.gradient()
    if np.any(np.linalg.norm(grad_v, axis=1) > data.zeta * (1.0 + 1e-12)):
        raise FeasibilityError("conforming function violates the gradient bound")
    rule = quadrature_rule("triangle", CONTINUOUS_DEGREE)
    pts = triangle_points(mesh, rule)
    y_val = rt_eval_points(y, pts)
    return rule, pts, grad_v, y_val


def continuous_gap_estimator(v_conf, y, data, exact=None, per_element=False):
    """
    ``int phi(grad v) - grad v . y + phi*(y)`` over the mesh domain by the
    degree-4 triangle rule.  ``exact`` is accepted for signature symmetry
    with :func:`continuous_total_error` and is unused.
    """
    rule, pts, grad_v, y_val = _continuous_setup(v_conf, y, data)
    dens = _gap_density(grad_v[:, None, :], y_val, data.zeta[:, None])
    per = data.mesh.geometry.area * (dens @ rule.weights)
    return per if per_element else float(per.sum())


def continuous_total_error(v_conf, y, data, exact, parts=False):
    """
    Strong convexity measures of ``(v_conf, y)`` against the exact solution.

    ``exact`` provides ``grad_u(x)``, ``z(x)`` and ``active(x)`` for points
    of shape ``(N, 2)``.  Integration uses the degree-4 triangle rule.
    """
    rule, pts, grad_v, y_val = _continuous_setup(v_conf, y, data)
    area = data.mesh.geometry.area
    flat = pts.reshape(-1, 2)
    shape = pts.shape[:2]
    grad_u = np.asarray(exact.grad_u(flat)).reshape(shape + (2,))
    z_val = np.asarray(exact.z(flat)).reshape(shape + (2,))
    active = np.asarray(exact.active(flat)).reshape(shape)
    zeta = data.zeta[:, None]
    gradient, act = _primal_measure_parts(grad_v[:, None, :], grad_u, z_val, zeta, active)
    hess = 0.5 * averaged_hessian_form(y_val, z_val, zeta)

    def integrate(q):
        return float(np.dot(area, q @ rule.weights))

    pieces = {"gradient": integrate(gradient), "active": integrate(act),
              "hessian": integrate(hess)}
    total = pieces["gradient"] + pieces["active"] + pieces["hessian"]
    return (total, pieces) if parts else total


# ---------------------------------------------------------------------------
# Rates and exports
# ---------------------------------------------------------------------------

def eoc(errors, hs):
    """Experimental orders of convergence between consecutive entries."""
    errors = [float(e) for e in errors]
    hs = [float(h) for h in hs]
    if len(errors) != len(hs) or len(errors) < 2:
        raise ParameterError("eoc needs two sequences of equal length >= 2")
    if min(errors) <= 0.0 or min(hs) <= 0.0:
        raise ParameterError("eoc needs strictly positive errors and mesh sizes")
    return [(math.log(errors[i]) - math.log(errors[i - 1]))
            / (math.log(hs[i]) - math.log(hs[i - 1])) for i in range(1, len(errors))]


def write_indicators(path, per_element):
    """Write ``element,eta_sq_contribution`` rows."""
    lines = ["element,eta_sq_contribution"]
    lines += [f"{i},{val!r}" for i, val in enumerate(np.asarray(per_element, dtype=float).tolist())]
    atomic_write_text(path, "\n".join(lines) + "\n")
