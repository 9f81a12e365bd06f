"""
The constrained quadratic density, its convex conjugate and the discrete
primal and dual energies.

For a bound ``zeta > 0`` the primal density is ``phi(t) = |t|^2 / 2`` on the
closed ``zeta``-ball and ``+inf`` outside.  Its conjugate is the Huber-type
function

    phi*(s) = |s|^2 / 2            if |s| <= zeta,
              zeta |s| - zeta^2/2  otherwise.

All pointwise functions are vectorized: ``s`` has shape ``(..., 2)`` and
``zeta`` broadcasts against ``s[..., 0]``.
"""

from dataclasses import dataclass

import numpy as np

from .spaces import ProblemData, cr_gradient, rt_divergence, rt_element_mean

__all__ = [
    "EnergyValue", "ProblemData", "KINK_TOL", "phi", "phi_star", "dphi_star",
    "d2phi_star", "flow_weight", "primal_energy_h", "dual_energy_h",
]

KINK_TOL = 1e-12
PRIMAL_TOL = 1e-12
DUAL_TOL = 1e-10


@dataclass(frozen=True)
class EnergyValue:
    """
    Energy value with a feasibility flag.

    ``feasible=False`` stands for ``+inf`` (primal) or ``-inf`` (dual); the
    ``value`` is then meaningless.  ``violations`` names the failed
    constraints.
    """

    value: float
    feasible: bool
    violations: tuple = ()


def _norm(s):
    return np.sqrt(np.sum(np.square(s), axis=-1))


def phi_star(s, zeta):
    s = np.asarray(s, dtype=float)
    r = _norm(s)
    zeta = np.asarray(zeta, dtype=float)
    out = np.where(r <= zeta, 0.5 * r * r, zeta * r - 0.5 * zeta * zeta)
    return out[()] if out.ndim == 0 else out


def phi(t, zeta, tol=0.0):
    """Primal density; ``+inf`` where ``|t| > zeta (1 + tol)``."""
    t = np.asarray(t, dtype=float)
    r = _norm(t)
    out = np.where(r <= np.asarray(zeta) * (1.0 + tol), 0.5 * r * r, np.inf)
    return out[()] if out.ndim == 0 else out


def flow_weight(s, zeta):
    """``min(1, zeta/|s|)``, equal to one at ``s = 0``."""
    r = _norm(np.asarray(s, dtype=float))
    zeta = np.asarray(zeta, dtype=float)
    with np.errstate(divide="ignore"):
        out = np.where(r > zeta, zeta / np.where(r > 0.0, r, 1.0), 1.0)
    return out[()] if out.ndim == 0 else out


def dphi_star(s, zeta):
    """Gradient of ``phi*``: the projection of ``s`` onto the ``zeta``-ball."""
    s = np.asarray(s, dtype=float)
    return flow_weight(s, zeta)[..., None] * s


def d2phi_star(s, zeta, return_flag=False):
    """
    Hessian of ``phi*``.

    Points with ``| |s| - zeta | <= KINK_TOL`` get the inside branch
    (identity); ``return_flag=True`` also returns a boolean mask of them.
    """
    s = np.asarray(s, dtype=float)
    r = _norm(s)
    zeta = np.broadcast_to(np.asarray(zeta, dtype=float), r.shape)
    kink = np.abs(r - zeta) <= KINK_TOL
    outside = (r > zeta) & ~kink
    eye = np.broadcast_to(np.eye(2), r.shape + (2, 2))
    safe = np.where(outside, r, 1.0)
    unit = s / safe[..., None]
    proj = eye - unit[..., :, None] * unit[..., None, :]
    hess = np.where(outside[..., None, None], (zeta / safe)[..., None, None] * proj, eye)
    if return_flag:
        return hess, kink
    return hess


def primal_energy_h(v, data):
    """
    Discrete primal energy
    ``1/2 |grad_h v|^2 - (f_h, Pi v) - (g_h, pi v)_N`` with constraints.
    """
    mesh = data.mesh
    geo = mesh.geometry
    grad = cr_gradient(v)
    violations = []
    if np.any(_norm(grad) > data.zeta * (1.0 + PRIMAL_TOL)):
        violations.append("gradient bound")
    d = mesh.dirichlet_sides
    if np.any(np.abs(v.dofs[d] - data.u_D[d]) > PRIMAL_TOL * (1.0 + np.abs(data.u_D[d]))):
        violations.append("Dirichlet data")
    nn = mesh.neumann_sides
    value = (0.5 * np.dot(geo.area, np.sum(grad * grad, axis=1))
             - np.dot(geo.area, data.f * v.element_mean())
             - np.dot(geo.side_length[nn], data.g[nn] * v.dofs[nn]))
    return EnergyValue(float(value), not violations, tuple(violations))


def dual_energy_h(y, data):
    """
    Discrete dual energy ``-int phi*(Pi y) + (y . n, u_D^h)_D`` with the
    divergence and Neumann flux constraints.
    """
    mesh = data.mesh
    geo = mesh.geometry
    violations = []
    div = rt_divergence(y)
    if np.any(np.abs(div + data.f) > DUAL_TOL * (1.0 + np.abs(data.f))):
        violations.append("divergence")
    nn = mesh.neumann_sides
    if np.any(np.abs(y.dofs[nn] - data.g[nn]) > DUAL_TOL * (1.0 + np.abs(data.g[nn]))):
        violations.append("Neumann flux")
    d = mesh.dirichlet_sides
    value = (-np.dot(geo.area, phi_star(rt_element_mean(y), data.zeta))
             + np.dot(geo.side_length[d], y.dofs[d] * data.u_D[d]))
    return EnergyValue(float(value), not violations, tuple(violations))
