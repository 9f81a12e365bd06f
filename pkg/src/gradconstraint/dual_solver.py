"""
Semi-implicit L2 gradient flow for the discrete dual problem.

Each step freezes the weight ``w = min(1, zeta/|Pi z|)`` at the previous
iterate and solves the linear saddle-point problem

    ((z - z_prev)/tau + w Pi z, Pi y) + (lam, div y) = (y . n, u_D)_D
    (div z, eta) = -(f, eta)

for all free RT test fields ``y`` and element-wise constants ``eta``.  The
multiplier ``lam`` converges to the element means of the discrete primal
solution.  Neumann dofs are fixed to the flux data and eliminated.
"""

from dataclasses import dataclass, field
import logging
import weakref

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .energy import d2phi_star, dphi_star, dual_energy_h, flow_weight
from .errors import NonConvergenceError, ParameterError, SolverError
from .spaces import RTFunction, operators, rt_element_mean

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class FlowParams:
    """
    Step size, stopping tolerance, iteration cap and linear-solve tolerance.

    With ``warm_start`` the flow starts from :func:`newton_solve` instead
    of :func:`initial_iterate`.
    """

    tau: float = 1.0
    eps_stop: float = 1e-4
    max_iter: int = 10000
    linear_tol: float = 1e-10
    warm_start: bool = False

    def __post_init__(self):
        for name in ("tau", "eps_stop", "linear_tol"):
            val = getattr(self, name)
            if not (np.isfinite(val) and val > 0):
                raise ParameterError(f"{name} must be a positive number, got {val!r}")
        if int(self.max_iter) != self.max_iter or self.max_iter < 1:
            raise ParameterError(f"max_iter must be a positive integer, got {self.max_iter!r}")


@dataclass
class SaddleSystem:
    """
    Block system ``[[A, B^T], [B, 0]] [z; lam] = [b; c]`` over the free RT
    dofs and the elements.  ``B`` is the area-weighted divergence so that
    the block matrix is symmetric.
    """

    A: sp.csr_matrix
    B: sp.csr_matrix
    rhs_momentum: np.ndarray
    rhs_constraint: np.ndarray
    free: np.ndarray
    fixed_values: np.ndarray
    linear_tol: float = 1e-10

    def block_matrix(self):
        return sp.bmat([[self.A, self.B.T], [self.B, None]], format="csc")

    def block_rhs(self):
        return np.concatenate([self.rhs_momentum, self.rhs_constraint])


@dataclass
class FlowReport:
    """Outcome of :func:`run_flow`; histories include the initial iterate."""

    z: RTFunction
    lam: np.ndarray
    iterations: int
    residual_norm: float
    converged: bool
    dual_energy_history: list = field(default_factory=list)
    step_norm_history: list = field(default_factory=list)
    residual_history: list = field(default_factory=list)
    min_weight_history: list = field(default_factory=list)
    tau: float = 1.0


class _MeshSolverCache:
    """Per-mesh assembly helpers reused across flow steps."""

    def __init__(self, mesh):
        ops = operators(mesh)
        geo = mesh.geometry
        self.free = np.flatnonzero(mesh.side_label != 2)
        self.fixed = mesh.neumann_sides
        self.mean_x = ops.rt_mean_x.tocsc()
        self.mean_y = ops.rt_mean_y.tocsc()
        self.area = geo.area
        # area-weighted divergence: (div y, eta) = eta^T B y
        self.B_full = sp.diags(geo.area) @ ops.rt_div
        self.B_free = self.B_full[:, self.free].tocsr()
        self.B_fixed = self.B_full[:, self.fixed].tocsr()
        # Dirichlet load (y . n, u_D)_D for basis fields with unit flux
        self.length = geo.side_length
        self.dirichlet = mesh.dirichlet_sides
        self._mass_lu = None
        self.mass = ops.rt_mass

    def weighted_mean_gram(self, coef):
        """
        ``sum_T |T| K_T Pi psi_S . Pi psi_S'`` over all dofs, where ``K_T``
        is ``coef_T`` times the identity or the 2x2 matrix ``coef[T]``.
        """
        coef = np.asarray(coef, dtype=float)
        if coef.ndim == 1:
            d = sp.diags(self.area * coef)
            return (self.mean_x.T @ d @ self.mean_x + self.mean_y.T @ d @ self.mean_y).tocsr()
        mx, my = self.mean_x, self.mean_y
        a = self.area

        def diag(i, j):
            return sp.diags(a * coef[:, i, j])
        return (mx.T @ diag(0, 0) @ mx + mx.T @ diag(0, 1) @ my
                + my.T @ diag(1, 0) @ mx + my.T @ diag(1, 1) @ my).tocsr()

    def mean_pairing(self, coef, vec):
        """``sum_T |T| coef_T vec_T . Pi psi_S`` for every dof S."""
        wv = (self.area * coef)[:, None] * vec
        return self.mean_x.T @ wv[:, 0] + self.mean_y.T @ wv[:, 1]

    def dirichlet_load(self, u_D):
        load = np.zeros(len(self.length))
        load[self.dirichlet] = self.length[self.dirichlet] * u_D[self.dirichlet]
        return load

    def mass_solve(self, rhs):
        if self._mass_lu is None:
            m = self.mass[self.free][:, self.free].tocsc()
            try:
                self._mass_lu = spla.splu(m)
            except RuntimeError as exc:
                raise SolverError(f"RT mass matrix factorization failed: {exc}") from exc
        return self._mass_lu.solve(rhs)


_CACHE = weakref.WeakKeyDictionary()


def _cache(mesh):
    c = _CACHE.get(mesh)
    if c is None:
        c = _MeshSolverCache(mesh)
        _CACHE[mesh] = c
    return c


def _build_system(data, coef, extra_momentum, linear_tol):
    c = _cache(data.mesh)
    full = c.weighted_mean_gram(coef)
    g = data.g[c.fixed]
    A = full[c.free][:, c.free]
    b = c.dirichlet_load(data.u_D) + extra_momentum
    b = b[c.free] - full[c.free][:, c.fixed] @ g
    rhs_c = -c.area * data.f - c.B_fixed @ g
    return SaddleSystem(A.tocsr(), c.B_free, b, rhs_c, c.free, g, linear_tol)


def assemble_step(data, z_prev, tau, linear_tol=1e-10):
    """Saddle system of one flow step from the previous iterate ``z_prev``."""
    if not tau > 0:
        raise ParameterError("tau must be positive")
    c = _cache(data.mesh)
    mean_prev = rt_element_mean(z_prev)
    w = flow_weight(mean_prev, data.zeta)
    coef = 1.0 / tau + w
    extra = c.mean_pairing(np.full(len(w), 1.0 / tau), mean_prev)
    return _build_system(data, coef, extra, linear_tol)


def solve_saddle(system):
    """
    Direct sparse LU solve of the block system.

    Up to three steps of iterative refinement are applied if the relative
    residual exceeds ``system.linear_tol``.

    Returns
    -------
    z_free : ndarray
        Free RT dofs.
    lam : ndarray
        Element multipliers.
    """
    K = system.block_matrix()
    rhs = system.block_rhs()
    scale = np.linalg.norm(rhs)
    n = system.A.shape[0]
    if scale == 0.0:
        return np.zeros(n), np.zeros(K.shape[0] - n)
    try:
        lu = spla.splu(K)
    except RuntimeError as exc:
        raise SolverError(f"saddle factorization failed: {exc}") from exc
    x = lu.solve(rhs)
    rel = np.linalg.norm(K @ x - rhs) / scale
    for _ in range(3):
        if rel <= system.linear_tol:
            break
        x += lu.solve(rhs - K @ x)
        rel = np.linalg.norm(K @ x - rhs) / scale
    if not np.isfinite(rel) or rel > system.linear_tol:
        raise SolverError(f"saddle solve relative residual {rel:.3e} exceeds {system.linear_tol:.1e}")
    return x[:n], x[n:]


def _expand(data, system, z_free):
    dofs = np.empty(data.mesh.n_sides)
    dofs[system.free] = z_free
    dofs[data.mesh.neumann_sides] = system.fixed_values
    return RTFunction(data.mesh, dofs)


def initial_iterate(data, linear_tol=1e-10):
    """Solution of the linear problem with unit weight and no time derivative."""
    ones = np.ones(data.mesh.n_elements)
    system = _build_system(data, ones, 0.0, linear_tol)
    z_free, lam = solve_saddle(system)
    return _expand(data, system, z_free), lam


def residual_functional(data, z, lam):
    """
    Free-dof values of ``y -> (y . n, u_D)_D - (w Pi z, Pi y) - (lam, div y)``
    evaluated on the RT basis.
    """
    c = _cache(data.mesh)
    mean = rt_element_mean(z)
    w = flow_weight(mean, data.zeta)
    F = c.dirichlet_load(data.u_D) - c.mean_pairing(w, mean) - c.B_full.T @ lam
    return F[c.free]


def residual_norm(data, z, lam):
    """L2 norm of the Riesz representative of :func:`residual_functional`."""
    F = residual_functional(data, z, lam)
    r = _cache(data.mesh).mass_solve(F)
    return float(np.sqrt(max(np.dot(F, r), 0.0)))


@dataclass
class NewtonReport:
    z: RTFunction
    lam: np.ndarray
    iterations: int
    residual_norm: float
    converged: bool
    residual_history: list = field(default_factory=list)


def newton_solve(data, tol=1e-11, max_iter=60, linear_tol=1e-10):
    """
    Proximal Newton iteration for the discrete dual problem.

    Each step linearizes ``Dphi*`` at the current element means and adds a
    proximal term ``delta |Pi (z - z_prev)|^2 / 2`` that keeps the system
    nonsingular where the Hessian is rank deficient:

        (Dphi*(s) + (H(s) + delta)(Pi z - s), Pi y) + (lam, div y) = (y . n, u_D)_D

    ``delta`` shrinks with the residual (and grows again on a stall), which
    yields fast local convergence.  Every iterate satisfies the divergence
    and Neumann constraints.  The iteration starts from
    :func:`initial_iterate`.
    """
    z, lam = initial_iterate(data, linear_tol)
    res = residual_norm(data, z, lam)
    report = NewtonReport(z, lam, 0, res, res <= tol, [res])
    delta = 1.0
    best = res
    stall = 0
    for k in range(1, max_iter + 1):
        if res <= tol:
            break
        mean = rt_element_mean(z)
        K = d2phi_star(mean, data.zeta) + delta * np.eye(2)
        shift = dphi_star(mean, data.zeta) - np.einsum("tij,tj->ti", K, mean)
        extra = -_cache(data.mesh).mean_pairing(np.ones(len(mean)), shift)
        system = _build_system(data, K, extra, linear_tol)
        z_free, lam_new = solve_saddle(system)
        z_new = _expand(data, system, z_free)
        res_new = residual_norm(data, z_new, lam_new)
        report.residual_history.append(res_new)
        log.info("newton step %d: delta %.1e residual %.3e", k, delta, res_new)
        if res_new < 0.5 * best:
            stall = 0
        else:
            stall += 1
        if res_new < 2.0 * best:
            z, lam, res = z_new, lam_new, res_new
            best = min(best, res)
            delta = max(min(delta, 10.0 * res), 1e-10)
        else:
            delta = min(10.0 * delta, 1e6)
        report.iterations = k
        if stall >= 4:
            break
    report.z, report.lam, report.residual_norm = z, lam, res
    report.converged = res <= tol
    return report


def run_flow(data, params=FlowParams(), z0=None, lam0=None, raise_on_failure=True):
    """
    Run the gradient flow until the residual norm drops below
    ``params.eps_stop``.

    Raises
    ------
    NonConvergenceError
        If ``max_iter`` steps do not reach the tolerance; the partial
        :class:`FlowReport` is attached as ``report``.
    """
    if z0 is None and params.warm_start:
        nr = newton_solve(data, tol=max(1e-3 * params.eps_stop, 1e-12),
                          linear_tol=params.linear_tol)
        z0, lam0 = nr.z, nr.lam
    elif z0 is None:
        z0, lam0 = initial_iterate(data, params.linear_tol)
    c = _cache(data.mesh)
    z, lam = z0, lam0
    mean = rt_element_mean(z)
    report = FlowReport(z, lam, 0, np.inf, False, tau=params.tau)
    report.dual_energy_history.append(dual_energy_h(z, data).value)
    res = np.inf
    for k in range(1, int(params.max_iter) + 1):
        w = flow_weight(mean, data.zeta)
        coef = 1.0 / params.tau + w
        extra = c.mean_pairing(np.full(len(w), 1.0 / params.tau), mean)
        system = _build_system(data, coef, extra, params.linear_tol)
        z_free, lam = solve_saddle(system)
        z = _expand(data, system, z_free)
        new_mean = rt_element_mean(z)
        step = (new_mean - mean) / params.tau
        mean = new_mean
        res = residual_norm(data, z, lam)
        report.dual_energy_history.append(dual_energy_h(z, data).value)
        report.step_norm_history.append(float(np.sqrt(np.dot(c.area, np.sum(step * step, axis=1)))))
        report.residual_history.append(res)
        report.min_weight_history.append(float(w.min()))
        log.info("flow step %d: residual %.3e", k, res)
        if res <= params.eps_stop:
            break
    report.z, report.lam, report.iterations, report.residual_norm = z, lam, k, res
    report.converged = res <= params.eps_stop
    if not report.converged and raise_on_failure:
        raise NonConvergenceError(
            f"flow did not reach residual {params.eps_stop:.1e} in {k} steps (last {res:.3e})",
            report)
    return report
