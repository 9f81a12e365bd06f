"""
Crouzeix-Raviart, lowest-order Raviart-Thomas and element-wise constant
fields on a :class:`~gradconstraint.mesh.Mesh`.

Element-wise constant fields are plain numpy arrays: shape ``(NT,)`` for
scalars and ``(NT, 2)`` for vectors.  Side data are arrays of shape
``(NS,)`` whose entries off the declared label set are zero.

CR fields carry one dof per side, the side mean.  On a triangle with
barycentric coordinates ``l_i`` the local basis function of side ``i`` is
``1 - 2 l_i``.

RT fields carry one dof per side, the constant normal flux ``y . n_S``
against the global side normal.  On a triangle ``T`` with vertices ``P_i``
the field reads ``sum_i s_i y_i |S_i| / (2 |T|) (x - P_i)`` where ``s_i`` is
``+1`` if ``n_S`` is the outward normal of ``T`` on side ``i``.
"""

from dataclasses import dataclass
import csv
import io
import weakref

import numpy as np
import scipy.sparse as sp

from .errors import DataError, ParameterError
from .mesh import SideLabel, atomic_write_text, quadrature_rule, side_points, triangle_points

INTERP_DEGREE = 4


class CRFunction:
    """Crouzeix-Raviart function given by its side means."""

    def __init__(self, mesh, dofs):
        dofs = np.asarray(dofs, dtype=float)
        if dofs.shape != (mesh.n_sides,):
            raise ParameterError(f"expected {mesh.n_sides} CR dofs, got shape {dofs.shape}")
        self.mesh = mesh
        self.dofs = dofs

    def gradient(self):
        return cr_gradient(self)

    def element_mean(self):
        return self.dofs[self.mesh.element_sides].mean(axis=1)

    def vertex_traces(self):
        """Values of the element-wise affine field at the triangle vertices, (NT, 3)."""
        m = self.dofs[self.mesh.element_sides]
        return m.sum(axis=1)[:, None] - 2.0 * m

    def eval(self, element, x):
        lam = self.mesh.locate(element, x)
        return float(np.dot(self.dofs[self.mesh.element_sides[element]], 1.0 - 2.0 * lam))

    def copy(self):
        return CRFunction(self.mesh, self.dofs.copy())


class RTFunction:
    """Lowest-order Raviart-Thomas field given by its normal fluxes."""

    def __init__(self, mesh, dofs):
        dofs = np.asarray(dofs, dtype=float)
        if dofs.shape != (mesh.n_sides,):
            raise ParameterError(f"expected {mesh.n_sides} RT dofs, got shape {dofs.shape}")
        self.mesh = mesh
        self.dofs = dofs

    def divergence(self):
        return rt_divergence(self)

    def element_mean(self):
        return rt_element_mean(self)

    def eval(self, element, x):
        return rt_eval(self, element, x)

    def copy(self):
        return RTFunction(self.mesh, self.dofs.copy())


@dataclass(frozen=True)
class ProblemData:
    """
    Discrete problem data.

    Attributes
    ----------
    mesh : Mesh
    zeta : ndarray, shape (NT,)
        Element-wise gradient bound, strictly positive.
    f : ndarray, shape (NT,)
        Element-wise load.
    g : ndarray, shape (NS,)
        Neumann flux on Neumann sides, zero elsewhere.
    u_D : ndarray, shape (NS,)
        Dirichlet side means on Dirichlet sides, zero elsewhere.
    """

    mesh: object
    zeta: np.ndarray
    f: np.ndarray
    g: np.ndarray
    u_D: np.ndarray

    def __post_init__(self):
        nt, ns = self.mesh.n_elements, self.mesh.n_sides
        for name, n in (("zeta", nt), ("f", nt), ("g", ns), ("u_D", ns)):
            arr = np.asarray(getattr(self, name), dtype=float)
            if arr.shape != (n,):
                raise DataError(f"{name} must have shape ({n},), got {arr.shape}")
            if not np.all(np.isfinite(arr)):
                raise DataError(f"{name} contains non-finite values")
            object.__setattr__(self, name, arr)
        bad = np.flatnonzero(self.zeta <= 0.0)
        if bad.size:
            raise DataError(f"gradient bound must be positive, element {bad[0]} has {self.zeta[bad[0]]}")
        label = self.mesh.side_label
        if np.any(self.g[label != SideLabel.NEUMANN] != 0.0):
            raise DataError("Neumann data set on non-Neumann sides")
        if np.any(self.u_D[label != SideLabel.DIRICHLET] != 0.0):
            raise DataError("Dirichlet data set on non-Dirichlet sides")

    @classmethod
    def constant(cls, mesh, zeta=1.0, f=0.0, g=0.0, u_D=0.0):
        label = mesh.side_label
        return cls(mesh,
                   np.full(mesh.n_elements, float(zeta)),
                   np.full(mesh.n_elements, float(f)),
                   np.where(label == SideLabel.NEUMANN, float(g), 0.0),
                   np.where(label == SideLabel.DIRICHLET, float(u_D), 0.0))


# ---------------------------------------------------------------------------
# Sparse operators, built once per mesh
# ---------------------------------------------------------------------------

class Operators:
    """
    Sparse matrices mapping side dofs to element quantities.

    ``grad_x``, ``grad_y``: CR dofs -> components of the element gradient.
    ``cr_mean``: CR dofs -> element means.
    ``rt_mean_x``, ``rt_mean_y``: RT dofs -> components of the element mean.
    ``rt_div``: RT dofs -> element divergence.
    ``rt_mass``: the L2 Gram matrix of the RT basis.
    """

    def __init__(self, mesh):
        geo = mesh.geometry
        nt, ns = mesh.n_elements, mesh.n_sides
        rows = np.repeat(np.arange(nt), 3)
        cols = mesh.element_sides.ravel()
        length = geo.element_side_length
        area = geo.area[:, None]
        normal = geo.element_normal

        def mat(vals):
            return sp.csr_matrix((vals.ravel(), (rows, cols)), shape=(nt, ns))

        gcoef = length / area
        self.grad_x = mat(gcoef * normal[:, :, 0])
        self.grad_y = mat(gcoef * normal[:, :, 1])
        self.cr_mean = mat(np.full((nt, 3), 1.0 / 3.0))

        sign = mesh.element_side_sign
        coef = sign * length / (2.0 * area)                       # (NT, 3)
        opposite = mesh.vertices[mesh.triangles]                  # P_i opposite side i
        arm = geo.centroid[:, None, :] - opposite                 # x_T - P_i
        self.rt_mean_x = mat(coef * arm[:, :, 0])
        self.rt_mean_y = mat(coef * arm[:, :, 1])
        self.rt_div = mat(2.0 * coef)
        self.local_rt_coef = coef
        self.local_rt_arm = arm

        # int_T (x - P_i).(x - P_j) = |T| arm_i.arm_j + |T|/12 sum_k |P_k - x_T|^2
        second = (arm ** 2).sum(axis=(1, 2)) / 12.0
        gram = np.einsum("tid,tjd->tij", arm, arm) + second[:, None, None]
        local = geo.area[:, None, None] * coef[:, :, None] * coef[:, None, :] * gram
        r = np.repeat(mesh.element_sides, 3, axis=1).ravel()
        c = np.tile(mesh.element_sides, (1, 3)).ravel()
        self.rt_mass = sp.csr_matrix((local.ravel(), (r, c)), shape=(ns, ns))


_OPERATOR_CACHE = weakref.WeakKeyDictionary()


def operators(mesh):
    """Cached :class:`Operators` of ``mesh``."""
    ops = _OPERATOR_CACHE.get(mesh)
    if ops is None:
        ops = Operators(mesh)
        _OPERATOR_CACHE[mesh] = ops
    return ops


# ---------------------------------------------------------------------------
# Differential operators and evaluation
# ---------------------------------------------------------------------------

def cr_gradient(v):
    """Element-wise gradient of a CR function, shape (NT, 2)."""
    ops = operators(v.mesh)
    return np.stack([ops.grad_x @ v.dofs, ops.grad_y @ v.dofs], axis=1)


def rt_divergence(y):
    """Element-wise divergence of an RT field, shape (NT,)."""
    return operators(y.mesh).rt_div @ y.dofs


def rt_element_mean(y):
    """Element means of an RT field, shape (NT, 2)."""
    ops = operators(y.mesh)
    return np.stack([ops.rt_mean_x @ y.dofs, ops.rt_mean_y @ y.dofs], axis=1)


def rt_eval(y, element, x):
    """Value of ``y`` at point ``x`` of triangle ``element``."""
    mesh = y.mesh
    mesh.locate(element, x)
    ops = operators(mesh)
    x = np.asarray(x, dtype=float)
    coef = ops.local_rt_coef[element] * y.dofs[mesh.element_sides[element]]
    opposite = mesh.vertices[mesh.triangles[element]]
    return (coef[:, None] * (x[None, :] - opposite)).sum(axis=0)


def rt_eval_points(y, points):
    """Evaluate ``y`` at element-wise points of shape (NT, nq, 2)."""
    mean = rt_element_mean(y)
    half_div = 0.5 * rt_divergence(y)
    centroid = y.mesh.geometry.centroid
    return mean[:, None, :] + half_div[:, None, None] * (points - centroid[:, None, :])


# ---------------------------------------------------------------------------
# Interpolation and data projection
# ---------------------------------------------------------------------------

def _evaluate(func, points):
    shape = points.shape[:-1]
    flat = points.reshape(-1, 2)
    values = np.asarray(func(flat), dtype=float)
    return values.reshape(shape + values.shape[1:])


def side_means(func, mesh, sides=None, degree=INTERP_DEGREE):
    """Side means of a scalar or vector function by Gauss quadrature."""
    rule = quadrature_rule("edge", degree)
    vals = _evaluate(func, side_points(mesh, rule, sides))
    if vals.ndim == 2:
        return vals @ rule.weights
    return np.einsum("sqd,q->sd", vals, rule.weights)


def element_means(func, mesh, degree=INTERP_DEGREE):
    """Element means of a scalar or vector function by the triangle rule."""
    rule = quadrature_rule("triangle", degree)
    vals = _evaluate(func, triangle_points(mesh, rule))
    if vals.ndim == 2:
        return vals @ rule.weights
    return np.einsum("tqd,q->td", vals, rule.weights)


def cr_interpolate(func, mesh):
    """CR interpolant: dofs are side means of ``func``."""
    return CRFunction(mesh, side_means(func, mesh))


def rt_interpolate(func, mesh):
    """RT interpolant: dofs are side means of the normal flux ``func . n_S``."""
    vec = side_means(func, mesh)
    return RTFunction(mesh, np.einsum("sd,sd->s", vec, mesh.geometry.side_normal))


def _as_function(value):
    if callable(value):
        return value
    c = float(value)
    return lambda x: np.full(len(x), c)


def project_data(f, g, u_D, zeta, mesh):
    """
    Project analytic data onto element/side means.

    Each argument may be a callable ``(N, 2) -> (N,)`` or a constant.
    ``f`` and ``zeta`` become element means, ``g`` and ``u_D`` side means on
    the Neumann and Dirichlet sides respectively.
    """
    f_h = element_means(_as_function(f), mesh)
    zeta_h = element_means(_as_function(zeta), mesh)
    bad = np.flatnonzero(~(zeta_h > 0.0))
    if bad.size:
        raise DataError(f"projected gradient bound is not positive on element {bad[0]}")
    g_h = np.zeros(mesh.n_sides)
    u_h = np.zeros(mesh.n_sides)
    if mesh.neumann_sides.size:
        g_h[mesh.neumann_sides] = side_means(_as_function(g), mesh, mesh.neumann_sides)
    if mesh.dirichlet_sides.size:
        u_h[mesh.dirichlet_sides] = side_means(_as_function(u_D), mesh, mesh.dirichlet_sides)
    return ProblemData(mesh, zeta_h, f_h, g_h, u_h)


# ---------------------------------------------------------------------------
# Integration by parts
# ---------------------------------------------------------------------------

def discrete_ibp_defect(v, y):
    """
    Absolute defect of the discrete integration-by-parts formula
    ``(grad_h v, Pi y) + (Pi v, div y) = (pi v, y . n)`` on the boundary.
    """
    mesh = v.mesh
    geo = mesh.geometry
    lhs = np.dot(geo.area, np.einsum("td,td->t", cr_gradient(v), rt_element_mean(y)))
    lhs += np.dot(geo.area, v.element_mean() * rt_divergence(y))
    b = mesh.boundary_sides
    rhs = np.dot(geo.side_length[b], v.dofs[b] * y.dofs[b])
    return abs(lhs - rhs)


# ---------------------------------------------------------------------------
# Field dumps
# ---------------------------------------------------------------------------

def write_fields(path, cr=None, rt=None, p0_scalar=None, p0_vector=None):
    """
    Write fields as ``kind,index,value`` CSV rows.

    Kinds are ``cr`` and ``rt`` (side dofs), ``p0s`` (element scalars) and
    ``p0vx``/``p0vy`` (element vector components).
    """
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["kind", "index", "value"])
    blocks = []
    if cr is not None:
        blocks.append(("cr", cr.dofs))
    if rt is not None:
        blocks.append(("rt", rt.dofs))
    if p0_scalar is not None:
        blocks.append(("p0s", np.asarray(p0_scalar)))
    if p0_vector is not None:
        p0_vector = np.asarray(p0_vector)
        blocks += [("p0vx", p0_vector[:, 0]), ("p0vy", p0_vector[:, 1])]
    for kind, values in blocks:
        for i, val in enumerate(values.tolist()):
            writer.writerow([kind, i, repr(val)])
    atomic_write_text(path, buf.getvalue())


def read_fields(path):
    """Inverse of :func:`write_fields`; returns ``{kind: ndarray}``."""
    out = {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            out.setdefault(row["kind"], []).append((int(row["index"]), float(row["value"])))
    result = {}
    for kind, items in out.items():
        arr = np.empty(len(items))
        for i, val in items:
            arr[i] = val
        result[kind] = arr
    return result
