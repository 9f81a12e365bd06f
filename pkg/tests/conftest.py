import numpy as np
import pytest

from gradconstraint.mesh import Mesh, SideLabel, build_disk_mesh


def unit_triangle():
    return Mesh.from_arrays([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]], [[0, 1, 2]])


def two_triangles():
    verts = [[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]]
    return Mesh.from_arrays(verts, [[0, 1, 2], [0, 2, 3]])


def square_mesh(n, neumann_right=False):
    """Structured mesh of the unit square; optionally Neumann on x = 1."""
    xs = np.linspace(0.0, 1.0, n + 1)
    X, Y = np.meshgrid(xs, xs, indexing="xy")
    verts = np.stack([X.ravel(), Y.ravel()], axis=1)
    tris = []
    for j in range(n):
        for i in range(n):
            a = j * (n + 1) + i
            b, c, d = a + 1, a + n + 2, a + n + 1
            tris += [(a, b, c), (a, c, d)]

    def label(mid):
        if neumann_right and abs(mid[0] - 1.0) < 1e-12:
            return SideLabel.NEUMANN
        return SideLabel.DIRICHLET
    return Mesh.from_arrays(verts, tris, label)


def random_mesh(seed, n_points=30):
    """Delaunay triangulation of random points in the unit square."""
    from scipy.spatial import Delaunay
    rng = np.random.default_rng(seed)
    pts = np.vstack([[[0, 0], [1, 0], [1, 1], [0, 1]], rng.uniform(0.05, 0.95, (n_points, 2))])
    tri = Delaunay(pts).simplices.copy()
    p = pts[tri]
    signed = ((p[:, 1, 0] - p[:, 0, 0]) * (p[:, 2, 1] - p[:, 0, 1])
              - (p[:, 1, 1] - p[:, 0, 1]) * (p[:, 2, 0] - p[:, 0, 0]))
    tri[signed < 0] = tri[signed < 0][:, [0, 2, 1]]
    area = np.abs(signed) / 2
    return Mesh.from_arrays(pts, tri[area > 1e-10])


@pytest.fixture(scope="session")
def disk():
    cache = {}

    def get(level):
        if level not in cache:
            cache[level] = build_disk_mesh(1.0, level)
        return cache[level]
    return get


def curl_rt_dofs(mesh, phi):
    """RT dofs of curl(phi) for P1 vertex values phi; the field is divergence free."""
    geo = mesh.geometry
    a, b = mesh.vertices[mesh.sides[:, 0]], mesh.vertices[mesh.sides[:, 1]]
    tangent = np.stack([-geo.side_normal[:, 1], geo.side_normal[:, 0]], axis=1)
    # curl(phi) . n = grad(phi) . t with t = n rotated by +90 degrees
    orient = np.sign(np.sum((b - a) * tangent, axis=1))
    return orient * (phi[mesh.sides[:, 1]] - phi[mesh.sides[:, 0]]) / geo.side_length


def random_admissible_pair(rng, u_cr, z_rt, data, base):
    """
    Primal/dual admissible pair near the discrete solution.

    ``v`` convexly combines ``u_cr`` with the admissible CR field ``base``
    and adds an interior perturbation shrunk until the gradient bound
    holds; ``y`` adds a random divergence-free field to ``z_rt``.
    """
    from gradconstraint.spaces import CRFunction, RTFunction, cr_gradient
    mesh = data.mesh
    theta = rng.uniform()
    dofs = theta * u_cr.dofs + (1 - theta) * base.dofs
    interior = mesh.side_elements[:, 1] >= 0
    pert = np.where(interior, rng.normal(size=mesh.n_sides), 0.0)
    amp = rng.uniform(0.01, 0.2)
    grad0 = cr_gradient(CRFunction(mesh, dofs))
    dgrad = cr_gradient(CRFunction(mesh, pert))
    for _ in range(60):
        if np.all(np.linalg.norm(grad0 + amp * dgrad, axis=1) <= data.zeta):
            break
        amp *= 0.5
    else:
        amp = 0.0
    v = CRFunction(mesh, dofs + amp * pert)
    phi = rng.normal(size=mesh.n_vertices)
    phi[mesh.boundary_vertices] = 0.0
    y = RTFunction(mesh, z_rt.dofs + rng.uniform(0.05, 1.0) * curl_rt_dofs(mesh, phi))
    return v, y
