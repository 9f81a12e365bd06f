"""
Triangle meshes of planar domains.

A :class:`Mesh` stores vertex coordinates, counter-clockwise triangles and a
side table.  Sides are the sorted vertex-index pairs of all triangle edges,
ordered lexicographically.  Local side ``i`` of a triangle is the side
opposite its local vertex ``i``.

Every side carries an orientation: its unit normal points from the adjacent
triangle with the lower index (``T-``) towards the one with the higher index
(``T+``).  On boundary sides the only neighbour is ``T-`` and the normal is
the outward one.
"""

from dataclasses import dataclass
from enum import IntEnum
from functools import cached_property
import math
import os
import tempfile

import numpy as np

from .errors import GeometryError, MeshFormatError, ParameterError


class SideLabel(IntEnum):
    INTERIOR = 0
    DIRICHLET = 1
    NEUMANN = 2


@dataclass(frozen=True)
class GeometryCache:
    """Per-element and per-side geometric quantities of a mesh."""

    area: np.ndarray              # (NT,)
    centroid: np.ndarray          # (NT, 2)
    side_length: np.ndarray       # (NS,)
    side_midpoint: np.ndarray     # (NS, 2)
    side_normal: np.ndarray       # (NS, 2), oriented T- -> T+ / outward
    element_normal: np.ndarray    # (NT, 3, 2), outward normal of local side i
    element_side_length: np.ndarray  # (NT, 3)


@dataclass(frozen=True, eq=False)
class Mesh:
    vertices: np.ndarray
    triangles: np.ndarray
    sides: np.ndarray
    side_elements: np.ndarray
    side_label: np.ndarray
    element_sides: np.ndarray
    element_side_sign: np.ndarray

    @classmethod
    def from_arrays(cls, vertices, triangles, boundary_label=SideLabel.DIRICHLET):
        """
        Build a mesh and its side table from raw arrays.

        Parameters
        ----------
        vertices : array_like, shape (NV, 2)
        triangles : array_like of int, shape (NT, 3)
            Counter-clockwise vertex triples.
        boundary_label : SideLabel or dict or callable
            Label of the boundary sides.  A dict maps sorted vertex pairs
            ``(a, b)`` to labels; a callable receives the side midpoint.
        """
        vertices = np.ascontiguousarray(vertices, dtype=float)
        triangles = np.ascontiguousarray(triangles, dtype=np.int64)
        if vertices.ndim != 2 or vertices.shape[1] != 2:
            raise ParameterError("vertices must have shape (NV, 2)")
        if triangles.ndim != 2 or triangles.shape[1] != 3:
            raise ParameterError("triangles must have shape (NT, 3)")
        nv = len(vertices)
        if triangles.size and (triangles.min() < 0 or triangles.max() >= nv):
            raise ParameterError("triangle references a vertex out of range")

        signed = _signed_areas(vertices, triangles)
        bad = np.flatnonzero(signed <= 0.0)
        if bad.size:
            raise GeometryError(
                f"triangle {bad[0]} has non-positive signed area {signed[bad[0]]:.3e}")

        nt = len(triangles)
        local = np.stack([triangles[:, [1, 2]], triangles[:, [2, 0]],
                          triangles[:, [0, 1]]], axis=1)      # (NT, 3, 2)
        pairs = np.sort(local.reshape(-1, 2), axis=1)
        sides, inverse, counts = np.unique(pairs, axis=0, return_inverse=True,
                                           return_counts=True)
        inverse = inverse.reshape(-1)
        if np.any(counts > 2):
            raise GeometryError("a side is shared by more than two triangles")
        element_sides = inverse.reshape(nt, 3)

        owner = np.repeat(np.arange(nt), 3)
        order = np.lexsort((owner, inverse))
        first = np.ones(len(order), dtype=bool)
        first[1:] = inverse[order][1:] != inverse[order][:-1]
        ns = len(sides)
        side_elements = np.full((ns, 2), -1, dtype=np.int64)
        side_elements[inverse[order][first], 0] = owner[order][first]
        second = ~first
        side_elements[inverse[order][second], 1] = owner[order][second]

        element_side_sign = np.where(
            side_elements[element_sides, 0] == np.arange(nt)[:, None], 1.0, -1.0)

        side_label = np.full(ns, SideLabel.INTERIOR, dtype=np.int8)
        boundary = np.flatnonzero(side_elements[:, 1] < 0)
        if isinstance(boundary_label, dict):
            for s in boundary:
                key = (int(sides[s, 0]), int(sides[s, 1]))
                side_label[s] = boundary_label.get(key, SideLabel.DIRICHLET)
        elif callable(boundary_label):
            mids = 0.5 * (vertices[sides[boundary, 0]] + vertices[sides[boundary, 1]])
            side_label[boundary] = [int(boundary_label(m)) for m in mids]
        else:
            side_label[boundary] = int(boundary_label)
        if np.any(side_label[boundary] == SideLabel.INTERIOR):
            raise ParameterError("boundary sides must be Dirichlet or Neumann")

        for arr in (vertices, triangles, sides, side_elements, side_label,
                    element_sides, element_side_sign):
            arr.setflags(write=False)
        return cls(vertices, triangles, sides, side_elements, side_label,
                   element_sides, element_side_sign)

    @property
    def n_vertices(self):
        return len(self.vertices)

    @property
    def n_elements(self):
        return len(self.triangles)

    @property
    def n_sides(self):
        return len(self.sides)

    @cached_property
    def geometry(self):
        return compute_geometry(self)

    @cached_property
    def boundary_sides(self):
        return np.flatnonzero(self.side_elements[:, 1] < 0)

    @cached_property
    def dirichlet_sides(self):
        return np.flatnonzero(self.side_label == SideLabel.DIRICHLET)

    @cached_property
    def neumann_sides(self):
        return np.flatnonzero(self.side_label == SideLabel.NEUMANN)

    @cached_property
    def boundary_vertices(self):
        return np.unique(self.sides[self.boundary_sides])

    @property
    def h(self):
        """Averaged mesh size ``(|Omega_h| / #vertices)**(1/2)``."""
        return math.sqrt(self.geometry.area.sum() / self.n_vertices)

    def min_angle(self):
        """Smallest interior angle over all triangles, in degrees."""
        p = self.vertices[self.triangles]
        angles = []
        for i in range(3):
            a = p[:, (i + 1) % 3] - p[:, i]
            b = p[:, (i + 2) % 3] - p[:, i]
            cos = np.einsum("ij,ij->i", a, b) / (
                np.linalg.norm(a, axis=1) * np.linalg.norm(b, axis=1))
            angles.append(np.degrees(np.arccos(np.clip(cos, -1.0, 1.0))))
        return float(np.min(angles))

    def locate(self, element, x, tol=1e-12):
        """Barycentric coordinates of ``x`` in ``element``; raise if outside."""
        p = self.vertices[self.triangles[element]]
        mat = np.array([p[1] - p[0], p[2] - p[0]]).T
        l12 = np.linalg.solve(mat, np.asarray(x, dtype=float) - p[0])
        lam = np.array([1.0 - l12.sum(), l12[0], l12[1]])
        if np.any(lam < -tol):
            raise ParameterError(f"point {tuple(x)} lies outside triangle {element}")
        return lam


def _signed_areas(vertices, triangles):
    p0 = vertices[triangles[:, 0]]
    p1 = vertices[triangles[:, 1]]
    p2 = vertices[triangles[:, 2]]
    return 0.5 * ((p1[:, 0] - p0[:, 0]) * (p2[:, 1] - p0[:, 1])
                  - (p1[:, 1] - p0[:, 1]) * (p2[:, 0] - p0[:, 0]))


def compute_geometry(mesh):
    """Areas, centroids, side lengths/midpoints and oriented normals."""
    verts = mesh.vertices
    area = _signed_areas(verts, mesh.triangles)
    bad = np.flatnonzero(area <= 0.0)
    if bad.size:
        raise GeometryError(f"triangle {bad[0]} is degenerate (area {area[bad[0]]:.3e})")
    centroid = verts[mesh.triangles].mean(axis=1)

    a = verts[mesh.sides[:, 0]]
    b = verts[mesh.sides[:, 1]]
    tangent = b - a
    length = np.linalg.norm(tangent, axis=1)
    midpoint = 0.5 * (a + b)
    normal = np.stack([tangent[:, 1], -tangent[:, 0]], axis=1) / length[:, None]
    away = midpoint - centroid[mesh.side_elements[:, 0]]
    flip = np.einsum("ij,ij->i", normal, away) < 0.0
    normal[flip] *= -1.0

    element_normal = mesh.element_side_sign[:, :, None] * normal[mesh.element_sides]
    element_side_length = length[mesh.element_sides]
    for arr in (area, centroid, length, midpoint, normal, element_normal,
                element_side_length):
        arr.setflags(write=False)
    return GeometryCache(area, centroid, length, midpoint, normal,
                         element_normal, element_side_length)


# ---------------------------------------------------------------------------
# Quadrature
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class QuadratureRule:
    """
    Quadrature on the reference triangle (barycentric points) or on the
    unit interval (affine parameter in [0, 1]).  Weights sum to one, so the
    rule computes integral means.
    """

    domain: str
    degree: int
    points: np.ndarray
    weights: np.ndarray


def _triangle_rule(degree):
    if degree == 1:
        pts = np.array([[1.0, 1.0, 1.0]]) / 3.0
        w = np.array([1.0])
    elif degree == 2:
        a, b = 2.0 / 3.0, 1.0 / 6.0
        pts = np.array([[a, b, b], [b, a, b], [b, b, a]])
        w = np.full(3, 1.0 / 3.0)
    else:
        # 7-point Radon rule, exact for degree 5
        s15 = math.sqrt(15.0)
        a1 = (6.0 - s15) / 21.0
        a2 = (6.0 + s15) / 21.0
        w1 = (155.0 - s15) / 1200.0
        w2 = (155.0 + s15) / 1200.0
        pts = [[1 / 3, 1 / 3, 1 / 3]]
        for a in (a1, a2):
            b = 1.0 - 2.0 * a
            pts += [[b, a, a], [a, b, a], [a, a, b]]
        pts = np.array(pts)
        w = np.array([9.0 / 40.0] + [w1] * 3 + [w2] * 3)
    return pts, w


def quadrature_rule(domain, degree):
    """Rule on ``"triangle"`` or ``"edge"`` exact up to ``degree`` (1..5)."""
    if not isinstance(degree, (int, np.integer)) or not 1 <= degree <= 5:
        raise ParameterError(f"unsupported quadrature degree {degree!r}")
    if domain == "triangle":
        pts, w = _triangle_rule(int(degree))
    elif domain == "edge":
        n = int(degree) // 2 + 1
        x, w = np.polynomial.legendre.leggauss(n)
        pts = 0.5 * (x + 1.0)
        w = 0.5 * w
    else:
        raise ParameterError(f"unknown quadrature domain {domain!r}")
    pts.setflags(write=False)
    w.setflags(write=False)
    return QuadratureRule(domain, int(degree), pts, w)


def triangle_points(mesh, rule):
    """Physical quadrature points, shape (NT, nq, 2)."""
    return np.einsum("qk,tkd->tqd", rule.points, mesh.vertices[mesh.triangles])


def side_points(mesh, rule, sides=None):
    """Physical quadrature points on sides, shape (len(sides), nq, 2)."""
    if sides is None:
        sides = slice(None)
    a = mesh.vertices[mesh.sides[sides, 0]]
    b = mesh.vertices[mesh.sides[sides, 1]]
    t = rule.points
    return a[:, None, :] * (1.0 - t)[None, :, None] + b[:, None, :] * t[None, :, None]


# ---------------------------------------------------------------------------
# Disk mesher
# ---------------------------------------------------------------------------

MAX_DISK_LEVEL = 8


def build_disk_mesh(radius, level):
    """
    Concentric-ring triangulation of the disk of the given radius.

    Level ``L`` uses ``n = 3 * 2**L`` rings; ring ``j`` carries ``6 j``
    equally spaced vertices at radius ``j * radius / n``.  Neighbouring rings
    are stitched by advancing along both rings in angular order.  All
    outermost vertices lie on the circle, so the polygon is inscribed.
    """
    if not radius > 0:
        raise ParameterError("radius must be positive")
    if not isinstance(level, (int, np.integer)) or not 0 <= level <= MAX_DISK_LEVEL:
        raise ParameterError(f"level must be an integer in [0, {MAX_DISK_LEVEL}]")
    n = 3 * 2 ** int(level)
    dr = radius / n

    coords = [np.zeros((1, 2))]
    ring_start = [0]
    offset = 1
    for j in range(1, n + 1):
        m = 6 * j
        theta = 2.0 * np.pi * np.arange(m) / m
        r = radius if j == n else j * dr
        coords.append(np.stack([r * np.cos(theta), r * np.sin(theta)], axis=1))
        ring_start.append(offset)
        offset += m
    vertices = np.concatenate(coords)

    tris = []
    for k in range(6):
        tris.append((0, 1 + k, 1 + (k + 1) % 6))
    for j in range(2, n + 1):
        tris.extend(_stitch_rings(ring_start[j - 1], 6 * (j - 1),
                                  ring_start[j], 6 * j))
    triangles = np.array(tris, dtype=np.int64)
    return Mesh.from_arrays(vertices, triangles, SideLabel.DIRICHLET)


def _stitch_rings(start_in, m_in, start_out, m_out):
    # both rings start at angle 0; step through angles in increasing order
    i = k = 0
    tris = []
    while i < m_in or k < m_out:
        next_in = (i + 1) / m_in
        next_out = (k + 1) / m_out
        a = start_in + i % m_in
        b = start_out + k % m_out
        if k < m_out and (i >= m_in or next_out <= next_in):
            tris.append((a, b, start_out + (k + 1) % m_out))
            k += 1
        else:
            tris.append((a, b, start_in + (i + 1) % m_in))
            i += 1
    return tris


# ---------------------------------------------------------------------------
# Plain-text mesh files
# ---------------------------------------------------------------------------

def save_mesh(mesh, path):
    """Write ``mesh`` in the ``NV NT NS`` plain-text format (atomically)."""
    lines = [f"{mesh.n_vertices} {mesh.n_elements} {mesh.n_sides}"]
    lines += [f"{x!r} {y!r}" for x, y in mesh.vertices.tolist()]
    lines += [f"{i} {j} {k}" for i, j, k in mesh.triangles.tolist()]
    lines += [f"{a} {b} {int(lab)}" for (a, b), lab in
              zip(mesh.sides.tolist(), mesh.side_label.tolist())]
    atomic_write_text(path, "\n".join(lines) + "\n")


def atomic_write_text(path, text):
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=".part")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_mesh(path):
    """Read a mesh file; the side table is rebuilt and labels re-applied."""
    with open(path) as fh:
        raw = fh.read().splitlines()
    lines = [(no, ln.split()) for no, ln in enumerate(raw, start=1) if ln.strip()]
    if not lines:
        raise MeshFormatError("empty mesh file", 1)

    def ints(no, parts, count):
        if len(parts) != count:
            raise MeshFormatError(f"expected {count} fields, got {len(parts)}", no)
        try:
            return [int(p) for p in parts]
        except ValueError:
            raise MeshFormatError("expected integers", no) from None

    no, parts = lines[0]
    nv, nt, ns = ints(no, parts, 3)
    if min(nv, nt, ns) < 0 or len(lines) != 1 + nv + nt + ns:
        raise MeshFormatError(
            f"header announces {nv}+{nt}+{ns} records, file has {len(lines) - 1}", no)

    vertices = np.empty((nv, 2))
    for idx, (no, parts) in enumerate(lines[1:1 + nv]):
        if len(parts) != 2:
            raise MeshFormatError(f"expected 2 coordinates, got {len(parts)}", no)
        try:
            vertices[idx] = [float(parts[0]), float(parts[1])]
        except ValueError:
            raise MeshFormatError("expected floating point coordinates", no) from None

    triangles = np.empty((nt, 3), dtype=np.int64)
    for idx, (no, parts) in enumerate(lines[1 + nv:1 + nv + nt]):
        tri = ints(no, parts, 3)
        if min(tri) < 0 or max(tri) >= nv:
            raise MeshFormatError(f"vertex index out of range [0, {nv})", no)
        triangles[idx] = tri
        if _signed_areas(vertices, triangles[idx:idx + 1])[0] <= 0.0:
            raise MeshFormatError(f"triangle {idx} is inverted or degenerate", no)

    labels = {}
    for no, parts in lines[1 + nv + nt:]:
        a, b, lab = ints(no, parts, 3)
        if min(a, b) < 0 or max(a, b) >= nv:
            raise MeshFormatError(f"vertex index out of range [0, {nv})", no)
        if lab not in (0, 1, 2):
            raise MeshFormatError(f"unknown side label {lab}", no)
        labels[(min(a, b), max(a, b))] = (SideLabel(lab), no)

    try:
        # interior labels on boundary sides are reported below with their line
        mesh = Mesh.from_arrays(vertices, triangles,
                                {k: v[0] or SideLabel.DIRICHLET for k, v in labels.items()})
    except (GeometryError, ParameterError) as exc:
        raise MeshFormatError(str(exc)) from exc
    if mesh.n_sides != ns:
        raise MeshFormatError(f"header announces {ns} sides, mesh has {mesh.n_sides}", 1)
    for s, (a, b) in enumerate(mesh.sides.tolist()):
        if (a, b) not in labels:
            raise MeshFormatError(f"side ({a}, {b}) missing from side list")
        lab, no = labels[(a, b)]
        boundary = mesh.side_elements[s, 1] < 0
        if boundary == (lab == SideLabel.INTERIOR):
            raise MeshFormatError(f"label {int(lab)} inconsistent with side ({a}, {b})", no)
    return mesh
