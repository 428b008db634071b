#!/usr/bin/env python3
"""
Rigid-body shapes and mass properties.

Shapes are CSG trees of convex primitives described by implicit functions that are
negative inside, positive outside and zero on the boundary. Inertia tensors are given
both in the standard form J and the nonstandard form J_d = integral of rho rho^T dm.
"""

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import ConvexHull, QhullError

from lgvci_geometry import mat3, skew, vec3

logger = logging.getLogger("lgvci_body")

# Two CSG children are "tied" when their implicit values differ by less than this
CSG_TIE_TOL = 1e-12
# Relative tolerance for symmetry and J <-> J_d consistency
INERTIA_TOL = 1e-12
POLY_CENTROID_TOL = 1e-9
# Quadrature centroid must lie within this fraction of the bounding radius
COMPOSITE_CENTROID_TOL = 1e-3
MIN_RESOLUTION = 32


class GradientUndefinedError(ValueError):
    """Raised at CSG loci where both children are active with different gradients."""


def _scale(m):
    return max(1.0, float(np.max(np.abs(m))))


def _require_symmetric(m, what):
    if np.max(np.abs(m - m.T)) > INERTIA_TOL * _scale(m):
        raise ValueError(f"{what} must be symmetric")


def jd_from_j(J):
    """
    Nonstandard inertia J_d = 1/2 tr[J] I - J.

    Raises:
        ValueError: If J is not symmetric.
    """
    J = mat3(J)
    _require_symmetric(J, "Inertia matrix J")
    return 0.5 * np.trace(J) * np.eye(3) - J


def j_from_jd(J_d):
    """Standard inertia J = tr[J_d] I - J_d."""
    J_d = mat3(J_d)
    _require_symmetric(J_d, "Nonstandard inertia J_d")
    return np.trace(J_d) * np.eye(3) - J_d


def _require_positive(**values):
    for name, value in values.items():
        if not value > 0:
            raise ValueError(f"{name} must be positive, got {value}")


def inertia_ellipsoid(m, a, b, c):
    """Solid ellipsoid of uniform density: J = m/5 diag(b^2+c^2, a^2+c^2, a^2+b^2)."""
    _require_positive(m=m, a=a, b=b, c=c)
    return np.diag([m * (b * b + c * c) / 5.0, m * (a * a + c * c) / 5.0, m * (a * a + b * b) / 5.0])


def inertia_cube(m, s):
    """Solid cube of side s: J = m s^2 / 6 I."""
    _require_positive(m=m, s=s)
    return (m * s * s / 6.0) * np.eye(3)


def identity_sj(J, J_d, omega):
    """
    Both sides of S(J Omega) = S(Omega) J_d + J_d S(Omega).

    Returns:
        Tuple (left side, right side)

    Raises:
        ValueError: If J and J_d are not related by J_d = 1/2 tr[J] I - J.
    """
    J = mat3(J)
    J_d = mat3(J_d)
    if np.max(np.abs(jd_from_j(J) - J_d)) > INERTIA_TOL * _scale(J):
        raise ValueError("J and J_d are inconsistent")
    omega = vec3(omega)
    s = skew(omega)
    return skew(J @ omega), s @ J_d + J_d @ s


# --- primitives ---------------------------------------------------------------


@dataclass(frozen=True)
class Ellipsoid:
    """Ellipsoid with semiaxes (a, b, c) along the body axes; I_E = diag(a, b, c)."""

    a: float
    b: float
    c: float

    def __post_init__(self):
        _require_positive(a=self.a, b=self.b, c=self.c)

    @property
    def semiaxes(self):
        return np.array([self.a, self.b, self.c], dtype=float)

    @property
    def i_e(self):
        return np.diag(self.semiaxes)

    def f_e(self, p):
        """Quadratic form f_E(p) = p^T I_E^-2 p (1 on the boundary)."""
        q = np.asarray(p, dtype=float) / self.semiaxes
        return float(np.dot(q, q))


@dataclass(frozen=True, eq=False)
class ConvexPolyhedron:
    """
    Convex hull of at least four non-coplanar vertices, rounded by eps.

    The centroid of the solid hull must sit at the origin.
    """

    vertices: np.ndarray
    eps: float
    face_normals: np.ndarray = field(init=False, repr=False)
    face_offsets: np.ndarray = field(init=False, repr=False)
    volume: float = field(init=False)
    centroid: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        verts = np.asarray(self.vertices, dtype=float)
        if verts.ndim != 2 or verts.shape[1] != 3 or verts.shape[0] < 4:
            raise ValueError("A convex polyhedron needs at least 4 vertices in R^3")
        if not np.all(np.isfinite(verts)):
            raise ValueError("Polyhedron vertices must be finite")
        _require_positive(eps=self.eps)
        try:
            hull = ConvexHull(verts)
        except QhullError as e:
            raise ValueError("Polyhedron vertices are coplanar or degenerate") from e

        # Volume and centroid from a fan of tetrahedra around an interior point
        apex = verts.mean(axis=0)
        tets = verts[hull.simplices]
        vols = np.abs(np.einsum("ij,ij->i", tets[:, 0] - apex, np.cross(tets[:, 1] - apex, tets[:, 2] - apex))) / 6.0
        centers = (tets.sum(axis=1) + apex) / 4.0
        volume = float(vols.sum())
        centroid = (vols[:, None] * centers).sum(axis=0) / volume
        radius = float(np.max(np.linalg.norm(verts, axis=1)))
        if np.linalg.norm(centroid) > POLY_CENTROID_TOL * max(1.0, radius):
            raise ValueError(f"Polyhedron centroid {centroid} is not at the origin")

        # Triangulated faces repeat planes; keep one copy of each
        planes = np.unique(np.round(hull.equations, 12), axis=0)
        object.__setattr__(self, "vertices", verts)
        object.__setattr__(self, "face_normals", planes[:, :3])
        object.__setattr__(self, "face_offsets", planes[:, 3])
        object.__setattr__(self, "volume", volume)
        object.__setattr__(self, "centroid", centroid)


def cube_polyhedron(s, eps):
    """
    Axis-aligned cube of side s centred at the origin.

    Vertex order: x varies fastest, then y, bottom face (z = -s/2) first.
    """
    _require_positive(s=s)
    h = 0.5 * s
    verts = [(x, y, z) for z in (-h, h) for y in (-h, h) for x in (-h, h)]
    return ConvexPolyhedron(np.array(verts, dtype=float), eps)


# --- CSG tree -----------------------------------------------------------------


class ShapeNode:
    """Base class of the CSG tree; evaluate() is vectorised over (..., 3) arrays."""

    def evaluate(self, z):
        raise NotImplementedError

    def gradient(self, z):
        raise NotImplementedError

    def bounds(self):
        """Axis-aligned (lo, hi) bounds, or None when unbounded."""
        raise NotImplementedError


@dataclass(frozen=True, eq=False)
class EllipsoidNode(ShapeNode):
    """Ellipsoid primitive centred at offset; phi(z) = |I_E^-1 (z - offset)| - 1."""

    ellipsoid: Ellipsoid
    offset: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        object.__setattr__(self, "offset", vec3(self.offset))

    def evaluate(self, z):
        q = (np.asarray(z, dtype=float) - self.offset) / self.ellipsoid.semiaxes
        return np.linalg.norm(q, axis=-1) - 1.0

    def gradient(self, z):
        axes = self.ellipsoid.semiaxes
        q = (vec3(z) - self.offset) / axes
        norm = float(np.linalg.norm(q))
        if norm == 0.0:
            raise GradientUndefinedError("Ellipsoid implicit function has no gradient at its centre")
        return q / axes / norm

    def bounds(self):
        axes = self.ellipsoid.semiaxes
        return self.offset - axes, self.offset + axes


@dataclass(frozen=True, eq=False)
class PolyhedronNode(ShapeNode):
    """
    Rounded convex polyhedron.

    The implicit function is the largest face-plane value minus eps: exact inside the
    hull and a lower bound of the distance outside, with the right sign and zero set.
    """

    polyhedron: ConvexPolyhedron

    def _plane_values(self, z):
        z = np.asarray(z, dtype=float)
        return z @ self.polyhedron.face_normals.T + self.polyhedron.face_offsets

    def evaluate(self, z):
        return np.max(self._plane_values(z), axis=-1) - self.polyhedron.eps

    def gradient(self, z):
        values = self._plane_values(vec3(z))
        active = np.flatnonzero(values >= values.max() - CSG_TIE_TOL)
        normals = self.polyhedron.face_normals[active]
        if not np.allclose(normals, normals[0], atol=CSG_TIE_TOL, rtol=0.0):
            raise GradientUndefinedError(f"Point {z} lies on a polyhedron edge or vertex")
        return normals[0].copy()

    def bounds(self):
        verts = self.polyhedron.vertices
        eps = self.polyhedron.eps
        return verts.min(axis=0) - eps, verts.max(axis=0) + eps


@dataclass(frozen=True, eq=False)
class HalfSpaceNode(ShapeNode):
    """Half-space {z : n^T z + D < 0}; psi(z) = n^T z + D."""

    normal: np.ndarray
    offset: float = 0.0

    def __post_init__(self):
        n = vec3(self.normal)
        if abs(np.linalg.norm(n) - 1.0) > 1e-14:
            raise ValueError("Half-space normal must be a unit vector")
        object.__setattr__(self, "normal", n)

    def evaluate(self, z):
        return np.asarray(z, dtype=float) @ self.normal + self.offset

    def gradient(self, z):
        return self.normal.copy()

    def bounds(self):
        return None


def _tied_gradient(left, right, z):
    g1 = left.gradient(z)
    g2 = right.gradient(z)
    if np.allclose(g1, g2, atol=CSG_TIE_TOL, rtol=0.0):
        return g1
    raise GradientUndefinedError(f"Both CSG children are active at {z} with different gradients")


@dataclass(frozen=True, eq=False)
class UnionNode(ShapeNode):
    left: ShapeNode
    right: ShapeNode

    def evaluate(self, z):
        return np.minimum(self.left.evaluate(z), self.right.evaluate(z))

    def gradient(self, z):
        psi1 = float(self.left.evaluate(z))
        psi2 = float(self.right.evaluate(z))
        if abs(psi1 - psi2) <= CSG_TIE_TOL:
            return _tied_gradient(self.left, self.right, z)
        return self.left.gradient(z) if psi1 < psi2 else self.right.gradient(z)

    def bounds(self):
        b1 = self.left.bounds()
        b2 = self.right.bounds()
        if b1 is None or b2 is None:
            return None
        return np.minimum(b1[0], b2[0]), np.maximum(b1[1], b2[1])


@dataclass(frozen=True, eq=False)
class IntersectionNode(ShapeNode):
    left: ShapeNode
    right: ShapeNode

    def evaluate(self, z):
        return np.maximum(self.left.evaluate(z), self.right.evaluate(z))

    def gradient(self, z):
        psi1 = float(self.left.evaluate(z))
        psi2 = float(self.right.evaluate(z))
        if abs(psi1 - psi2) <= CSG_TIE_TOL:
            return _tied_gradient(self.left, self.right, z)
        return self.left.gradient(z) if psi1 > psi2 else self.right.gradient(z)

    def bounds(self):
        b1 = self.left.bounds()
        b2 = self.right.bounds()
        if b1 is None:
            return b2
        if b2 is None:
            return b1
        return np.maximum(b1[0], b2[0]), np.minimum(b1[1], b2[1])


@dataclass(frozen=True, eq=False)
class ComplementNode(ShapeNode):
    child: ShapeNode

    def evaluate(self, z):
        return -self.child.evaluate(z)

    def gradient(self, z):
        return -self.child.gradient(z)

    def bounds(self):
        return None


def sdf_eval(node, z):
    """Implicit-function value of a shape at a point (or an array of points)."""
    value = node.evaluate(z)
    return float(value) if np.ndim(value) == 0 else value


def sdf_grad(node, z):
    """
    Gradient of a shape's implicit function at a single point.

    Raises:
        GradientUndefinedError: At CSG ties with differing child gradients.
    """
    return node.gradient(z)


def bounding_box(node):
    """Axis-aligned bounds of a shape, or None for unbounded shapes."""
    return node.bounds()


def ellipsoid_leaves(node):
    """
    Ellipsoid primitives of a union-only or intersection-only tree.

    Returns:
        (kind, leaves) where kind is "ellipsoid", "union" or "intersection", or
        (None, []) when the tree mixes operations or other primitives.
    """
    if isinstance(node, EllipsoidNode):
        return "ellipsoid", [node]
    if isinstance(node, (UnionNode, IntersectionNode)):
        kind = "union" if isinstance(node, UnionNode) else "intersection"
        leaves = []
        for child in (node.left, node.right):
            child_kind, child_leaves = ellipsoid_leaves(child)
            if child_kind not in ("ellipsoid", kind):
                return None, []
            leaves.extend(child_leaves)
        return kind, leaves
    return None, []


def _grid_moments(node, resolution):
    """Sample count, first and second moments and farthest solid sample on the grid."""
    if resolution < MIN_RESOLUTION:
        raise ValueError(f"Quadrature resolution must be at least {MIN_RESOLUTION}")
    box = bounding_box(node)
    if box is None:
        raise ValueError("Cannot integrate over an unbounded shape")
    lo, hi = box
    if np.any(hi <= lo):
        raise ValueError("Shape has an empty bounding box")

    width = (hi - lo) / resolution
    centres = [lo[i] + (np.arange(resolution) + 0.5) * width[i] for i in range(3)]
    gx, gy = np.meshgrid(centres[0], centres[1], indexing="ij")
    gx = gx.reshape(-1)
    gy = gy.reshape(-1)

    count = 0
    first = np.zeros(3)
    second = np.zeros((3, 3))
    radius = 0.0
    for z in centres[2]:
        points = np.column_stack([gx, gy, np.full_like(gx, z)])
        solid = points[node.evaluate(points) < 0.0]
        if solid.shape[0] == 0:
            continue
        count += solid.shape[0]
        first += solid.sum(axis=0)
        second += solid.T @ solid
        radius = max(radius, float(np.max(np.linalg.norm(solid, axis=1))))

    if count == 0:
        raise ValueError("Quadrature found no interior points")
    return count, first, second, radius


def composite_centroid(node, resolution=128):
    """Centroid of the sampled solid, wherever it lies."""
    count, first, _, _ = _grid_moments(node, resolution)
    return first / count


def composite_mass_properties(node, m, resolution=128):
    """
    Inertia of a uniform-density solid by midpoint quadrature on a regular grid.

    The bounding box is split into resolution^3 cells; cell centres with a negative
    implicit value count as solid. Slabs are accumulated in a fixed order so the result
    is deterministic. The centroid is held to COMPOSITE_CENTROID_TOL times the bounding
    radius, the distance from the origin to the farthest solid sample.

    Args:
        node: Bounded shape whose centroid is the origin
        m: Total mass
        resolution: Cells per axis (>= 32)

    Returns:
        Tuple (J, centroid of the sampled solid)

    Raises:
        ValueError: For unbounded shapes, empty samples or an off-origin centroid.
    """
    _require_positive(m=m)
    count, first, second, radius = _grid_moments(node, resolution)
    centroid = first / count
    if np.linalg.norm(centroid) > COMPOSITE_CENTROID_TOL * radius:
        raise ValueError(f"Composite centroid {centroid} is not at the origin")
    logger.debug(f"Quadrature used {count} of {resolution**3} samples, centroid {centroid}")

    J_d = m * second / count
    J_d = 0.5 * (J_d + J_d.T)
    return j_from_jd(J_d), centroid


def inertia_composite(node, m, resolution=128):
    """Standard inertia J of a composite shape; see composite_mass_properties."""
    J, _ = composite_mass_properties(node, m, resolution)
    return J


@dataclass(frozen=True, eq=False)
class RigidBody:
    """Mass m, standard inertia J, nonstandard inertia J_d and shape."""

    mass: float
    J: np.ndarray
    J_d: np.ndarray
    shape: ShapeNode
    J_inv: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        _require_positive(mass=self.mass)
        J = mat3(self.J)
        J_d = mat3(self.J_d)
        _require_symmetric(J, "Inertia matrix J")
        if np.min(np.linalg.eigvalsh(J)) <= 0.0:
            raise ValueError("Inertia matrix J must be positive definite")
        scale = INERTIA_TOL * _scale(J)
        if np.max(np.abs(J_d - jd_from_j(J))) > scale or np.max(np.abs(J - j_from_jd(J_d))) > scale:
            raise ValueError("J and J_d are inconsistent")
        object.__setattr__(self, "J", J)
        object.__setattr__(self, "J_d", J_d)
        object.__setattr__(self, "J_inv", np.linalg.inv(J))

    @classmethod
    def from_inertia(cls, mass, J, shape):
        J = mat3(J)
        return cls(mass, J, jd_from_j(J), shape)
