#!/usr/bin/env python3
"""
Collision detection between a rigid body and a plane.

The collision detection function Phi(x, R) is positive while the body is separated
from the plane (on the +n side), zero at contact and negative on interpenetration.
Alongside Phi this module computes its partial derivatives, the chi vector that
carries the angular part of an impulse, and the closest body point rho_C.
"""

import logging
from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize, root

from lgvci_body import (
    CSG_TIE_TOL,
    EllipsoidNode,
    IntersectionNode,
    PolyhedronNode,
    UnionNode,
    ellipsoid_leaves,
    sdf_grad,
)
from lgvci_geometry import asym, unskew, vec3

logger = logging.getLogger("lgvci_contact")

UNIT_TOL = 1e-14
CHI_TOL = 1e-12
# Intersection-curve closest point
CURVE_SEEDS = 8
CURVE_TOL = 1e-12
ACTIVE_TOL = 1e-8


class UnsupportedShapeError(ValueError):
    """Raised for shapes the contact module has no closest-point rule for."""


@dataclass(frozen=True, eq=False)
class Plane:
    """Plane {z : n^T z + D = 0}; the admissible side is n^T z + D > 0."""

    normal: np.ndarray
    offset: float = 0.0

    def __post_init__(self):
        n = vec3(self.normal)
        if abs(np.linalg.norm(n) - 1.0) > UNIT_TOL:
            raise ValueError(f"Plane normal must be a unit vector, |n| = {np.linalg.norm(n)!r}")
        object.__setattr__(self, "normal", n)
        object.__setattr__(self, "offset", float(self.offset))

    @classmethod
    def horizontal(cls, offset=0.0):
        return cls(np.array([0.0, 0.0, 1.0]), offset)

    @classmethod
    def from_tilt(cls, tilt_deg, offset=0.0):
        """
        Plane whose normal is e3 rotated about the y-axis by -tilt_deg degrees.

        tilt_deg = 2 gives n = (sin(-pi/90), 0, cos(-pi/90)).
        """
        theta = -np.radians(tilt_deg)
        return cls(np.array([np.sin(theta), 0.0, np.cos(theta)]), offset)

    def pulled_back(self, pose):
        """The same plane seen from the body frame of pose: normal R^T n, offset D + n^T x."""
        return Plane(pose.attitude.T @ self.normal, self.offset + float(self.normal @ pose.position))

    def height(self, z):
        return float(self.normal @ z) + self.offset


@dataclass(frozen=True, eq=False)
class ContactGeometry:
    phi: float
    dphi_dx: np.ndarray
    dphi_dR: np.ndarray
    chi: np.ndarray
    rho_C: np.ndarray


def _support_norm(e, u):
    return float(np.linalg.norm(e.semiaxes * u))


def phi_ellipsoid(pose, e, p):
    """Phi = n^T x + D - |I_E R^T n|."""
    u = pose.attitude.T @ p.normal
    return float(p.normal @ pose.position) + p.offset - _support_norm(e, u)


def phi_grad_ellipsoid(pose, e, p):
    """
    Partial derivatives of phi_ellipsoid.

    Returns:
        (dPhi/dx, dPhi/dR) = (n, -n n^T R I_E^2 / |I_E R^T n|)
    """
    n = p.normal
    u = pose.attitude.T @ n
    dphi_dR = -np.outer(n, n) @ pose.attitude @ np.diag(e.semiaxes**2) / _support_norm(e, u)
    return n.copy(), dphi_dR


def chi_vector(R, dphi_dR):
    """
    chi = unskew(asym(R^T dPhi/dR)).

    Also evaluated as the sum of cross products of the rows of dPhi/dR with the rows of R;
    the two must agree.
    """
    chi = unskew(asym(R.T @ dphi_dR))
    crossed = sum(np.cross(dphi_dR[i], R[i]) for i in range(3))
    scale = max(1.0, float(np.max(np.abs(dphi_dR))))
    if np.max(np.abs(chi - crossed)) > CHI_TOL * scale:
        raise ArithmeticError(f"chi evaluations disagree: {chi} vs {crossed}")
    return chi


def closest_point_ellipsoid(R, e, p):
    """Body point closest to the plane: rho_C = -I_E^2 R^T n / |I_E R^T n|."""
    u = R.T @ p.normal
    return -(e.semiaxes**2) * u / _support_norm(e, u)


def closest_point_polyhedron(R, poly, p):
    """
    Vertex nearest the plane and the matching point on the rounded surface.

    Returns:
        (vertex index, vertex - eps R^T n); ties go to the lowest index
    """
    u = R.T @ p.normal
    index = int(np.argmin(poly.vertices @ u))
    return index, poly.vertices[index] - poly.eps * u


def _leaf_extreme_point(leaf, u):
    return leaf.offset - (leaf.ellipsoid.semiaxes**2) * u / _support_norm(leaf.ellipsoid, u)


def _closest_point_union(leaves, shape, u):
    candidates = [_leaf_extreme_point(leaf, u) for leaf in leaves]
    kept = [c for c in candidates if shape.evaluate(c) >= -CSG_TIE_TOL]
    heights = [float(c @ u) for c in kept]
    return kept[int(np.argmin(heights))]


def _quadratic(leaf, z):
    q = (z - leaf.offset) / leaf.ellipsoid.semiaxes
    return float(q @ q) - 1.0


def _quadratic_grad(leaf, z):
    axes = leaf.ellipsoid.semiaxes
    return 2.0 * (z - leaf.offset) / (axes * axes)


def _closest_point_intersection(leaves, shape, u):
    """
    Lowest point of an intersection of ellipsoids in direction u.

    A leaf's own extreme point wins when it lies inside every other leaf; otherwise the
    minimum sits where two or more leaf boundaries meet and is found by constrained
    minimisation followed by a Newton polish of the KKT system.
    """
    inside = []
    for i, leaf in enumerate(leaves):
        c = _leaf_extreme_point(leaf, u)
        if all(other.evaluate(c) <= CSG_TIE_TOL for j, other in enumerate(leaves) if j != i):
            inside.append(c)
    if inside:
        return min(inside, key=lambda c: float(c @ u))

    lo, hi = shape.bounds()
    centre = 0.5 * (lo + hi)
    half = 0.25 * (hi - lo)
    constraints = [{"type": "ineq", "fun": (lambda z, leaf=leaf: -_quadratic(leaf, z))} for leaf in leaves]

    best = None
    for k in range(CURVE_SEEDS):
        signs = np.array([1.0 if k & (1 << bit) else -1.0 for bit in range(3)])
        result = minimize(
            lambda z: float(z @ u),
            centre + signs * half,
            jac=lambda z: u,
            method="SLSQP",
            constraints=constraints,
            options={"ftol": CURVE_TOL, "maxiter": 200},
        )
        if max(_quadratic(leaf, result.x) for leaf in leaves) > ACTIVE_TOL:
            continue
        if best is None or float(result.x @ u) < float(best @ u):
            best = result.x
    if best is None:
        raise ArithmeticError("No feasible closest point found on the intersection boundary")

    active = [leaf for leaf in leaves if abs(_quadratic(leaf, best)) <= ACTIVE_TOL]
    if not active:
        return best

    def kkt(w):
        z = w[:3]
        mu = w[3:]
        stationarity = u + sum(m * _quadratic_grad(leaf, z) for m, leaf in zip(mu, active, strict=True))
        return np.concatenate([stationarity, [_quadratic(leaf, z) for leaf in active]])

    # Multipliers from least squares at the SLSQP point
    grads = np.column_stack([_quadratic_grad(leaf, best) for leaf in active])
    mu0, *_ = np.linalg.lstsq(grads, -u, rcond=None)
    polished = root(kkt, np.concatenate([best, mu0]), method="hybr", options={"xtol": CURVE_TOL})
    if polished.success and float(polished.x[:3] @ u) <= float(best @ u) + ACTIVE_TOL:
        return polished.x[:3]
    logger.debug(f"KKT polish did not improve the constrained minimum: {polished.message}")
    return best


def _csg_closest_point(shape, u):
    kind, leaves = ellipsoid_leaves(shape)
    if kind == "union":
        rho = _closest_point_union(leaves, shape, u)
        # A crease between two leaves is not a probable configuration
        sdf_grad(shape, rho)
        return rho
    if kind == "intersection":
        return _closest_point_intersection(leaves, shape, u)
    raise UnsupportedShapeError(
        f"No closest-point rule for {type(shape).__name__}; use an ellipsoid, a polyhedron, "
        "or a union or intersection of ellipsoids"
    )


def phi_general(pose, body, p):
    """
    Phi, its partial derivatives, chi and rho_C for any supported body shape.

    Args:
        pose: Body configuration (x, R)
        body: RigidBody whose shape is an ellipsoid, a rounded polyhedron or a
            union/intersection of ellipsoids
        p: Plane

    Returns:
        ContactGeometry at pose

    Raises:
        UnsupportedShapeError: For other shapes.
        GradientUndefinedError: When the closest point sits on a union crease.
    """
    n = p.normal
    R = pose.attitude
    u = R.T @ n
    base = float(n @ pose.position) + p.offset
    shape = body.shape

    if isinstance(shape, EllipsoidNode):
        e = shape.ellipsoid
        c = shape.offset
        norm = _support_norm(e, u)
        phi = base + float(u @ c) - norm
        dphi_dR = np.outer(n, c) - np.outer(n, n) @ R @ np.diag(e.semiaxes**2) / norm
        rho = c - (e.semiaxes**2) * u / norm
    elif isinstance(shape, PolyhedronNode):
        poly = shape.polyhedron
        _, rho = closest_point_polyhedron(R, poly, p)
        vertex = rho + poly.eps * u
        u_norm = float(np.linalg.norm(u))
        phi = base + float(u @ vertex) - poly.eps * u_norm
        dphi_dR = np.outer(n, vertex) - poly.eps * np.outer(n, n) @ R / u_norm
    elif isinstance(shape, (UnionNode, IntersectionNode)):
        rho = _csg_closest_point(shape, u)
        phi = base + float(u @ rho)
        dphi_dR = np.outer(n, rho)
    else:
        raise UnsupportedShapeError(f"No closest-point rule for {type(shape).__name__}")

    return ContactGeometry(phi, n.copy(), dphi_dR, chi_vector(R, dphi_dR), rho)


def ellipsoid_plane_distance(pose, e, p):
    """Distance min |(D + n^T x) +- |I_E R^T n|| between a posed ellipsoid and a plane."""
    s = float(p.normal @ pose.position) + p.offset
    r = _support_norm(e, pose.attitude.T @ p.normal)
    return min(abs(s + r), abs(s - r))


def is_separated(pose, e, p):
    """True iff the posed ellipsoid and the plane do not meet: |I_E R^T n| < |D + n^T x|."""
    s = float(p.normal @ pose.position) + p.offset
    return _support_norm(e, pose.attitude.T @ p.normal) < abs(s)


def pole_of_point(point, e):
    """
    Pole of a point with respect to an ellipsoid: p / f_E(p).

    Raises:
        ValueError: At the ellipsoid centre.
    """
    point = vec3(point)
    f = e.f_e(point)
    if f == 0.0:
        raise ValueError("The centre of an ellipsoid has no pole")
    return point / f


def pole_of_plane(p, e):
    """
    Pole of a plane with respect to an ellipsoid: -(A a^2, B b^2, C c^2) / D.

    Raises:
        ValueError: For planes through the ellipsoid centre.
    """
    if p.offset == 0.0:
        raise ValueError("A plane through the ellipsoid centre has no pole")
    return -(e.semiaxes**2) * p.normal / p.offset


def normal_velocity(state, cg, body):
    """Rate of change of Phi along the motion: dPhi/dx . gamma/m + chi . J^-1 Pi."""
    return float(cg.dphi_dx @ state.gamma) / body.mass + float(cg.chi @ (body.J_inv @ state.Pi))
