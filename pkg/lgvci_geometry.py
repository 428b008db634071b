#!/usr/bin/env python3
"""
Exact-dimension linear algebra for R^3, SO(3) and SE(3).

Vectors are numpy arrays of shape (3,), matrices numpy arrays of shape (3, 3).
Everything here is a pure function on values; nothing is cached or mutated.
"""

import logging
from dataclasses import dataclass, field

import numpy as np

logger = logging.getLogger("lgvci_geometry")

# Tolerances (Frobenius / max-abs as noted at each use)
SKEW_TOL = 1e-12
ROTATION_TOL = 1e-12
# Below this angle the trigonometric coefficients switch to their series
SERIES_THRESHOLD = 1e-4

_EYE = np.eye(3)


def vec3(values):
    """
    Convert a sequence to a finite float vector of shape (3,).

    Raises:
        ValueError: If the input does not have three finite components.
    """
    v = np.asarray(values, dtype=float).reshape(-1)
    if v.shape != (3,):
        raise ValueError(f"Expected 3 components, got shape {np.shape(values)}")
    if not np.all(np.isfinite(v)):
        raise ValueError(f"Vector has non-finite components: {v}")
    return v


def mat3(values):
    """Convert a nested sequence (or 9 numbers, row-major) to a finite 3x3 float matrix."""
    m = np.asarray(values, dtype=float)
    if m.shape == (9,):
        m = m.reshape(3, 3)
    if m.shape != (3, 3):
        raise ValueError(f"Expected a 3x3 matrix, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise ValueError("Matrix has non-finite components")
    return m


def skew(v):
    """
    Skew map S: R^3 -> so(3) with S(v) w = v x w.

    Args:
        v: Vector of shape (3,)

    Returns:
        The 3x3 skew-symmetric matrix of v
    """
    return np.array(
        [
            [0.0, -v[2], v[1]],
            [v[2], 0.0, -v[0]],
            [-v[1], v[0], 0.0],
        ]
    )


def _check_skew(m, tol):
    scale = max(1.0, float(np.max(np.abs(m))))
    if np.max(np.abs(m + m.T)) > tol * scale:
        raise ValueError("Matrix is not skew-symmetric within tolerance")


def unskew(m, tol=SKEW_TOL):
    """
    Inverse of the skew map; reads (M32, M13, M21).

    Raises:
        ValueError: If m is not skew-symmetric within tol (relative to its largest entry).
    """
    m = np.asarray(m, dtype=float)
    _check_skew(m, tol)
    return np.array([m[2, 1], m[0, 2], m[1, 0]])


def asym(m):
    """asym(M) = M - M^T."""
    return m - m.T


def sym(m):
    """sym(M) = M + M^T."""
    return m + m.T


def lie_inner(omega1, omega2, tol=SKEW_TOL):
    """
    Inner product on so(3) induced by the trace inner product: 1/2 tr[Omega2^T Omega1].

    Raises:
        ValueError: If either argument is not skew-symmetric.
    """
    _check_skew(np.asarray(omega1, dtype=float), tol)
    _check_skew(np.asarray(omega2, dtype=float), tol)
    return 0.5 * float(np.trace(omega2.T @ omega1))


def _sinc(theta):
    # sin(theta)/theta
    if theta < SERIES_THRESHOLD:
        return 1.0 - theta * theta / 6.0
    return np.sin(theta) / theta


def _versine_coefficient(theta):
    # (1 - cos(theta))/theta^2, written with the half angle to avoid cancellation
    if theta < SERIES_THRESHOLD:
        return 0.5 - theta * theta / 24.0
    half = 0.5 * theta
    s = np.sin(half) / half
    return 0.5 * s * s


def exp_so3(f):
    """
    Rodrigues' formula: exp(S(f)) = I + sin|f|/|f| S(f) + (1 - cos|f|)/|f|^2 S(f)^2.

    Args:
        f: Rotation vector of shape (3,)

    Returns:
        Rotation matrix
    """
    theta = float(np.linalg.norm(f))
    s = skew(f)
    return _EYE + _sinc(theta) * s + _versine_coefficient(theta) * (s @ s)


def cayley_so3(f):
    """Cayley transform (I + S(f))(I - S(f))^-1 in its explicit, inverse-free form."""
    n2 = float(np.dot(f, f))
    s = skew(f)
    return _EYE + (2.0 * s + 2.0 * (s @ s)) / (1.0 + n2)


def log_so3(rotation):
    """
    Rotation vector f with exp_so3(f) = R, for rotation angles below pi.

    Uses atan2 on (sin, cos) of the angle so small rotations keep full relative precision.
    """
    r = np.asarray(rotation, dtype=float)
    v = 0.5 * np.array([r[2, 1] - r[1, 2], r[0, 2] - r[2, 0], r[1, 0] - r[0, 1]])
    sin_theta = float(np.linalg.norm(v))
    cos_theta = 0.5 * (float(np.trace(r)) - 1.0)
    theta = np.arctan2(sin_theta, cos_theta)
    if theta < SERIES_THRESHOLD:
        return v * (1.0 + theta * theta / 6.0)
    return v * (theta / sin_theta)


def rotation_error(m):
    """Frobenius norm of M^T M - I."""
    return float(np.linalg.norm(m.T @ m - _EYE))


def is_rotation(m, tol=ROTATION_TOL):
    """True when M is orthogonal with unit determinant within tol."""
    m = np.asarray(m, dtype=float)
    if m.shape != (3, 3) or not np.all(np.isfinite(m)):
        return False
    return rotation_error(m) <= tol and abs(np.linalg.det(m) - 1.0) <= tol


def as_rotation(m, tol=ROTATION_TOL):
    """
    Validate a matrix as an element of SO(3) once, at the boundary.

    Internal products of rotations are trusted afterwards; re-orthogonalising here
    would hide the integrator's drift.

    Raises:
        ValueError: If the matrix is not a rotation within tol.
    """
    m = mat3(m)
    if not is_rotation(m, tol):
        raise ValueError(
            f"Matrix is not in SO(3): |R^T R - I| = {rotation_error(m):.3e}, det = {np.linalg.det(m):.15f}"
        )
    return m


def project_to_so3(m):
    """Nearest rotation in the Frobenius sense (polar factor through the SVD)."""
    u, _, vt = np.linalg.svd(mat3(m))
    d = np.sign(np.linalg.det(u @ vt))
    return u @ np.diag([1.0, 1.0, d]) @ vt


@dataclass(frozen=True, eq=False)
class Pose:
    """Configuration (x, R) in SE(3); acts on body points as z -> R z + x."""

    position: np.ndarray = field(default_factory=lambda: np.zeros(3))
    attitude: np.ndarray = field(default_factory=lambda: np.eye(3))

    @classmethod
    def identity(cls):
        return cls(np.zeros(3), np.eye(3))

    @classmethod
    def make(cls, position, attitude, tol=ROTATION_TOL):
        """Validated constructor."""
        return cls(vec3(position), as_rotation(attitude, tol))

    def matrix(self):
        """4x4 homogeneous transformation."""
        t = np.eye(4)
        t[:3, :3] = self.attitude
        t[:3, 3] = self.position
        return t


def apply_pose(a, z):
    """T_(x,R)(z) = R z + x."""
    return a.attitude @ z + a.position


def compose_pose(a, b):
    """Pose of the homogeneous product T_a T_b."""
    return Pose(a.attitude @ b.position + a.position, a.attitude @ b.attitude)


def inverse_pose(a):
    """T_(x,R)^-1 = T_(R^T) o T_(-x), i.e. the pose (-R^T x, R^T)."""
    rt = a.attitude.T
    return Pose(-(rt @ a.position), rt)


def fd_matrix_gradient(field_fn, point, step=1e-6):
    """
    Central-difference approximation of d field / d X, entry by entry.

    Args:
        field_fn: Scalar function of a 3x3 matrix
        point: Matrix at which to differentiate
        step: Perturbation size (> 0)

    Returns:
        3x3 matrix of partial derivatives
    """
    if step <= 0:
        raise ValueError("Finite-difference step must be positive")
    x = np.array(point, dtype=float)
    grad = np.zeros_like(x)
    for i in range(x.shape[0]):
        for j in range(x.shape[1]):
            e = np.zeros_like(x)
            e[i, j] = step
            grad[i, j] = (field_fn(x + e) - field_fn(x - e)) / (2.0 * step)
    return grad


def fd_vector_gradient(field_fn, point, step=1e-6):
    """Central-difference gradient of a scalar function of a 3-vector."""
    if step <= 0:
        raise ValueError("Finite-difference step must be positive")
    x = np.array(point, dtype=float)
    grad = np.zeros(3)
    for i in range(3):
        e = np.zeros(3)
        e[i] = step
        grad[i] = (field_fn(x + e) - field_fn(x - e)) / (2.0 * step)
    return grad
