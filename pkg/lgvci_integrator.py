#!/usr/bin/env python3
"""
Lie group variational integrator for a rigid body under gravity.

The state is carried in Hamiltonian form (x, R, gamma, Pi): position, attitude,
linear momentum and body angular momentum. One step of the discrete flow solves an
implicit equation on SO(3) for the relative rotation F = R_k^T R_{k+1} by Newton's
method and updates everything else explicitly.
"""

import logging
import os
import traceback
from dataclasses import dataclass

import numpy as np
from dotenv import load_dotenv
from scipy.integrate import solve_ivp
from scipy.optimize import brentq

from lgvci_body import RigidBody
from lgvci_contact import Plane
from lgvci_geometry import (
    Pose,
    as_rotation,
    asym,
    cayley_so3,
    exp_so3,
    log_so3,
    skew,
    vec3,
)

logger = logging.getLogger("lgvci_integrator")

E3 = np.array([0.0, 0.0, 1.0])
STANDARD_GRAVITY = 9.80665
RETRACTIONS = ("exp", "cayley")
# Newton stops once the residual reaches rounding level for the problem size
ROUNDING_FACTOR = 8.0
STAGNATION_FACTOR = 1e3
SERIES_THRESHOLD = 1e-4
GRAZING_TOL = 1e-12


class SolverConvergenceError(RuntimeError):
    """Raised when Newton's method for the relative rotation fails to converge."""


class GrazingImpactError(ValueError):
    """Raised when an impact has no nonzero impulse (tangential contact)."""


@dataclass(frozen=True, eq=False)
class State:
    """Position x, attitude R, linear momentum gamma and body angular momentum Pi."""

    x: np.ndarray
    R: np.ndarray
    gamma: np.ndarray
    Pi: np.ndarray

    @classmethod
    def make(cls, x, R, gamma, Pi):
        """Validated constructor; R must be a rotation."""
        return cls(vec3(x), as_rotation(R), vec3(gamma), vec3(Pi))

    @property
    def pose(self):
        return Pose(self.x, self.R)


@dataclass(frozen=True)
class SolverConfig:
    eps_tol: float = 1e-15
    max_newton_iters: int = 50
    retraction: str = "exp"

    def __post_init__(self):
        if not self.eps_tol > 0:
            raise ValueError(f"eps_tol must be positive, got {self.eps_tol}")
        if self.max_newton_iters < 1:
            raise ValueError(f"max_newton_iters must be at least 1, got {self.max_newton_iters}")
        if self.retraction not in RETRACTIONS:
            raise ValueError(f"Unknown retraction {self.retraction!r}; expected one of {RETRACTIONS}")

    @classmethod
    def from_env(cls, **overrides):
        """
        Build a config, taking eps_tol from LGVCI_EPS_TOL when it is set.

        The variable is read from the environment first, then from a .env file next to
        this module.
        """
        value = _load_env_value("LGVCI_EPS_TOL")
        if value is not None and "eps_tol" not in overrides:
            try:
                overrides["eps_tol"] = float(value)
            except ValueError as e:
                raise ValueError(f"LGVCI_EPS_TOL must be a number, got {value!r}") from e
            logger.warning(f"Solver tolerance overridden from environment: eps_tol = {value}")
        return cls(**overrides)


def _load_env_value(name):
    value = os.environ.get(name)
    if value:
        return value
    env_path = os.path.join(os.path.dirname(os.path.abspath(__file__)), ".env")
    if not os.path.exists(env_path):
        return None
    load_dotenv(dotenv_path=env_path)
    return os.environ.get(name) or None


@dataclass(frozen=True, eq=False)
class WorldParams:
    """Gravity, the plane the body collides with, and the body."""

    plane: Plane
    body: RigidBody
    g: float = STANDARD_GRAVITY

    def __post_init__(self):
        if not self.g >= 0:
            raise ValueError(f"Gravity must be nonnegative, got {self.g}")
        if not self.plane.normal[2] > 0:
            raise ValueError("The collision plane must have an upward normal (n_3 > 0)")


@dataclass(frozen=True)
class NewtonReport:
    iterations: int
    residual: float
    retraction: str


# --- relative rotation ----------------------------------------------------------


def _exp_coefficients(theta):
    """sin(t)/t, (1 - cos t)/t^2 and their derivatives divided by t."""
    if theta < SERIES_THRESHOLD:
        t2 = theta * theta
        return 1.0 - t2 / 6.0, 0.5 - t2 / 24.0, -1.0 / 3.0 + t2 / 30.0, -1.0 / 12.0 + t2 / 180.0
    s = np.sin(theta)
    c = np.cos(theta)
    half = np.sin(0.5 * theta) / (0.5 * theta)
    return (
        s / theta,
        0.5 * half * half,
        (theta * c - s) / theta**3,
        (theta * s - 2.0 * (1.0 - c)) / theta**4,
    )


def _exp_residual(f, J):
    theta = float(np.linalg.norm(f))
    sinc, vers, dsinc, dvers = _exp_coefficients(theta)
    jf = J @ f
    cross = np.cross(f, jf)
    value = sinc * jf + vers * cross
    jac = sinc * J + dsinc * np.outer(jf, f) + vers * (skew(f) @ J - skew(jf)) + dvers * np.outer(cross, f)
    return value, jac


def _cayley_residual(f, J):
    scale = 2.0 / (1.0 + float(f @ f))
    jf = J @ f
    inner = jf + np.cross(f, jf)
    value = scale * inner
    jac = scale * (J + skew(f) @ J - skew(jf)) - scale * scale * np.outer(inner, f)
    return value, jac


def _newton(g_vec, body, cfg, retraction):
    J = body.J
    residual_fn = _exp_residual if retraction == "exp" else _cayley_residual
    f = body.J_inv @ g_vec
    if retraction == "cayley":
        f = 0.5 * f

    g_norm = float(np.linalg.norm(g_vec))
    j_norm = float(np.linalg.norm(J, 2))
    tol = cfg.eps_tol * max(1.0, g_norm)
    residual = np.inf
    for iteration in range(cfg.max_newton_iters + 1):
        value, jac = residual_fn(f, J)
        previous = residual
        residual = float(np.linalg.norm(value - g_vec))
        floor = ROUNDING_FACTOR * np.finfo(float).eps * j_norm * float(np.linalg.norm(f))
        if residual <= max(tol, floor):
            if residual > tol:
                logger.debug(f"Accepted {retraction} Newton at rounding level, residual {residual:.3e}")
            return f, NewtonReport(iteration, residual, retraction)
        if residual >= previous and residual <= STAGNATION_FACTOR * max(tol, floor):
            logger.warning(f"{retraction} Newton stagnated at residual {residual:.3e}; accepting the iterate")
            return f, NewtonReport(iteration, residual, retraction)
        if iteration == cfg.max_newton_iters:
            break
        f = f - np.linalg.solve(jac, value - g_vec)
        if retraction == "exp" and np.linalg.norm(f) >= np.pi:
            raise SolverConvergenceError(f"Exp Newton iterate left the injectivity ball: |f| = {np.linalg.norm(f):.6f}")
        logger.debug(f"{retraction} Newton iteration {iteration + 1}: residual {residual:.3e}")

    raise SolverConvergenceError(
        f"{retraction} Newton did not converge in {cfg.max_newton_iters} iterations (residual {residual:.3e})"
    )


def solve_relative_rotation_report(g_vec, body, cfg):
    """
    Solve asym(F J_d) = S(g_vec) for F in SO(3).

    Args:
        g_vec: Right-hand side, h Pi for a flow step
        body: RigidBody providing J and J_d
        cfg: SolverConfig (tolerance, iteration cap, retraction)

    Returns:
        Tuple (F, NewtonReport)

    Raises:
        SolverConvergenceError: If the configured retraction fails and, for exp, the
            Cayley fallback fails as well.
    """
    g_vec = vec3(g_vec)
    if cfg.retraction == "cayley":
        f, report = _newton(g_vec, body, cfg, "cayley")
        return cayley_so3(f), report
    try:
        f, report = _newton(g_vec, body, cfg, "exp")
        return exp_so3(f), report
    except (SolverConvergenceError, np.linalg.LinAlgError) as e:
        logger.warning(f"Exp Newton failed ({e}); retrying with the Cayley retraction")
        try:
            f, report = _newton(g_vec, body, cfg, "cayley")
        except (SolverConvergenceError, np.linalg.LinAlgError) as e2:
            logger.error(f"Cayley Newton failed as well: {e2}")
            logger.error(traceback.format_exc())
            raise SolverConvergenceError(f"Relative rotation solve failed for g = {g_vec}: {e2}") from e2
        return cayley_so3(f), report


def solve_relative_rotation(g_vec, body, cfg):
    """Relative rotation F with asym(F J_d) = S(g_vec); see solve_relative_rotation_report."""
    F, _ = solve_relative_rotation_report(g_vec, body, cfg)
    return F


def rotation_residual(F, g_vec, body):
    """Frobenius norm of asym(F J_d) - S(g_vec)."""
    return float(np.linalg.norm(asym(F @ body.J_d) - skew(g_vec)))


# --- flow, jump and energies ----------------------------------------------------


def discrete_flow(s, h, w, cfg):
    """
    One step of the discrete Hamiltonian flow.

    x' = x + h gamma/m - 1/2 g h^2 e3, gamma' = gamma - m g h e3,
    S(Pi) = asym(F J_d)/h, Pi' = F^T Pi, R' = R F.
    """
    if not h > 0:
        raise ValueError(f"Timestep must be positive, got {h}")
    body = w.body
    m = body.mass
    F = solve_relative_rotation(h * s.Pi, body, cfg)
    return State(
        s.x + (h / m) * s.gamma - (0.5 * w.g * h * h) * E3,
        s.R @ F,
        s.gamma - (m * w.g * h) * E3,
        F.T @ s.Pi,
    )


def jump(s, cg, w):
    """
    Elastic impact map.

    gamma+ = gamma- + lambda dPhi/dx and Pi+ = Pi- + lambda chi, with lambda the nonzero
    root of the energy balance:
        lambda = -(gamma.a/m + chi^T J^-1 Pi) / (|a|^2/(2m) + 1/2 chi^T J^-1 chi)

    Args:
        s: State at the impact configuration
        cg: ContactGeometry at s.pose
        w: WorldParams

    Returns:
        Tuple (lambda, post-impact State)

    Raises:
        GrazingImpactError: If lambda vanishes (tangential contact).
        ValueError: If the denominator is not positive.
    """
    body = w.body
    m = body.mass
    a = cg.dphi_dx
    chi = cg.chi
    j_inv_chi = body.J_inv @ chi
    numerator = float(s.gamma @ a) / m + float(j_inv_chi @ s.Pi)
    denominator = float(a @ a) / (2.0 * m) + 0.5 * float(chi @ j_inv_chi)
    if not denominator > 0:
        raise ValueError(f"Impact denominator must be positive, got {denominator}")
    lam = -numerator / denominator

    scale = max(1.0, float(np.linalg.norm(s.gamma)), float(np.linalg.norm(s.Pi)))
    if abs(lam) < GRAZING_TOL * scale:
        raise GrazingImpactError(f"Grazing impact: lambda = {lam:.3e} vanishes at momentum scale {scale:.3e}")
    return lam, State(s.x, s.R, s.gamma + lam * a, s.Pi + lam * chi)


def energy_split(s, w):
    """
    Energy parts.

    Returns:
        (translational kinetic + potential, rotational kinetic)
    """
    body = w.body
    tpe = float(s.gamma @ s.gamma) / (2.0 * body.mass) + body.mass * w.g * float(s.x[2])
    re = 0.5 * float(s.Pi @ (body.J_inv @ s.Pi))
    return tpe, re


def energy(s, w):
    """Total energy |gamma|^2/2m + 1/2 Pi^T J^-1 Pi + m g x_3."""
    tpe, re = energy_split(s, w)
    return tpe + re


def _versine(theta):
    if theta < SERIES_THRESHOLD:
        return 0.5 - theta * theta / 24.0
    half = np.sin(0.5 * theta) / (0.5 * theta)
    return 0.5 * half * half


def discrete_energy(q_k, q_k1, h, w):
    """
    Discrete energy of the step q_k -> q_k1 of length h:

        m |x_k1 - x_k|^2 / (2h^2) + tr[(I - F) J_d] / h^2 + 1/2 m g e3^T (x_k + x_k1)

    with F = R_k^T R_k1. The trace term is evaluated as (1 - cos t)/t^2 f^T J f with
    f = log(F), t = |f|, which keeps full precision for small rotations.
    """
    if not h > 0:
        raise ValueError(f"Timestep must be positive, got {h}")
    body = w.body
    m = body.mass
    dx = q_k1.position - q_k.position
    f = log_so3(q_k.attitude.T @ q_k1.attitude)
    rotational = _versine(float(np.linalg.norm(f))) * float(f @ (body.J @ f))
    potential = 0.5 * m * w.g * float(q_k.position[2] + q_k1.position[2])
    return m * float(dx @ dx) / (2.0 * h * h) + rotational / (h * h) + potential


def jump_discrete_energy(s, cg, w, cfg, ed_before, h_after):
    """
    Impact map whose impulse balances the discrete energy of the surrounding substeps.

    Starts from the closed-form impulse and refines lambda along the same direction
    (dPhi/dx, chi) until E_d(q~, flow(s+, h_after)) equals ed_before.

    Returns:
        Tuple (lambda, post-impact State)
    """
    lam0, s_plus = jump(s, cg, w)
    if not h_after > 0 or not np.isfinite(ed_before):
        return lam0, s_plus

    def imbalance(lam):
        kicked = State(s.x, s.R, s.gamma + lam * cg.dphi_dx, s.Pi + lam * cg.chi)
        return discrete_energy(s.pose, discrete_flow(kicked, h_after, w, cfg).pose, h_after, w) - ed_before

    lo, hi = sorted((0.5 * lam0, 2.0 * lam0))
    f_lo = imbalance(lo)
    f_hi = imbalance(hi)
    if f_lo * f_hi > 0:
        logger.warning(f"Discrete-energy impulse not bracketed around lambda = {lam0:.6e}; keeping it")
        return lam0, s_plus
    lam = brentq(imbalance, lo, hi, xtol=1e-15 * abs(lam0), rtol=4.0 * np.finfo(float).eps, maxiter=200)
    logger.debug(f"Discrete-energy impulse {lam:.17g} (closed form {lam0:.17g})")
    return lam, State(s.x, s.R, s.gamma + lam * cg.dphi_dx, s.Pi + lam * cg.chi)


def del_residual(q_prev, q, q_next, h_prev, h_next, w):
    """
    Residuals of the discrete Euler-Lagrange equations at the middle pose q.

    Returns:
        (translational residual, rotational residual)
        (m/h_next)(x_next - x) - (m/h_prev)(x - x_prev) + 1/2 m g (h_prev + h_next) e3 and
        asym(J_d F_prev / h_prev - F J_d / h_next), with F_prev = R_prev^T R and
        F = R^T R_next. Both vanish along the discrete flow.
    """
    if not (h_prev > 0 and h_next > 0):
        raise ValueError("Timesteps must be positive")
    body = w.body
    m = body.mass
    translational = (
        (m / h_next) * (q_next.position - q.position)
        - (m / h_prev) * (q.position - q_prev.position)
        + (0.5 * m * w.g * (h_prev + h_next)) * E3
    )
    F_prev = q_prev.attitude.T @ q.attitude
    F = q.attitude.T @ q_next.attitude
    rotational = asym(body.J_d @ F_prev / h_prev - F @ body.J_d / h_next)
    return translational, rotational



def _rigid_body_rhs(body, g):
    m = body.mass
    J_inv = body.J_inv

    def rhs(_, y):
        R = y[3:12].reshape(3, 3)
        gamma = y[12:15]
        Pi = y[15:18]
        omega = J_inv @ Pi
        return np.concatenate([gamma / m, (R @ skew(omega)).reshape(-1), -m * g * E3, np.cross(Pi, omega)])

    return rhs


def continuous_reference(s, t, w, substeps):
    """
    Smooth rigid-body flow over [0, t], used as an accuracy oracle.

    gamma' = -m g e3, Pi' = Pi x Omega, x' = gamma/m, R' = R S(Omega) with
    Omega = J^-1 Pi, integrated with an 8th-order Runge-Kutta method whose step is
    capped at t/substeps. Collisions are ignored.
    """
    if substeps < 1:
        raise ValueError(f"substeps must be at least 1, got {substeps}")
    if t == 0:
        return s
    y0 = np.concatenate([s.x, s.R.reshape(-1), s.gamma, s.Pi])
    sol = solve_ivp(
        _rigid_body_rhs(w.body, w.g),
        (0.0, t),
        y0,
        method="DOP853",
        max_step=abs(t) / substeps,
        rtol=1e-13,
        atol=1e-13,
    )
    if not sol.success:
        raise RuntimeError(f"Reference integration failed: {sol.message}")
    y = sol.y[:, -1]
    return State(y[0:3].copy(), y[3:12].reshape(3, 3).copy(), y[12:15].copy(), y[15:18].copy())
