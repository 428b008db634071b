#!/usr/bin/env python3
"""
Event-driven simulation loop.

Each grid step flows the state by h. When the flowed state interpenetrates the plane
the impact time is located by bisection, the impact map is applied, and the rest of
the step is flowed again; this repeats until the step completes or the per-step
impact count exceeds the Zeno guard.
"""

import logging
import math
import traceback
from dataclasses import dataclass, field

import numpy as np

from lgvci_contact import normal_velocity, phi_general
from lgvci_integrator import (
    GrazingImpactError,
    SolverConvergenceError,
    discrete_energy,
    discrete_flow,
    energy,
    jump,
    jump_discrete_energy,
)

logger = logging.getLogger("lgvci_driver")

IMPACT_LAWS = ("momentum", "discrete_energy")
TERMINATIONS = ("completed", "zeno_guard", "solver_failure")


class BisectionError(RuntimeError):
    """Raised when the impact time cannot be bracketed or located."""


class ZenoGuardError(RuntimeError):
    """Raised when a single grid step needs more impacts than the configured cap."""

    def __init__(self, message, events):
        super().__init__(message)
        self.events = events


@dataclass(frozen=True)
class SimConfig:
    h: float
    M: int
    contact_tol: float = 1e-12
    zeno_j_max: int = 64
    bisection_max_iters: int = 200
    impact_law: str = "momentum"

    def __post_init__(self):
        if not self.h > 0:
            raise ValueError(f"Timestep h must be positive, got {self.h}")
        if self.M < 1:
            raise ValueError(f"Step count M must be at least 1, got {self.M}")
        if not self.contact_tol > 0:
            raise ValueError(f"contact_tol must be positive, got {self.contact_tol}")
        if self.zeno_j_max < 1:
            raise ValueError(f"zeno_j_max must be at least 1, got {self.zeno_j_max}")
        if self.bisection_max_iters < 1:
            raise ValueError(f"bisection_max_iters must be at least 1, got {self.bisection_max_iters}")
        if self.impact_law not in IMPACT_LAWS:
            raise ValueError(f"Unknown impact law {self.impact_law!r}; expected one of {IMPACT_LAWS}")


@dataclass(frozen=True, eq=False)
class CollisionEvent:
    """
    One impact inside a grid step.

    alpha is this impact's fraction of the step measured from the previous impact (or
    the step start); alpha_tot is the running sum within the step. alpha == 0 marks an
    impact that coincides with the grid time.
    """

    t: float
    alpha: float
    alpha_tot: float
    lam: float
    state_minus: object
    state_plus: object
    grazing: bool = False
    phi_minus: float = float("nan")
    ed_before: float = float("nan")
    ed_after: float = float("nan")


@dataclass(frozen=True, eq=False)
class Sample:
    """A trajectory point; dt is the length of the flow segment that ended here."""

    t: float
    state: object
    kind: str
    dt: float


@dataclass(eq=False)
class Trajectory:
    samples: list = field(default_factory=list)
    events: list = field(default_factory=list)
    termination: str = "completed"

    def times(self):
        return np.array([sample.t for sample in self.samples])

    def grid_states(self):
        """States at t = kh."""
        return [sample.state for sample in self.samples if sample.kind == "grid"]

    def energies(self, w):
        return np.array([energy(sample.state, w) for sample in self.samples])

    def energy_drift(self, w):
        """
        Largest relative deviation of the total energy from its initial value.

        Returns:
            Tuple (max relative drift, direction of the final drift:
            "increasing", "decreasing" or "none")
        """
        values = self.energies(w)
        if values.size == 0:
            return 0.0, "none"
        reference = max(abs(values[0]), np.finfo(float).tiny)
        drift = float(np.max(np.abs(values - values[0])) / reference)
        final = values[-1] - values[0]
        direction = "increasing" if final > 0 else "decreasing" if final < 0 else "none"
        return drift, direction


def _phi(state, w):
    return phi_general(state.pose, w.body, w.plane).phi


def bisect_impact(s, h_window, w, solver_cfg, sim_cfg):
    """
    Locate the impact inside a flow window by bisection on the fraction alpha.

    The admissible endpoint is always kept, so the returned state never interpenetrates.

    Args:
        s: Admissible state at the window start
        h_window: Window length; flowing s by h_window must interpenetrate
        w: WorldParams
        solver_cfg: SolverConfig for the flow
        sim_cfg: SimConfig (contact band and iteration cap)

    Returns:
        Tuple (alpha, state flowed by alpha * h_window) with 0 <= Phi <= contact_tol,
        or the admissible end of an interval narrower than eps_tol

    Raises:
        BisectionError: If the window does not bracket an impact or the cap is hit.
    """
    phi_start = _phi(s, w)
    if phi_start < 0:
        raise BisectionError(f"Bisection start interpenetrates the plane: Phi = {phi_start:.3e}")
    phi_end = _phi(discrete_flow(s, h_window, w, solver_cfg), w)
    if phi_end >= 0:
        raise BisectionError(f"No impact inside the window: Phi at its end = {phi_end:.3e}")

    lo, hi = 0.0, 1.0
    s_lo = s
    for iteration in range(sim_cfg.bisection_max_iters):
        mid = 0.5 * (lo + hi)
        s_mid = discrete_flow(s, mid * h_window, w, solver_cfg)
        phi_mid = _phi(s_mid, w)
        if 0.0 <= phi_mid <= sim_cfg.contact_tol:
            logger.debug(f"Bisection converged after {iteration + 1} iterations: alpha = {mid!r}, Phi = {phi_mid:.3e}")
            return mid, s_mid
        if phi_mid > 0:
            lo, s_lo = mid, s_mid
        else:
            hi = mid
        if hi - lo <= solver_cfg.eps_tol:
            phi_lo = _phi(s_lo, w)
            if phi_lo > sim_cfg.contact_tol:
                logger.warning(
                    f"Bisection interval collapsed outside the contact band: alpha = {lo!r}, Phi = {phi_lo:.3e} "
                    f"> {sim_cfg.contact_tol:.1e}"
                )
            else:
                logger.debug(f"Bisection interval collapsed at alpha = {lo!r}, Phi = {phi_lo:.3e}")
            return lo, s_lo
    raise BisectionError(f"Bisection did not converge in {sim_cfg.bisection_max_iters} iterations")


def _impact(s_tilde, w, sim_cfg, solver_cfg, ed_before, h_after):
    cg = phi_general(s_tilde.pose, w.body, w.plane)
    try:
        if sim_cfg.impact_law == "discrete_energy":
            lam, s_plus = jump_discrete_energy(s_tilde, cg, w, solver_cfg, ed_before, h_after)
        else:
            lam, s_plus = jump(s_tilde, cg, w)
        return cg, lam, s_plus, False
    except GrazingImpactError as e:
        logger.warning(f"{e}; continuing without an impulse")
        return cg, 0.0, s_tilde, True


def resolve_step_with_collisions(s, w, sim_cfg, solver_cfg, t0=0.0, previous=None):
    """
    Advance one grid step, handling every impact inside it.

    Args:
        s: Admissible state at the start of the step
        w: WorldParams
        sim_cfg: SimConfig
        solver_cfg: SolverConfig
        t0: Time of the step start
        previous: (pose, length) of the flow segment that ended at s, used for the
            discrete energy of impacts at the step start

    Returns:
        Tuple (list of CollisionEvent, state at t0 + h)

    Raises:
        ZenoGuardError: If more than zeno_j_max impacts occur in the step.
    """
    h = sim_cfg.h
    events = []
    alphas = []
    current = s

    def record(s_tilde, alpha, ed_before):
        nonlocal current
        alpha_tot = math.fsum(alphas)
        h_after = (1.0 - alpha_tot) * h
        cg, lam, s_plus, grazing = _impact(s_tilde, w, sim_cfg, solver_cfg, ed_before, h_after)
        trial = discrete_flow(s_plus, h_after, w, solver_cfg) if h_after > 0 else s_plus
        ed_after = discrete_energy(s_plus.pose, trial.pose, h_after, w) if h_after > 0 else float("nan")
        t = t0 + alpha_tot * h
        events.append(
            CollisionEvent(t, alpha, alpha_tot, lam, s_tilde, s_plus, grazing, cg.phi, ed_before, ed_after)
        )
        logger.info(f"Impact at t = {t:.12f} (alpha = {alpha:.6e}, lambda = {lam:.6e}{', grazing' if grazing else ''})")
        current = s_plus
        return trial

    cg = phi_general(current.pose, w.body, w.plane)
    if cg.phi <= sim_cfg.contact_tol and normal_velocity(current, cg, w.body) < 0:
        ed_before = discrete_energy(previous[0], current.pose, previous[1], w) if previous else float("nan")
        trial = record(current, 0.0, ed_before)
    else:
        trial = discrete_flow(current, h, w, solver_cfg)

    while _phi(trial, w) < 0:
        if len(events) + 1 > sim_cfg.zeno_j_max:
            raise ZenoGuardError(f"More than {sim_cfg.zeno_j_max} impacts in the step starting at t = {t0}", events)
        window = (1.0 - math.fsum(alphas)) * h
        alpha_rel, s_tilde = bisect_impact(current, window, w, solver_cfg, sim_cfg)
        alpha = alpha_rel * window / h
        ed_before = discrete_energy(current.pose, s_tilde.pose, alpha * h, w) if alpha > 0 else float("nan")
        alphas.append(alpha)
        trial = record(s_tilde, alpha, ed_before)

    return events, trial


def _append_events(traj, events, h):
    for event in events:
        if event.alpha == 0.0:
            # Impact at the grid time: the stored grid sample becomes the post-impact state
            last = traj.samples[-1]
            traj.samples[-1] = Sample(last.t, event.state_plus, last.kind, last.dt)
        else:
            traj.samples.append(Sample(event.t, event.state_plus, "impact", event.alpha * h))
        traj.events.append(event)


def run(initial, w, sim_cfg, solver_cfg):
    """
    Simulate M grid steps from an admissible initial state.

    Solver failures and the Zeno guard end the run early and are reported through
    Trajectory.termination; the samples up to that point remain valid.

    Raises:
        ValueError: If the initial state interpenetrates the plane.
    """
    phi0 = _phi(initial, w)
    if phi0 < 0:
        raise ValueError(f"Initial state interpenetrates the plane: Phi = {phi0:.6e}")

    h = sim_cfg.h
    traj = Trajectory(samples=[Sample(0.0, initial, "grid", 0.0)])
    s = initial
    previous = None
    for k in range(sim_cfg.M):
        try:
            events, s_next = resolve_step_with_collisions(s, w, sim_cfg, solver_cfg, t0=k * h, previous=previous)
        except ZenoGuardError as e:
            logger.warning(f"Zeno guard triggered: {e}")
            _append_events(traj, e.events, h)
            traj.termination = "zeno_guard"
            break
        except (SolverConvergenceError, BisectionError) as e:
            logger.error(f"Simulation stopped at step {k}: {e}")
            logger.error(traceback.format_exc())
            traj.termination = "solver_failure"
            break

        _append_events(traj, events, h)
        if events:
            last = events[-1]
            dt = (1.0 - last.alpha_tot) * h
            previous = (last.state_plus.pose, dt)
        else:
            dt = h
            previous = (s.pose, h)
        traj.samples.append(Sample((k + 1) * h, s_next, "grid", dt))
        s = s_next

    logger.info(f"Run finished after {len(traj.samples)} samples and {len(traj.events)} impacts: {traj.termination}")
    return traj
