#!/usr/bin/env python3
"""
Property suites behind `lgvci_cli.py verify`.

Each suite takes a seeded numpy Generator and returns PropertyResult rows with the
measured value next to the threshold it is held to.
"""

import functools
import logging
from dataclasses import dataclass

import numpy as np
from scipy.spatial.transform import Rotation

from lgvci_body import (
    ComplementNode,
    Ellipsoid,
    EllipsoidNode,
    IntersectionNode,
    PolyhedronNode,
    RigidBody,
    UnionNode,
    composite_centroid,
    cube_polyhedron,
    identity_sj,
    inertia_composite,
    inertia_cube,
    inertia_ellipsoid,
    j_from_jd,
    jd_from_j,
)
from lgvci_contact import (
    Plane,
    chi_vector,
    ellipsoid_plane_distance,
    is_separated,
    normal_velocity,
    phi_ellipsoid,
    phi_general,
    pole_of_plane,
)
from lgvci_driver import SimConfig, run
from lgvci_geometry import (
    Pose,
    cayley_so3,
    exp_so3,
    fd_matrix_gradient,
    fd_vector_gradient,
    lie_inner,
    log_so3,
    rotation_error,
    skew,
    unskew,
)
from lgvci_integrator import (
    SolverConfig,
    State,
    WorldParams,
    continuous_reference,
    del_residual,
    discrete_flow,
    energy,
    jump,
    rotation_residual,
    solve_relative_rotation_report,
)

logger = logging.getLogger("lgvci_verify")

DEFAULT_SEED = 20240607
CASE_III_OFFSET = -0.9937128
CASE_III_RESOLUTION = 128
CASE_III_J = np.diag([7.5932718, 9.9326434, 8.2731252])
INITIAL = {
    "x": np.array([0.0, 0.0, 10.0]),
    "gamma": np.array([2.0, 2.0, 10.0]),
    "Pi": np.array([4.0, -4.0, 4.0]),
}


@dataclass(frozen=True)
class PropertyResult:
    name: str
    passed: bool
    measured: float
    threshold: float

    def line(self):
        status = "PASS" if self.passed else "FAIL"
        return f"[{status}] {self.name}: measured {self.measured:.3e} (threshold {self.threshold:.1e})"


def _check(name, measured, threshold):
    measured = float(measured)
    return PropertyResult(name, bool(measured <= threshold), measured, threshold)


def random_rotations(rng, count):
    return Rotation.random(count, random_state=rng).as_matrix().reshape(count, 3, 3)


def _case_iii_union(c):
    return UnionNode(
        EllipsoidNode(Ellipsoid(3.0, 4.0, 5.0), np.array([1.5 + c, 0.0, 0.0])),
        EllipsoidNode(Ellipsoid(6.0, 1.0, 1.0), np.array([-4.5 + c, 0.0, 0.0])),
    )


@functools.lru_cache(maxsize=1)
def case_iii_offset():
    """
    Axial offset that puts the Case III union's quadrature centroid on the origin.

    The tabulated offset leaves the union about 0.02 short of its centroid along x,
    outside the composite centroid tolerance; the remainder is measured and removed.
    """
    centroid = composite_centroid(_case_iii_union(CASE_III_OFFSET), CASE_III_RESOLUTION)
    logger.debug(f"Case III union centroid at the tabulated offset: {centroid}")
    return CASE_III_OFFSET - float(centroid[0])


def case_iii_shape():
    return _case_iii_union(case_iii_offset())


def case_worlds(g=9.80665):
    """WorldParams for the four bundled cases, keyed by case name."""
    ellipsoid = RigidBody.from_inertia(1.0, inertia_ellipsoid(1.0, 2.0, 3.0, 4.0), EllipsoidNode(Ellipsoid(2, 3, 4)))
    s = 2.0 * np.sqrt(3.0)
    cube = PolyhedronNode(cube_polyhedron(s, 1e-13))
    return {
        "case1": WorldParams(Plane.horizontal(), ellipsoid, g),
        "case2": WorldParams(Plane.from_tilt(2.0), ellipsoid, g),
        "case3": WorldParams(Plane.horizontal(), RigidBody.from_inertia(1.0, CASE_III_J, case_iii_shape()), g),
        "case4": WorldParams(Plane.horizontal(), RigidBody.from_inertia(1.0, inertia_cube(1.0, s), cube), g),
    }


def initial_state(R=None, dx=None):
    x = INITIAL["x"] if dx is None else INITIAL["x"] + dx
    return State(x.copy(), np.eye(3) if R is None else R, INITIAL["gamma"].copy(), INITIAL["Pi"].copy())


def _contact_state(rng, w, R):
    """A state touching the plane at attitude R, moving towards it."""
    cg = phi_general(Pose(np.zeros(3), R), w.body, w.plane)
    x = -cg.phi * w.plane.normal + rng.uniform(-1, 1, 3) * np.array([1.0, 1.0, 0.0])
    x = x - (phi_general(Pose(x, R), w.body, w.plane).phi) * w.plane.normal
    s = State(x, R, rng.normal(0, 5, 3), rng.normal(0, 5, 3))
    cg = phi_general(s.pose, w.body, w.plane)
    if normal_velocity(s, cg, w.body) > 0:
        s = State(s.x, s.R, -s.gamma, -s.Pi)
    return s, cg


# --- suites -----------------------------------------------------------------------


def verify_geometry(rng, count=1000):
    results = []
    rotations = random_rotations(rng, count)
    vectors = rng.normal(size=(count, 3))

    exp_err = max(rotation_error(exp_so3(f)) for f in vectors)
    cay_err = max(rotation_error(cayley_so3(f)) for f in vectors)
    results.append(_check("exp_so3 lands in SO(3)", exp_err, 1e-12))
    results.append(_check("cayley_so3 lands in SO(3)", cay_err, 1e-12))

    small = vectors / np.linalg.norm(vectors, axis=1)[:, None] * rng.uniform(0, 3.0, (count, 1))
    log_err = max(np.linalg.norm(log_so3(exp_so3(f)) - f) for f in small)
    results.append(_check("log_so3 inverts exp_so3", log_err, 1e-10))

    skew_err = max(np.linalg.norm(unskew(skew(v)) - v) for v in vectors)
    inner_err = max(abs(lie_inner(skew(a), skew(b)) - a @ b) for a, b in zip(vectors, vectors[::-1], strict=True))
    results.append(_check("unskew inverts skew", skew_err, 0.0))
    results.append(_check("Lie inner product matches the dot product", inner_err, 1e-12))

    J = inertia_ellipsoid(1.0, 2.0, 3.0, 4.0)
    J_d = jd_from_j(J)
    sj_err = max(np.max(np.abs(np.subtract(*identity_sj(J, J_d, w)))) for w in vectors)
    kinetic_err = max(
        abs(0.5 * np.trace(skew(w) @ J_d @ skew(w).T) - 0.5 * w @ J @ w) / max(1.0, 0.5 * w @ J @ w) for w in vectors
    )
    results.append(_check("S(J w) = S(w) J_d + J_d S(w)", sj_err, 1e-12))
    results.append(_check("Kinetic energy in J_d form equals J form", kinetic_err, 1e-12))

    e = Ellipsoid(2.0, 3.0, 4.0)
    plane = Plane.horizontal()
    sign_mismatch = 0
    pole_mismatch = 0
    isometry_err = 0.0
    for R in rotations:
        pose = Pose(np.array([0.0, 0.0, rng.uniform(-6.0, 6.0)]), R)
        phi = phi_ellipsoid(pose, e, plane)
        separated = is_separated(pose, e, plane)
        sign_mismatch += (phi > 0) != separated and pose.position[2] > 0
        body_plane = plane.pulled_back(pose)
        if body_plane.offset != 0.0:
            pole_mismatch += (e.f_e(pole_of_plane(body_plane, e)) < 1.0) != separated
        if phi > 0:
            at_origin = Pose(np.zeros(3), np.eye(3))
            isometry_err = max(isometry_err, abs(phi - ellipsoid_plane_distance(at_origin, e, body_plane)))
    results.append(_check("Phi > 0 iff separated", sign_mismatch, 0))
    results.append(_check("Separated iff the plane's pole lies inside", pole_mismatch, 0))
    results.append(_check("Phi equals the body-frame plane distance", isometry_err, 1e-12))

    sphere = RigidBody.from_inertia(1.0, inertia_ellipsoid(1.0, 1.5, 1.5, 1.5), EllipsoidNode(Ellipsoid(1.5, 1.5, 1.5)))
    above = np.array([0.0, 0.0, 5.0])
    chi_max = max(float(np.max(np.abs(phi_general(Pose(above, R), sphere, plane).chi))) for R in rotations[:100])
    results.append(_check("chi vanishes for a sphere", chi_max, 1e-14))

    a = EllipsoidNode(Ellipsoid(1.0, 2.0, 1.5), np.array([0.5, 0.0, 0.0]))
    b = EllipsoidNode(Ellipsoid(2.0, 1.0, 1.0), np.array([-0.5, 0.2, 0.0]))
    points = rng.uniform(-3.0, 3.0, (count, 3))
    left = ComplementNode(UnionNode(a, b)).evaluate(points)
    right = IntersectionNode(ComplementNode(a), ComplementNode(b)).evaluate(points)
    results.append(_check("De Morgan consistency of the CSG operators", np.max(np.abs(left - right)), 0.0))
    return results


def verify_inertia(rng, resolution=256):
    results = [
        _check(
            "Ellipsoid inertia reproduces diag(5, 4, 2.6)",
            np.max(np.abs(inertia_ellipsoid(1.0, 2.0, 3.0, 4.0) - np.diag([5.0, 4.0, 2.6]))),
            0.0,
        ),
        _check(
            "Cube inertia reproduces 2 I",
            np.max(np.abs(inertia_cube(1.0, 2.0 * np.sqrt(3.0)) - 2.0 * np.eye(3))),
            1e-14,
        ),
    ]
    J = rng.normal(size=(3, 3))
    J = J @ J.T + np.eye(3)
    results.append(_check("J -> J_d -> J round trip", np.max(np.abs(j_from_jd(jd_from_j(J)) - J)), 1e-12))

    name = f"Union-of-ellipsoids inertia at resolution {resolution}"
    try:
        J3 = inertia_composite(case_iii_shape(), 1.0, resolution)
    except ValueError as e:
        logger.error(f"{name}: {e}")
        results.append(PropertyResult(name, False, float("inf"), 1e-2))
        return results
    rel = np.max(np.abs(np.diag(J3) - np.diag(CASE_III_J)) / np.diag(CASE_III_J))
    results.append(_check(name, rel, 1e-2))
    return results


def verify_jump_conservation(rng, count=1000):
    energy_err = 0.0
    direction_err = 0.0
    angular_err = 0.0
    for w in case_worlds().values():
        for R in random_rotations(rng, count):
            s, cg = _contact_state(rng, w, R)
            lam, s_plus = jump(s, cg, w)
            e_minus = energy(s, w)
            energy_err = max(energy_err, abs(energy(s_plus, w) - e_minus) / max(abs(e_minus), 1.0))
            a = cg.dphi_dx / np.linalg.norm(cg.dphi_dx)
            dg = s_plus.gamma - s.gamma
            direction_err = max(direction_err, float(np.linalg.norm(dg - (dg @ a) * a)))
            angular_err = max(angular_err, float(np.linalg.norm(s_plus.Pi - s.Pi - lam * cg.chi)))
    return [
        _check("Impact conserves energy (relative)", energy_err, 1e-10),
        _check("Linear impulse parallel to dPhi/dx", direction_err, 1e-13),
        _check("Angular impulse equals lambda chi", angular_err, 1e-13),
    ]


def _gradient_errors(rng, w, count, heights=(3.0, 8.0)):
    dx_err = 0.0
    dR_err = 0.0
    chi_err = 0.0
    for R in random_rotations(rng, count):
        x = np.array([rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(*heights)])
        cg = phi_general(Pose(x, R), w.body, w.plane)
        fd_R = fd_matrix_gradient(lambda M, x=x: phi_general(Pose(x, M), w.body, w.plane).phi, R)
        fd_x = fd_vector_gradient(lambda y, R=R: phi_general(Pose(y, R), w.body, w.plane).phi, x)
        dR_err = max(dR_err, float(np.max(np.abs(fd_R - cg.dphi_dR))))
        dx_err = max(dx_err, float(np.max(np.abs(fd_x - cg.dphi_dx))))
        expected_chi = np.cross(cg.rho_C, R.T @ w.plane.normal)
        chi_err = max(chi_err, float(np.max(np.abs(chi_vector(R, cg.dphi_dR) - expected_chi))))
    return dx_err, dR_err, chi_err


def verify_gradients(rng, count=100):
    worlds = case_worlds()
    labels = {"case1": "ellipsoid", "case2": "tilted plane", "case3": "union of ellipsoids", "case4": "rounded cube"}
    results = []
    for key, label in labels.items():
        heights = (8.0, 14.0) if key == "case3" else (3.0, 8.0)
        dx_err, dR_err, chi_err = _gradient_errors(rng, worlds[key], count, heights)
        results.append(_check(f"dPhi/dx matches finite differences ({label})", dx_err, 1e-6))
        results.append(_check(f"dPhi/dR matches finite differences ({label})", dR_err, 1e-6))
        results.append(_check(f"chi equals rho_C x R^T n ({label})", chi_err, 1e-12))
    return results


def verify_solver(rng, count=10000):
    cfg = SolverConfig.from_env()
    cayley = SolverConfig(eps_tol=cfg.eps_tol, max_newton_iters=cfg.max_newton_iters, retraction="cayley")
    shape = EllipsoidNode(Ellipsoid(1.0, 1.0, 1.0))
    residual = 0.0
    agreement = 0.0
    iterations = 0
    rotations = random_rotations(rng, count)
    for Q in rotations:
        J = Q @ np.diag(rng.uniform(1.0, 5.0, 3)) @ Q.T
        J = 0.5 * (J + J.T)
        body = RigidBody.from_inertia(1.0, J, shape)
        direction = rng.normal(size=3)
        g_vec = direction / np.linalg.norm(direction) * rng.uniform(0.0, 0.1) * np.min(np.linalg.eigvalsh(J))
        F_exp, report = solve_relative_rotation_report(g_vec, body, cfg)
        F_cay, _ = solve_relative_rotation_report(g_vec, body, cayley)
        residual = max(residual, rotation_residual(F_exp, g_vec, body), rotation_residual(F_cay, g_vec, body))
        agreement = max(agreement, float(np.max(np.abs(F_exp - F_cay))))
        iterations = max(iterations, report.iterations)
    return [
        _check("Relative rotation residual", residual, 1e-13),
        _check("Exp and Cayley retractions agree", agreement, 1e-10),
        _check("Newton iterations", iterations, 6),
    ]


def sphere_drop_world(g=9.80665):
    body = RigidBody.from_inertia(1.0, inertia_ellipsoid(1.0, 1.0, 1.0, 1.0), EllipsoidNode(Ellipsoid(1.0, 1.0, 1.0)))
    return WorldParams(Plane.horizontal(), body, g)


def verify_sphere_bounce(rng, bounces=10):
    w = sphere_drop_world()
    t_star = np.sqrt(2.0 / w.g)
    h = 0.01
    steps = int(np.ceil((2 * bounces) * t_star / h))
    s0 = State(np.array([0.0, 0.0, 2.0]), np.eye(3), np.zeros(3), np.zeros(3))
    traj = run(s0, w, SimConfig(h=h, M=steps), SolverConfig())
    times = [event.t for event in traj.events][:bounces]
    expected = [(2 * k + 1) * t_star for k in range(bounces)]
    first = abs(times[0] - t_star) if times else np.inf
    later = max((abs(t - e) for t, e in zip(times, expected, strict=False)), default=np.inf)
    reflect = max(
        (float(np.linalg.norm(e.state_plus.gamma + e.state_minus.gamma)) for e in traj.events), default=np.inf
    )
    return [
        _check("First impact at sqrt(2/g)", first, 1e-12),
        _check(f"Impact times over {bounces} bounces", later if len(times) == bounces else np.inf, 1e-9),
        _check("Reflected momentum", reflect, 1e-13),
    ]


def del_rounding_floor(w, q, h_prev, h_next):
    """Rounding level of the difference quotients in del_residual."""
    scale = w.body.mass * max(1.0, float(np.max(np.abs(q.position)))) + float(np.max(np.abs(w.body.J_d)))
    return 8.0 * np.finfo(float).eps * scale / min(h_prev, h_next)


def del_errors(traj, w, tol=1e-10):
    """
    DEL residual of the consecutive sample triple that comes closest to failing.

    Each triple may reach tol plus its own rounding floor. Triples centred on an impact
    must reproduce the impulse instead of vanishing.

    Returns:
        Tuple (residual, allowance) of the triple with the smallest margin
    """
    impacts = {event.t: event for event in traj.events}
    worst = None
    for prev, mid, nxt in zip(traj.samples, traj.samples[1:], traj.samples[2:], strict=False):
        trans, rot = del_residual(prev.state.pose, mid.state.pose, nxt.state.pose, mid.dt, nxt.dt, w)
        event = impacts.get(mid.t)
        if event is not None:
            cg = phi_general(event.state_minus.pose, w.body, w.plane)
            trans = trans - event.lam * cg.dphi_dx
            rot = rot + event.lam * skew(cg.chi)
        residual = max(float(np.max(np.abs(trans))), float(np.max(np.abs(rot))))
        allowance = tol + del_rounding_floor(w, mid.state.pose, mid.dt, nxt.dt)
        if worst is None or residual - allowance > worst[0] - worst[1]:
            worst = (residual, allowance)
    return worst or (0.0, tol)


def verify_del_equivalence(rng, steps=1000):
    w = case_worlds()["case1"]
    traj = run(initial_state(), w, SimConfig(h=0.01, M=steps), SolverConfig())
    residual, allowance = del_errors(traj, w)
    return [
        _check("Impacts within the run", 0 if traj.events else 1, 0),
        _check("DEL residual on every consecutive triple", residual, allowance),
    ]


def structure_errors(traj, w, contact_tol=1e-12):
    """Lie group, momentum, admissibility and impact-energy audits of a trajectory."""
    states = [sample.state for sample in traj.samples]
    orth = max(rotation_error(s.R) for s in states)
    g0 = states[0].gamma
    horizontal = max(float(np.max(np.abs(s.gamma[:2] - g0[:2]))) for s in states)
    phi_min = min(phi_general(s.pose, w.body, w.plane).phi for s in states)
    impact = max(
        (
            abs(energy(e.state_plus, w) - energy(e.state_minus, w)) / abs(energy(e.state_minus, w))
            for e in traj.events
            if not e.grazing
        ),
        default=0.0,
    )
    return orth, horizontal, phi_min, impact


def verify_structure(rng, steps=100000, balance_steps=10000):
    """
    Long cube run audited for Lie group, momentum and energy structure, plus the
    discrete-energy balance at every impact of the four cases under the
    discrete_energy impact law.
    """
    worlds = case_worlds()
    w = worlds["case4"]
    traj = run(initial_state(), w, SimConfig(h=0.01, M=steps), SolverConfig())
    orth, horizontal, phi_min, impact = structure_errors(traj, w)
    drift, direction = traj.energy_drift(w)
    logger.info(f"Case IV energy drift over {steps} steps: {drift:.3e} ({direction})")

    unfinished = [] if traj.termination == "completed" else ["case4"]
    balance = 0.0
    balance_cfg = SimConfig(h=0.01, M=balance_steps, impact_law="discrete_energy")
    for name, de_world in worlds.items():
        de_traj = run(initial_state(), de_world, balance_cfg, SolverConfig())
        if de_traj.termination != "completed":
            unfinished.append(f"{name}/discrete_energy")
        for e in de_traj.events:
            if np.isfinite(e.ed_before) and np.isfinite(e.ed_after):
                balance = max(balance, abs(e.ed_after - e.ed_before) / abs(e.ed_before))
        logger.debug(f"{name}: {len(de_traj.events)} impacts in the discrete-energy balance run")
    if unfinished:
        logger.warning(f"Runs stopped early: {unfinished}")
    return [
        _check("Every run reaches its last step", len(unfinished), 0),
        _check("Impacts within the Case IV run", 0 if traj.events else 1, 0),
        _check("R^T R - I stays at rounding level", orth, 1e-11),
        _check("Horizontal momentum constant", horizontal, 1e-12),
        _check("Samples stay admissible", max(-phi_min, 0.0), 1e-12),
        _check("Impacts conserve energy", impact, 1e-10),
        _check(f"Total energy drift ({direction})", drift, 1e-3),
        _check("Discrete energy balances across impacts", balance, 1e-9),
    ]


def sensitivity_errors(w, steps, collisions=10):
    """
    Err(t) = |x_per - x| + |R_per - R|_2 for a position and an attitude perturbation.

    Returns:
        dict with the initial and final (after `collisions` impacts of the reference run)
        errors of both perturbed runs
    """
    theta = 1e-8 * np.pi
    dR = np.array([[np.cos(theta), 0.0, np.sin(theta)], [0.0, 1.0, 0.0], [-np.sin(theta), 0.0, np.cos(theta)]])
    cfg = SimConfig(h=0.01, M=steps)
    base = run(initial_state(), w, cfg, SolverConfig())
    per_x = run(initial_state(dx=np.array([0.0, 0.0, 1e-8])), w, cfg, SolverConfig())
    per_R = run(initial_state(R=dR), w, cfg, SolverConfig())

    if len(base.events) < collisions:
        raise ValueError(f"Reference run has only {len(base.events)} impacts; increase the step count")
    t_end = base.events[collisions - 1].t

    def err(a, b):
        return float(np.linalg.norm(a.x - b.x) + np.linalg.norm(a.R - b.R, 2))

    def grid(traj):
        return [s for s in traj.samples if s.kind == "grid"]

    out = {}
    for label, other in (("position", per_x), ("attitude", per_R)):
        pairs = [(a, b) for a, b in zip(grid(base), grid(other), strict=False) if a.t <= t_end]
        out[label] = (err(pairs[0][0].state, pairs[0][1].state), max(err(a.state, b.state) for a, b in pairs))
    return out


def verify_sensitivity(rng, steps=6000):
    errors = sensitivity_errors(case_worlds()["case4"], steps)
    results = []
    for label, (initial, final) in errors.items():
        # Reported as the inverse of the growth, so passing means <= 1
        results.append(_check(f"Perturbation ({label}) exceeds 1e-5 within 10 impacts", 1e-5 / final, 1.0))
        results.append(_check(f"Perturbation ({label}) grows 1e3-fold within 10 impacts", 1e3 * initial / final, 1.0))
    return results


def convergence_study(initial, w, hs, horizon=1.0, substeps=10000, cfg=None):
    """
    Error of the discrete flow against the smooth reference flow over a collision-free horizon.

    Returns:
        Tuple (errors per h, fitted order or None when every error is at rounding level)

    Raises:
        ValueError: If fewer than three step sizes are given or the body reaches the plane.
    """
    if len(hs) < 3:
        raise ValueError("A convergence study needs at least three step sizes")
    cfg = cfg or SolverConfig()
    reference = continuous_reference(initial, horizon, w, substeps)
    errors = []
    for h in hs:
        steps = int(round(horizon / h))
        if abs(steps * h - horizon) > 1e-9 * horizon:
            raise ValueError(f"Step size {h} does not divide the horizon {horizon}")
        s = initial
        for _ in range(steps):
            s = discrete_flow(s, h, w, cfg)
            if phi_general(s.pose, w.body, w.plane).phi < 0:
                raise ValueError(f"The body reaches the plane inside the horizon at h = {h}")
        errors.append(
            float(
                np.linalg.norm(s.x - reference.x)
                + np.linalg.norm(s.R - reference.R)
                + np.linalg.norm(s.gamma - reference.gamma)
                + np.linalg.norm(s.Pi - reference.Pi)
            )
        )
    if max(errors) < 1e-11:
        return errors, None
    order = float(np.polyfit(np.log(hs), np.log(errors), 1)[0])
    return errors, order


SUITES = {
    "geometry": verify_geometry,
    "inertia": verify_inertia,
    "jump-conservation": verify_jump_conservation,
    "gradients": verify_gradients,
    "solver": verify_solver,
    "sphere-bounce": verify_sphere_bounce,
    "del-equivalence": verify_del_equivalence,
    "structure": verify_structure,
    "sensitivity": verify_sensitivity,
}


def run_suites(names, seed=DEFAULT_SEED):
    """Run the named suites ("all" for every one) with one seeded generator per suite."""
    if "all" in names:
        names = list(SUITES)
    unknown = [name for name in names if name not in SUITES]
    if unknown:
        raise ValueError(f"Unknown suite(s) {unknown}; choose from {['all', *SUITES]}")
    results = {}
    for name in names:
        logger.info(f"Running suite {name}")
        results[name] = SUITES[name](np.random.default_rng(seed))
    return results
