#!/usr/bin/env python3
"""
Scenario files, trajectory/event persistence and energy plots.

Scenarios are JSON documents (schema_version 1). Trajectories and events are written
as CSV with 17 significant digits so every number parses back to the same double.
"""

import csv
import io
import json
import logging
from dataclasses import dataclass, field

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from lgvci_body import (  # noqa: E402
    ConvexPolyhedron,
    Ellipsoid,
    EllipsoidNode,
    IntersectionNode,
    PolyhedronNode,
    RigidBody,
    UnionNode,
    composite_mass_properties,
    cube_polyhedron,
    inertia_cube,
    inertia_ellipsoid,
)
from lgvci_contact import Plane, phi_general  # noqa: E402
from lgvci_driver import Sample, SimConfig, Trajectory  # noqa: E402
from lgvci_geometry import is_rotation, mat3, project_to_so3, rotation_error, vec3  # noqa: E402
from lgvci_integrator import SolverConfig, State, WorldParams, energy  # noqa: E402

logger = logging.getLogger("lgvci_scenario")

SCHEMA_VERSION = 1
BODY_TYPES = ("ellipsoid", "cube", "polyhedron", "union_of_ellipsoids", "intersection_of_ellipsoids")
COMPOSITE_TYPES = ("union_of_ellipsoids", "intersection_of_ellipsoids")
# Hand-edited rotations within this tolerance are projected back onto SO(3)
ROTATION_LOAD_TOL = 1e-9
DEFAULT_RESOLUTION = 128
DEFAULT_OUTPUTS = {
    "trajectory": "trajectory.csv",
    "events": "events.csv",
    "plot": "energy.svg",
    "summary": "summary.json",
}

TRAJECTORY_COLUMNS = (
    ["t", "x1", "x2", "x3"]
    + [f"R{i}{j}" for i in range(1, 4) for j in range(1, 4)]
    + ["gamma1", "gamma2", "gamma3", "Pi1", "Pi2", "Pi3", "kind", "energy", "phi"]
)
EVENT_COLUMNS = [
    "t",
    "alpha",
    "alpha_tot",
    "lambda",
    "grazing",
    "energy_minus",
    "energy_plus",
    "phi_minus",
    "ed_before",
    "ed_after",
]


class ScenarioError(ValueError):
    """Raised for malformed scenarios and inadmissible initial states."""


def _num(value):
    return format(float(value), ".17g")


@dataclass(eq=False)
class Scenario:
    """
    A parsed, validated scenario.

    The document-level fields are kept as given so dump_scenario reproduces them; the
    body, plane, world and initial state are built from them on construction.
    """

    name: str
    body_def: dict
    mass: float
    plane_def: dict
    initial: State
    sim: SimConfig
    solver: SolverConfig
    J_override: np.ndarray = None
    gravity: float = 9.80665
    description: str = ""
    resolution: int = DEFAULT_RESOLUTION
    outputs: dict = field(default_factory=lambda: dict(DEFAULT_OUTPUTS))
    body: RigidBody = field(init=False, repr=False)
    plane: Plane = field(init=False, repr=False)
    world: WorldParams = field(init=False, repr=False)
    centroid: np.ndarray = field(init=False, repr=False, default=None)

    def __post_init__(self):
        shape = build_shape(self.body_def)
        # Composite bodies always go through quadrature so their centroid is checked
        if self.J_override is None or self.body_def.get("type") in COMPOSITE_TYPES:
            J, self.centroid = _shape_inertia(self.body_def, shape, self.mass, self.resolution)
        if self.J_override is not None:
            J = mat3(self.J_override)
        try:
            self.body = RigidBody.from_inertia(self.mass, J, shape)
            self.plane = build_plane(self.plane_def)
            self.world = WorldParams(self.plane, self.body, self.gravity)
        except ValueError as e:
            raise ScenarioError(f"Scenario {self.name!r}: {e}") from e

        phi0 = phi_general(self.initial.pose, self.body, self.plane).phi
        if phi0 < 0:
            raise ScenarioError(f"Scenario {self.name!r}: initial state interpenetrates the plane (Phi = {phi0:.6e})")


def build_shape(definition):
    """Shape tree for a body definition."""
    kind = definition.get("type")
    try:
        if kind == "ellipsoid":
            return EllipsoidNode(Ellipsoid(definition["a"], definition["b"], definition["c"]))
        if kind == "cube":
            return PolyhedronNode(cube_polyhedron(definition["s"], definition["eps"]))
        if kind == "polyhedron":
            return PolyhedronNode(ConvexPolyhedron(np.asarray(definition["vertices"], dtype=float), definition["eps"]))
        if kind in COMPOSITE_TYPES:
            parts = definition["ellipsoids"]
            if len(parts) < 2:
                raise ScenarioError(f"{kind} needs at least two ellipsoids")
            nodes = [EllipsoidNode(Ellipsoid(p["a"], p["b"], p["c"]), vec3(p.get("offset", [0, 0, 0]))) for p in parts]
            combine = UnionNode if kind == "union_of_ellipsoids" else IntersectionNode
            tree = nodes[0]
            for node in nodes[1:]:
                tree = combine(tree, node)
            return tree
    except KeyError as e:
        raise ScenarioError(f"Body of type {kind!r} is missing field {e}") from e
    except ScenarioError:
        raise
    except ValueError as e:
        raise ScenarioError(f"Invalid {kind} body: {e}") from e
    raise ScenarioError(f"Unknown body type {kind!r}; expected one of {BODY_TYPES}")


def _shape_inertia(definition, shape, mass, resolution):
    try:
        if definition["type"] == "ellipsoid":
            return inertia_ellipsoid(mass, definition["a"], definition["b"], definition["c"]), None
        if definition["type"] == "cube":
            return inertia_cube(mass, definition["s"]), None
        return composite_mass_properties(shape, mass, resolution)
    except ValueError as e:
        raise ScenarioError(f"Cannot compute the inertia of the {definition['type']} body: {e}") from e


def build_plane(definition):
    if "tilt_deg" in definition and "normal" in definition:
        raise ScenarioError("Give the plane as either normal or tilt_deg, not both")
    offset = definition.get("offset", 0.0)
    try:
        if "tilt_deg" in definition:
            return Plane.from_tilt(definition["tilt_deg"], offset)
        return Plane(np.asarray(definition.get("normal", [0.0, 0.0, 1.0]), dtype=float), offset)
    except ValueError as e:
        raise ScenarioError(f"Invalid plane: {e}") from e


def _load_rotation(values, name):
    try:
        R = mat3(values)
    except ValueError as e:
        raise ScenarioError(f"Scenario {name!r}: R must be 9 numbers, row-major: {e}") from e
    if is_rotation(R):
        return R
    error = rotation_error(R)
    if error > ROTATION_LOAD_TOL or np.linalg.det(R) <= 0:
        raise ScenarioError(f"Scenario {name!r}: R is not a rotation (|R^T R - I| = {error:.3e})")
    projected = project_to_so3(R)
    logger.warning(f"Scenario {name!r}: R was {error:.3e} away from SO(3); using its polar projection")
    return projected


def load_scenario(text):
    """
    Parse and validate a scenario document.

    Args:
        text: JSON text

    Returns:
        Scenario

    Raises:
        ScenarioError: For malformed documents, invalid bodies or planes, and initial
            states that interpenetrate the plane.
    """
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise ScenarioError(f"Scenario is not valid JSON: {e}") from e
    if not isinstance(doc, dict):
        raise ScenarioError("Scenario must be a JSON object")
    if doc.get("schema_version") != SCHEMA_VERSION:
        raise ScenarioError(f"Unsupported schema_version {doc.get('schema_version')!r}; expected {SCHEMA_VERSION}")

    name = doc.get("name", "scenario")
    try:
        init = doc["initial"]
        sim = doc["sim"]
        initial = State(
            vec3(init["x"]),
            _load_rotation(init.get("R", [1, 0, 0, 0, 1, 0, 0, 0, 1]), name),
            vec3(init["gamma"]),
            vec3(init["Pi"]),
        )
        sim_cfg = SimConfig(**sim)
        solver_cfg = SolverConfig(**doc.get("solver", {}))
        J_override = doc.get("J")
        return Scenario(
            name=name,
            body_def=doc["body"],
            mass=float(doc["mass"]),
            plane_def=doc.get("plane", {"normal": [0.0, 0.0, 1.0]}),
            initial=initial,
            sim=sim_cfg,
            solver=solver_cfg,
            J_override=None if J_override is None else mat3(J_override),
            gravity=float(doc.get("gravity", 9.80665)),
            description=doc.get("description", ""),
            resolution=int(doc.get("inertia", {}).get("resolution", DEFAULT_RESOLUTION)),
            outputs={**DEFAULT_OUTPUTS, **doc.get("outputs", {})},
        )
    except KeyError as e:
        raise ScenarioError(f"Scenario {name!r} is missing field {e}") from e
    except TypeError as e:
        raise ScenarioError(f"Scenario {name!r} has an unexpected field: {e}") from e
    except ScenarioError:
        raise
    except ValueError as e:
        raise ScenarioError(f"Scenario {name!r} is invalid: {e}") from e


def dump_scenario(scenario):
    """JSON text that load_scenario parses back to the same scenario."""
    doc = {
        "schema_version": SCHEMA_VERSION,
        "name": scenario.name,
        "description": scenario.description,
        "body": scenario.body_def,
        "mass": scenario.mass,
        "gravity": scenario.gravity,
        "plane": scenario.plane_def,
        "initial": {
            "x": scenario.initial.x.tolist(),
            "R": scenario.initial.R.reshape(-1).tolist(),
            "gamma": scenario.initial.gamma.tolist(),
            "Pi": scenario.initial.Pi.tolist(),
        },
        "sim": {
            "h": scenario.sim.h,
            "M": scenario.sim.M,
            "contact_tol": scenario.sim.contact_tol,
            "zeno_j_max": scenario.sim.zeno_j_max,
            "bisection_max_iters": scenario.sim.bisection_max_iters,
            "impact_law": scenario.sim.impact_law,
        },
        "solver": {
            "eps_tol": scenario.solver.eps_tol,
            "max_newton_iters": scenario.solver.max_newton_iters,
            "retraction": scenario.solver.retraction,
        },
        "inertia": {"resolution": scenario.resolution},
        "outputs": scenario.outputs,
    }
    if scenario.J_override is not None:
        doc["J"] = scenario.J_override.tolist()
    return json.dumps(doc, indent=2) + "\n"


def _trajectory_row(sample, w):
    s = sample.state
    phi = phi_general(s.pose, w.body, w.plane).phi
    numbers = [sample.t, *s.x, *s.R.reshape(-1), *s.gamma, *s.Pi]
    return [_num(v) for v in numbers] + [sample.kind, _num(energy(s, w)), _num(phi)]


def write_trajectory(traj, w, sink):
    """Write one CSV row per sample: t, x, R (row-major), gamma, Pi, kind, energy, Phi."""
    writer = csv.writer(sink, lineterminator="\n")
    writer.writerow(TRAJECTORY_COLUMNS)
    for sample in traj.samples:
        writer.writerow(_trajectory_row(sample, w))


def write_events(traj, w, sink):
    """Write one CSV row per collision event."""
    writer = csv.writer(sink, lineterminator="\n")
    writer.writerow(EVENT_COLUMNS)
    for event in traj.events:
        writer.writerow(
            [
                _num(event.t),
                _num(event.alpha),
                _num(event.alpha_tot),
                _num(event.lam),
                "1" if event.grazing else "0",
                _num(energy(event.state_minus, w)),
                _num(energy(event.state_plus, w)),
                _num(event.phi_minus),
                _num(event.ed_before),
                _num(event.ed_after),
            ]
        )


def read_trajectory(source):
    """
    Parse a trajectory CSV back into a Trajectory.

    Segment lengths are recovered from time differences. Events are not stored in this
    file; see read_events.
    """
    reader = csv.reader(source)
    header = next(reader, None)
    if header != TRAJECTORY_COLUMNS:
        raise ValueError(f"Unexpected trajectory header: {header}")
    samples = []
    previous_t = None
    for row in reader:
        if len(row) != len(TRAJECTORY_COLUMNS):
            raise ValueError(f"Trajectory row has {len(row)} columns, expected {len(TRAJECTORY_COLUMNS)}")
        values = [float(v) for v in row[:19]]
        t = values[0]
        if previous_t is not None and not t > previous_t:
            raise ValueError(f"Trajectory times are not strictly increasing at t = {t!r}")
        state = State(
            np.array(values[1:4]),
            np.array(values[4:13]).reshape(3, 3),
            np.array(values[13:16]),
            np.array(values[16:19]),
        )
        samples.append(Sample(t, state, row[19], 0.0 if previous_t is None else t - previous_t))
        previous_t = t
    return Trajectory(samples=samples)


def read_events(source):
    """Parse an events CSV into a list of dicts of floats (grazing as bool)."""
    reader = csv.DictReader(source)
    if reader.fieldnames != EVENT_COLUMNS:
        raise ValueError(f"Unexpected events header: {reader.fieldnames}")
    rows = []
    for row in reader:
        parsed = {key: float(value) for key, value in row.items() if key != "grazing"}
        parsed["grazing"] = row["grazing"] == "1"
        rows.append(parsed)
    return rows


def summarize(traj, w):
    """Run summary: event counts, energy drift and the world data needed to re-plot."""
    drift, direction = traj.energy_drift(w)
    return {
        "termination": traj.termination,
        "samples": len(traj.samples),
        "events": len(traj.events),
        "grazing_events": sum(1 for event in traj.events if event.grazing),
        "energy_initial": energy(traj.samples[0].state, w) if traj.samples else None,
        "energy_drift": drift,
        "energy_drift_direction": direction,
        "mass": w.body.mass,
        "gravity": w.g,
        "J": w.body.J.tolist(),
    }


def write_summary(traj, w, path):
    summary = summarize(traj, w)
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        json.dump(summary, f, indent=2)
        f.write("\n")
    return summary


def _impact_times(traj):
    if traj.events:
        return [event.t for event in traj.events]
    # Trajectories read back from CSV carry impacts only as samples
    return [sample.t for sample in traj.samples if sample.kind == "impact"]


def render_energy_svg(traj, w, mass=None, J_inv=None, g=None):
    """
    SVG line plot of total energy, translational+potential energy (T.P.E.) and
    rotational energy (R.E.) against time, with impact times marked.

    The world parameters may be replaced by explicit mass, J_inv and g, which is how a
    plot is regenerated from a stored trajectory and its summary.

    Returns:
        SVG document as a string
    """
    if not traj.samples:
        raise ValueError("Cannot plot an empty trajectory")
    m = w.body.mass if mass is None else mass
    J_inv = w.body.J_inv if J_inv is None else J_inv
    g = w.g if g is None else g

    t = traj.times()
    states = [sample.state for sample in traj.samples]
    tpe = np.array([float(s.gamma @ s.gamma) / (2.0 * m) + m * g * float(s.x[2]) for s in states])
    re = np.array([0.5 * float(s.Pi @ (J_inv @ s.Pi)) for s in states])
    marker = "o" if len(t) == 1 else None

    with plt.rc_context({"svg.hashsalt": "lgvci"}):
        fig, ax = plt.subplots(figsize=(8, 4.5))
        try:
            ax.plot(t, tpe + re, label="Total energy", color="black", marker=marker)
            ax.plot(t, tpe, label="T.P.E.", color="tab:blue", marker=marker)
            ax.plot(t, re, label="R.E.", color="tab:orange", marker=marker)
            for i, t_impact in enumerate(_impact_times(traj)):
                ax.axvline(t_impact, color="tab:red", linewidth=0.5, alpha=0.4, label="Impact" if i == 0 else None)
            ax.set_xlabel("t (s)")
            ax.set_ylabel("Energy (J)")
            ax.legend(loc="best")
            ax.grid(True, alpha=0.3)
            buffer = io.StringIO()
            fig.savefig(buffer, format="svg", metadata={"Date": None})
        finally:
            plt.close(fig)
    return buffer.getvalue()

