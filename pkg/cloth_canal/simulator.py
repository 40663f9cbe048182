"""Deterministic mass-spring cloth dynamics with position-driven grippers.

Each :func:`step` advances the cloth with semi-implicit Euler:

1. gravity and per-kind Hooke spring forces with damping along each spring,
2. velocity update and air damping,
3. position update,
4. structural strain limiting,
5. ground contact with Coulomb friction,
6. pinned vertices snapped onto their gripper targets.

Grippers are kinematic: a primitive moves gripper targets a little each step
and the pinned vertices follow exactly.
"""

from __future__ import annotations

import logging
import math
import warnings
from collections.abc import Callable, Mapping, Sequence
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy.spatial import cKDTree

from cloth_canal.canal_io import CanalIO
from cloth_canal.exceptions import InvalidParams, NumericalBlowup
from cloth_canal.garments import GarmentMesh
from cloth_canal.geometry import FloatArray, VertexConfiguration
from cloth_canal.kinds import PrimitiveKind, SpringKind
from cloth_canal.warnings import GraspMissed, SettleTimeout

logger = logging.getLogger(__name__)

WORKSPACE_SIZE = 1.5
MAX_DT = 5e-3
BLOWUP_LIMIT = 100.0
LAYER_TOLERANCE = 0.005
STRAIN_ITERATIONS = 8


@dataclass(frozen=True)
class SimParams:
    """Physical constants and gripper behaviour of the simulator."""

    dt: float = 1e-3
    gravity: float = 9.81
    vertex_mass: float = 1e-3
    structural_stiffness: float = 30.0
    shear_stiffness: float = 8.0
    bend_stiffness: float = 0.5
    # stiffness multiplier for springs shorter than rest, so cloth buckles
    compression_ratio: float = 0.02
    spring_damping: float = 0.05
    air_damping: float = 0.05
    friction: float = 0.5
    max_strain: float = 1.1
    grasp_radius: float = 0.02
    move_speed: float = 1.0
    settle_speed: float = 1e-3
    settle_time: float = 5.0

    def __post_init__(self) -> None:
        if not 0.0 < self.dt <= MAX_DT:
            raise InvalidParams(f"dt must lie in (0, {MAX_DT}], got {self.dt}")
        if self.vertex_mass <= 0 or self.max_strain <= 1.0:
            raise InvalidParams("vertex_mass must be positive and max_strain > 1")

    def stiffness(self, kind: SpringKind) -> float:
        return {
            SpringKind.STRUCTURAL: self.structural_stiffness,
            SpringKind.SHEAR: self.shear_stiffness,
            SpringKind.BEND: self.bend_stiffness,
        }[kind]


@dataclass(frozen=True)
class FlingParams:
    lift_margin: float = 0.05
    max_stretch: float = 0.7
    forward: float = 0.7
    descend_speed: float = 1.4
    max_lift_height: float = 2.0
    lift_increment: float = 0.1
    stretch_increment: float = 0.02
    place_height: float = 0.02


@dataclass(frozen=True)
class PickPlaceParams:
    lift: float = 0.1


@dataclass(frozen=True, eq=False)
class Topology:
    """Spring network the integrator acts on."""

    springs: NDArray[np.intp]
    rest_lengths: FloatArray
    stiffness: FloatArray
    structural: NDArray[np.bool_]

    @classmethod
    def from_mesh(cls, mesh: GarmentMesh, params: SimParams) -> Topology:
        kinds = list(SpringKind)
        stiffness = np.array([params.stiffness(kinds[c]) for c in mesh.spring_kinds])
        return cls(
            springs=mesh.springs,
            rest_lengths=mesh.rest_lengths,
            stiffness=stiffness,
            structural=mesh.spring_kinds == SpringKind.STRUCTURAL.code,
        )

    @classmethod
    def empty(cls) -> Topology:
        return cls(
            springs=np.zeros((0, 2), dtype=np.intp),
            rest_lengths=np.zeros(0),
            stiffness=np.zeros(0),
            structural=np.zeros(0, dtype=bool),
        )


@dataclass(eq=False)
class SimState:
    """Cloth positions, velocities and gripper attachments at one instant.

    ``pinned`` maps vertex index to gripper id and ``grippers`` maps gripper id
    to its current 3D target. A state belongs to one caller at a time; use
    :meth:`clone` for independent rollouts.
    """

    positions: FloatArray
    velocities: FloatArray
    topology: Topology
    params: SimParams = field(default_factory=SimParams)
    pinned: dict[int, int] = field(default_factory=dict)
    grippers: dict[int, FloatArray] = field(default_factory=dict)
    time: float = 0.0
    rng_seed: int = 0
    mesh: GarmentMesh | None = None

    @classmethod
    def from_mesh(
        cls,
        mesh: GarmentMesh,
        params: SimParams | None = None,
        positions: ArrayLike | None = None,
        rng_seed: int = 0,
    ) -> SimState:
        """A motionless state for ``mesh``, by default in its canonical pose."""
        params = params or SimParams()
        if positions is None:
            points = np.array(mesh.vertices.positions)
        else:
            points = np.array(positions, dtype=np.float64).reshape(-1, 3)
        if len(points) != mesh.n_vertices:
            raise InvalidParams(
                f"{len(points)} positions given for a {mesh.n_vertices}-vertex mesh"
            )
        return cls(
            positions=points,
            velocities=np.zeros_like(points),
            topology=Topology.from_mesh(mesh, params),
            params=params,
            rng_seed=rng_seed,
            mesh=mesh,
        )

    @classmethod
    def free_particles(
        cls, positions: ArrayLike, params: SimParams | None = None
    ) -> SimState:
        """Unconnected particles, with no springs between them."""
        points = np.array(positions, dtype=np.float64).reshape(-1, 3)
        return cls(
            positions=points,
            velocities=np.zeros_like(points),
            topology=Topology.empty(),
            params=params or SimParams(),
        )

    def __repr__(self) -> str:
        return (
            f"<SimState n={self.n_vertices} t={self.time:.3f}s "
            f"pinned={len(self.pinned)}>"
        )

    @property
    def n_vertices(self) -> int:
        return len(self.positions)

    def configuration(self) -> VertexConfiguration:
        return VertexConfiguration(self.positions)

    def clone(self) -> SimState:
        return SimState(
            positions=self.positions.copy(),
            velocities=self.velocities.copy(),
            topology=self.topology,
            params=self.params,
            pinned=dict(self.pinned),
            grippers={k: v.copy() for k, v in self.grippers.items()},
            time=self.time,
            rng_seed=self.rng_seed,
            mesh=self.mesh,
        )

    def max_speed(self) -> float:
        if self.n_vertices == 0:
            return 0.0
        return float(np.max(np.linalg.norm(self.velocities, axis=1)))

    def release(self) -> None:
        self.pinned.clear()
        self.grippers.clear()

    def to_dict(self) -> dict[str, Any]:
        return {
            "positions": self.positions.tolist(),
            "velocities": self.velocities.tolist(),
            "time": self.time,
            "rng_seed": self.rng_seed,
        }


class TrajectoryRecorder:
    """Collects per-step positions and writes them as JSON lines.

    Args:
        every: keep one record per this many steps.
    """

    def __init__(self, every: int = 10) -> None:
        if every < 1:
            raise ValueError("every must be at least 1")
        self.every = every
        self.records: list[dict[str, Any]] = []
        self._count = 0

    def observe(self, state: SimState, phase: str) -> None:
        if self._count % self.every == 0:
            self.records.append(
                {
                    "phase": phase,
                    "time": state.time,
                    "positions": state.positions.tolist(),
                }
            )
        self._count += 1

    def save(self, path: str | Path) -> None:
        CanalIO().write_jsonl(path, self.records)


def kinetic_energy(state: SimState) -> float:
    return 0.5 * state.params.vertex_mass * float(np.sum(state.velocities**2))


def potential_energy(state: SimState) -> float:
    """Gravitational plus elastic energy, with z = 0 as the reference height."""
    p = state.params
    gravity = p.vertex_mass * p.gravity * float(np.sum(state.positions[:, 2]))
    topo = state.topology
    if len(topo.springs) == 0:
        return gravity
    xij = state.positions[topo.springs[:, 0]] - state.positions[topo.springs[:, 1]]
    stretch = np.linalg.norm(xij, axis=1) - topo.rest_lengths
    k = np.where(stretch > 0, topo.stiffness, topo.stiffness * p.compression_ratio)
    return gravity + 0.5 * float(np.sum(k * stretch**2))


def total_energy(state: SimState) -> float:
    return kinetic_energy(state) + potential_energy(state)


def _spring_forces(state: SimState) -> FloatArray:
    topo = state.topology
    n = state.n_vertices
    forces = np.zeros((n, 3))
    if len(topo.springs) == 0:
        return forces
    i = topo.springs[:, 0]
    j = topo.springs[:, 1]
    xij = state.positions[i] - state.positions[j]
    vij = state.velocities[i] - state.velocities[j]
    length = np.linalg.norm(xij, axis=1)
    safe = np.maximum(length, 1e-12)
    direction = xij / safe[:, None]

    c = length - topo.rest_lengths
    k = np.where(c > 0, topo.stiffness, topo.stiffness * state.params.compression_ratio)
    dcdt = np.sum(direction * vij, axis=1)
    fs = direction * (k * c + state.params.spring_damping * dcdt)[:, None]
    fs[length < 1e-12] = 0.0

    for axis in range(3):
        forces[:, axis] -= np.bincount(i, weights=fs[:, axis], minlength=n)
        forces[:, axis] += np.bincount(j, weights=fs[:, axis], minlength=n)
    return forces


def _limit_strain(state: SimState, free: NDArray[np.bool_]) -> None:
    topo = state.topology
    springs = topo.springs[topo.structural]
    if len(springs) == 0:
        return
    rest = topo.rest_lengths[topo.structural]
    i, j = springs[:, 0], springs[:, 1]
    wi = free[i].astype(np.float64)
    wj = free[j].astype(np.float64)
    wsum = wi + wj
    n = state.n_vertices
    x = state.positions
    for _ in range(STRAIN_ITERATIONS):
        xij = x[i] - x[j]
        length = np.linalg.norm(xij, axis=1)
        excess = length - state.params.max_strain * rest
        active = (excess > 0) & (wsum > 0)
        if not np.any(active):
            return
        stretch = excess / np.maximum(length, 1e-12) / np.maximum(wsum, 1)
        scale = np.where(active, stretch, 0)
        delta = xij * scale[:, None]
        correction = np.zeros((n, 3))
        counts = np.bincount(i[active], minlength=n)
        counts += np.bincount(j[active], minlength=n)
        for axis in range(3):
            correction[:, axis] -= np.bincount(
                i, weights=delta[:, axis] * wi, minlength=n
            )
            correction[:, axis] += np.bincount(
                j, weights=delta[:, axis] * wj, minlength=n
            )
        correction /= np.maximum(counts, 1)[:, None]
        x += correction
        state.velocities += correction / state.params.dt


def _advance(state: SimState, dt: float) -> None:
    p = state.params
    n = state.n_vertices
    free = np.ones(n, dtype=bool)
    if state.pinned:
        free[list(state.pinned)] = False

    forces = _spring_forces(state)
    forces[:, 2] -= p.vertex_mass * p.gravity
    state.velocities += forces / p.vertex_mass * dt
    state.velocities *= max(0.0, 1.0 - p.air_damping * dt)
    state.positions += state.velocities * dt

    _limit_strain(state, free)

    contact = state.positions[:, 2] <= 0.0
    if np.any(contact):
        state.positions[contact, 2] = 0.0
        state.velocities[contact, 2] = np.maximum(state.velocities[contact, 2], 0.0)
        tangential = state.velocities[contact, :2]
        speed = np.linalg.norm(tangential, axis=1)
        limit = p.friction * p.gravity * dt
        keep = np.where(speed > limit, 1.0 - limit / np.maximum(speed, 1e-12), 0.0)
        state.velocities[contact, :2] = tangential * keep[:, None]

    for vertex, gripper in state.pinned.items():
        target = state.grippers[gripper]
        state.velocities[vertex] = (target - state.positions[vertex]) / dt
        state.positions[vertex] = target

    state.time += dt
    peak = float(np.max(np.abs(state.positions))) if n else 0.0
    if not math.isfinite(peak) or peak > BLOWUP_LIMIT:
        raise NumericalBlowup.from_positions(peak, state.time)


def step(state: SimState, dt: float | None = None) -> SimState:
    """Advances a copy of ``state`` by one time step.

    Raises:
        ValueError: ``dt`` outside ``(0, 5e-3]``.
        NumericalBlowup: a coordinate left the ``100 m`` box.
    """
    dt = state.params.dt if dt is None else dt
    if not 0.0 < dt <= MAX_DT:
        raise ValueError(f"dt must lie in (0, {MAX_DT}], got {dt}")
    new_state = state.clone()
    _advance(new_state, dt)
    return new_state


def run_steps(
    state: SimState,
    count: int,
    recorder: TrajectoryRecorder | None = None,
    phase: str = "free",
) -> None:
    """Advances ``state`` in place by ``count`` steps."""
    for _ in range(count):
        _advance(state, state.params.dt)
        if recorder is not None:
            recorder.observe(state, phase)


def settle(
    state: SimState,
    max_time: float | None = None,
    *,
    warn: bool = True,
    recorder: TrajectoryRecorder | None = None,
) -> bool:
    """Steps ``state`` in place until every vertex is slower than the settle speed.

    Returns whether the cloth came to rest before ``max_time`` elapsed. A
    :class:`SettleTimeout` warning is issued on timeout unless ``warn`` is false.
    """
    p = state.params
    max_time = p.settle_time if max_time is None else max_time
    deadline = state.time + max_time
    while state.time < deadline - 0.5 * p.dt:
        _advance(state, p.dt)
        if recorder is not None:
            recorder.observe(state, "settle")
        if state.max_speed() < p.settle_speed:
            return True
    speed = state.max_speed()
    if speed < p.settle_speed:
        return True
    logger.debug(f"Settling timed out at {speed:.2e} m/s")
    if warn:
        warnings.warn(SettleTimeout(speed, max_time), stacklevel=2)
    return False


def grasp_nearest(
    state: SimState, point: ArrayLike, radius: float | None = None
) -> int | None:
    """Vertex a top-down pinch at ``point`` would grasp, or ``None`` on a miss.

    Candidates lie within ``radius`` of the point in the plane; of those, only
    vertices within 5 mm of the highest candidate count (the topmost layer),
    and the planar-nearest of them wins. Ties go to the lowest index.
    """
    radius = state.params.grasp_radius if radius is None else radius
    target = np.asarray(point, dtype=np.float64)[:2]
    tree = cKDTree(state.positions[:, :2])
    candidates = np.array(sorted(tree.query_ball_point(target, radius)), dtype=np.intp)
    if candidates.size == 0:
        return None
    heights = state.positions[candidates, 2]
    top = candidates[heights >= heights.max() - LAYER_TOLERANCE]
    distances = np.linalg.norm(state.positions[top, :2] - target, axis=1)
    return int(top[int(np.argmin(distances))])


@dataclass(frozen=True, eq=False)
class PrimitiveSpec:
    """One primitive: its kind, two grasp points and the fling direction.

    For pick&place, ``grasp_a`` is the pick point and ``grasp_b`` the place
    point. ``direction`` is the planar forward direction of a fling; when
    omitted it is the gripper line rotated by +90 degrees.
    """

    kind: PrimitiveKind
    grasp_a: FloatArray
    grasp_b: FloatArray
    direction: FloatArray | None = None
    fling: FlingParams = field(default_factory=FlingParams)
    pick_place: PickPlaceParams = field(default_factory=PickPlaceParams)

    def __post_init__(self) -> None:
        half = WORKSPACE_SIZE / 2 + 1e-9
        for name in ("grasp_a", "grasp_b"):
            point = np.zeros(3)
            given = np.asarray(getattr(self, name), dtype=np.float64)
            point[: given.size] = given
            if np.any(np.abs(point[:2]) > half):
                raise ValueError(f"{name} {point[:2]} lies outside the workspace")
            object.__setattr__(self, name, point)
        if self.direction is not None:
            d = np.asarray(self.direction, dtype=np.float64)[:2]
            norm = float(np.linalg.norm(d))
            if norm == 0:
                raise ValueError("Fling direction must be non-zero")
            object.__setattr__(self, "direction", d / norm)

    def forward(self) -> FloatArray:
        if self.direction is not None:
            return self.direction
        line = self.grasp_b[:2] - self.grasp_a[:2]
        norm = float(np.linalg.norm(line))
        if norm == 0:
            return np.array([1.0, 0.0])
        return np.array([-line[1], line[0]]) / norm


def pin(state: SimState, vertex: int, gripper: int) -> None:
    """Attaches ``vertex`` to ``gripper``, placing the gripper on the vertex."""
    if not 0 <= vertex < state.n_vertices:
        raise IndexError(f"Vertex {vertex} out of range")
    state.pinned[vertex] = gripper
    state.grippers[gripper] = state.positions[vertex].copy()


def _grasp(state: SimState, points: Sequence[FloatArray]) -> dict[int, int]:
    """Pins the grasped vertex of each point to a new gripper; returns gripper
    id to vertex for the arms that found cloth."""
    arms: dict[int, int] = {}
    for gripper, point in enumerate(points):
        vertex = grasp_nearest(state, point)
        if vertex is None or vertex in state.pinned:
            logger.debug(f"Grasp at {point[:2]} missed")
            warnings.warn(GraspMissed(tuple(np.round(point[:2], 4))), stacklevel=3)
            continue
        pin(state, vertex, gripper)
        arms[gripper] = vertex
    return arms


def move_grippers(
    state: SimState,
    goals: Mapping[int, FloatArray],
    speed: float,
    recorder: TrajectoryRecorder | None,
    phase: str,
    until: Callable[[SimState], bool] | None = None,
) -> None:
    """Moves gripper targets in straight lines to their goals.

    All grippers arrive together; the one with the longest path travels at
    ``speed``.
    """
    if not goals:
        return
    starts = {g: state.grippers[g].copy() for g in goals}
    longest = max(float(np.linalg.norm(goals[g] - starts[g])) for g in goals)
    steps = max(1, math.ceil(longest / (speed * state.params.dt)))
    for k in range(1, steps + 1):
        fraction = k / steps
        for g, goal in goals.items():
            state.grippers[g] = starts[g] + (goal - starts[g]) * fraction
        _advance(state, state.params.dt)
        if recorder is not None:
            recorder.observe(state, phase)
        if until is not None and until(state):
            return


def _fling(
    state: SimState, spec: PrimitiveSpec, recorder: TrajectoryRecorder | None
) -> None:
    fp = spec.fling
    sp = state.params
    arms = _grasp(state, [spec.grasp_a, spec.grasp_b])
    if arms:
        forward = np.append(spec.forward(), 0.0)

        # lift until the lowest vertex clears the ground margin
        def lifted(s: SimState) -> bool:
            return float(s.positions[:, 2].min()) >= fp.lift_margin

        while not lifted(state):
            height = max(float(state.grippers[g][2]) for g in arms)
            if height >= fp.max_lift_height:
                break
            rise = min(fp.lift_increment, fp.max_lift_height - height)
            goals = {g: state.grippers[g] + [0.0, 0.0, rise] for g in arms}
            move_grippers(state, goals, sp.move_speed, recorder, "lift", lifted)
        cloth_height = float(np.ptp(state.positions[:, 2]))

        if len(arms) == 2 and state.mesh is not None:
            a, b = state.grippers[0], state.grippers[1]
            mid = 0.5 * (a + b)
            line = b - a
            line[2] = 0.0
            separation = float(np.linalg.norm(line))
            canonical = state.mesh.vertices.planar
            taut = float(np.linalg.norm(canonical[arms[0]] - canonical[arms[1]]))
            # stretch stops at the grasped pair's canonical distance, or max_stretch
            target = min(fp.max_stretch, max(separation, taut))
            if separation > 0:
                unit = line / separation
            else:
                unit = np.array([forward[1], -forward[0], 0.0])
            while separation < target - 1e-9:
                separation = min(target, separation + fp.stretch_increment)
                goals = {
                    0: mid - unit * separation / 2,
                    1: mid + unit * separation / 2,
                }
                move_grippers(state, goals, sp.move_speed, recorder, "stretch")

        goals = {g: state.grippers[g] + forward * fp.forward for g in arms}
        move_grippers(state, goals, fp.descend_speed, recorder, "forward")

        back = fp.forward + cloth_height / 2
        goals = {}
        drop = 0.0
        for g in arms:
            goal = state.grippers[g] - forward * back
            drop = max(drop, float(state.grippers[g][2]) - fp.place_height)
            goal[2] = fp.place_height
            goal[:2] = np.clip(goal[:2], -WORKSPACE_SIZE / 2, WORKSPACE_SIZE / 2)
            goals[g] = goal
        if drop > 0:
            longest = max(
                float(np.linalg.norm(goals[g] - state.grippers[g])) for g in arms
            )
            speed = fp.descend_speed * longest / drop
            move_grippers(state, goals, speed, recorder, "descend")
        logger.debug(
            f"Fling with {len(arms)} arm(s), cloth height {cloth_height:.3f} m"
        )
    state.release()


def _pick_and_place(
    state: SimState,
    picks: Sequence[FloatArray],
    places: Sequence[FloatArray],
    lift: float,
    recorder: TrajectoryRecorder | None,
) -> None:
    arms = _grasp(state, picks)
    if arms:
        start_heights = {g: float(state.grippers[g][2]) for g in arms}
        up = {g: state.grippers[g] + [0.0, 0.0, lift] for g in arms}
        move_grippers(state, up, state.params.move_speed, recorder, "lift")
        over = {}
        for g in arms:
            goal = np.array(state.grippers[g])
            goal[:2] = np.asarray(places[g], dtype=np.float64)[:2]
            over[g] = goal
        move_grippers(state, over, state.params.move_speed, recorder, "move")
        down = {}
        for g in arms:
            goal = np.array(state.grippers[g])
            goal[2] = start_heights[g]
            down[g] = goal
        move_grippers(state, down, state.params.move_speed, recorder, "place")
    state.release()


def pick_and_place(
    state: SimState,
    picks: Sequence[ArrayLike],
    places: Sequence[ArrayLike],
    lift: float = PickPlaceParams.lift,
    *,
    recorder: TrajectoryRecorder | None = None,
) -> SimState:
    """Multi-arm pick&place: every arm lifts, moves and places at once.

    Arms whose grasp misses stay idle. The cloth is settled afterwards.
    """
    if len(picks) != len(places):
        raise ValueError("Each pick point needs a place point")
    new_state = state.clone()
    new_state.release()
    _pick_and_place(
        new_state,
        [np.asarray(p, dtype=np.float64) for p in picks],
        [np.asarray(p, dtype=np.float64) for p in places],
        lift,
        recorder,
    )
    settle(new_state, recorder=recorder)
    return new_state


def execute_primitive(
    state: SimState,
    spec: PrimitiveSpec,
    *,
    recorder: TrajectoryRecorder | None = None,
) -> SimState:
    """Runs a fling or pick&place on a copy of ``state`` and settles the result.

    Raises:
        NumericalBlowup: the integration diverged.
    """
    new_state = state.clone()
    new_state.release()
    if spec.kind is PrimitiveKind.FLING:
        _fling(new_state, spec, recorder)
    else:
        _pick_and_place(
            new_state, [spec.grasp_a], [spec.grasp_b], spec.pick_place.lift, recorder
        )
    settle(new_state, recorder=recorder)
    return new_state
