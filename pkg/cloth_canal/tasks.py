"""Hard and easy task distributions and task set files.

A task set file is JSON lines: a header holding the format version, root
seed and every mesh with its content hash and split, then one record per task
with its settled initial positions. Each record carries a hash of its own
content, and all hashes plus the train/test mesh disjointness are checked when
the file is opened.
"""

from __future__ import annotations

import concurrent.futures
import logging
import math
from collections.abc import Iterator, Mapping, Sequence
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from cloth_canal._utils import derive_seed, sha256_text
from cloth_canal.canal_io import CanalIO
from cloth_canal.exceptions import InsufficientMeshes, TaskSetIntegrityError
from cloth_canal.garments import GarmentMesh
from cloth_canal.geometry import (
    PlanarTransform,
    VertexConfiguration,
    apply_transform,
)
from cloth_canal.kinds import Difficulty, Split
from cloth_canal.simulator import (
    WORKSPACE_SIZE,
    SimParams,
    SimState,
    move_grippers,
    pick_and_place,
    pin,
    settle,
)

logger = logging.getLogger(__name__)

TASKSET_VERSION = 1
GOAL_REGION = 0.6
N_ROTATIONS = 16
DROP_HEIGHT = (0.5, 1.5)
TRANSLATION = (0.0, 0.2)
DRAG_DISTANCE = (0.5, 1.0)
DANGLE_TIME = 2.0
DEFAULT_COUNTS = (200, 50)
DEFAULT_HARD_FRACTIONS = (0.75, 0.5)


def mesh_id(mesh: GarmentMesh) -> str:
    return mesh.content_hash()[:16]


@dataclass(frozen=True, eq=False)
class Task:
    """A cloth to manipulate from its settled ``initial_state`` onto its goal.

    The goal configuration is the canonical mesh moved by ``goal_transform``.
    ``draws`` records the random values the generator sampled.
    """

    mesh: GarmentMesh
    initial_state: SimState
    goal_transform: PlanarTransform
    difficulty: Difficulty
    seed: int
    draws: Mapping[str, float] = field(default_factory=dict)
    split: Split | None = None
    index: int = 0

    def __repr__(self) -> str:
        return (
            f"<Task {self.index} {self.difficulty} {self.mesh.category} "
            f"seed={self.seed}>"
        )

    @property
    def mesh_ref(self) -> str:
        return mesh_id(self.mesh)

    def goal(self) -> VertexConfiguration:
        return apply_transform(self.goal_transform, self.mesh.vertices)

    def fresh_state(self) -> SimState:
        """An independent copy of the initial state to act on."""
        return self.initial_state.clone()

    def to_record(self) -> dict[str, Any]:
        record: dict[str, Any] = {
            "index": self.index,
            "seed": self.seed,
            "difficulty": self.difficulty.value,
            "split": None if self.split is None else self.split.value,
            "mesh": self.mesh_ref,
            "goal_transform": self.goal_transform.to_dict(),
            "draws": dict(self.draws),
            "positions": self.initial_state.positions.tolist(),
        }
        record["sha256"] = sha256_text(CanalIO.dumps(record))
        return record

    @classmethod
    def from_record(
        cls,
        record: dict[str, Any],
        meshes: Mapping[str, GarmentMesh],
        params: SimParams | None = None,
    ) -> Task:
        body = {k: v for k, v in record.items() if k != "sha256"}
        if sha256_text(CanalIO.dumps(body)) != record.get("sha256"):
            raise TaskSetIntegrityError(f"Task {record.get('index')} failed its hash")
        try:
            mesh = meshes[record["mesh"]]
        except KeyError:
            raise TaskSetIntegrityError(
                f"Task {record['index']} references unknown mesh {record['mesh']}"
            )
        state = SimState.from_mesh(
            mesh, params, positions=record["positions"], rng_seed=record["seed"]
        )
        split = record["split"]
        return cls(
            mesh=mesh,
            initial_state=state,
            goal_transform=PlanarTransform.from_dict(record["goal_transform"]),
            difficulty=Difficulty.get_by_name(record["difficulty"]),
            seed=int(record["seed"]),
            draws=record["draws"],
            split=None if split is None else Split.get_by_name(split),
            index=int(record["index"]),
        )


def sample_goal(rng: np.random.Generator) -> PlanarTransform:
    """Uniform position in the central square, one of 16 discrete rotations."""
    half = GOAL_REGION / 2
    x, y = rng.uniform(-half, half, size=2)
    k = int(rng.integers(N_ROTATIONS))
    return PlanarTransform(float(x), float(y), 2 * math.pi * k / N_ROTATIONS)


def sample_hard_draws(rng: np.random.Generator, n_vertices: int) -> dict[str, float]:
    """Draws a hard task's random values, in a fixed order."""
    return {
        "rotation": float(rng.uniform(0.0, 2 * math.pi)),
        "vertex": int(rng.integers(n_vertices)),
        "drop_height": float(rng.uniform(*DROP_HEIGHT)),
        "translation": float(rng.uniform(*TRANSLATION)),
        "translation_angle": float(rng.uniform(0.0, 2 * math.pi)),
    }


def sample_easy_draws(rng: np.random.Generator, n_vertices: int) -> dict[str, float]:
    """Draws an easy task's random values, in a fixed order."""
    return {
        "vertex": int(rng.integers(n_vertices)),
        "drag_angle": float(rng.uniform(0.0, 2 * math.pi)),
        "drag_distance": float(rng.uniform(*DRAG_DISTANCE)),
    }


def generate_hard(
    mesh: GarmentMesh, seed: int, params: SimParams | None = None
) -> Task:
    """Crumpled start: rotate, drop from a random vertex, then shift.

    The cloth is rotated uniformly, hung from a uniformly chosen vertex at a
    height drawn from ``[0.5, 1.5]`` m, released, settled, translated rigidly by
    a distance drawn from ``[0, 0.2]`` m in a uniform direction, and settled
    again.
    """
    rng = np.random.default_rng(seed)
    draws = sample_hard_draws(rng, mesh.n_vertices)
    goal = sample_goal(rng)
    rotation = draws["rotation"]
    vertex = int(draws["vertex"])
    drop_height = draws["drop_height"]
    translation = draws["translation"]
    translation_angle = draws["translation_angle"]

    start = apply_transform(PlanarTransform(0.0, 0.0, rotation), mesh.vertices)
    state = SimState.from_mesh(mesh, params, start.positions, rng_seed=seed)
    pin(state, vertex, 0)
    top = state.grippers[0] + [0.0, 0.0, drop_height]
    move_grippers(state, {0: top}, state.params.move_speed, None, "hang")
    settle(state, DANGLE_TIME, warn=False)
    state.release()
    settle(state, warn=False)

    heading = np.array([math.cos(translation_angle), math.sin(translation_angle)])
    shift = translation * heading
    state.positions[:, :2] += shift
    state.velocities[:] = 0.0
    settle(state, warn=False)

    logger.debug(
        f"Hard task seed={seed}: drop {drop_height:.3f} m, "
        f"shift {translation:.3f} m"
    )
    return Task(
        mesh=mesh,
        initial_state=state,
        goal_transform=goal,
        difficulty=Difficulty.HARD,
        seed=seed,
        draws=draws,
    )


def generate_easy(
    mesh: GarmentMesh, seed: int, params: SimParams | None = None
) -> Task:
    """Nearly flat start: drag one vertex of the canonical cloth.

    A uniformly chosen vertex is picked and placed at a distance drawn from
    ``[0.5, 1]`` m in a direction drawn from ``[0, 360)`` degrees; the place
    point is clipped to the workspace.
    """
    rng = np.random.default_rng(seed)
    draws = sample_easy_draws(rng, mesh.n_vertices)
    goal = sample_goal(rng)
    vertex = int(draws["vertex"])
    drag_angle = draws["drag_angle"]
    drag_distance = draws["drag_distance"]

    state = SimState.from_mesh(mesh, params, rng_seed=seed)
    pick = state.positions[vertex].copy()
    heading = np.array([math.cos(drag_angle), math.sin(drag_angle)])
    place = pick[:2] + drag_distance * heading
    place = np.clip(place, -WORKSPACE_SIZE / 2, WORKSPACE_SIZE / 2)
    state = pick_and_place(state, [pick], [place])

    return Task(
        mesh=mesh,
        initial_state=state,
        goal_transform=goal,
        difficulty=Difficulty.EASY,
        seed=seed,
        draws=draws,
    )


def generate_task(
    mesh: GarmentMesh,
    seed: int,
    difficulty: Difficulty,
    params: SimParams | None = None,
) -> Task:
    if difficulty is Difficulty.HARD:
        return generate_hard(mesh, seed, params)
    return generate_easy(mesh, seed, params)


@dataclass(frozen=True)
class TaskJob:
    """One task to generate: which mesh, seed and difficulty, and where it goes."""

    mesh: GarmentMesh
    seed: int
    difficulty: Difficulty
    split: Split
    index: int
    params: SimParams | None


def _run_job(job: TaskJob) -> Task:
    task = generate_task(job.mesh, job.seed, job.difficulty, job.params)
    return Task(
        mesh=task.mesh,
        initial_state=task.initial_state,
        goal_transform=task.goal_transform,
        difficulty=task.difficulty,
        seed=task.seed,
        draws=task.draws,
        split=job.split,
        index=job.index,
    )


@dataclass(eq=False)
class TaskSet:
    """Train and test tasks over disjoint mesh sets."""

    seed: int
    meshes: dict[str, GarmentMesh]
    mesh_splits: dict[str, Split]
    tasks: list[Task]

    def __len__(self) -> int:
        return len(self.tasks)

    def __iter__(self) -> Iterator[Task]:
        return iter(self.tasks)

    def __repr__(self) -> str:
        return (
            f"<TaskSet seed={self.seed} tasks={len(self.tasks)} "
            f"meshes={len(self.meshes)}>"
        )

    def select(
        self, split: Split | None = None, difficulty: Difficulty | None = None
    ) -> list[Task]:
        return [
            t
            for t in self.tasks
            if (split is None or t.split is split)
            and (difficulty is None or t.difficulty is difficulty)
        ]

    def validate(self) -> None:
        """Checks every task's mesh belongs to the task's split.

        Raises:
            TaskSetIntegrityError: a mesh is used by both splits.
        """
        for task in self.tasks:
            owner = self.mesh_splits.get(task.mesh_ref)
            if task.split is not None and owner is not task.split:
                raise TaskSetIntegrityError(
                    f"Task {task.index} ({task.split}) uses {owner} mesh "
                    f"{task.mesh_ref}"
                )

    def header(self) -> dict[str, Any]:
        return {
            "kind": "header",
            "version": TASKSET_VERSION,
            "seed": self.seed,
            "meshes": [
                {
                    "id": key,
                    "split": self.mesh_splits[key].value,
                    "sha256": mesh.content_hash(),
                    "mesh": mesh.to_dict(),
                }
                for key, mesh in self.meshes.items()
            ],
        }

    def save(self, path: str | Path) -> None:
        records = [self.header(), *(t.to_record() for t in self.tasks)]
        CanalIO().write_jsonl(path, records)

    @classmethod
    def open(cls, path: str | Path, params: SimParams | None = None) -> TaskSet:
        """Loads a task set file, verifying its hashes and split disjointness.

        Raises:
            TaskSetIntegrityError: a hash does not match or splits overlap.
        """
        records = CanalIO().iter_jsonl(path)
        header = next(records, None)
        if header is None or header.get("kind") != "header":
            raise TaskSetIntegrityError(f"{path} has no task set header")
        if header.get("version") != TASKSET_VERSION:
            raise TaskSetIntegrityError(
                f"Unsupported task set version {header.get('version')}"
            )
        meshes: dict[str, GarmentMesh] = {}
        splits: dict[str, Split] = {}
        for entry in header["meshes"]:
            mesh = GarmentMesh.from_dict(entry["mesh"])
            if mesh.content_hash() != entry["sha256"] or mesh_id(mesh) != entry["id"]:
                raise TaskSetIntegrityError(f"Mesh {entry['id']} failed its hash")
            meshes[entry["id"]] = mesh
            splits[entry["id"]] = Split.get_by_name(entry["split"])
        tasks = [Task.from_record(r, meshes, params) for r in records]
        task_set = cls(
            seed=int(header["seed"]), meshes=meshes, mesh_splits=splits, tasks=tasks
        )
        task_set.validate()
        logger.info(f"Loaded {task_set!r} from {path}")
        return task_set


def _split_meshes(
    meshes: Sequence[GarmentMesh], counts: tuple[int, int], seed: int
) -> tuple[list[GarmentMesh], list[GarmentMesh]]:
    unique: dict[str, GarmentMesh] = {}
    for mesh in meshes:
        unique.setdefault(mesh_id(mesh), mesh)
    pool = list(unique.values())
    n_train, n_test = counts
    needed = int(n_train > 0) + int(n_test > 0)
    if len(pool) < max(needed, 1):
        raise InsufficientMeshes(
            f"{len(pool)} distinct meshes cannot give disjoint train and test sets"
        )
    order = np.random.default_rng(derive_seed(seed, 0)).permutation(len(pool))
    pool = [pool[i] for i in order]
    if n_test == 0:
        return pool, []
    if n_train == 0:
        return [], pool
    share = round(len(pool) * n_test / (n_train + n_test))
    test_count = min(len(pool) - 1, max(1, share))
    return pool[test_count:], pool[:test_count]


def plan_tasks(
    meshes: Sequence[GarmentMesh],
    counts: tuple[int, int] = DEFAULT_COUNTS,
    hard_fractions: tuple[float, float] = DEFAULT_HARD_FRACTIONS,
    seed: int = 0,
    *,
    params: SimParams | None = None,
) -> tuple[list[TaskJob], dict[str, Split]]:
    """Assigns meshes to splits and lays out every task's seed and difficulty.

    Within a split the first ``round(fraction * count)`` tasks are hard. Meshes
    are used round-robin.

    Raises:
        InsufficientMeshes: disjoint train and test mesh sets are impossible.
    """
    for fraction in hard_fractions:
        if not 0.0 <= fraction <= 1.0:
            raise ValueError(f"Hard fractions must lie in [0, 1], got {fraction}")
    if min(counts) < 0:
        raise ValueError(f"Task counts cannot be negative, got {counts}")
    train_meshes, test_meshes = _split_meshes(meshes, counts, seed)

    jobs: list[TaskJob] = []
    mesh_splits: dict[str, Split] = {}
    for s, (split, pool) in enumerate(
        ((Split.TRAIN, train_meshes), (Split.TEST, test_meshes)), start=1
    ):
        for mesh in pool:
            mesh_splits[mesh_id(mesh)] = split
        count = counts[s - 1]
        n_hard = round(hard_fractions[s - 1] * count)
        for i in range(count):
            difficulty = Difficulty.HARD if i < n_hard else Difficulty.EASY
            jobs.append(
                TaskJob(
                    mesh=pool[i % len(pool)],
                    seed=derive_seed(seed, s, i),
                    difficulty=difficulty,
                    split=split,
                    index=len(jobs),
                    params=params,
                )
            )
    return jobs, mesh_splits


def build_dataset(
    meshes: Sequence[GarmentMesh],
    counts: tuple[int, int] = DEFAULT_COUNTS,
    hard_fractions: tuple[float, float] = DEFAULT_HARD_FRACTIONS,
    seed: int = 0,
    *,
    params: SimParams | None = None,
    workers: int = 1,
) -> TaskSet:
    """Generates a deterministic train/test task set.

    Args:
        meshes: Candidate meshes; train and test receive disjoint subsets.
        counts: Number of (train, test) tasks.
        hard_fractions: Share of hard tasks in (train, test); the rest are easy.
        seed: Root seed; every task seed derives from it.
        workers: Generate tasks on this many threads.

    Raises:
        InsufficientMeshes: disjoint train and test mesh sets are impossible.
    """
    jobs, mesh_splits = plan_tasks(meshes, counts, hard_fractions, seed, params=params)

    logger.info(f"Generating {len(jobs)} tasks with {workers} worker(s)")
    if workers > 1:
        with concurrent.futures.ThreadPoolExecutor(max_workers=workers) as executor:
            tasks = list(executor.map(_run_job, jobs))
    else:
        tasks = [_run_job(job) for job in jobs]

    used = {mesh_id(job.mesh): job.mesh for job in jobs}
    task_set = TaskSet(
        seed=seed,
        meshes={key: used[key] for key in mesh_splits if key in used},
        mesh_splits={key: mesh_splits[key] for key in used},
        tasks=tasks,
    )
    task_set.validate()
    return task_set
