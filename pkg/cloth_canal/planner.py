"""Policies built on the rewards and action maps, plus folding and ironing.

The greedy policy stands in for a learned value network: it samples valid
actions from the validity masks, rolls each one out on a cloned state and
executes the one with the largest one-step change of the objective.

Ironing is scored on the cloth geometry, not on a rasterized sweep: a pass
counts the area of the triangles that lie flat on the board at one of the
scheduled alignments, so the goal mask plays no part in the score.
"""

from __future__ import annotations

import concurrent.futures
import logging
import math
import warnings
from collections import Counter
from dataclasses import dataclass, field, replace
from typing import Any

import numpy as np
from numpy.typing import NDArray

from cloth_canal._utils import derive_seed
from cloth_canal.actionmaps import (
    ActionCommand,
    TransformStack,
    ViewConfig,
    build_stack,
    decode_action,
    render_mask,
    validity_mask,
)
from cloth_canal.exceptions import NoValidAction, WrongCategory
from cloth_canal.garments import GarmentMesh, arm_length
from cloth_canal.geometry import (
    FloatArray,
    PlanarTransform,
    VertexConfiguration,
    apply_transform,
)
from cloth_canal.kinds import Category, Objective, PolicyKind, PrimitiveKind
from cloth_canal.rewards import (
    DEFAULT_ALPHA,
    DEFAULT_TAU,
    RewardBreakdown,
    coverage,
    iou,
    normalization_scale,
    objective_value,
    reward_factorized,
    reward_unfactorized,
)
from cloth_canal.simulator import SimState, execute_primitive, pick_and_place
from cloth_canal.tasks import Task
from cloth_canal.warnings import ClothCanalWarning, LowCoverage

logger = logging.getLogger(__name__)

KEYPOINT_COVERAGE = 0.6
FOLD_LAYER = 0.005
DEFAULT_FOLD_THRESHOLD = 0.15
IRONING_AREA_RATIO = 0.8


@dataclass(frozen=True)
class PolicyConfig:
    """Planner settings.

    ``allowed_primitives`` keeps the order the primitives are offered in.
    """

    objective: Objective = Objective.FACTORIZED
    alpha: float = DEFAULT_ALPHA
    tau: float = DEFAULT_TAU
    candidates_per_step: int = 64
    max_steps: int = 10
    allowed_primitives: tuple[PrimitiveKind, ...] = tuple(PrimitiveKind)
    seed: int = 0
    workers: int = 1
    view: ViewConfig = field(default_factory=ViewConfig)

    def __post_init__(self) -> None:
        if self.candidates_per_step < 1:
            raise ValueError("candidates_per_step must be at least 1")
        if self.max_steps < 0:
            raise ValueError("max_steps cannot be negative")
        if not self.allowed_primitives:
            raise ValueError("At least one primitive must be allowed")
        if not 0.0 < self.alpha < 1.0:
            raise ValueError(f"alpha must lie in (0, 1), got {self.alpha}")


def evaluate(state: SimState, task: Task, config: PolicyConfig) -> RewardBreakdown:
    """Reward breakdown of a state against the task goal."""
    return reward_factorized(
        state.positions,
        task.goal(),
        config.alpha,
        config.tau,
        normalization_scale(task.mesh.vertices),
        goal_frame=task.goal_transform,
    )


def episode_metrics(
    state: SimState, task: Task, config: PolicyConfig
) -> dict[str, float]:
    """Rewards plus mask IoU and coverage of a state against the task goal."""
    breakdown = evaluate(state, task, config)
    triangles = task.mesh.triangles
    current = render_mask(state.positions, triangles, config=config.view)
    goal = render_mask(task.goal().positions, triangles, config=config.view)
    return {
        "r_unf": breakdown.r_unf,
        "r_a": breakdown.r_a,
        "r_c": breakdown.r_c,
        "r_ca": breakdown.r_ca,
        "iou": iou(current, goal),
        "coverage": coverage(current, goal),
    }


@dataclass(frozen=True, eq=False)
class StepResult:
    command: ActionCommand | None
    state: SimState
    delta: float
    before: RewardBreakdown
    after: RewardBreakdown


def _valid_actions(
    state: SimState, task: Task, config: PolicyConfig
) -> tuple[list[PrimitiveKind], TransformStack, NDArray[np.intp]]:
    stack = build_stack(state, task.goal_transform, config.view, config.workers)
    kinds = list(config.allowed_primitives)
    validity = np.stack([validity_mask(stack, kind) for kind in kinds])
    return kinds, stack, np.argwhere(validity)


def _rollout(
    state: SimState, command: ActionCommand
) -> SimState:
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ClothCanalWarning)
        return execute_primitive(state, command.to_spec())


def greedy_step(
    state: SimState,
    task: Task,
    config: PolicyConfig,
    rng: np.random.Generator | None = None,
) -> StepResult:
    """Executes the best of ``candidates_per_step`` sampled valid actions.

    Candidates are drawn uniformly without replacement from every valid
    (primitive, entry, pixel) triple and scored by rolling them out on clones.
    Ties go to the earliest sampled candidate.

    Raises:
        NoValidAction: no pixel is valid for any allowed primitive.
    """
    rng = rng or np.random.default_rng(config.seed)
    kinds, stack, valid = _valid_actions(state, task, config)
    if len(valid) == 0:
        raise NoValidAction("No valid action for any allowed primitive")
    count = min(config.candidates_per_step, len(valid))
    picks = valid[rng.choice(len(valid), size=count, replace=False)]
    commands = [
        decode_action(stack[int(k)], (int(col), int(row)), kinds[int(p)])
        for p, k, row, col in picks
    ]

    before = evaluate(state, task, config)
    baseline = objective_value(before, config.objective)

    def score(command: ActionCommand) -> tuple[SimState, RewardBreakdown]:
        result = _rollout(state, command)
        return result, evaluate(result, task, config)

    if config.workers > 1 and count > 1:
        with concurrent.futures.ThreadPoolExecutor(
            max_workers=config.workers
        ) as executor:
            outcomes = list(executor.map(score, commands))
    else:
        outcomes = [score(command) for command in commands]

    deltas = [
        objective_value(after, config.objective) - baseline for _, after in outcomes
    ]
    best = int(np.argmax(deltas))
    logger.debug(
        f"Greedy step: {count} candidates, best delta {deltas[best]:.4f} "
        f"({commands[best].kind})"
    )
    new_state, after = outcomes[best]
    return StepResult(commands[best], new_state, deltas[best], before, after)


def random_step(
    state: SimState,
    task: Task,
    config: PolicyConfig,
    rng: np.random.Generator | None = None,
) -> StepResult:
    """Executes one uniformly sampled valid action."""
    single = replace(config, candidates_per_step=1, workers=1)
    return greedy_step(state, task, single, rng)


def oracle_step(state: SimState, task: Task, config: PolicyConfig) -> StepResult:
    """Teleports every vertex onto the goal; a sanity check for the metrics."""
    before = evaluate(state, task, config)
    new_state = state.clone()
    new_state.release()
    new_state.positions[:] = task.goal().positions
    new_state.velocities[:] = 0.0
    after = evaluate(new_state, task, config)
    delta = objective_value(after, config.objective) - objective_value(
        before, config.objective
    )
    return StepResult(None, new_state, delta, before, after)


@dataclass(eq=False)
class EpisodeResult:
    """Outcome of one policy run on one task."""

    task_index: int
    policy: PolicyKind
    records: list[dict[str, Any]] = field(default_factory=list)
    initial: dict[str, float] = field(default_factory=dict)
    final: dict[str, float] = field(default_factory=dict)
    primitive_counts: dict[str, int] = field(default_factory=dict)
    error: str | None = None
    fold: dict[str, float | bool] | None = None

    @property
    def steps(self) -> int:
        return len(self.records)

    def to_dict(self) -> dict[str, Any]:
        return {
            "task": self.task_index,
            "policy": self.policy.value,
            "steps": self.records,
            "initial": self.initial,
            "final": self.final,
            "primitive_counts": self.primitive_counts,
            "error": self.error,
            "fold": self.fold,
        }


def _step_record(
    index: int, result: StepResult, metrics: dict[str, float]
) -> dict[str, Any]:
    command = result.command
    return {
        "step": index,
        "primitive": None if command is None else command.kind.value,
        "grasp_a": None if command is None else command.grasp_a.tolist(),
        "grasp_b": None if command is None else command.grasp_b.tolist(),
        "before": result.before.as_dict(),
        "after": result.after.as_dict(),
        "delta": result.delta,
        **{key: metrics[key] for key in ("iou", "coverage")},
    }


def run_episode(
    task: Task,
    policy: PolicyKind,
    config: PolicyConfig,
    *,
    fold_threshold: float = DEFAULT_FOLD_THRESHOLD,
) -> EpisodeResult:
    """Runs a policy for up to ``max_steps`` steps on a fresh copy of the task.

    The episode stops early when no valid action remains. Final metrics are
    those of the last executed step, or of the initial state if none ran.
    """
    rng = np.random.default_rng(derive_seed(config.seed, task.seed))
    state = task.fresh_state()
    result = EpisodeResult(task_index=task.index, policy=policy)
    metrics = episode_metrics(state, task, config)
    result.initial = metrics
    counts: Counter[str] = Counter()

    steps = 1 if policy is PolicyKind.ORACLE else config.max_steps
    for index in range(steps):
        try:
            if policy is PolicyKind.ORACLE:
                outcome = oracle_step(state, task, config)
            elif policy is PolicyKind.RANDOM:
                outcome = random_step(state, task, config, rng)
            else:
                outcome = greedy_step(state, task, config, rng)
        except NoValidAction as err:
            logger.debug(f"Task {task.index}: {err}; stopping after {index} steps")
            break
        state = outcome.state
        metrics = episode_metrics(state, task, config)
        result.records.append(_step_record(index, outcome, metrics))
        if outcome.command is not None:
            counts[outcome.command.kind.value] += 1

    if policy is PolicyKind.FOLD_DEMO:
        folded = fold_shirt(state, task.mesh)
        goal = apply_transform(task.goal_transform, folded_goal(task.mesh))
        r_unf = reward_unfactorized(
            folded.positions, goal, normalization_scale(task.mesh.vertices)
        )
        result.fold = {"r_unf": r_unf, "success": -r_unf <= fold_threshold}

    result.final = metrics
    result.primitive_counts = {kind.value: counts[kind.value] for kind in PrimitiveKind}
    logger.info(
        f"Task {task.index} {policy}: {result.steps} steps, "
        f"IoU {metrics['iou']:.3f}, coverage {metrics['coverage']:.3f}"
    )
    return result


def clamp_place(place: FloatArray, shoulder: FloatArray, reach: float) -> FloatArray:
    """Pulls ``place`` onto the circle of radius ``reach`` about ``shoulder``
    when it lies farther away; keeps it otherwise."""
    offset = np.asarray(place, dtype=np.float64)[:2] - shoulder[:2]
    distance = float(np.linalg.norm(offset))
    if distance <= reach or distance == 0:
        return np.asarray(place, dtype=np.float64)[:2].copy()
    return shoulder[:2] + offset * (reach / distance)


def sleeve_places(
    keypoints: dict[str, FloatArray], reach: float
) -> tuple[FloatArray, FloatArray]:
    """Place points of the left and right sleeves.

    The quarter and three-quarter points of the waist line, each clamped to
    ``reach`` from its shoulder.
    """
    left_waist = keypoints["left_waist"][:2]
    right_waist = keypoints["right_waist"][:2]
    quarter = left_waist + 0.25 * (right_waist - left_waist)
    three_quarter = left_waist + 0.75 * (right_waist - left_waist)
    return (
        clamp_place(quarter, keypoints["left_shoulder"], reach),
        clamp_place(three_quarter, keypoints["right_shoulder"], reach),
    )


def fold_shirt(state: SimState, mesh: GarmentMesh) -> SimState:
    """Two-step keypoint fold of a shirt.

    Both sleeves are placed at once onto the waist line, then both shoulders
    onto the waists. Keypoints are the mesh's vertex indices tracked in
    ``state``. A :class:`LowCoverage` warning flags cloth too crumpled for
    keypoint folding.
    """
    if mesh.category is not Category.SHIRT:
        raise WrongCategory.expected("shirt", mesh.category.value)
    canonical = render_mask(mesh.vertices.positions, mesh.triangles)
    current = render_mask(state.positions, mesh.triangles)
    spread = coverage(current, canonical)
    if spread < KEYPOINT_COVERAGE:
        warnings.warn(LowCoverage(spread, KEYPOINT_COVERAGE), stacklevel=2)

    reach = arm_length(mesh)
    keypoints = mesh.keypoint_positions(state.positions)
    left_place, right_place = sleeve_places(keypoints, reach)
    state = pick_and_place(
        state,
        [keypoints["left_sleeve"], keypoints["right_sleeve"]],
        [left_place, right_place],
    )

    keypoints = mesh.keypoint_positions(state.positions)
    return pick_and_place(
        state,
        [keypoints["left_shoulder"], keypoints["right_shoulder"]],
        [keypoints["left_waist"], keypoints["right_waist"]],
    )


def _reflect(
    points: FloatArray, origin: FloatArray, direction: FloatArray
) -> FloatArray:
    """Reflects planar points across the line through ``origin`` along
    ``direction``."""
    d = direction / np.linalg.norm(direction)
    rel = points - origin
    along = rel @ d
    return origin + 2 * along[:, None] * d - rel


def fold_in_half(points: FloatArray, crease: float) -> FloatArray:
    """Reflects every vertex above ``y = crease`` below it, one layer up."""
    folded = np.array(points, dtype=np.float64)
    upper = folded[:, 1] > crease
    folded[upper, 1] = 2 * crease - folded[upper, 1]
    folded[upper, 2] += FOLD_LAYER
    return folded


def folded_goal(mesh: GarmentMesh) -> VertexConfiguration:
    """Canonical shirt folded kinematically by the two heuristic steps.

    Each sleeve is reflected across the line through its shoulder that
    bisects the sleeve and place directions, which lays the sleeve along the
    way to its place point. Then the upper half is folded onto the lower half
    at the midline between shoulders and waists.
    """
    if mesh.category is not Category.SHIRT:
        raise WrongCategory.expected("shirt", mesh.category.value)
    points = np.array(mesh.vertices.positions)
    keypoints = mesh.keypoint_positions(points)
    left_place, right_place = sleeve_places(keypoints, arm_length(mesh))

    for side, place, outside in (
        ("left", left_place, points[:, 0] < keypoints["left_shoulder"][0] - 1e-9),
        ("right", right_place, points[:, 0] > keypoints["right_shoulder"][0] + 1e-9),
    ):
        shoulder = keypoints[f"{side}_shoulder"][:2]
        to_sleeve = keypoints[f"{side}_sleeve"][:2] - shoulder
        to_place = place - shoulder
        bisector = to_sleeve / np.linalg.norm(to_sleeve) + to_place / np.linalg.norm(
            to_place
        )
        points[outside, :2] = _reflect(points[outside, :2], shoulder, bisector)
        points[outside, 2] += FOLD_LAYER

    crease = 0.5 * (keypoints["left_shoulder"][1] + keypoints["left_waist"][1])
    return VertexConfiguration(fold_in_half(points, crease))


@dataclass(frozen=True)
class IroningBoard:
    """Axis-aligned board; its long side runs along y."""

    center_x: float = 0.0
    center_y: float = 0.0
    width: float = 0.5
    length: float = 1.0

    def contains(self, points: FloatArray) -> NDArray[np.bool_]:
        return (np.abs(points[:, 0] - self.center_x) <= self.width / 2) & (
            np.abs(points[:, 1] - self.center_y) <= self.length / 2
        )


def ironing_schedule(
    goal: PlanarTransform,
    mesh: GarmentMesh,
    board: IroningBoard | None = None,
) -> list[PlanarTransform]:
    """Two alignments that put the left, then the right, half of the garment
    on the board.

    Both keep the goal's rotation, sit on the board's center line and are
    offset by a quarter of the garment width across the board.
    """
    board = board or IroningBoard()
    offset = mesh.width / 4
    return [
        PlanarTransform(board.center_x + offset, board.center_y, goal.theta),
        PlanarTransform(board.center_x - offset, board.center_y, goal.theta),
    ]


def _signed_areas(points: FloatArray, triangles: NDArray[np.intp]) -> FloatArray:
    a = points[triangles[:, 0], :2]
    b = points[triangles[:, 1], :2]
    c = points[triangles[:, 2], :2]
    ab = b - a
    ac = c - a
    return 0.5 * (ab[:, 0] * ac[:, 1] - ab[:, 1] * ac[:, 0])


def ironing_score(
    configurations: list[VertexConfiguration],
    mesh: GarmentMesh,
    board: IroningBoard | None = None,
) -> float:
    """Share of the garment's area that a straight pass over the board irons.

    ``configurations`` holds the cloth as it lay at each scheduled alignment.
    A triangle is ironed when, in some configuration, all of its vertices lie
    on the board and it lies flat: its area is at least 80% of its canonical
    area and it is not flipped relative to the majority of triangles.
    """
    board = board or IroningBoard()
    rest = _signed_areas(mesh.vertices.positions, mesh.triangles)
    total = float(np.sum(np.abs(rest)))
    ironed = np.zeros(len(mesh.triangles), dtype=bool)
    for cfg in configurations:
        areas = _signed_areas(cfg.positions, mesh.triangles)
        ratio = areas / rest
        majority = 1.0 if np.sum(ratio > 0) >= np.sum(ratio < 0) else -1.0
        flat = majority * ratio >= IRONING_AREA_RATIO
        on_board = board.contains(cfg.positions)[mesh.triangles].all(axis=1)
        ironed |= flat & on_board
    score = float(np.sum(np.abs(rest)[ironed]) / total) if total > 0 else 0.0
    if math.isnan(score):
        return 0.0
    return score
