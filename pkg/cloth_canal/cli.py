import argparse
import concurrent.futures
import logging
import math
import os
import sys
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any

import numpy as np

from ._utils import derive_seed
from .canal_io import CanalIO
from .garments import sample_garment
from .kinds import (
    Category,
    Difficulty,
    Objective,
    PolicyKind,
    PrimitiveSet,
    Split,
)
from .planner import (
    DEFAULT_FOLD_THRESHOLD,
    EpisodeResult,
    PolicyConfig,
    run_episode,
)
from .rewards import DEFAULT_ALPHA, DEFAULT_TAU
from .tasks import Task, TaskSet, build_dataset
from .version import __version__
from .warnings import (
    ClothCanalWarning,
    DegenerateRotation,
    GraspMissed,
    LowCoverage,
    SettleTimeout,
)

logger = logging.getLogger(__name__)

LOG_LEVEL_ENV = "CF_LOG_LEVEL"
METRICS_SCHEMA_VERSION = 1
METRIC_NAMES = ("r_unf", "r_a", "r_c", "r_ca", "iou", "coverage")
ABLATION_METRICS = ("r_unf", "r_a", "r_c", "iou", "coverage")
METRIC_FIELDS = (
    "schema_version",
    "config",
    "task",
    "difficulty",
    "status",
    "error",
    *METRIC_NAMES,
    "steps",
    "fling",
    "pick_place",
    "fold_r_unf",
    "fold_success",
)

WARNING_OPTIONS: dict[str, type[ClothCanalWarning]] = {
    "low-coverage": LowCoverage,
    "grasp-missed": GraspMissed,
    "settle-timeout": SettleTimeout,
    "degenerate-rotation": DegenerateRotation,
}


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything an evaluate or ablate run needs."""

    task_set: Path
    out: Path
    policy: PolicyKind = PolicyKind.GREEDY
    policy_config: PolicyConfig = field(default_factory=PolicyConfig)
    split: Split = Split.TEST
    difficulty: Difficulty | None = None
    limit: int | None = None
    format: str = "csv"
    fold_threshold: float = DEFAULT_FOLD_THRESHOLD
    workers: int = 1
    error: tuple[str, ...] | None = None
    ignore: tuple[str, ...] | None = None

    def __post_init__(self) -> None:
        if not self.task_set.is_file():
            raise FileNotFoundError(f"Task set {self.task_set} does not exist")
        if self.limit is not None and self.limit < 0:
            raise ValueError("--limit cannot be negative")
        if self.format not in ("csv", "json"):
            raise ValueError(f"Unknown metrics format {self.format}")


def gen_tasks(
    out: str,
    *,
    category: str = "shirt",
    train: int = 200,
    test: int = 50,
    seed: int = 0,
    meshes: int = 10,
    pitch: float = 0.025,
    hard_train: float = 0.75,
    hard_test: float = 0.5,
    workers: int = 1,
) -> int:
    """Generate a task set file"""
    kind = Category.get_by_name(category)
    rng = np.random.default_rng(derive_seed(seed, 0xC10))
    pool = [sample_garment(kind, rng, pitch) for _ in range(meshes)]
    task_set = build_dataset(
        pool, (train, test), (hard_train, hard_test), seed, workers=workers
    )
    task_set.save(out)
    counts = {
        f"{split}/{difficulty}": len(task_set.select(split, difficulty))
        for split in Split
        for difficulty in Difficulty
    }
    summary = ", ".join(f"{k}={v}" for k, v in counts.items())
    print(f"{len(task_set)} tasks ({summary}) written to {out}")
    return 0


def _select_tasks(config: ExperimentConfig) -> list[Task]:
    task_set = TaskSet.open(config.task_set)
    tasks = task_set.select(config.split, config.difficulty)
    if config.limit is not None:
        tasks = tasks[: config.limit]
    return tasks


@dataclass(frozen=True)
class _Job:
    label: str
    task: Task
    policy: PolicyKind
    config: PolicyConfig
    fold_threshold: float


def _run_job(job: _Job) -> tuple[str, str, EpisodeResult]:
    try:
        result = run_episode(
            job.task, job.policy, job.config, fold_threshold=job.fold_threshold
        )
    except Exception as e:
        logger.error(f"Task {job.task.index} failed: {e}", exc_info=True)
        result = EpisodeResult(
            task_index=job.task.index,
            policy=job.policy,
            error=f"{type(e).__name__}: {e}",
        )
    return job.label, job.task.difficulty.value, result


def _run_jobs(
    jobs: list[_Job], config: ExperimentConfig
) -> list[tuple[str, str, EpisodeResult]]:
    if config.workers > 1 and len(jobs) > 1:
        with concurrent.futures.ProcessPoolExecutor(
            max_workers=config.workers,
            initializer=set_warnings,
            initargs=(
                None if config.error is None else list(config.error),
                None if config.ignore is None else list(config.ignore),
            ),
        ) as executor:
            return list(executor.map(_run_job, jobs))
    return [_run_job(job) for job in jobs]


def _row(label: str, difficulty: str, result: EpisodeResult) -> dict[str, Any]:
    row: dict[str, Any] = {
        "schema_version": METRICS_SCHEMA_VERSION,
        "config": label,
        "task": result.task_index,
        "difficulty": difficulty,
        "status": "error" if result.error else "ok",
        "error": result.error or "",
        "steps": result.steps,
        "fling": result.primitive_counts.get("fling", 0),
        "pick_place": result.primitive_counts.get("pick_place", 0),
        "fold_r_unf": "" if result.fold is None else result.fold["r_unf"],
        "fold_success": "" if result.fold is None else result.fold["success"],
    }
    for name in METRIC_NAMES:
        row[name] = result.final.get(name, "")
    return row


def _mean_row(label: str, rows: list[dict[str, Any]]) -> dict[str, Any]:
    ok = [r for r in rows if r["status"] == "ok"]
    mean: dict[str, Any] = {name: "" for name in METRIC_FIELDS}
    mean.update(
        schema_version=METRICS_SCHEMA_VERSION,
        config=label,
        task="mean",
        status="ok" if len(ok) == len(rows) else "error",
        error="" if len(ok) == len(rows) else f"{len(rows) - len(ok)} failed",
    )
    for name in (*METRIC_NAMES, "steps", "fling", "pick_place"):
        values = [float(r[name]) for r in ok]
        mean[name] = float(np.mean(values)) if values else ""
    folds = [float(r["fold_r_unf"]) for r in ok if r["fold_r_unf"] != ""]
    if folds:
        mean["fold_r_unf"] = float(np.mean(folds))
        mean["fold_success"] = float(
            np.mean([bool(r["fold_success"]) for r in ok if r["fold_success"] != ""])
        )
    return mean


def _write_outputs(
    config: ExperimentConfig,
    results: list[tuple[str, str, EpisodeResult]],
    labels: list[str],
) -> tuple[list[dict[str, Any]], bool]:
    io = CanalIO()
    rows: list[dict[str, Any]] = []
    means: list[dict[str, Any]] = []
    for label in labels:
        group = [_row(lbl, d, r) for lbl, d, r in results if lbl == label]
        rows.extend(group)
        means.append(_mean_row(label, group))

    table = rows + means
    if config.format == "csv":
        io.write_csv(config.out / "metrics.csv", METRIC_FIELDS, table)
    else:
        io.write_json(config.out / "metrics.json", table, indent=2)
    io.write_jsonl(
        config.out / "episodes.jsonl",
        ({"config": lbl, **r.to_dict()} for lbl, _, r in results),
    )
    failed = any(r.error for _, _, r in results)
    io.write_json(
        config.out / "summary.json",
        {
            "schema_version": METRICS_SCHEMA_VERSION,
            "version": __version__,
            "task_set": config.task_set.name,
            "policy": config.policy.value,
            "split": config.split.value,
            "difficulty": (
                "all" if config.difficulty is None else config.difficulty.value
            ),
            "tasks": len({r.task_index for _, _, r in results}),
            "failed": sum(1 for _, _, r in results if r.error),
            "means": means,
        },
        indent=2,
    )
    return means, not failed


def evaluate(config: ExperimentConfig) -> int:
    """Run one policy over the selected tasks and write the metric files"""
    tasks = _select_tasks(config)
    label = config.policy.value
    jobs = [
        _Job(label, task, config.policy, config.policy_config, config.fold_threshold)
        for task in tasks
    ]
    results = _run_jobs(jobs, config)
    means, ok = _write_outputs(config, results, [label])
    mean = means[0]
    print(
        f"{len(tasks)} tasks: IoU {_fmt(mean['iou'])}, "
        f"coverage {_fmt(mean['coverage'])}, R_Unf {_fmt(mean['r_unf'])}"
    )
    return 0 if ok else 1


def ablation_configs(base: PolicyConfig) -> list[tuple[str, PolicyConfig]]:
    """Every objective paired with every primitive set, in table order."""
    configs = []
    objectives = ((Objective.UNFACTORIZED, "unf"), (Objective.FACTORIZED, "ca"))
    for objective, short in objectives:
        for primitives in PrimitiveSet:
            configs.append(
                (
                    f"{short}-{primitives.value}",
                    replace(
                        base,
                        objective=objective,
                        allowed_primitives=primitives.primitives,
                    ),
                )
            )
    return configs


def ablate(config: ExperimentConfig) -> int:
    """Run the objective by primitive cross product on the same tasks"""
    tasks = _select_tasks(config)
    variants = ablation_configs(config.policy_config)
    jobs = [
        _Job(label, task, PolicyKind.GREEDY, policy_config, config.fold_threshold)
        for label, policy_config in variants
        for task in tasks
    ]
    results = _run_jobs(jobs, config)
    labels = [label for label, _ in variants]
    means, ok = _write_outputs(config, results, labels)

    table = [
        {"policy": mean["config"], **{name: mean[name] for name in ABLATION_METRICS}}
        for mean in means
    ]
    CanalIO().write_csv(
        config.out / "ablation.csv", ("policy", *ABLATION_METRICS), table
    )
    header = f"{'policy':<12}" + "".join(f"{name:>10}" for name in ABLATION_METRICS)
    print(header)
    for row in table:
        print(
            f"{row['policy']:<12}"
            + "".join(f"{_fmt(row[name]):>10}" for name in ABLATION_METRICS)
        )
    return 0 if ok else 1


def _fmt(value: Any) -> str:
    if isinstance(value, float) and math.isfinite(value):
        return f"{value:.3f}"
    return "n/a"


def add_warnings_behavior(parser: argparse.ArgumentParser) -> None:
    warnings_group = parser.add_argument_group("warnings behavior")
    warnings_group.add_argument(
        "--error",
        nargs="*",
        choices=list(WARNING_OPTIONS),
        help="Error on all cloth-canal warnings or specific warnings.",
    )
    warnings_group.add_argument(
        "--ignore",
        nargs="*",
        choices=list(WARNING_OPTIONS),
        help="Ignore all cloth-canal warnings or specific warnings.",
    )


def set_warnings(error: list[str] | None, ignore: list[str] | None) -> None:
    # First set filters on the base class
    if ignore is not None and len(ignore) == 0:
        warnings.filterwarnings("ignore", category=ClothCanalWarning)
    if error is not None and len(error) == 0:
        warnings.filterwarnings("error", category=ClothCanalWarning)

    # Then set filters on any specific classes
    if ignore is not None:
        for w in ignore:
            warnings.filterwarnings("ignore", category=WARNING_OPTIONS[w])
    if error is not None:
        for w in error:
            warnings.filterwarnings("error", category=WARNING_OPTIONS[w])


def add_run_options(parser: argparse.ArgumentParser, policy: bool) -> None:
    run_group = parser.add_argument_group("run options")
    run_group.add_argument("--task-set", required=True, help="Task set file")
    run_group.add_argument("--out", default="results", help="Output directory")
    if policy:
        run_group.add_argument(
            "--policy",
            choices=[p.value for p in PolicyKind],
            default=PolicyKind.GREEDY.value,
        )
        run_group.add_argument(
            "--objective",
            choices=["unf", "ca"],
            default="ca",
            help="Objective the greedy planner maximizes",
        )
        run_group.add_argument(
            "--primitives",
            choices=[p.value for p in PrimitiveSet],
            default=PrimitiveSet.BOTH.value,
        )
    run_group.add_argument("--alpha", type=float, default=DEFAULT_ALPHA)
    run_group.add_argument("--tau", type=float, default=DEFAULT_TAU)
    run_group.add_argument(
        "--candidates", type=int, default=64, help="Rollouts per planner step"
    )
    run_group.add_argument("--steps", type=int, default=10, help="Steps per episode")
    run_group.add_argument("--seed", type=int, default=0)
    run_group.add_argument(
        "--workers", type=int, default=1, help="Tasks evaluated in parallel"
    )
    run_group.add_argument(
        "--split", choices=[s.value for s in Split], default=Split.TEST.value
    )
    run_group.add_argument(
        "--difficulty", choices=["hard", "easy", "all"], default="all"
    )
    run_group.add_argument("--limit", type=int, help="Evaluate at most this many tasks")
    run_group.add_argument("--format", choices=["csv", "json"], default="csv")
    run_group.add_argument(
        "--fold-threshold",
        type=float,
        default=DEFAULT_FOLD_THRESHOLD,
        help="Largest folded-goal distance (normalized) counted as a success",
    )


def parse_args(args: list[str]) -> dict[str, Any]:
    desc = "Canonicalized-alignment cloth manipulation experiments"
    dhf = argparse.ArgumentDefaultsHelpFormatter
    parser0 = argparse.ArgumentParser(description=desc)
    parser0.add_argument(
        "--version",
        help="Print version and exit",
        action="version",
        version=__version__,
    )

    parent = argparse.ArgumentParser(add_help=False)
    parent.add_argument(
        "--logging",
        help=f"DEBUG, INFO, WARN, ERROR, CRITICAL (default: ${LOG_LEVEL_ENV} or INFO)",
    )

    subparsers = parser0.add_subparsers(dest="command")

    # gen-tasks command
    parser = subparsers.add_parser(
        "gen-tasks",
        help="Generate a train/test task set",
        parents=[parent],
        formatter_class=dhf,
    )
    gen_group = parser.add_argument_group("generation options")
    gen_group.add_argument(
        "--category", choices=[c.value for c in Category], default="shirt"
    )
    gen_group.add_argument("--train", type=int, default=200, help="Training tasks")
    gen_group.add_argument("--test", type=int, default=50, help="Test tasks")
    gen_group.add_argument("--seed", type=int, default=0)
    gen_group.add_argument(
        "--meshes", type=int, default=10, help="Randomized meshes to draw"
    )
    gen_group.add_argument("--pitch", type=float, default=0.025, help="Grid pitch (m)")
    gen_group.add_argument(
        "--hard-train", type=float, default=0.75, help="Hard share of training tasks"
    )
    gen_group.add_argument(
        "--hard-test", type=float, default=0.5, help="Hard share of test tasks"
    )
    gen_group.add_argument("--workers", type=int, default=1)
    gen_group.add_argument("--out", default="tasks.jsonl", help="Task set file")
    add_warnings_behavior(parser)

    # evaluate command
    parser = subparsers.add_parser(
        "evaluate",
        help="Run a policy on a task set and write metrics",
        parents=[parent],
        formatter_class=dhf,
    )
    add_run_options(parser, policy=True)
    add_warnings_behavior(parser)

    # ablate command
    parser = subparsers.add_parser(
        "ablate",
        help="Compare objectives and primitive sets on the same tasks",
        parents=[parent],
        formatter_class=dhf,
    )
    add_run_options(parser, policy=False)
    add_warnings_behavior(parser)

    parsed_args = {
        k: v for k, v in vars(parser0.parse_args(args)).items() if v is not None
    }
    if "command" not in parsed_args:
        parser0.print_usage()
        return {}
    return parsed_args


def experiment_config(args: dict[str, Any]) -> ExperimentConfig:
    """Builds the run configuration from parsed evaluate/ablate arguments."""
    primitives = PrimitiveSet.get_by_name(args.pop("primitives", "both"))
    policy_config = PolicyConfig(
        objective=Objective.from_flag(args.pop("objective", "ca")),
        alpha=args.pop("alpha"),
        tau=args.pop("tau"),
        candidates_per_step=args.pop("candidates"),
        max_steps=args.pop("steps"),
        allowed_primitives=primitives.primitives,
        seed=args.pop("seed"),
    )
    difficulty = args.pop("difficulty")
    error = args.pop("error", None)
    ignore = args.pop("ignore", None)
    return ExperimentConfig(
        task_set=Path(args.pop("task_set")),
        out=Path(args.pop("out")),
        policy=PolicyKind.get_by_name(args.pop("policy", "greedy")),
        policy_config=policy_config,
        split=Split.get_by_name(args.pop("split")),
        difficulty=None if difficulty == "all" else Difficulty.get_by_name(difficulty),
        limit=args.pop("limit", None),
        format=args.pop("format"),
        fold_threshold=args.pop("fold_threshold"),
        workers=args.pop("workers"),
        error=None if error is None else tuple(error),
        ignore=None if ignore is None else tuple(ignore),
    )


def cli() -> int:
    args = parse_args(sys.argv[1:])
    if not args:
        return 1

    loglevel = args.pop("logging", None) or os.environ.get(LOG_LEVEL_ENV) or "INFO"
    logging.basicConfig(level=loglevel.upper())

    cmd = args.pop("command")

    try:
        set_warnings(args.get("error"), args.get("ignore"))

        if cmd == "gen-tasks":
            args.pop("error", None)
            args.pop("ignore", None)
            return gen_tasks(**args)
        elif cmd == "evaluate":
            return evaluate(experiment_config(args))
        elif cmd == "ablate":
            return ablate(experiment_config(args))
        else:
            logger.error(
                f"Command '{cmd}' is not a valid command. "
                "must be 'gen-tasks', 'evaluate' or 'ablate'",
            )
            return 1
    except Exception as e:
        logger.error(e, exc_info=True)
        return 1


if __name__ == "__main__":
    return_code = cli()
    if return_code and return_code != 0:
        sys.exit(return_code)
