__all__ = [
    "AlignmentResult",
    "Category",
    "GarmentMesh",
    "Objective",
    "PlanarTransform",
    "PolicyConfig",
    "PrimitiveKind",
    "PrimitiveSpec",
    "RewardBreakdown",
    "SimParams",
    "SimState",
    "Task",
    "TaskSet",
    "VertexConfiguration",
    "__version__",
    "build_dataset",
    "execute_primitive",
    "make_garment",
    "reward_factorized",
    "reward_unfactorized",
    "run_episode",
    "trimmed_align",
]

from cloth_canal.garments import GarmentMesh, make_garment
from cloth_canal.geometry import (
    AlignmentResult,
    PlanarTransform,
    VertexConfiguration,
    trimmed_align,
)
from cloth_canal.kinds import Category, Objective, PrimitiveKind
from cloth_canal.planner import PolicyConfig, run_episode
from cloth_canal.rewards import (
    RewardBreakdown,
    reward_factorized,
    reward_unfactorized,
)
from cloth_canal.simulator import PrimitiveSpec, SimParams, SimState, execute_primitive
from cloth_canal.tasks import Task, TaskSet, build_dataset
from cloth_canal.version import __version__
