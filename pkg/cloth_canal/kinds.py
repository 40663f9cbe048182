from __future__ import annotations

from enum import Enum
from typing import TypeVar

_E = TypeVar("_E", bound="_NamedEnum")


class _NamedEnum(Enum):
    """String-valued enumeration that can be looked up by name or value"""

    @classmethod
    def get_by_name(cls: type[_E], name: str | _E) -> _E:
        if isinstance(name, cls):
            return name
        key = str(name).replace("-", "_")
        for member in cls:
            if member.name == key.upper() or member.value == key.lower():
                return member
        raise ValueError(
            f"Invalid {cls.__name__} '{name}'. Options are: "
            f"{[m.value for m in cls]}"
        )

    def __str__(self) -> str:
        return f"{self.value}"

    def __repr__(self) -> str:
        return str(self)


class Category(_NamedEnum):
    """Garment categories produced by the mesh generators"""

    SHIRT = "shirt"
    PANTS = "pants"

    # flat rectangular cloth, used for physics and rendering checks
    PATCH = "patch"


class SpringKind(_NamedEnum):
    STRUCTURAL = "structural"
    SHEAR = "shear"
    BEND = "bend"

    @property
    def code(self) -> int:
        return list(SpringKind).index(self)


class PrimitiveKind(_NamedEnum):
    """Manipulation primitives, in value-stack order"""

    FLING = "fling"
    PICK_PLACE = "pick_place"

    @property
    def index(self) -> int:
        return list(PrimitiveKind).index(self)


class Difficulty(_NamedEnum):
    HARD = "hard"
    EASY = "easy"


class Split(_NamedEnum):
    TRAIN = "train"
    TEST = "test"


class Objective(_NamedEnum):
    """Reward a planner maximizes the one-step change of"""

    UNFACTORIZED = "unfactorized"
    FACTORIZED = "factorized"

    @classmethod
    def from_flag(cls, flag: str) -> Objective:
        """Translate the short CLI spellings ``unf`` and ``ca``."""
        aliases = {"unf": cls.UNFACTORIZED, "ca": cls.FACTORIZED}
        if flag in aliases:
            return aliases[flag]
        return cls.get_by_name(flag)


class PolicyKind(_NamedEnum):
    GREEDY = "greedy"
    RANDOM = "random"
    FOLD_DEMO = "fold-demo"
    ORACLE = "oracle"


class PrimitiveSet(_NamedEnum):
    """Primitive subsets offered to a policy"""

    FLING = "fling"
    PP = "pp"
    BOTH = "both"

    @property
    def primitives(self) -> tuple[PrimitiveKind, ...]:
        if self is PrimitiveSet.FLING:
            return (PrimitiveKind.FLING,)
        if self is PrimitiveSet.PP:
            return (PrimitiveKind.PICK_PLACE,)
        return tuple(PrimitiveKind)
