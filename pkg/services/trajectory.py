from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Any

from services.acctree import AccessibilityTree
from services.actions import Action, Stop


class Provenance(str, Enum):
    REAL = "real"
    IMAGINED = "imagined"
    EXPERT = "expert"


@dataclass(frozen=True)
class TrajectoryStep:
    obs: AccessibilityTree
    action: Action
    tokens: tuple[Any, ...] = ()
    logprobs_old: tuple[float, ...] = ()
    annotation: str | None = None


@dataclass(frozen=True)
class Trajectory:
    task_id: str
    query: str
    content_vocab: tuple[str, ...]
    steps: tuple[TrajectoryStep, ...]
    return_value: int = 0
    provenance: Provenance = Provenance.REAL
    truncated: bool = False
    theta_old_version: int = 0
    metadata: dict[str, Any] = field(default_factory=dict, compare=False, hash=False)

    def __post_init__(self) -> None:
        if not isinstance(self.steps, tuple):
            object.__setattr__(self, "steps", tuple(self.steps))
        if not isinstance(self.content_vocab, tuple):
            object.__setattr__(self, "content_vocab", tuple(self.content_vocab))

    @property
    def token_count(self) -> int:
        return sum(len(step.tokens) for step in self.steps)

    @property
    def actions(self) -> list[Action]:
        return [step.action for step in self.steps]

    @property
    def stopped(self) -> bool:
        return bool(self.steps) and isinstance(self.steps[-1].action, Stop)

    @property
    def answer(self) -> str | None:
        return self.steps[-1].action.answer if self.stopped else None

    def with_logprobs(self, per_step: list[tuple[float, ...]], version: int) -> "Trajectory":
        steps = tuple(replace(step, logprobs_old=tuple(logprobs)) for step, logprobs in zip(self.steps, per_step))
        return replace(self, steps=steps, theta_old_version=version)
