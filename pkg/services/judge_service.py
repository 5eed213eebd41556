"""Terminal reward assignment from the final observation and the stop answer."""

from dataclasses import dataclass
from typing import Any, Protocol

from services.acctree import AccessibilityTree
from services.trajectory import Trajectory
from utils.errors import DreamdeskError
from utils.text_utils import normalize_text

ANSWER_MODES = ("exact", "contains")


class InvalidGoal(DreamdeskError):
    def __init__(self, reason: str) -> None:
        super().__init__(reason, reason=reason)


@dataclass(frozen=True)
class GoalPredicate:
    answer_pattern: str | None = None
    answer_mode: str = "exact"
    terminal_page: str | None = None
    form_condition: tuple[tuple[int, str], ...] = ()

    def __post_init__(self) -> None:
        if self.answer_pattern is None and self.terminal_page is None and not self.form_condition:
            raise InvalidGoal("a goal needs at least one condition")
        if self.answer_mode not in ANSWER_MODES:
            raise InvalidGoal(f"unknown answer mode {self.answer_mode!r}")
        if not isinstance(self.form_condition, tuple):
            object.__setattr__(self, "form_condition", tuple((int(k), str(v)) for k, v in self.form_condition))

    def answer_holds(self, answer: str) -> bool:
        if self.answer_pattern is None:
            return True
        if self.answer_mode == "contains":
            return self.answer_pattern.lower() in answer.lower()
        return normalize_text(answer) == normalize_text(self.answer_pattern)

    def page_holds(self, obs: AccessibilityTree) -> bool:
        return self.terminal_page is None or self.terminal_page in obs.url

    def form_holds(self, obs: AccessibilityTree) -> bool:
        for element_id, value in self.form_condition:
            node = obs.find(element_id)
            if node is None or node.role != "textbox" or node.name != value:
                return False
        return True

    def holds(self, obs: AccessibilityTree, answer: str) -> bool:
        return self.answer_holds(answer) and self.page_holds(obs) and self.form_holds(obs)

    def to_json(self) -> dict[str, Any]:
        return {
            "answer_pattern": self.answer_pattern,
            "answer_mode": self.answer_mode,
            "terminal_page": self.terminal_page,
            "form_condition": [[element_id, value] for element_id, value in self.form_condition],
        }

    @classmethod
    def from_json(cls, data: dict[str, Any]) -> "GoalPredicate":
        return cls(
            answer_pattern=data.get("answer_pattern"),
            answer_mode=data.get("answer_mode", "exact"),
            terminal_page=data.get("terminal_page"),
            form_condition=tuple((int(k), str(v)) for k, v in data.get("form_condition", [])),
        )


def evaluate(goal: GoalPredicate, trajectory: Trajectory) -> int:
    """1 when the trajectory stopped untruncated and every goal condition holds, else 0."""
    if not trajectory.steps or trajectory.truncated or not trajectory.stopped:
        return 0
    return int(goal.holds(trajectory.steps[-1].obs, trajectory.answer or ""))


class Judge(Protocol):
    def score(self, goal: GoalPredicate, trajectory: Trajectory) -> int: ...


class RuleBasedJudge:
    def score(self, goal: GoalPredicate, trajectory: Trajectory) -> int:
        return evaluate(goal, trajectory)
