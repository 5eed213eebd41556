"""Browser actions shared by the environment, world model and policy."""

from dataclasses import dataclass
from enum import Enum
from typing import Any, Union

from utils.errors import DreamdeskError


class ActionType(str, Enum):
    CLICK = "click"
    TYPE = "type"
    SCROLL_UP = "scroll_up"
    SCROLL_DOWN = "scroll_down"
    GO_BACK = "go_back"
    STOP = "stop"


ACTION_TYPES: tuple[ActionType, ...] = tuple(ActionType)


class InvalidAction(DreamdeskError):
    def __init__(self, reason: str) -> None:
        super().__init__(reason, reason=reason)


@dataclass(frozen=True)
class Click:
    target_id: int
    action_type = ActionType.CLICK


@dataclass(frozen=True)
class Type:
    target_id: int
    content: str
    press_enter: bool = False
    action_type = ActionType.TYPE


@dataclass(frozen=True)
class ScrollUp:
    action_type = ActionType.SCROLL_UP


@dataclass(frozen=True)
class ScrollDown:
    action_type = ActionType.SCROLL_DOWN


@dataclass(frozen=True)
class GoBack:
    action_type = ActionType.GO_BACK


@dataclass(frozen=True)
class Stop:
    answer: str = ""
    action_type = ActionType.STOP


Action = Union[Click, Type, ScrollUp, ScrollDown, GoBack, Stop]


def target_of(action: Action) -> int | None:
    """Element id an action points at, if any."""
    if isinstance(action, (Click, Type)):
        return action.target_id
    return None


def action_to_json(action: Action) -> dict[str, Any]:
    data: dict[str, Any] = {"type": action.action_type.value}
    if isinstance(action, (Click, Type)):
        data["id"] = action.target_id
    if isinstance(action, Type):
        data["content"] = action.content
        data["press_enter"] = action.press_enter
    if isinstance(action, Stop):
        data["answer"] = action.answer
    return data


def action_from_json(data: dict[str, Any]) -> Action:
    try:
        kind = ActionType(data["type"])
        if kind is ActionType.CLICK:
            return Click(int(data["id"]))
        if kind is ActionType.TYPE:
            return Type(int(data["id"]), str(data["content"]), bool(data.get("press_enter", False)))
        if kind is ActionType.SCROLL_UP:
            return ScrollUp()
        if kind is ActionType.SCROLL_DOWN:
            return ScrollDown()
        if kind is ActionType.GO_BACK:
            return GoBack()
        return Stop(str(data.get("answer", "")))
    except (KeyError, TypeError, ValueError) as exc:
        raise InvalidAction(f"malformed action record {data!r}: {exc}") from exc


def format_action(action: Action) -> str:
    """Prompt-style rendering, e.g. ``type [5] [laptop] [1]`` or ``stop [5h 47min]``."""
    if isinstance(action, Click):
        return f"click [{action.target_id}]"
    if isinstance(action, Type):
        return f"type [{action.target_id}] [{action.content}] [{int(action.press_enter)}]"
    if isinstance(action, ScrollUp):
        return "scroll [up]"
    if isinstance(action, ScrollDown):
        return "scroll [down]"
    if isinstance(action, GoBack):
        return "goback"
    return f"stop [{action.answer}]"
