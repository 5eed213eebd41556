"""Accessibility trees, their canonical text form, and the edit-script diff/patch calculus."""

import json
import re
from dataclasses import dataclass, replace
from functools import cached_property
from typing import Any, ClassVar, Iterator, Union

from constants import ACCESSIBILITY_ROLES, REPLACE_TREE_TURNOVER
from utils.errors import DreamdeskError

_ROLE_SET = frozenset(ACCESSIBILITY_ROLES)
INDENT = "  "

_HEADER_LINE = re.compile(r"url:(?: (?P<url>.*))?")
_NODE_LINE = re.compile(
    r"(?P<role>[A-Za-z_]+) \[(?P<id>\d+)\]"
    r"(?: '(?P<name>(?:[^'\\]|\\.)*)')?"
    r"(?P<focus> focused: (?:True|False))?"
)
_ESCAPES = {"\\": "\\\\", "'": "\\'", "\n": "\\n", "\t": "\\t", "\r": "\\r"}
_UNESCAPES = {escaped[1]: raw for raw, escaped in _ESCAPES.items()}


class InvalidTree(DreamdeskError):
    def __init__(self, reason: str) -> None:
        super().__init__(reason, reason=reason)
        self.reason = reason


class ParseError(DreamdeskError):
    def __init__(self, line: int, reason: str) -> None:
        super().__init__(f"line {line}: {reason}", line=line, reason=reason)
        self.line = line
        self.reason = reason


class EditError(DreamdeskError):
    """Base for failures while applying an edit script; `op_index` locates the op."""

    def __init__(self, message: str, op_index: int, **details: Any) -> None:
        super().__init__(message, op_index=op_index, **details)
        self.op_index = op_index


class DanglingId(EditError):
    def __init__(self, op_index: int, node_id: int) -> None:
        super().__init__(f"op {op_index} references missing id {node_id}", op_index, id=node_id)
        self.node_id = node_id


class DuplicateId(EditError):
    def __init__(self, op_index: int, node_id: int) -> None:
        super().__init__(f"op {op_index} inserts existing id {node_id}", op_index, id=node_id)
        self.node_id = node_id


class InvalidEditOp(EditError):
    def __init__(self, op_index: int, reason: str) -> None:
        super().__init__(f"op {op_index}: {reason}", op_index, reason=reason)
        self.reason = reason


@dataclass(frozen=True)
class AccNode:
    id: int
    role: str
    name: str = ""
    focused: bool = False
    children: tuple["AccNode", ...] = ()

    def __post_init__(self) -> None:
        if self.role not in _ROLE_SET:
            raise InvalidTree(f"unknown role {self.role!r}")
        if isinstance(self.id, bool) or int(self.id) <= 0:
            raise InvalidTree(f"node ids must be positive integers, got {self.id!r}")
        if not isinstance(self.children, tuple):
            object.__setattr__(self, "children", tuple(self.children))


def iter_subtree(node: AccNode) -> Iterator[AccNode]:
    """Preorder walk without recursion."""
    stack = [node]
    while stack:
        current = stack.pop()
        yield current
        stack.extend(reversed(current.children))


def _walk_with_depth(node: AccNode) -> Iterator[tuple[AccNode, int]]:
    stack = [(node, 0)]
    while stack:
        current, depth = stack.pop()
        yield current, depth
        stack.extend((child, depth + 1) for child in reversed(current.children))


@dataclass(frozen=True)
class AccessibilityTree:
    root: AccNode
    url: str

    def __post_init__(self) -> None:
        if self.root.role != "root":
            raise InvalidTree("tree root must have role 'root'")
        if "\n" in self.url or "\r" in self.url or self.url != self.url.strip():
            raise InvalidTree("url must be a single line without surrounding whitespace")
        seen: set[int] = set()
        focused = 0
        for node in iter_subtree(self.root):
            if node.id in seen:
                raise InvalidTree(f"duplicate id {node.id}")
            if node is not self.root and node.role == "root":
                raise InvalidTree("only the tree root may have role 'root'")
            seen.add(node.id)
            focused += int(node.focused)
        if focused > 1:
            raise InvalidTree("at most one node may be focused")

    @cached_property
    def index(self) -> dict[int, AccNode]:
        return {node.id: node for node in iter_subtree(self.root)}

    @cached_property
    def parents(self) -> dict[int, int | None]:
        parents: dict[int, int | None] = {self.root.id: None}
        for node in iter_subtree(self.root):
            for child in node.children:
                parents[child.id] = node.id
        return parents

    @property
    def focused_id(self) -> int | None:
        for node in iter_subtree(self.root):
            if node.focused:
                return node.id
        return None

    def find(self, node_id: int) -> AccNode | None:
        return self.index.get(node_id)

    def __len__(self) -> int:
        return len(self.index)


# ---------------------------------------------------------------------------
# Canonical text
# ---------------------------------------------------------------------------


def _escape(name: str) -> str:
    return "".join(_ESCAPES.get(char, char) for char in name)


def _unescape(raw: str, line_no: int) -> str:
    out: list[str] = []
    position = 0
    while position < len(raw):
        char = raw[position]
        if char == "\\":
            if position + 1 >= len(raw) or raw[position + 1] not in _UNESCAPES:
                raise ParseError(line_no, "bad escape sequence in name")
            out.append(_UNESCAPES[raw[position + 1]])
            position += 2
            continue
        out.append(char)
        position += 1
    return "".join(out)


def serialize(tree: AccessibilityTree) -> str:
    lines = [f"url: {tree.url}" if tree.url else "url:"]
    for node, depth in _walk_with_depth(tree.root):
        line = f"{INDENT * depth}{node.role} [{node.id}] '{_escape(node.name)}'"
        if node.focused:
            line += " focused: True"
        lines.append(line)
    return "\n".join(lines)


def _freeze_entry(entry: list) -> AccNode:
    role, node_id, name, focused, children = entry
    return AccNode(node_id, role, name, focused, tuple(_freeze_entry(child) for child in children))


def parse(text: str) -> AccessibilityTree:
    """Parse tree text; accepts CRLF, blank lines and trailing spaces, which canonicalise away."""
    numbered = [(number, line.rstrip()) for number, line in enumerate(text.split("\n"), start=1)]
    numbered = [(number, line) for number, line in numbered if line]
    if not numbered:
        raise ParseError(1, "missing url header")

    header_no, header = numbered[0]
    header_match = _HEADER_LINE.fullmatch(header)
    if not header_match:
        raise ParseError(header_no, "malformed header line")
    url = (header_match.group("url") or "").strip()

    root_entry: list | None = None
    stack: list[tuple[int, list]] = []
    seen_ids: set[int] = set()
    focus_seen = False
    for line_no, line in numbered[1:]:
        stripped = line.lstrip(" ")
        if stripped.startswith("\t"):
            raise ParseError(line_no, "tab indentation")
        indent = len(line) - len(stripped)
        if indent % len(INDENT):
            raise ParseError(line_no, "indentation is not a multiple of two spaces")
        depth = indent // len(INDENT)

        match = _NODE_LINE.fullmatch(stripped)
        if not match:
            raise ParseError(line_no, "malformed node line")
        role = match.group("role")
        if role not in _ROLE_SET:
            raise ParseError(line_no, f"unknown role {role!r}")
        node_id = int(match.group("id"))
        if node_id <= 0:
            raise ParseError(line_no, "node ids must be positive")
        if node_id in seen_ids:
            raise ParseError(line_no, f"duplicate id {node_id}")
        name = _unescape(match.group("name") or "", line_no)
        focused = match.group("focus") == " focused: True"

        if root_entry is None:
            if depth != 0:
                raise ParseError(line_no, "root node must not be indented")
            if role != "root":
                raise ParseError(line_no, "first node must have role 'root'")
        else:
            if depth == 0:
                raise ParseError(line_no, "multiple root nodes")
            if role == "root":
                raise ParseError(line_no, "nested root node")
            if depth > stack[-1][0] + 1:
                raise ParseError(line_no, "indentation jumps more than one level")
        if focused:
            if focus_seen:
                raise ParseError(line_no, "multiple focused nodes")
            focus_seen = True

        entry = [role, node_id, name, focused, []]
        if root_entry is None:
            root_entry = entry
        else:
            while stack[-1][0] >= depth:
                stack.pop()
            stack[-1][1][4].append(entry)
        stack.append((depth, entry))
        seen_ids.add(node_id)

    if root_entry is None:
        raise ParseError(header_no + 1, "missing root node")
    try:
        return AccessibilityTree(_freeze_entry(root_entry), url)
    except InvalidTree as exc:
        raise ParseError(header_no, exc.reason) from exc


def canonical_text(text: str) -> str:
    return serialize(parse(text))


# ---------------------------------------------------------------------------
# Edit operations
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class InsertNode:
    parent_id: int
    index: int
    subtree: AccNode
    op_name: ClassVar[str] = "InsertNode"


@dataclass(frozen=True)
class RemoveNode:
    node_id: int
    op_name: ClassVar[str] = "RemoveNode"


@dataclass(frozen=True)
class SetName:
    node_id: int
    name: str
    op_name: ClassVar[str] = "SetName"


@dataclass(frozen=True)
class SetFocus:
    node_id: int | None
    op_name: ClassVar[str] = "SetFocus"


@dataclass(frozen=True)
class SetUrl:
    url: str
    op_name: ClassVar[str] = "SetUrl"


@dataclass(frozen=True)
class ReplaceTree:
    root: AccNode
    url: str | None = None
    op_name: ClassVar[str] = "ReplaceTree"


@dataclass(frozen=True)
class MarkTerminal:
    op_name: ClassVar[str] = "MarkTerminal"


EditOp = Union[InsertNode, RemoveNode, SetName, SetFocus, SetUrl, ReplaceTree, MarkTerminal]


def node_to_dict(node: AccNode) -> dict[str, Any]:
    data: dict[str, Any] = {"id": node.id, "role": node.role, "name": node.name}
    if node.focused:
        data["focused"] = True
    if node.children:
        data["children"] = [node_to_dict(child) for child in node.children]
    return data


def node_from_dict(data: dict[str, Any]) -> AccNode:
    return AccNode(
        int(data["id"]),
        str(data["role"]),
        str(data.get("name", "")),
        bool(data.get("focused", False)),
        tuple(node_from_dict(child) for child in data.get("children", [])),
    )


def op_to_dict(op: EditOp) -> dict[str, Any]:
    if isinstance(op, InsertNode):
        return {"op": op.op_name, "parent": op.parent_id, "index": op.index, "subtree": node_to_dict(op.subtree)}
    if isinstance(op, (RemoveNode, SetFocus)):
        return {"op": op.op_name, "id": op.node_id}
    if isinstance(op, SetName):
        return {"op": op.op_name, "id": op.node_id, "name": op.name}
    if isinstance(op, SetUrl):
        return {"op": op.op_name, "url": op.url}
    if isinstance(op, ReplaceTree):
        return {"op": op.op_name, "root": node_to_dict(op.root), "url": op.url}
    return {"op": op.op_name}


def op_from_dict(data: dict[str, Any], op_index: int = 0) -> EditOp:
    kind = data.get("op")
    try:
        if kind == "InsertNode":
            return InsertNode(int(data["parent"]), int(data["index"]), node_from_dict(data["subtree"]))
        if kind == "RemoveNode":
            return RemoveNode(int(data["id"]))
        if kind == "SetName":
            return SetName(int(data["id"]), str(data["name"]))
        if kind == "SetFocus":
            return SetFocus(None if data.get("id") is None else int(data["id"]))
        if kind == "SetUrl":
            return SetUrl(str(data["url"]))
        if kind == "ReplaceTree":
            return ReplaceTree(node_from_dict(data["root"]), data.get("url"))
        if kind == "MarkTerminal":
            return MarkTerminal()
    except (KeyError, TypeError, ValueError, InvalidTree) as exc:
        raise InvalidEditOp(op_index, f"malformed {kind} op: {exc}") from exc
    raise InvalidEditOp(op_index, f"unknown op {kind!r}")


@dataclass(frozen=True)
class EditScript:
    ops: tuple[EditOp, ...] = ()

    def __post_init__(self) -> None:
        if not isinstance(self.ops, tuple):
            object.__setattr__(self, "ops", tuple(self.ops))
        for op_index, op in enumerate(self.ops[:-1]):
            if isinstance(op, MarkTerminal):
                raise InvalidEditOp(op_index, "MarkTerminal may only be the final op")

    def __len__(self) -> int:
        return len(self.ops)

    def __iter__(self) -> Iterator[EditOp]:
        return iter(self.ops)

    @property
    def terminal(self) -> bool:
        return bool(self.ops) and isinstance(self.ops[-1], MarkTerminal)

    def with_terminal(self) -> "EditScript":
        return self if self.terminal else EditScript(self.ops + (MarkTerminal(),))

    def to_json(self) -> list[dict[str, Any]]:
        return [op_to_dict(op) for op in self.ops]

    @classmethod
    def from_json(cls, data: list[dict[str, Any]]) -> "EditScript":
        return cls(tuple(op_from_dict(item, op_index) for op_index, item in enumerate(data)))

    def key(self) -> str:
        """Stable string identity, used as a categorical outcome label."""
        return json.dumps(self.to_json(), sort_keys=True, separators=(",", ":"), ensure_ascii=False)


EMPTY_SCRIPT = EditScript()


# ---------------------------------------------------------------------------
# apply
# ---------------------------------------------------------------------------


class _WorkingTree:
    """Mutable id-indexed copy of a tree used while applying a script."""

    def __init__(self, tree: AccessibilityTree) -> None:
        self._load(tree)

    def _load(self, tree: AccessibilityTree) -> None:
        self.url = tree.url
        self.root_id = tree.root.id
        self.nodes: dict[int, list] = {}
        self.parent: dict[int, int | None] = {tree.root.id: None}
        self.focus: int | None = None
        self._add_subtree(tree.root, None)

    def _add_subtree(self, subtree: AccNode, parent_id: int | None) -> None:
        self.parent[subtree.id] = parent_id
        for node in iter_subtree(subtree):
            self.nodes[node.id] = [node.role, node.name, [child.id for child in node.children]]
            for child in node.children:
                self.parent[child.id] = node.id
            if node.focused:
                self.focus = node.id

    def _require(self, op_index: int, node_id: int | None) -> int:
        if node_id is None or node_id not in self.nodes:
            raise DanglingId(op_index, node_id)
        return node_id

    def _drop_subtree(self, node_id: int) -> None:
        stack = [node_id]
        while stack:
            current = stack.pop()
            stack.extend(self.nodes[current][2])
            del self.nodes[current]
            del self.parent[current]
            if self.focus == current:
                self.focus = None

    def apply_op(self, op_index: int, op: EditOp) -> None:
        if isinstance(op, InsertNode):
            self._insert(op_index, op)
        elif isinstance(op, RemoveNode):
            self._require(op_index, op.node_id)
            if op.node_id == self.root_id:
                raise InvalidEditOp(op_index, "cannot remove the root node")
            self.nodes[self.parent[op.node_id]][2].remove(op.node_id)
            self._drop_subtree(op.node_id)
        elif isinstance(op, SetName):
            self.nodes[self._require(op_index, op.node_id)][1] = op.name
        elif isinstance(op, SetFocus):
            self.focus = None if op.node_id is None else self._require(op_index, op.node_id)
        elif isinstance(op, SetUrl):
            if "\n" in op.url or "\r" in op.url or op.url != op.url.strip():
                raise InvalidEditOp(op_index, "url must be a single line without surrounding whitespace")
            self.url = op.url
        elif isinstance(op, ReplaceTree):
            try:
                replacement = AccessibilityTree(op.root, self.url if op.url is None else op.url)
            except InvalidTree as exc:
                raise InvalidEditOp(op_index, exc.reason) from exc
            self._load(replacement)

    def _insert(self, op_index: int, op: InsertNode) -> None:
        self._require(op_index, op.parent_id)
        siblings = self.nodes[op.parent_id][2]
        if not 0 <= op.index <= len(siblings):
            raise InvalidEditOp(op_index, f"insert position {op.index} out of range")
        incoming: set[int] = set()
        focused = [node.id for node in iter_subtree(op.subtree) if node.focused]
        for node in iter_subtree(op.subtree):
            if node.id in self.nodes or node.id in incoming:
                raise DuplicateId(op_index, node.id)
            if node.role == "root":
                raise InvalidEditOp(op_index, "cannot insert a root node")
            incoming.add(node.id)
        if len(focused) > 1:
            raise InvalidEditOp(op_index, "inserted subtree has more than one focused node")
        siblings.insert(op.index, op.subtree.id)
        previous_focus = self.focus
        self._add_subtree(op.subtree, op.parent_id)
        self.focus = focused[0] if focused else previous_focus

    def _freeze_node(self, node_id: int) -> AccNode:
        role, name, children = self.nodes[node_id]
        return AccNode(node_id, role, name, node_id == self.focus, tuple(self._freeze_node(c) for c in children))

    def freeze(self) -> AccessibilityTree:
        return AccessibilityTree(self._freeze_node(self.root_id), self.url)


def apply(tree: AccessibilityTree, script: EditScript) -> AccessibilityTree:
    """Apply ops left to right to a copy of `tree`; the input is never modified."""
    if not script.ops:
        return tree
    working = _WorkingTree(tree)
    for op_index, op in enumerate(script.ops):
        working.apply_op(op_index, op)
    return working.freeze()


# ---------------------------------------------------------------------------
# diff
# ---------------------------------------------------------------------------


def _id_turnover(old_ids: set[int], new_ids: set[int]) -> float:
    union = old_ids | new_ids
    return len(old_ids ^ new_ids) / len(union) if union else 0.0


def _longest_increasing_mask(sequence: list[int]) -> list[bool]:
    size = len(sequence)
    if not size:
        return []
    length = [1] * size
    previous = [-1] * size
    for i in range(size):
        for j in range(i):
            if sequence[j] < sequence[i] and length[j] + 1 > length[i]:
                length[i] = length[j] + 1
                previous[i] = j
    best = max(range(size), key=lambda i: (length[i], -i))
    mask = [False] * size
    while best != -1:
        mask[best] = True
        best = previous[best]
    return mask


def _without_focus(node: AccNode) -> AccNode:
    if not any(item.focused for item in iter_subtree(node)):
        return node
    return replace(node, focused=False, children=tuple(_without_focus(child) for child in node.children))


def diff(old: AccessibilityTree, new: AccessibilityTree) -> EditScript:
    """Edit script turning `old` into `new`, matching nodes by id.

    Nodes keep their identity when they sit under the same (kept) parent with the same role and
    in the same relative order; everything else is removed and re-inserted.
    """
    if old == new:
        return EMPTY_SCRIPT
    old_index = old.index
    new_index = new.index
    if (
        old.url != new.url
        or old.root.id != new.root.id
        or _id_turnover(set(old_index), set(new_index)) > REPLACE_TREE_TURNOVER
    ):
        return EditScript((ReplaceTree(new.root, None if new.url == old.url else new.url),))

    old_parents = old.parents
    kept = {new.root.id}
    inserts: list[EditOp] = []
    stack = [new.root]
    while stack:
        node = stack.pop()
        old_positions = {child.id: position for position, child in enumerate(old_index[node.id].children)}
        candidates = [
            child
            for child in node.children
            if child.id in old_positions and old_index[child.id].role == child.role
        ]
        mask = _longest_increasing_mask([old_positions[child.id] for child in candidates])
        kept_here = {child.id for child, keep in zip(candidates, mask) if keep}
        for position, child in enumerate(node.children):
            if child.id in kept_here:
                kept.add(child.id)
            else:
                inserts.append(InsertNode(node.id, position, _without_focus(child)))
        stack.extend(child for child in reversed(node.children) if child.id in kept_here)

    removals: list[EditOp] = [
        RemoveNode(node.id)
        for node in iter_subtree(old.root)
        if node.id not in kept and old_parents[node.id] in kept
    ]
    renames: list[EditOp] = [
        SetName(node.id, node.name)
        for node in iter_subtree(new.root)
        if node.id in kept and old_index[node.id].name != node.name
    ]
    old_focus = old.focused_id
    focus_after = old_focus if old_focus in kept else None
    new_focus = new.focused_id
    focus_ops: list[EditOp] = [SetFocus(new_focus)] if focus_after != new_focus else []
    return EditScript(tuple(removals + inserts + renames + focus_ops))


def canonicalize(script: EditScript, tree: AccessibilityTree) -> EditScript:
    """The unique diff-form of `script` on `tree`; keeps a trailing MarkTerminal."""
    canonical = diff(tree, apply(tree, script))
    return canonical.with_terminal() if script.terminal else canonical
