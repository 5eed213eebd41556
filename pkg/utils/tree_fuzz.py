"""Random accessibility trees and edit scripts for round-trip checks of diff/apply."""

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from services.acctree import (
    AccessibilityTree,
    AccNode,
    EditOp,
    EditScript,
    InsertNode,
    RemoveNode,
    SetFocus,
    SetName,
    SetUrl,
    apply,
    diff,
    iter_subtree,
    serialize,
)
from utils.rng import make_rng

logger = logging.getLogger(__name__)

_CHILD_ROLES = ("link", "button", "textbox", "text", "heading")
_NAME_PARTS = ("Home", "Price: $12", "it's", "back\\slash", "two\nlines", "tab\there", "", "Search", "Über")
_EDIT_KINDS = ("insert", "remove", "rename", "focus", "url")


def _name(rng: np.random.Generator) -> str:
    count = int(rng.integers(0, 3))
    return " ".join(_NAME_PARTS[int(rng.integers(len(_NAME_PARTS)))] for _ in range(count))


def _random_node(rng: np.random.Generator, node_id: int) -> AccNode:
    return AccNode(node_id, _CHILD_ROLES[int(rng.integers(len(_CHILD_ROLES)))], _name(rng))


def random_tree(rng: np.random.Generator, max_nodes: int = 30) -> AccessibilityTree:
    """A tree of 1..max_nodes nodes with shuffled ids and at most one focused node."""
    size = int(rng.integers(1, max(max_nodes, 1) + 1))
    ids = [int(value) + 1 for value in rng.permutation(size * 3)[:size]]
    children: dict[int, list[int]] = {ids[0]: []}
    for node_id in ids[1:]:
        parent = ids[int(rng.integers(len(children)))]
        children[parent].append(node_id)
        children[node_id] = []
    focus = ids[int(rng.integers(1, size))] if size > 1 and rng.random() < 0.5 else None
    roles = {node_id: _CHILD_ROLES[int(rng.integers(len(_CHILD_ROLES)))] for node_id in ids[1:]}
    names = {node_id: _name(rng) for node_id in ids}

    def build(node_id: int) -> AccNode:
        role = "root" if node_id == ids[0] else roles[node_id]
        return AccNode(node_id, role, names[node_id], node_id == focus, tuple(build(c) for c in children[node_id]))

    return AccessibilityTree(build(ids[0]), f"http://fuzz.local/{int(rng.integers(1000))}")


def _random_op(tree: AccessibilityTree, rng: np.random.Generator) -> EditOp:
    nodes = list(iter_subtree(tree.root))
    kind = _EDIT_KINDS[int(rng.integers(len(_EDIT_KINDS)))]
    if kind == "remove" and len(nodes) > 1:
        return RemoveNode(nodes[int(rng.integers(1, len(nodes)))].id)
    if kind == "rename":
        return SetName(nodes[int(rng.integers(len(nodes)))].id, _name(rng))
    if kind == "focus":
        return SetFocus(None if rng.random() < 0.2 else nodes[int(rng.integers(len(nodes)))].id)
    if kind == "url":
        return SetUrl(f"http://fuzz.local/{int(rng.integers(1000))}")
    parent = nodes[int(rng.integers(len(nodes)))]
    fresh = max(tree.index) + 1 + int(rng.integers(3))
    return InsertNode(parent.id, int(rng.integers(len(parent.children) + 1)), _random_node(rng, fresh))


def random_edit_script(
    tree: AccessibilityTree, rng: np.random.Generator, n_edits: int = 5
) -> tuple[EditScript, AccessibilityTree]:
    """A valid script of `n_edits` random ops and the tree it produces."""
    ops: list[EditOp] = []
    current = tree
    for _ in range(n_edits):
        op = _random_op(current, rng)
        current = apply(current, EditScript((op,)))
        ops.append(op)
    return EditScript(tuple(ops)), current


@dataclass
class FuzzReport:
    n: int
    passed: int = 0
    elapsed_ms: int = 0
    failures: list[dict[str, str]] = field(default_factory=list)

    def to_json(self) -> dict:
        return {"n": self.n, "passed": self.passed, "elapsed_ms": self.elapsed_ms, "failures": self.failures}


def fuzz_diff(n: int, seed: int = 0, max_nodes: int = 30, max_edits: int = 8) -> FuzzReport:
    """Check apply(old, diff(old, new)) == new on `n` random (tree, edit) pairs."""
    rng = make_rng(seed, "fuzz-diff")
    report = FuzzReport(n)
    began = time.perf_counter()
    for _ in range(n):
        old = random_tree(rng, max_nodes)
        _, new = random_edit_script(old, rng, int(rng.integers(0, max_edits + 1)))
        if apply(old, diff(old, new)) == new:
            report.passed += 1
        elif len(report.failures) < 5:
            report.failures.append({"old": serialize(old), "new": serialize(new)})
    report.elapsed_ms = int((time.perf_counter() - began) * 1000)
    logger.info("Diff fuzz: %s of %s pairs round-tripped in %s ms", report.passed, n, report.elapsed_ms)
    return report
