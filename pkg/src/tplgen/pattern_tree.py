"""Four-level sentence-pattern tree with exact integer-weighted sampling.

The tree organizes meta templates by sentence taxonomy: level 1 splits
declarative from imperative, level 2 into simple/complex/compound, level 3
into clause patterns, and level 4 leaves each carry one meta template. A
synthetic level-0 root sits above level 1 so a single top-down descent covers
the whole space.

Weights are plain integers: a leaf weighs as many templates as its meta can
render, and every internal node weighs the sum of its children. Sampling
descends the tree choosing children proportionally to weight and then fills
each slot uniformly, which makes every individual template exactly equally
likely (probability 1/total, no floating point involved).
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator

from .grammar import (
    Grammar,
    MetaTemplate,
    choices_to_index,
    count_templates,
    load_document,
    parse_meta,
    parse_synonym_sets,
    render,
)

LEVEL_LABELS: dict[int, frozenset[str]] = {
    1: frozenset({"declarative", "imperative"}),
    2: frozenset({"simple", "complex", "compound"}),
    3: frozenset(
        {
            "subject-predicate",
            "subject-predicate-object",
            "subject-subject",
            "noun clause",
            "gerund clause",
            "linking clause",
        }
    ),
}
LEAF_LEVEL = 4


class TreeStructureError(Exception):
    """Node violates the four-level tree shape."""


class TreeStateError(Exception):
    """Operation requires accumulated weights."""


class EmptySpaceError(Exception):
    """The tree's template space is empty."""


@dataclass
class TreeNode:
    id: str
    level: int
    label: str
    children: list[TreeNode] = field(default_factory=list)
    meta: MetaTemplate | None = None
    weight: int = 0

    def is_leaf(self) -> bool:
        return not self.children


@dataclass
class WeightedTree:
    """A pattern tree under a synthetic level-0 root; immutable once accumulated."""

    root: TreeNode
    accumulated: bool = False

    @property
    def total(self) -> int:
        return self.root.weight


@dataclass(frozen=True)
class TemplateRecord:
    """One rendered template plus full provenance."""

    global_index: int
    template: str
    leaf_path: tuple[str, ...]
    choices: tuple[int, ...]

    def to_json_dict(self) -> dict:
        return {
            "index": self.global_index,
            "template": self.template,
            "leaf_path": list(self.leaf_path),
            "choices": list(self.choices),
        }

    @classmethod
    def from_json_dict(cls, obj: dict) -> TemplateRecord:
        return cls(
            global_index=obj["index"],
            template=obj["template"],
            leaf_path=tuple(obj["leaf_path"]),
            choices=tuple(obj["choices"]),
        )


# ---------------------------------------------------------------------------
# Construction from the grammar document
# ---------------------------------------------------------------------------

_INTERNAL_KEYS = {"label", "children"}
_LEAF_KEYS = {"meta"}


def build_tree(doc: dict, strict: bool = False) -> WeightedTree:
    """Build the node tree from the ``tree`` section of a grammar document.

    Internal nodes are ``{"label", "children"}``; leaves are ``{"meta": ...}``.
    Node ids are the slash-joined label path (leaves use their meta id).
    """
    raw = doc.get("tree")
    if not isinstance(raw, list) or not raw:
        raise TreeStructureError("'tree' must be a nonempty list of level-1 nodes")
    root = TreeNode(id="root", level=0, label="root")
    for child in raw:
        root.children.append(_build_node(child, level=1, path="", strict=strict))
    check_structure(root)
    return WeightedTree(root=root)


def _build_node(obj: dict, level: int, path: str, strict: bool) -> TreeNode:
    if not isinstance(obj, dict):
        raise TreeStructureError(f"tree node under '{path or 'root'}' must be an object")
    if "meta" in obj:
        if strict and obj.keys() - _LEAF_KEYS:
            raise TreeStructureError(
                f"leaf under '{path or 'root'}': unknown keys {sorted(obj.keys() - _LEAF_KEYS)}"
            )
        meta = parse_meta(obj["meta"], strict=strict)
        return TreeNode(id=meta.id, level=level, label=meta.id, meta=meta)
    if "label" not in obj or "children" not in obj:
        raise TreeStructureError(
            f"tree node under '{path or 'root'}' needs 'label'+'children' or 'meta'"
        )
    if strict and obj.keys() - _INTERNAL_KEYS:
        raise TreeStructureError(
            f"node '{obj.get('label')}': unknown keys {sorted(obj.keys() - _INTERNAL_KEYS)}"
        )
    label = obj["label"]
    node_id = f"{path}/{label}" if path else str(label)
    children = obj["children"]
    if not isinstance(children, list):
        raise TreeStructureError(f"node '{node_id}': 'children' must be a list")
    node = TreeNode(id=node_id, level=level, label=str(label))
    for child in children:
        node.children.append(_build_node(child, level=level + 1, path=node_id, strict=strict))
    return node


def check_structure(root: TreeNode) -> None:
    """Raise TreeStructureError naming the first node that breaks an invariant."""
    def walk(node: TreeNode) -> None:
        if node.level > 0:
            allowed = LEVEL_LABELS.get(node.level)
            if allowed is not None and node.label not in allowed:
                raise TreeStructureError(
                    f"node '{node.id}': label '{node.label}' not allowed at level {node.level} "
                    f"(expected one of {sorted(allowed)})"
                )
        if node.is_leaf():
            if node.level != LEAF_LEVEL:
                raise TreeStructureError(
                    f"node '{node.id}': leaf at level {node.level}, leaves must sit at level {LEAF_LEVEL}"
                )
            if node.meta is None:
                raise TreeStructureError(f"node '{node.id}': leaf without a meta template")
            return
        if node.meta is not None:
            raise TreeStructureError(f"node '{node.id}': internal node carries a meta template")
        if node.level >= LEAF_LEVEL:
            raise TreeStructureError(f"node '{node.id}': children below level {LEAF_LEVEL}")
        seen: set[str] = set()
        for child in node.children:
            if child.level != node.level + 1:
                raise TreeStructureError(
                    f"node '{child.id}': level {child.level} under level-{node.level} parent"
                )
            if child.id in seen:
                raise TreeStructureError(f"node '{node.id}': duplicate child id '{child.id}'")
            seen.add(child.id)
            walk(child)

    if root.is_leaf():
        raise TreeStructureError("root has no children")
    walk(root)


def iter_leaves(root: TreeNode) -> Iterator[TreeNode]:
    """Leaves in depth-first order; this order defines leaf offsets."""
    stack = [root]
    while stack:
        node = stack.pop()
        if node.is_leaf():
            yield node
        else:
            stack.extend(reversed(node.children))


def load_grammar_file(
    path: str | Path, strict: bool = False, accumulate: bool = True
) -> tuple[Grammar, WeightedTree]:
    """One-stop loader: parse the document, build the tree, accumulate weights.

    Pass ``accumulate=False`` to load a grammar whose references may not
    resolve yet (validation wants the broken object, not an exception).
    """
    doc = load_document(path, strict=strict)
    tree = build_tree(doc, strict=strict)
    grammar = Grammar(
        synonym_sets=parse_synonym_sets(doc, strict=strict),
        meta_templates=tuple(leaf.meta for leaf in iter_leaves(tree.root)),
    )
    if accumulate:
        accumulate_weights(tree, grammar)
    return grammar, tree


# ---------------------------------------------------------------------------
# Weight accumulation and sampling
# ---------------------------------------------------------------------------


def accumulate_weights(tree: WeightedTree, grammar: Grammar) -> WeightedTree:
    """Recompute every weight from scratch, leaves upward.

    Each leaf weighs the number of templates its meta can render; each
    internal node weighs the sum of its children. Safe to call repeatedly
    (weights are always derived, never incremented).
    """
    check_structure(tree.root)

    def fill(node: TreeNode) -> int:
        if node.is_leaf():
            node.weight = count_templates(node.meta, grammar)
        else:
            node.weight = sum(fill(child) for child in node.children)
        return node.weight

    fill(tree.root)
    tree.accumulated = True
    return tree


def total_count(tree: WeightedTree) -> int:
    """Root weight, i.e. the size of the full template space."""
    if not tree.accumulated:
        raise TreeStateError("weights not accumulated; call accumulate_weights first")
    return tree.root.weight


def sample_template(tree: WeightedTree, grammar: Grammar, rng: random.Random) -> TemplateRecord:
    """Draw one template uniformly from the whole space.

    Descends from the root choosing each child with probability proportional
    to its weight (cumulative-sum inversion over integer weights), then fills
    every slot with an independently uniform candidate. The two stages
    compose to an exactly uniform marginal over templates.
    """
    if not tree.accumulated:
        raise TreeStateError("weights not accumulated; call accumulate_weights first")
    if tree.root.weight <= 0:
        raise EmptySpaceError("template space is empty (total weight 0)")

    node = tree.root
    offset = 0
    path: list[str] = []
    while not node.is_leaf():
        draw = rng.randrange(node.weight)
        for child in node.children:
            if draw < child.weight:
                node = child
                break
            draw -= child.weight
            offset += child.weight
        path.append(node.id)

    meta = node.meta
    choices = tuple(
        rng.randrange(grammar.synonym_set_for(ref, meta.id).size) for ref in meta.slot_refs
    )
    local_index = choices_to_index(meta, choices, grammar)
    return TemplateRecord(
        global_index=offset + local_index,
        template=render(meta, choices, grammar),
        leaf_path=tuple(path),
        choices=choices,
    )
