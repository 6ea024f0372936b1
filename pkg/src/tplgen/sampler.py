"""Distinct-template sampling over the tree's global index space.

Every template in the space owns exactly one global index in ``[0, total)``:
leaves claim contiguous intervals in depth-first order and the residual inside
a leaf is the meta template's mixed-radix index. ``template_at`` materializes
the bijection; ``sample_distinct`` draws K distinct indices with Floyd's
algorithm and maps them through it, so without-replacement sampling is exact
instead of rejection-based.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

from .grammar import Grammar, index_to_choices, render
from .pattern_tree import TemplateRecord, TreeStateError, WeightedTree


@dataclass(frozen=True)
class TemplateSet:
    """K distinct templates drawn at one scale, with the seed that made them."""

    scale: int
    seed: int
    total: int
    records: tuple[TemplateRecord, ...]

    @property
    def templates(self) -> list[str]:
        return [record.template for record in self.records]


def template_at(tree: WeightedTree, grammar: Grammar, global_index: int) -> TemplateRecord:
    """Resolve a global index to its unique template record.

    Walks down the tree subtracting sibling weights until the residual falls
    inside a leaf's interval, then decodes the residual into slot choices.
    Inverse of the record's own ``global_index``.
    """
    if not tree.accumulated:
        raise TreeStateError("weights not accumulated; call accumulate_weights first")
    if not 0 <= global_index < tree.total:
        raise IndexError(f"global index {global_index} out of range [0, {tree.total})")

    node = tree.root
    residual = global_index
    path: list[str] = []
    while not node.is_leaf():
        for child in node.children:
            if residual < child.weight:
                node = child
                break
            residual -= child.weight
        path.append(node.id)

    meta = node.meta
    choices = index_to_choices(meta, residual, grammar)
    return TemplateRecord(
        global_index=global_index,
        template=render(meta, choices, grammar),
        leaf_path=tuple(path),
        choices=choices,
    )


def sample_distinct(
    tree: WeightedTree,
    grammar: Grammar,
    k: int,
    seed: int,
    nested: bool = False,
) -> TemplateSet:
    """Draw K distinct templates, uniformly without replacement.

    Default mode uses Floyd's algorithm: O(K) memory, no rejection loop even
    when K approaches the space size. ``nested=True`` instead draws indices
    sequentially (skipping repeats), which makes the K-sized set a prefix of
    any larger set drawn with the same seed, at the cost of rejection overhead
    when K is close to the total.
    """
    total = tree.total if tree.accumulated else None
    if total is None:
        raise TreeStateError("weights not accumulated; call accumulate_weights first")
    if k < 1:
        raise ValueError(f"sample size must be >= 1, got {k}")
    if k > total:
        raise ValueError(f"cannot draw {k} distinct templates from a space of {total}")

    rng = random.Random(seed)
    chosen: set[int] = set()
    order: list[int] = []
    if nested:
        while len(order) < k:
            index = rng.randrange(total)
            if index not in chosen:
                chosen.add(index)
                order.append(index)
    else:
        for j in range(total - k, total):
            index = rng.randrange(j + 1)
            if index in chosen:
                index = j
            chosen.add(index)
            order.append(index)

    records = tuple(template_at(tree, grammar, index) for index in order)
    return TemplateSet(scale=k, seed=seed, total=total, records=records)


def template_set_from_strings(templates: Sequence[str], seed: int = 0) -> TemplateSet:
    """Wrap hand-written templates (e.g. held-out evaluation sets) as a TemplateSet.

    Records get indices 0..n-1 and empty provenance; useful for template sets
    that live outside any grammar's space.
    """
    records = tuple(
        TemplateRecord(global_index=i, template=t, leaf_path=(), choices=())
        for i, t in enumerate(templates)
    )
    return TemplateSet(scale=len(records), seed=seed, total=len(records), records=records)


# ---------------------------------------------------------------------------
# File format: one JSON header line, then one record per line
# ---------------------------------------------------------------------------


def write_template_set(template_set: TemplateSet, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        header = {
            "scale": template_set.scale,
            "seed": template_set.seed,
            "total": template_set.total,
        }
        fh.write(json.dumps(header) + "\n")
        for record in template_set.records:
            fh.write(json.dumps(record.to_json_dict(), ensure_ascii=False) + "\n")


def read_template_set(path: str | Path) -> TemplateSet:
    with open(path, encoding="utf-8") as fh:
        lines = [line for line in fh.read().splitlines() if line.strip()]
    if not lines:
        raise ValueError(f"template set file {path} is empty")
    header = json.loads(lines[0])
    for key in ("scale", "seed", "total"):
        if key not in header:
            raise ValueError(f"template set file {path}: header missing '{key}'")
    records = tuple(TemplateRecord.from_json_dict(json.loads(line)) for line in lines[1:])
    if len(records) != header["scale"]:
        raise ValueError(
            f"template set file {path}: header scale {header['scale']} "
            f"but {len(records)} records"
        )
    return TemplateSet(
        scale=header["scale"],
        seed=header["seed"],
        total=header["total"],
        records=records,
    )
