"""Meta-template grammar: synonym sets, slotted templates, counting and rendering.

A meta template is a sequence of fixed text segments interleaved with slots,
where each slot draws from a named synonym set. Every rendered template keeps
the two data slots ``{question}`` and ``{choices}`` verbatim; those are filled
much later, with benchmark or corpus content.

Slot choices map to a single integer through a mixed-radix encoding (most
significant slot first), which gives every meta template an exact, enumerable
index space. That bijection is the oracle the rest of the package is tested
against.
"""

from __future__ import annotations

import itertools
import json
import math
import random
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator

QUESTION_SLOT = "{question}"
CHOICES_SLOT = "{choices}"
DATA_SLOTS = (QUESTION_SLOT, CHOICES_SLOT)

# Full pairwise collision check is exhaustive up to this many renderings per
# meta template; larger spaces get a seeded spot check instead.
COLLISION_FULL_LIMIT = 100_000
COLLISION_SPOT_SAMPLES = 500


class GrammarError(Exception):
    """Unresolvable reference or structurally malformed grammar input."""


class EnumerationCapError(GrammarError):
    """Enumeration refused because the template space exceeds the cap."""

    def __init__(self, meta_id: str, count: int, cap: int):
        super().__init__(
            f"meta template '{meta_id}' would enumerate {count} renderings, "
            f"exceeding the cap of {cap}"
        )
        self.meta_id = meta_id
        self.count = count
        self.cap = cap


# ---------------------------------------------------------------------------
# Domain types
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SynonymSet:
    """Ordered candidate strings for one slot; order defines digit meaning."""

    id: str
    candidates: tuple[str, ...]

    @property
    def size(self) -> int:
        return len(self.candidates)


@dataclass(frozen=True)
class FixedSegment:
    text: str


@dataclass(frozen=True)
class SlotSegment:
    slot_ref: str


Segment = FixedSegment | SlotSegment


@dataclass(frozen=True)
class MetaTemplate:
    """A blueprint of fixed segments and synonym slots."""

    id: str
    segments: tuple[Segment, ...]

    @property
    def slot_refs(self) -> tuple[str, ...]:
        return tuple(s.slot_ref for s in self.segments if isinstance(s, SlotSegment))

    @property
    def slot_count(self) -> int:
        return sum(1 for s in self.segments if isinstance(s, SlotSegment))

    def fixed_text(self) -> str:
        """Concatenation of the fixed segments only."""
        return "".join(s.text for s in self.segments if isinstance(s, FixedSegment))


@dataclass(frozen=True)
class Grammar:
    """All synonym sets plus the meta templates, in depth-first tree order."""

    synonym_sets: dict[str, SynonymSet]
    meta_templates: tuple[MetaTemplate, ...]

    @property
    def meta_count(self) -> int:
        return len(self.meta_templates)

    def synonym_set_for(self, slot_ref: str, meta_id: str) -> SynonymSet:
        try:
            return self.synonym_sets[slot_ref]
        except KeyError:
            raise GrammarError(
                f"meta template '{meta_id}' references unknown synonym set '{slot_ref}'"
            ) from None


# ---------------------------------------------------------------------------
# Counting, rendering, mixed-radix index mapping
# ---------------------------------------------------------------------------


def slot_sizes(meta: MetaTemplate, grammar: Grammar) -> tuple[int, ...]:
    """Synonym-set sizes in slot order; raises on an unresolved reference."""
    return tuple(
        grammar.synonym_set_for(ref, meta.id).size for ref in meta.slot_refs
    )


def count_templates(meta: MetaTemplate, grammar: Grammar) -> int:
    """Exact size of the template space: the product of slot set sizes."""
    return math.prod(slot_sizes(meta, grammar))


def render(meta: MetaTemplate, choices: tuple[int, ...] | list[int], grammar: Grammar) -> str:
    """Substitute one candidate per slot and return the rendered template.

    ``choices[j]`` indexes into the j-th slot's synonym set. Fixed text,
    including the data slots, is copied verbatim.
    """
    if len(choices) != meta.slot_count:
        raise ValueError(
            f"meta template '{meta.id}' has {meta.slot_count} slots, "
            f"got {len(choices)} choices"
        )
    parts: list[str] = []
    slot_pos = 0
    for segment in meta.segments:
        if isinstance(segment, FixedSegment):
            parts.append(segment.text)
            continue
        synset = grammar.synonym_set_for(segment.slot_ref, meta.id)
        index = choices[slot_pos]
        if not 0 <= index < synset.size:
            raise IndexError(
                f"meta template '{meta.id}' slot {slot_pos} ('{segment.slot_ref}'): "
                f"choice {index} out of range for {synset.size} candidates"
            )
        parts.append(synset.candidates[index])
        slot_pos += 1
    return "".join(parts)


def index_to_choices(meta: MetaTemplate, local_index: int, grammar: Grammar) -> tuple[int, ...]:
    """Decode a local index into its unique choice vector.

    The encoding is mixed-radix with the first slot most significant:
    ``local_index = sum(choices[j] * prod(sizes[j+1:]))``.
    """
    sizes = slot_sizes(meta, grammar)
    total = math.prod(sizes)
    if not 0 <= local_index < total:
        raise IndexError(
            f"meta template '{meta.id}': index {local_index} out of range [0, {total})"
        )
    digits = []
    for size in reversed(sizes):
        digits.append(local_index % size)
        local_index //= size
    return tuple(reversed(digits))


def choices_to_index(meta: MetaTemplate, choices: tuple[int, ...] | list[int], grammar: Grammar) -> int:
    """Inverse of :func:`index_to_choices`."""
    sizes = slot_sizes(meta, grammar)
    if len(choices) != len(sizes):
        raise ValueError(
            f"meta template '{meta.id}' has {len(sizes)} slots, got {len(choices)} choices"
        )
    index = 0
    for choice, size in zip(choices, sizes):
        if not 0 <= choice < size:
            raise IndexError(
                f"meta template '{meta.id}': choice {choice} out of range for size {size}"
            )
        index = index * size + choice
    return index


def enumerate_templates(
    meta: MetaTemplate, grammar: Grammar, cap: int
) -> Iterator[tuple[int, str]]:
    """Yield every (local_index, rendering) pair in mixed-radix order.

    Refuses outright when the space exceeds ``cap`` so a misconfigured caller
    cannot accidentally stream a 15K-scale enumeration in a tight loop.
    """
    count = count_templates(meta, grammar)
    if count > cap:
        raise EnumerationCapError(meta.id, count, cap)
    sizes = slot_sizes(meta, grammar)
    for local_index, choices in enumerate(itertools.product(*(range(s) for s in sizes))):
        yield local_index, render(meta, choices, grammar)


def fill_data_slots(template: str, question: str, choices: str | None) -> str:
    """Fill ``{question}`` (and ``{choices}`` when given) in a single pass.

    Substituted content is never re-scanned, so question or choice text that
    happens to contain a data-slot string stays verbatim.
    """
    mapping = {QUESTION_SLOT: question}
    if choices is not None:
        mapping[CHOICES_SLOT] = choices
    pattern = re.compile("|".join(re.escape(slot) for slot in mapping))
    return pattern.sub(lambda m: mapping[m.group(0)], template)


# ---------------------------------------------------------------------------
# Validation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Diagnostic:
    severity: str  # "error" or "warning"
    subject: str  # meta template or synonym set id
    reason: str

    def __str__(self) -> str:
        return f"{self.severity}: {self.subject}: {self.reason}"


def validate_grammar(grammar: Grammar, strict: bool = False) -> list[Diagnostic]:
    """Check every grammar invariant and return one diagnostic per violation.

    Errors: missing/duplicated data slots, unresolved or empty synonym sets,
    duplicate candidates or meta ids, data slots inside candidates, and
    rendering collisions (two choice vectors producing the same string).
    Orphan synonym sets are a warning, upgraded to an error under ``strict``.
    """
    diagnostics: list[Diagnostic] = []

    for set_id, synset in grammar.synonym_sets.items():
        if not synset.candidates:
            diagnostics.append(Diagnostic("error", set_id, "synonym set has no candidates"))
        seen: set[str] = set()
        for candidate in synset.candidates:
            if candidate in seen:
                diagnostics.append(
                    Diagnostic("error", set_id, f"duplicate candidate {candidate!r}")
                )
            seen.add(candidate)
            for slot in DATA_SLOTS:
                if slot in candidate:
                    diagnostics.append(
                        Diagnostic("error", set_id, f"candidate {candidate!r} contains data slot {slot}")
                    )
            if candidate == "":
                diagnostics.append(Diagnostic("warning", set_id, "empty-string candidate"))

    seen_ids: set[str] = set()
    used_sets: set[str] = set()
    for meta in grammar.meta_templates:
        if meta.id in seen_ids:
            diagnostics.append(Diagnostic("error", meta.id, "duplicate meta template id"))
        seen_ids.add(meta.id)

        fixed = meta.fixed_text()
        for slot in DATA_SLOTS:
            occurrences = fixed.count(slot)
            if occurrences != 1:
                diagnostics.append(
                    Diagnostic("error", meta.id, f"data slot {slot} appears {occurrences} times, expected 1")
                )

        resolved = True
        for ref in meta.slot_refs:
            used_sets.add(ref)
            if ref not in grammar.synonym_sets:
                diagnostics.append(
                    Diagnostic("error", meta.id, f"unresolved synonym set '{ref}'")
                )
                resolved = False
        if resolved:
            diagnostics.extend(_check_collisions(meta, grammar))

    for set_id in grammar.synonym_sets:
        if set_id not in used_sets:
            severity = "error" if strict else "warning"
            diagnostics.append(Diagnostic(severity, set_id, "synonym set is never referenced"))

    return diagnostics


def _check_collisions(meta: MetaTemplate, grammar: Grammar) -> list[Diagnostic]:
    """Verify distinct choice vectors render distinct strings.

    Exhaustive hashing up to COLLISION_FULL_LIMIT renderings, seeded pairwise
    spot check above. Collisions break the uniform-sampling guarantee (total
    weight would overcount the space), so they are hard errors.
    """
    count = count_templates(meta, grammar)
    if count <= 1:
        return []
    if count <= COLLISION_FULL_LIMIT:
        rendered: set[str] = set()
        for _, text in enumerate_templates(meta, grammar, cap=COLLISION_FULL_LIMIT):
            rendered.add(text)
        if len(rendered) != count:
            return [
                Diagnostic(
                    "error",
                    meta.id,
                    f"rendering collision: {count} choice vectors yield only "
                    f"{len(rendered)} distinct strings",
                )
            ]
        return []
    rng = random.Random(0)
    for _ in range(COLLISION_SPOT_SAMPLES):
        a = rng.randrange(count)
        b = rng.randrange(count)
        if a == b:
            continue
        text_a = render(meta, index_to_choices(meta, a, grammar), grammar)
        text_b = render(meta, index_to_choices(meta, b, grammar), grammar)
        if text_a == text_b:
            return [
                Diagnostic(
                    "error",
                    meta.id,
                    f"rendering collision between indices {a} and {b} (spot check)",
                )
            ]
    return []


# ---------------------------------------------------------------------------
# Document parsing
# ---------------------------------------------------------------------------

_TOP_LEVEL_KEYS = {"synonym_sets", "tree"}
_META_KEYS = {"id", "segments"}


def load_document(path: str | Path, strict: bool = False) -> dict:
    """Read a grammar file (UTF-8 JSON with ``synonym_sets`` and ``tree``)."""
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    if not isinstance(doc, dict):
        raise GrammarError("grammar document root must be a JSON object")
    missing = _TOP_LEVEL_KEYS - doc.keys()
    if missing:
        raise GrammarError(f"grammar document missing keys: {sorted(missing)}")
    if strict:
        unknown = doc.keys() - _TOP_LEVEL_KEYS
        if unknown:
            raise GrammarError(f"unknown top-level keys: {sorted(unknown)}")
    return doc


def parse_synonym_sets(doc: dict, strict: bool = False) -> dict[str, SynonymSet]:
    raw = doc.get("synonym_sets")
    if not isinstance(raw, dict):
        raise GrammarError("'synonym_sets' must be an object mapping id to candidate list")
    sets: dict[str, SynonymSet] = {}
    for set_id, candidates in raw.items():
        if not isinstance(candidates, list) or not all(isinstance(c, str) for c in candidates):
            raise GrammarError(f"synonym set '{set_id}' must be a list of strings")
        sets[set_id] = SynonymSet(id=set_id, candidates=tuple(candidates))
    return sets


def parse_meta(obj: dict, strict: bool = False) -> MetaTemplate:
    """Parse one embedded meta template: ``{id, segments:[{fixed}|{slot}]}``."""
    if not isinstance(obj, dict) or "id" not in obj or "segments" not in obj:
        raise GrammarError("meta template must be an object with 'id' and 'segments'")
    if strict:
        unknown = obj.keys() - _META_KEYS
        if unknown:
            raise GrammarError(f"meta template '{obj.get('id')}': unknown keys {sorted(unknown)}")
    meta_id = obj["id"]
    if not isinstance(meta_id, str):
        raise GrammarError("meta template id must be a string")
    segments: list[Segment] = []
    for raw in obj["segments"]:
        if not isinstance(raw, dict) or len(raw) != 1:
            raise GrammarError(
                f"meta template '{meta_id}': each segment must be {{'fixed': text}} or {{'slot': set-id}}"
            )
        (kind, value), = raw.items()
        if kind == "fixed" and isinstance(value, str):
            segments.append(FixedSegment(value))
        elif kind == "slot" and isinstance(value, str):
            segments.append(SlotSegment(value))
        else:
            raise GrammarError(f"meta template '{meta_id}': bad segment {raw!r}")
    return MetaTemplate(id=meta_id, segments=tuple(segments))
