"""Instruction-tuning corpus augmentation.

Rewrites the instruction side of each conversation record using templates from
a sampled TemplateSet: the original question text lands in the template's
``{question}`` slot and a detected trailing options block lands in
``{choices}``. Output corpora always keep the input's cardinality, role
sequence, and gpt turns byte for byte.
"""

from __future__ import annotations

import hashlib
import json
import re
from dataclasses import dataclass
from pathlib import Path

from .grammar import CHOICES_SLOT, QUESTION_SLOT, fill_data_slots
from .sampler import TemplateSet

IMAGE_TOKEN = "<image>"

# A trailing block of option lines counts as multiple choice only when there
# are at least two lines and their identifiers run A, B, C... from A.
_OPTION_LINE_RE = re.compile(r"^\s*(?:\(([A-Z])\)|([A-Z])[.)])\s+\S")

# Reject more than this fraction of malformed records outright.
ABORT_REJECT_RATIO = 0.01


class CorpusError(Exception):
    """Corpus unreadable, structurally wrong, or past the reject threshold."""


@dataclass
class Turn:
    role: str  # "human" or "gpt"
    value: str


@dataclass
class InstructionRecord:
    id: str
    image: str | None
    conversations: list[Turn]

    def to_json_dict(self) -> dict:
        obj: dict = {"id": self.id}
        if self.image is not None:
            obj["image"] = self.image
        obj["conversations"] = [{"from": t.role, "value": t.value} for t in self.conversations]
        return obj


@dataclass(frozen=True)
class AugmentPolicy:
    """How templates get assigned to records and which turns are rewritten."""

    mode: str = "per_record_random"  # or "round_robin"
    seed: int | None = None
    turns: str = "first_human"  # or "all_human"

    def __post_init__(self) -> None:
        if self.mode not in ("per_record_random", "round_robin"):
            raise ValueError(f"unknown policy mode '{self.mode}'")
        if self.turns not in ("first_human", "all_human"):
            raise ValueError(f"unknown turns setting '{self.turns}'")
        if self.mode == "per_record_random" and self.seed is None:
            raise ValueError("per_record_random policy requires a seed")


@dataclass(frozen=True)
class SplitInstruction:
    question: str
    choices: str | None
    image: str | None  # None, "head", or "tail"


# ---------------------------------------------------------------------------
# Corpus I/O
# ---------------------------------------------------------------------------


def load_corpus(path: str | Path) -> tuple[list[InstructionRecord], list[dict]]:
    """Load a conversation corpus (JSON array of records).

    Returns (records, rejects). Malformed records become reject entries
    ``{"id", "reason"}`` rather than being silently dropped; if strictly more
    than 1% of records are malformed the whole load aborts.
    """
    try:
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
    except OSError as exc:
        raise CorpusError(f"cannot read corpus {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise CorpusError(f"corpus {path} is not valid JSON: {exc}") from exc
    if not isinstance(data, list):
        raise CorpusError(f"corpus {path}: root must be a JSON array")

    records: list[InstructionRecord] = []
    rejects: list[dict] = []
    for position, raw in enumerate(data):
        record_id = raw.get("id", f"#{position}") if isinstance(raw, dict) else f"#{position}"
        reason = _validate_record(raw)
        if reason is not None:
            rejects.append({"id": str(record_id), "reason": reason})
            continue
        records.append(
            InstructionRecord(
                id=str(raw["id"]),
                image=raw.get("image"),
                conversations=[Turn(role=t["from"], value=t["value"]) for t in raw["conversations"]],
            )
        )

    if data and len(rejects) / len(data) > ABORT_REJECT_RATIO:
        raise CorpusError(
            f"corpus {path}: {len(rejects)} of {len(data)} records malformed "
            f"(> {ABORT_REJECT_RATIO:.0%} abort threshold)"
        )
    return records, rejects


def _validate_record(raw) -> str | None:
    """Return a reject reason, or None when the record is well formed."""
    if not isinstance(raw, dict):
        return "not an object"
    if "id" not in raw:
        return "missing id"
    conversations = raw.get("conversations")
    if not isinstance(conversations, list) or not conversations:
        return "no turns"
    for turn in conversations:
        if not isinstance(turn, dict) or "from" not in turn or "value" not in turn:
            return "malformed turn"
        if turn["from"] not in ("human", "gpt"):
            return f"unknown role '{turn['from']}'"
        if not isinstance(turn["value"], str):
            return "turn value not a string"
    for position, turn in enumerate(conversations):
        expected = "human" if position % 2 == 0 else "gpt"
        if turn["from"] != expected:
            return "turn order"
    if conversations[0]["value"].count(IMAGE_TOKEN) > 1:
        return "multiple image tokens"
    image = raw.get("image")
    if image is not None and not isinstance(image, str):
        return "image not a string"
    return None


def write_corpus(records: list[InstructionRecord], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump([r.to_json_dict() for r in records], fh, ensure_ascii=False, indent=1)
        fh.write("\n")


def write_rejects(rejects: list[dict], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for reject in rejects:
            fh.write(json.dumps(reject, ensure_ascii=False) + "\n")


# ---------------------------------------------------------------------------
# Instruction splitting
# ---------------------------------------------------------------------------


def split_instruction(turn_value: str) -> SplitInstruction:
    """Split an instruction into question text and a trailing options block.

    Strips a leading or trailing ``<image>`` token first. The options block is
    the maximal run of trailing lines that look like option entries ("A. cat",
    "(B) dog", "C) bird"); it only counts when it has at least two lines whose
    letters ascend from A. Anything unrecognized stays in the question.
    """
    value = turn_value
    image: str | None = None
    if value.startswith(IMAGE_TOKEN):
        image = "head"
        value = value[len(IMAGE_TOKEN):].lstrip("\n ")
    elif value.rstrip().endswith(IMAGE_TOKEN):
        image = "tail"
        value = value.rstrip()[: -len(IMAGE_TOKEN)].rstrip("\n ")

    lines = value.split("\n")
    start = len(lines)
    letters: list[str] = []
    for line in reversed(lines):
        match = _OPTION_LINE_RE.match(line)
        if match is None:
            break
        letters.append(match.group(1) or match.group(2))
        start -= 1
    letters.reverse()

    expected = [chr(ord("A") + i) for i in range(len(letters))]
    if len(letters) >= 2 and letters == expected and start > 0:
        question = "\n".join(lines[:start]).rstrip()
        choices = "\n".join(lines[start:])
        if question:
            return SplitInstruction(question=question, choices=choices, image=image)

    return SplitInstruction(question=value.strip(), choices=None, image=image)


def elide_choices_region(template: str) -> str:
    """Remove the ``{choices}`` slot together with its label text.

    The region runs from just after the last sentence terminator or newline
    before the slot (e.g. past "Choices: ") through the slot itself, plus one
    adjacent newline; it never reaches back past the ``{question}`` slot. Used
    when a record has no recognizable options, so free-form instructions don't
    end up with a dangling "Choices:" label.
    """
    slot_start = template.find(CHOICES_SLOT)
    if slot_start < 0:
        return template
    boundary = -1
    for position in range(slot_start - 1, -1, -1):
        if template[position] in ".!?\n":
            boundary = position
            break
    question_start = template.find(QUESTION_SLOT)
    if 0 <= question_start < slot_start:
        boundary = max(boundary, question_start + len(QUESTION_SLOT) - 1)
    region_start = boundary + 1
    region_end = slot_start + len(CHOICES_SLOT)
    if region_start > 0 and template[region_start - 1] == "\n":
        region_start -= 1
    elif region_end < len(template) and template[region_end] == "\n":
        region_end += 1
    return template[:region_start] + template[region_end:]


# ---------------------------------------------------------------------------
# Template application
# ---------------------------------------------------------------------------


def assigned_template_index(policy: AugmentPolicy, ordinal: int, n_templates: int) -> int:
    """Template index for the record at position ``ordinal``.

    per_record_random derives the index from (seed, ordinal) alone, so
    parallel or out-of-order processing assigns identically.
    """
    if policy.mode == "round_robin":
        return ordinal % n_templates
    digest = hashlib.blake2b(
        f"{policy.seed}:{ordinal}".encode(), digest_size=8
    ).digest()
    return int.from_bytes(digest, "big") % n_templates


def rewrite_instruction(turn_value: str, template: str) -> str:
    """Rewrite one human turn with the given template.

    The extracted question lands in ``{question}`` verbatim; the options block
    lands in ``{choices}`` verbatim when present, otherwise the template's
    choices region is elided. A stripped ``<image>`` token is re-attached at
    the head of the result.
    """
    split = split_instruction(turn_value)
    if split.choices is None:
        body = fill_data_slots(elide_choices_region(template), split.question, None)
    else:
        body = fill_data_slots(template, split.question, split.choices)
    if split.image is not None:
        body = IMAGE_TOKEN + "\n" + body
    return body


def apply_templates(
    corpus: list[InstructionRecord],
    template_set: TemplateSet,
    policy: AugmentPolicy,
) -> list[InstructionRecord]:
    """Rewrite the targeted human turns of every record; gpt turns never change.

    Output cardinality always equals input cardinality.
    """
    templates = template_set.templates
    if not templates:
        raise ValueError("template set is empty")

    out: list[InstructionRecord] = []
    for ordinal, record in enumerate(corpus):
        template = templates[assigned_template_index(policy, ordinal, len(templates))]
        rewritten: list[Turn] = []
        human_seen = 0
        for turn in record.conversations:
            if turn.role != "human":
                rewritten.append(Turn(role=turn.role, value=turn.value))
                continue
            human_seen += 1
            targeted = policy.turns == "all_human" or human_seen == 1
            value = rewrite_instruction(turn.value, template) if targeted else turn.value
            rewritten.append(Turn(role="human", value=value))
        out.append(InstructionRecord(id=record.id, image=record.image, conversations=rewritten))
    return out
