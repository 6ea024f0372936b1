"""Templated multiple-choice evaluation.

Crosses every eval item with every template to build a prompt grid, queries a
model client (raw outputs are persisted before any scoring, so a run can be
resumed or re-scored without re-querying), extracts the chosen option with a
two-step protocol (string matching first, similarity fallback second), and
reports per-template accuracy plus the Max-Min fluctuation across templates.
"""

from __future__ import annotations

import base64
import csv
import json
import math
import re
import string
import threading
from collections import Counter
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

from .grammar import CHOICES_SLOT, QUESTION_SLOT, GrammarError, fill_data_slots
from .sampler import TemplateSet

LETTERS = string.ascii_uppercase

# The three minimal question/choices layouts commonly used for VQA prompting.
SIMPLE_TEMPLATES = (
    "{question}\n{choices}",
    "Question: {question}\nChoices: {choices}",
    "Question: {question}\nSelect from the following choices: {choices}",
)

# Similarity scorer contract: scores one model output against every choice.
SimilarityScorer = Callable[[str, Sequence[str]], list[float]]


class CoverageError(Exception):
    """The response grid is incomplete or contains duplicates."""


class ClientError(Exception):
    """A model query failed past the retry limit."""


# ---------------------------------------------------------------------------
# Domain types
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class EvalItem:
    """One benchmark data point; choice order is fixed and never permuted."""

    id: str
    image: str | None
    question: str
    choices: tuple[str, ...]
    answer_index: int


@dataclass(frozen=True)
class TemplatedItem:
    item: EvalItem
    template_id: int
    prompt: str


@dataclass(frozen=True)
class EvalReport:
    per_template_accuracy: dict[int, float]
    average: float
    max_min: float
    n_items: int
    n_templates: int

    def to_json_dict(self) -> dict:
        return {
            "average": self.average,
            "max_min": self.max_min,
            "n_items": self.n_items,
            "n_templates": self.n_templates,
            "per_template_accuracy": {
                str(tid): acc for tid, acc in sorted(self.per_template_accuracy.items())
            },
        }


# ---------------------------------------------------------------------------
# Benchmark construction
# ---------------------------------------------------------------------------


def format_choices(choices: Sequence[str]) -> str:
    """One line per choice: "(A) cat\\n(B) dog". Order is preserved."""
    if len(choices) > len(LETTERS):
        raise ValueError(f"at most {len(LETTERS)} choices supported, got {len(choices)}")
    return "\n".join(f"({LETTERS[i]}) {text}" for i, text in enumerate(choices))


def load_eval_items(path: str | Path) -> list[EvalItem]:
    """Read eval items from line-delimited JSON.

    Multi-image entries (a list under "image") are filtered out; only
    single-image samples are evaluated.
    """
    items: list[EvalItem] = []
    seen: set[str] = set()
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            obj = json.loads(line)
            image = obj.get("image")
            if isinstance(image, list):
                continue
            for key in ("id", "question", "choices", "answer"):
                if key not in obj:
                    raise ValueError(f"{path}:{line_no}: missing '{key}'")
            choices = tuple(obj["choices"])
            if len(choices) < 2:
                raise ValueError(f"{path}:{line_no}: need at least 2 choices")
            if not 0 <= obj["answer"] < len(choices):
                raise ValueError(f"{path}:{line_no}: answer index out of range")
            item_id = str(obj["id"])
            if item_id in seen:
                raise ValueError(f"{path}:{line_no}: duplicate item id '{item_id}'")
            seen.add(item_id)
            items.append(
                EvalItem(
                    id=item_id,
                    image=image,
                    question=obj["question"],
                    choices=choices,
                    answer_index=obj["answer"],
                )
            )
    return items


def build_templated_benchmark(
    items: Sequence[EvalItem], templates: TemplateSet
) -> list[TemplatedItem]:
    """Full cross product: every item under every template."""
    if not items:
        raise ValueError("no eval items")
    if not templates.records:
        raise ValueError("template set is empty")
    for record in templates.records:
        for slot in (QUESTION_SLOT, CHOICES_SLOT):
            if record.template.count(slot) != 1:
                raise GrammarError(
                    f"template {record.global_index} must contain {slot} exactly once"
                )
    grid: list[TemplatedItem] = []
    for record in templates.records:
        for item in items:
            prompt = fill_data_slots(record.template, item.question, format_choices(item.choices))
            grid.append(TemplatedItem(item=item, template_id=record.global_index, prompt=prompt))
    return grid


# ---------------------------------------------------------------------------
# Answer extraction
# ---------------------------------------------------------------------------

_BOUNDARY_L = r"(?<![A-Za-z0-9])"
_BOUNDARY_R = r"(?![A-Za-z0-9])"


def _standalone(pattern: str) -> re.Pattern:
    return re.compile(_BOUNDARY_L + pattern + _BOUNDARY_R)


def extract_answer(
    output: str,
    choices: Sequence[str],
    scorer: SimilarityScorer | None = None,
    stats: Counter | None = None,
) -> tuple[int, str]:
    """Map a model output to a choice index; returns (index, method).

    Step one scans for, in priority order: (a) identifier plus content, e.g.
    "(A) cat"; (b) a bare identifier "(A)" / "A." / "A)" standing alone; (c)
    the choice content as a whole-word substring. A rule that hits exactly one
    choice wins with method "match"; a rule that hits several different
    choices is ambiguous and defers straight to step two. Step two scores all
    choices with the similarity scorer and returns the argmax (ties break to
    the lowest index) with method "similarity".
    """
    if not choices:
        raise ValueError("choices must be nonempty")
    if scorer is None:
        scorer = lexical_scorer
    lowered = output.lower()

    for rule in (_match_identifier_content, _match_identifier, _match_content):
        hits = rule(lowered, choices)
        if len(hits) == 1:
            return next(iter(hits)), "match"
        if len(hits) > 1:
            break

    if not output.strip() and stats is not None:
        stats["empty_output"] += 1
    scores = scorer(output, choices)
    best = 0
    for index in range(1, len(choices)):
        if scores[index] > scores[best]:
            best = index
    return best, "similarity"


def _match_identifier_content(lowered: str, choices: Sequence[str]) -> set[int]:
    hits: set[int] = set()
    for index, choice in enumerate(choices):
        if not choice:
            continue
        pattern = _standalone(
            re.escape(f"({LETTERS[index].lower()})") + r"\s+" + re.escape(choice.lower())
        )
        if pattern.search(lowered):
            hits.add(index)
    return hits


def _match_identifier(lowered: str, choices: Sequence[str]) -> set[int]:
    hits: set[int] = set()
    for index in range(len(choices)):
        letter = LETTERS[index].lower()
        pattern = _standalone(rf"(?:\({re.escape(letter)}\)|{re.escape(letter)}[.)])")
        if pattern.search(lowered):
            hits.add(index)
    return hits


def _match_content(lowered: str, choices: Sequence[str]) -> set[int]:
    hits: set[int] = set()
    for index, choice in enumerate(choices):
        if not choice.strip():
            continue
        if _standalone(re.escape(choice.lower())).search(lowered):
            hits.add(index)
    return hits


def _tokens(text: str) -> list[str]:
    return re.findall(r"[a-z0-9']+", text.lower())


def lexical_scorer(output: str, choices: Sequence[str]) -> list[float]:
    """Cosine similarity between lower-cased token multisets (deterministic)."""
    out_counts = Counter(_tokens(output))
    out_norm = math.sqrt(sum(v * v for v in out_counts.values()))
    scores: list[float] = []
    for choice in choices:
        choice_counts = Counter(_tokens(choice))
        choice_norm = math.sqrt(sum(v * v for v in choice_counts.values()))
        dot = sum(count * out_counts[token] for token, count in choice_counts.items())
        denom = out_norm * choice_norm
        scores.append(dot / denom if denom else 0.0)
    return scores


class EmbeddingScorer:
    """Scores choices with an external embeddings endpoint.

    Wire format: POST {"texts": [str, ...]} expecting {"embeddings": [[float,
    ...], ...]}; similarity is the cosine between the output embedding and
    each choice embedding.
    """

    def __init__(self, endpoint: str, timeout: float = 30.0):
        self.endpoint = endpoint
        self.timeout = timeout

    def __call__(self, output: str, choices: Sequence[str]) -> list[float]:
        import requests

        response = requests.post(
            self.endpoint, json={"texts": [output, *choices]}, timeout=self.timeout
        )
        response.raise_for_status()
        embeddings = response.json()["embeddings"]
        out_vec = embeddings[0]
        return [_cosine(out_vec, vec) for vec in embeddings[1:]]


def _cosine(a: Sequence[float], b: Sequence[float]) -> float:
    dot = sum(x * y for x, y in zip(a, b))
    denom = math.sqrt(sum(x * x for x in a)) * math.sqrt(sum(y * y for y in b))
    return dot / denom if denom else 0.0


# ---------------------------------------------------------------------------
# Model clients
# ---------------------------------------------------------------------------


class HttpClient:
    """Remote chat endpoint: POST {"prompt", "image"?} expecting {"text"}."""

    def __init__(self, endpoint: str, timeout: float = 60.0):
        self.endpoint = endpoint
        self.timeout = timeout

    def query(self, prompt: str, image: str | None = None) -> str:
        import requests

        payload: dict = {"prompt": prompt}
        if image is not None:
            payload["image"] = base64.b64encode(Path(image).read_bytes()).decode("ascii")
        response = requests.post(self.endpoint, json=payload, timeout=self.timeout)
        response.raise_for_status()
        return response.json()["text"]


class StaticClient:
    """Deterministic mock that answers every query with the same text."""

    def __init__(self, reply: str):
        self.reply = reply

    def query(self, prompt: str, image: str | None = None) -> str:
        return self.reply


# ---------------------------------------------------------------------------
# Scoring and orchestration
# ---------------------------------------------------------------------------


def score(
    responses: Sequence[tuple[TemplatedItem, int]],
    expected_items: Sequence[str] | None = None,
    expected_templates: Sequence[int] | None = None,
) -> EvalReport:
    """Fold extracted answers into per-template accuracies and Max-Min.

    The grid must be complete: every template for every item, exactly once.
    Expected item/template ids default to those observed in the responses.
    """
    by_key: dict[tuple[str, int], tuple[TemplatedItem, int]] = {}
    for templated, extracted in responses:
        key = (templated.item.id, templated.template_id)
        if key in by_key:
            raise CoverageError(f"duplicate response for item={key[0]} template={key[1]}")
        by_key[key] = (templated, extracted)

    if expected_items is None:
        expected_items = list(dict.fromkeys(t.item.id for t, _ in responses))
    if expected_templates is None:
        expected_templates = sorted({t.template_id for t, _ in responses})

    missing = [
        (item_id, template_id)
        for template_id in expected_templates
        for item_id in expected_items
        if (item_id, template_id) not in by_key
    ]
    if missing:
        shown = ", ".join(f"(item={i}, template={t})" for i, t in missing[:10])
        suffix = "" if len(missing) <= 10 else f" and {len(missing) - 10} more"
        raise CoverageError(f"incomplete grid, missing {len(missing)} pairs: {shown}{suffix}")

    per_template: dict[int, float] = {}
    for template_id in expected_templates:
        correct = sum(
            1
            for item_id in expected_items
            if by_key[(item_id, template_id)][1]
            == by_key[(item_id, template_id)][0].item.answer_index
        )
        per_template[template_id] = correct / len(expected_items)

    accuracies = list(per_template.values())
    return EvalReport(
        per_template_accuracy=per_template,
        average=sum(accuracies) / len(accuracies),
        max_min=max(accuracies) - min(accuracies),
        n_items=len(expected_items),
        n_templates=len(expected_templates),
    )


def load_raw_outputs(path: str | Path) -> dict[tuple[str, int], str]:
    outputs: dict[tuple[str, int], str] = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            obj = json.loads(line)
            outputs[(str(obj["item_id"]), obj["template_id"])] = obj["output"]
    return outputs


def run_eval(
    items: Sequence[EvalItem],
    templates: TemplateSet,
    client,
    raw_path: str | Path,
    *,
    concurrency_limit: int = 4,
    max_retries: int = 2,
    scorer: SimilarityScorer | None = None,
    stats: Counter | None = None,
) -> EvalReport:
    """Query the full grid (resuming from persisted outputs), then score it.

    Raw outputs are appended to ``raw_path`` as soon as each query returns, so
    a crashed or aborted run resumes without re-querying. Every pending query
    is retried up to ``max_retries`` extra times; if any still fails the run
    aborts with the partial output file preserved. ``client=None`` is a pure
    replay: the raw file must already cover the grid.
    """
    grid = build_templated_benchmark(items, templates)
    raw_path = Path(raw_path)
    outputs = load_raw_outputs(raw_path) if raw_path.exists() else {}
    pending = [t for t in grid if (t.item.id, t.template_id) not in outputs]

    if pending:
        if client is None:
            raise ClientError(
                f"no client configured and raw outputs cover only "
                f"{len(grid) - len(pending)} of {len(grid)} queries"
            )
        _query_pending(pending, client, raw_path, outputs, concurrency_limit, max_retries)

    responses = [
        (t, extract_answer(outputs[(t.item.id, t.template_id)], t.item.choices, scorer, stats)[0])
        for t in grid
    ]
    return score(
        responses,
        expected_items=[item.id for item in items],
        expected_templates=[record.global_index for record in templates.records],
    )


def _query_pending(
    pending: Sequence[TemplatedItem],
    client,
    raw_path: Path,
    outputs: dict[tuple[str, int], str],
    concurrency_limit: int,
    max_retries: int,
) -> None:
    lock = threading.Lock()
    failures: list[Exception] = []

    def query_one(templated: TemplatedItem) -> tuple[TemplatedItem, str]:
        last: Exception | None = None
        for _ in range(max_retries + 1):
            try:
                return templated, client.query(templated.prompt, image=templated.item.image)
            except Exception as exc:  # noqa: BLE001 - every failure mode retries
                last = exc
        raise ClientError(
            f"query failed after {max_retries + 1} attempts "
            f"(item={templated.item.id}, template={templated.template_id}): {last}"
        )

    with open(raw_path, "a", encoding="utf-8") as fh:
        with ThreadPoolExecutor(max_workers=max(1, concurrency_limit)) as pool:
            futures = [pool.submit(query_one, t) for t in pending]
            for future in as_completed(futures):
                try:
                    templated, output = future.result()
                except ClientError as exc:
                    failures.append(exc)
                    continue
                line = json.dumps(
                    {
                        "item_id": templated.item.id,
                        "template_id": templated.template_id,
                        "output": output,
                    },
                    ensure_ascii=False,
                )
                with lock:
                    fh.write(line + "\n")
                    fh.flush()
                outputs[(templated.item.id, templated.template_id)] = output

    if failures:
        raise ClientError(
            f"{len(failures)} of {len(pending)} queries failed; "
            f"partial outputs preserved at {raw_path}"
        ) from failures[0]


def write_report(report: EvalReport, json_path: str | Path, csv_path: str | Path) -> None:
    """Write the report JSON plus its CSV twin (template_id, accuracy)."""
    with open(json_path, "w", encoding="utf-8") as fh:
        json.dump(report.to_json_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    with open(csv_path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["template_id", "accuracy"])
        for template_id, accuracy in sorted(report.per_template_accuracy.items()):
            writer.writerow([template_id, accuracy])
