"""Shared fixtures: toy grammars, randomized grammar documents, default grammar."""

from __future__ import annotations

import itertools
import random

import pytest

from tplgen import DEFAULT_GRAMMAR_PATH
from tplgen.grammar import Grammar, parse_synonym_sets
from tplgen.pattern_tree import accumulate_weights, build_tree, iter_leaves

LEVEL3_LABELS = [
    "subject-predicate",
    "subject-predicate-object",
    "subject-subject",
    "noun clause",
    "gerund clause",
    "linking clause",
]


def doc_to_grammar_tree(doc: dict, accumulate: bool = True):
    """Build (grammar, tree) straight from an in-memory grammar document."""
    tree = build_tree(doc)
    grammar = Grammar(
        synonym_sets=parse_synonym_sets(doc),
        meta_templates=tuple(leaf.meta for leaf in iter_leaves(tree.root)),
    )
    if accumulate:
        accumulate_weights(tree, grammar)
    return grammar, tree


def single_meta_doc(sizes: tuple[int, ...], meta_id: str = "m0") -> dict:
    """A document with one leaf whose slots have the given synonym-set sizes."""
    sets = {}
    segments: list[dict] = [{"fixed": "Q: {question}\n"}]
    for j, size in enumerate(sizes):
        set_id = f"s{j}"
        sets[set_id] = [f"w{j}x{k}" for k in range(size)]
        segments.append({"slot": set_id})
        segments.append({"fixed": f" <{j}> "})
    segments.append({"fixed": "{choices}"})
    return {
        "synonym_sets": sets,
        "tree": [
            {
                "label": "declarative",
                "children": [
                    {
                        "label": "simple",
                        "children": [
                            {
                                "label": "subject-predicate",
                                "children": [{"meta": {"id": meta_id, "segments": segments}}],
                            }
                        ],
                    }
                ],
            }
        ],
    }


def toy_doc() -> dict:
    """Two leaves: one zero-slot meta (count 1) and one 3-way slot (count 3)."""
    return {
        "synonym_sets": {"verbs": ["Answer", "Address", "Resolve"]},
        "tree": [
            {
                "label": "imperative",
                "children": [
                    {
                        "label": "simple",
                        "children": [
                            {
                                "label": "subject-predicate",
                                "children": [
                                    {
                                        "meta": {
                                            "id": "toy-a",
                                            "segments": [
                                                {"fixed": "State the answer.\n{question}\n{choices}"}
                                            ],
                                        }
                                    },
                                    {
                                        "meta": {
                                            "id": "toy-b",
                                            "segments": [
                                                {"slot": "verbs"},
                                                {"fixed": " the following: {question}\n{choices}"},
                                            ],
                                        }
                                    },
                                ],
                            }
                        ],
                    }
                ],
            }
        ],
    }


def random_grammar_doc(rng: random.Random) -> dict:
    """A structurally valid random document for property and weight tests."""
    sets = {
        f"set{i}": [f"tok{i}_{j}" for j in range(rng.randint(1, 4))] for i in range(6)
    }
    counter = itertools.count()

    def make_leaf() -> dict:
        segments: list[dict] = [{"fixed": "Q {question} "}]
        for s in range(rng.randint(0, 3)):
            segments.append({"slot": f"set{rng.randrange(6)}"})
            segments.append({"fixed": f" <{s}> "})
        segments.append({"fixed": "{choices}"})
        return {"meta": {"id": f"m{next(counter)}", "segments": segments}}

    tree = []
    for l1 in rng.sample(["declarative", "imperative"], rng.randint(1, 2)):
        l2_nodes = []
        for l2 in rng.sample(["simple", "complex", "compound"], rng.randint(1, 2)):
            l3_nodes = []
            for l3 in rng.sample(LEVEL3_LABELS, rng.randint(1, 2)):
                leaves = [make_leaf() for _ in range(rng.randint(1, 3))]
                l3_nodes.append({"label": l3, "children": leaves})
            l2_nodes.append({"label": l2, "children": l3_nodes})
        tree.append({"label": l1, "children": l2_nodes})
    return {"synonym_sets": sets, "tree": tree}


@pytest.fixture
def toy():
    """(grammar, tree) for the 4-template toy space."""
    return doc_to_grammar_tree(toy_doc())


@pytest.fixture(scope="session")
def default_grammar():
    """(grammar, tree) for the shipped default grammar."""
    from tplgen.pattern_tree import load_grammar_file

    return load_grammar_file(DEFAULT_GRAMMAR_PATH, strict=True)
