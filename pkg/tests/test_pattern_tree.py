"""Tree construction, weight accumulation, and weighted sampling."""

from __future__ import annotations

import random
from fractions import Fraction

import pytest
from scipy import stats

from tests.conftest import doc_to_grammar_tree, random_grammar_doc, single_meta_doc, toy_doc
from tplgen.grammar import count_templates, enumerate_templates
from tplgen.pattern_tree import (
    EmptySpaceError,
    TreeStateError,
    TreeStructureError,
    accumulate_weights,
    build_tree,
    iter_leaves,
    sample_template,
    total_count,
)


def walk_nodes(node):
    yield node
    for child in node.children:
        yield from walk_nodes(child)


# ---------------------------------------------------------------------------
# Structure
# ---------------------------------------------------------------------------


def test_build_rejects_leaf_above_level_four():
    doc = {
        "synonym_sets": {},
        "tree": [
            {
                "label": "declarative",
                "children": [{"meta": {"id": "early", "segments": [{"fixed": "{question} {choices}"}]}}],
            }
        ],
    }
    with pytest.raises(TreeStructureError, match="level"):
        build_tree(doc)


def test_build_rejects_empty_internal_node():
    doc = {
        "synonym_sets": {},
        "tree": [{"label": "declarative", "children": [{"label": "simple", "children": []}]}],
    }
    with pytest.raises(TreeStructureError, match="simple"):
        build_tree(doc)


def test_build_rejects_unknown_taxonomy_label():
    doc = toy_doc()
    doc["tree"][0]["label"] = "interrogative"
    with pytest.raises(TreeStructureError, match="interrogative"):
        build_tree(doc)


def test_build_rejects_unknown_keys_in_strict_mode():
    doc = toy_doc()
    doc["tree"][0]["note"] = "extra"
    build_tree(doc)  # lax mode tolerates
    with pytest.raises(TreeStructureError, match="note"):
        build_tree(doc, strict=True)


def test_node_ids_are_label_paths():
    _, tree = doc_to_grammar_tree(toy_doc())
    ids = {node.id for node in walk_nodes(tree.root)}
    assert "imperative" in ids
    assert "imperative/simple" in ids
    assert "imperative/simple/subject-predicate" in ids
    assert {"toy-a", "toy-b"} <= ids


# ---------------------------------------------------------------------------
# Weight accumulation
# ---------------------------------------------------------------------------


def test_parent_weight_is_sum_of_leaf_counts():
    doc = {
        "synonym_sets": {
            "a": [f"a{i}" for i in range(12)],
            "b": [f"b{i}" for i in range(8)],
        },
        "tree": [
            {
                "label": "declarative",
                "children": [
                    {
                        "label": "simple",
                        "children": [
                            {
                                "label": "subject-predicate",
                                "children": [
                                    {"meta": {"id": "m1", "segments": [{"slot": "a"}, {"fixed": " {question} {choices}"}]}},
                                    {"meta": {"id": "m2", "segments": [{"slot": "b"}, {"fixed": " {question} {choices}"}]}},
                                ],
                            }
                        ],
                    }
                ],
            }
        ],
    }
    _, tree = doc_to_grammar_tree(doc)
    level3 = tree.root.children[0].children[0].children[0]
    assert [child.weight for child in level3.children] == [12, 8]
    assert level3.weight == 20
    assert tree.root.weight == 20


def test_single_chain_propagates_leaf_count_to_every_ancestor():
    doc = single_meta_doc((7,))
    grammar, tree = doc_to_grammar_tree(doc)
    node = tree.root
    while not node.is_leaf():
        assert node.weight == 7
        node = node.children[0]
    assert node.weight == 7


def test_weight_conservation_at_every_node(default_grammar):
    _, tree = default_grammar
    for node in walk_nodes(tree.root):
        if not node.is_leaf():
            assert node.weight == sum(child.weight for child in node.children)


def test_default_root_weight_matches_per_leaf_enumeration(default_grammar):
    grammar, tree = default_grammar
    oracle = 0
    for leaf in iter_leaves(tree.root):
        rendered = {text for _, text in enumerate_templates(leaf.meta, grammar, cap=10_000)}
        assert len(rendered) == leaf.weight
        oracle += len(rendered)
    assert total_count(tree) == oracle


def test_accumulation_is_idempotent(toy):
    grammar, tree = toy
    before = {node.id: node.weight for node in walk_nodes(tree.root)}
    accumulate_weights(tree, grammar)
    after = {node.id: node.weight for node in walk_nodes(tree.root)}
    assert before == after


def test_total_count_requires_accumulation():
    grammar, tree = doc_to_grammar_tree(toy_doc(), accumulate=False)
    with pytest.raises(TreeStateError):
        total_count(tree)
    accumulate_weights(tree, grammar)
    assert total_count(tree) == 4


# ---------------------------------------------------------------------------
# Sampling
# ---------------------------------------------------------------------------


def test_sample_requires_accumulation(toy):
    grammar, tree = doc_to_grammar_tree(toy_doc(), accumulate=False)
    with pytest.raises(TreeStateError):
        sample_template(tree, grammar, random.Random(0))


def test_sample_zero_total_space():
    doc = single_meta_doc((0,))  # an empty synonym set gives count 0
    grammar, tree = doc_to_grammar_tree(doc)
    assert total_count(tree) == 0
    with pytest.raises(EmptySpaceError):
        sample_template(tree, grammar, random.Random(0))


def test_single_leaf_single_template_always_drawn():
    doc = {
        "synonym_sets": {},
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
                                    {"meta": {"id": "only", "segments": [{"fixed": "Do: {question}\n{choices}"}]}}
                                ],
                            }
                        ],
                    }
                ],
            }
        ],
    }
    grammar, tree = doc_to_grammar_tree(doc)
    rng = random.Random(7)
    records = [sample_template(tree, grammar, rng) for _ in range(20)]
    assert {r.template for r in records} == {"Do: {question}\n{choices}"}
    assert {r.global_index for r in records} == {0}


def test_fixed_seed_reproduces_identical_draw_sequence(toy):
    grammar, tree = toy
    rng_a, rng_b = random.Random(42), random.Random(42)
    seq_a = [sample_template(tree, grammar, rng_a) for _ in range(200)]
    seq_b = [sample_template(tree, grammar, rng_b) for _ in range(200)]
    assert seq_a == seq_b


def test_sample_record_provenance_is_consistent(toy):
    grammar, tree = toy
    rng = random.Random(3)
    for _ in range(50):
        record = sample_template(tree, grammar, rng)
        assert 0 <= record.global_index < total_count(tree)
        assert record.leaf_path[0] == "imperative"
        assert record.leaf_path[-1] in ("toy-a", "toy-b")


def test_toy_uniformity_chi_square(toy):
    # Oracle: brute-force enumeration of all 4 templates; 40k draws should hit
    # each with frequency 0.25 +/- 0.02 and pass chi-square at alpha 0.001.
    grammar, tree = toy
    universe = set()
    for leaf in iter_leaves(tree.root):
        universe |= {text for _, text in enumerate_templates(leaf.meta, grammar, cap=10)}
    assert len(universe) == 4

    rng = random.Random(2024)
    draws = 40_000
    counts: dict[str, int] = {}
    for _ in range(draws):
        record = sample_template(tree, grammar, rng)
        counts[record.template] = counts.get(record.template, 0) + 1

    assert set(counts) == universe
    for count in counts.values():
        assert abs(count / draws - 0.25) < 0.02
    result = stats.chisquare(list(counts.values()))
    assert result.pvalue > 0.001


def test_random_tree_uniformity_chi_square():
    rng = random.Random(11)
    doc = random_grammar_doc(rng)
    grammar, tree = doc_to_grammar_tree(doc)
    total = total_count(tree)
    assert total <= 500  # keep the chi-square cheap and well-powered

    draw_rng = random.Random(99)
    draws = 200 * total
    counts = [0] * total
    for _ in range(draws):
        counts[sample_template(tree, grammar, draw_rng).global_index] += 1
    assert stats.chisquare(counts).pvalue > 0.001


def test_each_template_probability_is_exactly_one_over_total(toy):
    # Symbolic check: descent probability x uniform slot fill = 1/total.
    grammar, tree = toy
    total = total_count(tree)

    def leaf_probability(node, acc):
        if node.is_leaf():
            count = count_templates(node.meta, grammar)
            template_prob = acc * Fraction(1, count)
            assert template_prob == Fraction(1, total)
            return
        for child in node.children:
            leaf_probability(child, acc * Fraction(child.weight, node.weight))

    leaf_probability(tree.root, Fraction(1))
