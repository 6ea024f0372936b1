"""Instruction-template generation, corpus augmentation, and templated evaluation."""

from pathlib import Path

__version__ = "0.1.0"

DEFAULT_GRAMMAR_PATH = Path(__file__).parent / "data" / "default_grammar.json"

from .grammar import (  # noqa: E402
    CHOICES_SLOT,
    QUESTION_SLOT,
    Grammar,
    GrammarError,
    MetaTemplate,
    SynonymSet,
    count_templates,
    enumerate_templates,
    render,
    validate_grammar,
)
from .pattern_tree import (  # noqa: E402
    TemplateRecord,
    WeightedTree,
    accumulate_weights,
    load_grammar_file,
    sample_template,
    total_count,
)
from .sampler import TemplateSet, sample_distinct, template_at  # noqa: E402

__all__ = [
    "CHOICES_SLOT",
    "DEFAULT_GRAMMAR_PATH",
    "QUESTION_SLOT",
    "Grammar",
    "GrammarError",
    "MetaTemplate",
    "SynonymSet",
    "TemplateRecord",
    "TemplateSet",
    "WeightedTree",
    "accumulate_weights",
    "count_templates",
    "enumerate_templates",
    "load_grammar_file",
    "render",
    "sample_distinct",
    "sample_template",
    "template_at",
    "total_count",
    "validate_grammar",
]
