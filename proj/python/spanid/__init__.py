"""Span identification toolkit: corpora, peer-pair augmentation, MRC training, span metrics."""

from ._spanid import (  # noqa: F401
    augment,
    pr_query,
    run_experiment,
    span_prf,
    sub_query,
    synth_dataset,
    tokenize,
    validate,
)

__all__ = [
    "augment",
    "pr_query",
    "run_experiment",
    "span_prf",
    "sub_query",
    "synth_dataset",
    "tokenize",
    "validate",
]
