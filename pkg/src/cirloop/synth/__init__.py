"""Synthetic benchmark generator and oracle backends for desk-scale verification."""

from .generate import SynthCorpus, SynthItem, gen_corpus, gen_queries
from .oracle import (FAILURE_GRAMMAR, FailureModeConfig, OracleSuite, Vocabulary, format_caption,
                     oracle_suite, parse_caption, parse_failure_spec)

__all__ = [
    "FAILURE_GRAMMAR", "FailureModeConfig", "OracleSuite", "SynthCorpus", "SynthItem", "Vocabulary",
    "format_caption", "gen_corpus", "gen_queries", "oracle_suite", "parse_caption", "parse_failure_spec",
]
