"""Dialogue corpora: data model, file format, label spaces and synthetic generation."""

from .model import (
    SESSION,
    TURN,
    Corpus,
    LabelSpace,
    Session,
    Turn,
    dump_corpus_lines,
    load_corpus,
    load_label_space,
    parse_corpus_lines,
    tokenize,
    write_corpus,
)
from .prep import VALIDATION_FRACTION, build_vocab, format_summary, split_train_val, summarize, token_counts
from .spaces import CTRS_CODES, MISC_GROUPS, ctrs_space, misc_raw_codes, misc_space
from .synthetic import GeneratorSpec, generate_synthetic, load_generator_spec, marker_lookup_predict, planted_labels

__all__ = [
    "SESSION", "TURN", "Corpus", "LabelSpace", "Session", "Turn", "dump_corpus_lines", "load_corpus",
    "load_label_space", "parse_corpus_lines", "tokenize", "write_corpus", "VALIDATION_FRACTION",
    "build_vocab", "format_summary", "split_train_val", "summarize", "token_counts", "CTRS_CODES",
    "MISC_GROUPS", "ctrs_space", "misc_raw_codes", "misc_space", "GeneratorSpec", "generate_synthetic",
    "load_generator_spec", "marker_lookup_predict", "planted_labels",
]
