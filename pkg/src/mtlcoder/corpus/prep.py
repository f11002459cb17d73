"""Vocabulary construction and session-level train/validation splitting."""

from __future__ import annotations

from collections import Counter

import numpy as np

from ..encoders import PAD, PAD_INDEX, UNK, UNK_INDEX
from ..errors import UsageError
from .model import Corpus

VALIDATION_FRACTION = 0.10
MIN_SPLIT_SESSIONS = 10


def token_counts(corpus: Corpus) -> Counter:
    counts: Counter = Counter()
    for s in corpus.sessions:
        for t in s.turns:
            counts.update(t.words)
    return counts


def build_vocab(train: Corpus, min_count: int = 1) -> dict[str, int]:
    """Dense token map ordered by descending count, then lexicographically.

    Indices 0 and 1 are reserved for padding and unknown tokens; tokens seen
    fewer than ``min_count`` times are left out (they map to unknown).
    """
    counts = token_counts(train)
    vocab = {PAD: PAD_INDEX, UNK: UNK_INDEX}
    for tok, n in sorted(counts.items(), key=lambda kv: (-kv[1], kv[0])):
        if n >= min_count and tok not in vocab:
            vocab[tok] = len(vocab)
    return vocab


def split_train_val(train: Corpus, fraction: float = VALIDATION_FRACTION, seed: int = 0) -> tuple[Corpus, Corpus]:
    """Hold out a random ``fraction`` of sessions (never individual turns) for validation."""
    n = len(train)
    if n < MIN_SPLIT_SESSIONS:
        raise UsageError(f"need at least {MIN_SPLIT_SESSIONS} sessions to split, got {n}")
    if not 0.0 < fraction < 1.0:
        raise UsageError(f"validation fraction must be in (0, 1), got {fraction}")
    n_val = max(1, int(round(fraction * n)))
    perm = np.random.default_rng(seed).permutation(n)
    val_idx = sorted(perm[:n_val].tolist())
    val_set = set(val_idx)
    train_idx = [i for i in range(n) if i not in val_set]
    return train.subset(train_idx), train.subset(val_idx)


def summarize(corpus: Corpus) -> dict:
    """Session/turn/word counts per speaker role plus per-label positive frequencies."""
    roles: dict[str, dict[str, int]] = {}
    for s in corpus.sessions:
        seen = set()
        for t in s.turns:
            row = roles.setdefault(t.role, {"sessions": 0, "turns": 0, "words": 0})
            row["turns"] += 1
            row["words"] += len(t.words)
            seen.add(t.role)
        for r in seen:
            roles[r]["sessions"] += 1
    if corpus.space.granularity == "session":
        Y = corpus.session_labels()
    else:
        Y = corpus.turn_labels()
    freq = {c: (float(Y[:, l].mean()) if len(Y) else 0.0) for l, c in enumerate(corpus.space.codes)}
    counts = {c: int(Y[:, l].sum()) for l, c in enumerate(corpus.space.codes)}
    return {
        "task": corpus.task,
        "sessions": len(corpus),
        "turns": corpus.n_turns,
        "words": corpus.n_words,
        "roles": dict(sorted(roles.items())),
        "label_counts": counts,
        "label_frequency": freq,
    }


def format_summary(summary: dict) -> str:
    lines = [f"task {summary['task']}", f"{'subject':<10}{'sessions':>10}{'turns':>10}{'words':>10}"]
    for role, row in summary["roles"].items():
        name = {"T": "counselor", "C": "client"}.get(role, role)
        lines.append(f"{name:<10}{row['sessions']:>10}{row['turns']:>10}{row['words']:>10}")
    lines.append(f"{'total':<10}{summary['sessions']:>10}{summary['turns']:>10}{summary['words']:>10}")
    lines.append(f"{'code':<10}{'count':>10}{'freq':>10}")
    for code, n in summary["label_counts"].items():
        lines.append(f"{code:<10}{n:>10}{summary['label_frequency'][code]:>10.4f}")
    return "\n".join(lines) + "\n"
