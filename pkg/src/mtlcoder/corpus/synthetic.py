"""Synthetic dialogue corpora with planted, exactly recoverable label rules.

Each label owns a marker token. A same-turn label is on iff its marker
occurs in the turn; a context label is on iff its marker occurs in the
previous turn of the same session. Everything else is filler drawn
uniformly from ``filler_prefix + index`` tokens.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from ..errors import UsageError
from .model import SESSION, TURN, Corpus, LabelSpace, Session, Turn


@dataclass
class GeneratorSpec:
    labels: list[str]
    markers: list[str]
    marker_prob: list[float]
    task: str = "synthetic"
    vocab_size: int = 200
    filler_prefix: str = "w"
    context_labels: list[str] = field(default_factory=list)
    sessions: int = 100
    turns_per_session: tuple[int, int] = (6, 12)
    words_per_turn: tuple[int, int] = (4, 10)
    session_level: bool = False
    seed: int = 0

    def __post_init__(self):
        self.labels = list(self.labels)
        self.markers = list(self.markers)
        self.marker_prob = [float(p) for p in self.marker_prob]
        self.context_labels = list(self.context_labels)
        self.turns_per_session = tuple(self.turns_per_session)
        self.words_per_turn = tuple(self.words_per_turn)
        self.validate()

    def validate(self) -> None:
        n = len(self.labels)
        if n == 0:
            raise UsageError("generator needs at least one label")
        if len(self.markers) != n or len(self.marker_prob) != n:
            raise UsageError("labels, markers and marker_prob must have equal length")
        if len(set(self.labels)) != n:
            raise UsageError("duplicate label names")
        if len(set(self.markers)) != n:
            raise UsageError("marker tokens collide")
        fillers = {f"{self.filler_prefix}{i}" for i in range(self.vocab_size)}
        clash = [m for m in self.markers if m in fillers]
        if clash:
            raise UsageError(f"marker tokens collide with filler vocabulary: {clash}")
        if any(m != m.lower() or not m or any(ch.isspace() for ch in m) for m in self.markers):
            raise UsageError("markers must be single lowercase tokens")
        if any(not 0.0 <= p <= 1.0 for p in self.marker_prob):
            raise UsageError("marker probabilities must lie in [0, 1]")
        unknown = set(self.context_labels) - set(self.labels)
        if unknown:
            raise UsageError(f"context rules name unknown labels: {sorted(unknown)}")
        for lo, hi, what in ((*self.turns_per_session, "turns"), (*self.words_per_turn, "words")):
            if lo < 1 or hi < lo:
                raise UsageError(f"invalid {what} range ({lo}, {hi})")
        if self.vocab_size < 1 or self.sessions < 0:
            raise UsageError("vocab_size must be positive and sessions non-negative")

    @property
    def space(self) -> LabelSpace:
        return LabelSpace(task=self.task, codes=tuple(self.labels), granularity=SESSION if self.session_level else TURN)

    def to_json(self) -> dict:
        d = asdict(self)
        d["turns_per_session"] = list(self.turns_per_session)
        d["words_per_turn"] = list(self.words_per_turn)
        return d

    @classmethod
    def from_json(cls, obj: dict) -> "GeneratorSpec":
        try:
            return cls(**obj)
        except TypeError as exc:
            raise UsageError(f"invalid generator spec: {exc}") from None


def load_generator_spec(path: str | Path) -> GeneratorSpec:
    with open(path, encoding="utf-8") as fh:
        return GeneratorSpec.from_json(json.load(fh))


def planted_labels(turn_words: Sequence[Sequence[str]], spec: GeneratorSpec) -> np.ndarray:
    """Apply the planted rules to a session's word lists: ``(n_turns, L)`` bits."""
    context = set(spec.context_labels)
    out = np.zeros((len(turn_words), len(spec.labels)), dtype=np.int8)
    for j, words in enumerate(turn_words):
        present = set(words)
        prev = set(turn_words[j - 1]) if j > 0 else set()
        for l, (name, marker) in enumerate(zip(spec.labels, spec.markers)):
            out[j, l] = marker in (prev if name in context else present)
    return out


def generate_synthetic(spec: GeneratorSpec) -> Corpus:
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    space = spec.space
    sessions = []
    for i in range(spec.sessions):
        n_turns = int(rng.integers(spec.turns_per_session[0], spec.turns_per_session[1] + 1))
        roles = []
        turn_words: list[list[str]] = []
        first_role = int(rng.integers(2))
        for j in range(n_turns):
            n_words = int(rng.integers(spec.words_per_turn[0], spec.words_per_turn[1] + 1))
            words = [f"{spec.filler_prefix}{k}" for k in rng.integers(spec.vocab_size, size=n_words)]
            fire = rng.random(len(spec.markers)) < np.asarray(spec.marker_prob)
            for l in np.flatnonzero(fire):
                words.insert(int(rng.integers(len(words) + 1)), spec.markers[l])
            turn_words.append(words)
            roles.append("T" if (j + first_role) % 2 == 0 else "C")
        bits = planted_labels(turn_words, spec)
        if spec.session_level:
            session_bits = (bits.sum(axis=0) * 2 > n_turns).astype(np.int8)
            raw_session = {c: int(b) for c, b in zip(spec.labels, session_bits)}
            turns = tuple(Turn(r, tuple(w), None, None) for r, w in zip(roles, turn_words))
            sessions.append(Session(f"{spec.task}-{i:05d}", spec.task, turns, session_bits, raw_session))
        else:
            turns = tuple(
                Turn(r, tuple(w), b.copy(), {c: int(v) for c, v in zip(spec.labels, b)})
                for r, w, b in zip(roles, turn_words, bits)
            )
            sessions.append(Session(f"{spec.task}-{i:05d}", spec.task, turns))
    return Corpus(space, tuple(sessions))


def marker_lookup_predict(corpus: Corpus, spec: GeneratorSpec) -> np.ndarray:
    """The trivial rule-reading classifier; per-turn predictions in corpus order."""
    rows = [planted_labels([t.words for t in s.turns], spec) for s in corpus.sessions]
    if not rows:
        return np.zeros((0, len(spec.labels)), dtype=np.int8)
    return np.concatenate(rows)
