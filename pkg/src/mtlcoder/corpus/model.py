"""Session/turn data model, label spaces and the JSON-lines corpus format."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Mapping, Sequence

import numpy as np

from ..encoders import ROLE_ALIASES
from ..errors import CorpusParseError, DataError, UsageError

log = logging.getLogger(__name__)

TURN = "turn"
SESSION = "session"


@dataclass(frozen=True)
class LabelSpace:
    """Ordered label codes of one task plus the raw-code grouping and binarization rules."""

    task: str
    codes: tuple[str, ...]
    granularity: str = TURN
    grouping: Mapping[str, str] = field(default_factory=dict)
    binarize_threshold: int | None = None

    def __post_init__(self):
        if self.granularity not in (TURN, SESSION):
            raise UsageError(f"granularity must be 'turn' or 'session', got {self.granularity!r}")
        if len(set(self.codes)) != len(self.codes):
            raise UsageError(f"duplicate codes in label space {self.task!r}")
        if self.binarize_threshold is not None and self.granularity != SESSION:
            raise UsageError("binarization applies only to session-level scales")
        grouping = {c: c for c in self.codes}
        for raw, group in dict(self.grouping).items():
            if group not in grouping:
                raise UsageError(f"raw code {raw!r} maps to unknown group {group!r}")
            grouping[raw] = group
        object.__setattr__(self, "codes", tuple(self.codes))
        object.__setattr__(self, "grouping", grouping)

    @property
    def size(self) -> int:
        return len(self.codes)

    def encode(self, raw: Mapping[str, int | float]) -> np.ndarray:
        """Map a raw ``{code: value}`` dict to the ordered bit vector."""
        bits = np.zeros(self.size, dtype=np.int8)
        index = {c: i for i, c in enumerate(self.codes)}
        for code, value in raw.items():
            group = self.grouping.get(code)
            if group is None:
                raise DataError(f"unknown code {code!r} for task {self.task!r}")
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                raise DataError(f"value for code {code!r} must be numeric, got {value!r}")
            if self.binarize_threshold is not None:
                on = value >= self.binarize_threshold
            else:
                if value not in (0, 1):
                    raise DataError(f"code {code!r} has non-binary value {value!r}")
                on = value == 1
            if on:
                bits[index[group]] = 1
        return bits

    def to_json(self) -> dict:
        extra = {raw: g for raw, g in self.grouping.items() if raw != g}
        return {
            "task": self.task,
            "granularity": self.granularity,
            "codes": list(self.codes),
            "grouping": dict(sorted(extra.items())),
            "binarize_threshold": self.binarize_threshold,
        }

    @classmethod
    def from_json(cls, obj: Mapping) -> "LabelSpace":
        try:
            return cls(
                task=obj["task"],
                codes=tuple(obj["codes"]),
                granularity=obj.get("granularity", TURN),
                grouping=obj.get("grouping") or {},
                binarize_threshold=obj.get("binarize_threshold"),
            )
        except KeyError as exc:
            raise UsageError(f"label space is missing field {exc}") from None


def load_label_space(path: str | Path) -> LabelSpace:
    with open(path, encoding="utf-8") as fh:
        return LabelSpace.from_json(json.load(fh))


@dataclass(frozen=True)
class Turn:
    role: str
    words: tuple[str, ...]
    labels: np.ndarray | None = None
    raw_labels: Mapping | None = None


@dataclass(frozen=True)
class Session:
    session_id: str
    task: str
    turns: tuple[Turn, ...]
    labels: np.ndarray | None = None
    raw_labels: Mapping | None = None

    @property
    def n_turns(self) -> int:
        return len(self.turns)


@dataclass(frozen=True)
class Corpus:
    space: LabelSpace
    sessions: tuple[Session, ...] = ()

    def __len__(self) -> int:
        return len(self.sessions)

    def __iter__(self) -> Iterator[Session]:
        return iter(self.sessions)

    @property
    def task(self) -> str:
        return self.space.task

    @property
    def n_turns(self) -> int:
        return sum(s.n_turns for s in self.sessions)

    @property
    def n_words(self) -> int:
        return sum(len(t.words) for s in self.sessions for t in s.turns)

    def subset(self, indices: Iterable[int]) -> "Corpus":
        return Corpus(self.space, tuple(self.sessions[i] for i in indices))

    def turn_labels(self) -> np.ndarray:
        """Per-turn label matrix in corpus order; session labels broadcast to turns."""
        rows = []
        for s in self.sessions:
            for t in s.turns:
                rows.append(s.labels if self.space.granularity == SESSION else t.labels)
        if not rows:
            return np.zeros((0, self.space.size), dtype=np.int8)
        return np.stack(rows).astype(np.int8)

    def session_labels(self) -> np.ndarray:
        if self.space.granularity != SESSION:
            raise UsageError(f"task {self.task!r} is not session-labeled")
        if not self.sessions:
            return np.zeros((0, self.space.size), dtype=np.int8)
        return np.stack([s.labels for s in self.sessions]).astype(np.int8)


# ---------------------------------------------------------------------------
# JSON lines


def tokenize(words: Sequence[str]) -> tuple[str, ...]:
    """Lowercase and whitespace-split; punctuation is kept."""
    out: list[str] = []
    for w in words:
        if not isinstance(w, str):
            raise DataError(f"word {w!r} is not a string")
        out.extend(w.lower().split())
    return tuple(out)


def _parse_session(obj, space: LabelSpace, dropped: list[int]) -> Session | None:
    if not isinstance(obj, dict):
        raise DataError("session record must be a JSON object")
    for key in ("session_id", "task", "turns"):
        if key not in obj:
            raise DataError(f"missing field {key!r}")
    if obj["task"] != space.task:
        raise DataError(f"session task {obj['task']!r} does not match label space {space.task!r}")
    session_level = space.granularity == SESSION
    raw_session = obj.get("session_labels")
    if session_level and raw_session is None:
        raise DataError(f"session {obj['session_id']!r} lacks session_labels for session-level task")
    if not session_level and raw_session is not None:
        raise DataError(f"session {obj['session_id']!r} has session_labels but task is turn-level")
    turns = []
    for t in obj["turns"]:
        if not isinstance(t, dict) or "speaker" not in t or "words" not in t:
            raise DataError("turn must be an object with 'speaker' and 'words'")
        if t["speaker"] not in ROLE_ALIASES:
            raise DataError(f"unknown speaker role {t['speaker']!r}")
        words = tokenize(t["words"])
        if not words:
            dropped[0] += 1
            continue
        raw = t.get("labels")
        if session_level:
            bits = None
        else:
            if raw is None:
                raise DataError(f"turn in session {obj['session_id']!r} lacks labels for turn-level task")
            bits = space.encode(raw)
        turns.append(Turn(t["speaker"], words, bits, None if raw is None else dict(raw)))
    if not turns:
        log.warning("session %r has no non-empty turns; skipped", obj["session_id"])
        return None
    labels = space.encode(raw_session) if session_level else None
    return Session(str(obj["session_id"]), obj["task"], tuple(turns), labels,
                   None if raw_session is None else dict(raw_session))


def parse_corpus_lines(lines: Iterable[str], space: LabelSpace) -> Corpus:
    sessions = []
    dropped = [0]
    for number, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise CorpusParseError(f"invalid JSON: {exc.msg}", number) from None
        try:
            session = _parse_session(obj, space, dropped)
        except DataError as exc:
            raise DataError(f"line {number}: {exc}") from None
        if session is not None:
            sessions.append(session)
    if dropped[0]:
        log.info("dropped %d empty turns", dropped[0])
    if not sessions:
        log.warning("corpus for task %r is empty", space.task)
    return Corpus(space, tuple(sessions))


def load_corpus(path: str | Path, space: LabelSpace) -> Corpus:
    with open(path, encoding="utf-8") as fh:
        return parse_corpus_lines(fh, space)


def session_to_json(session: Session) -> dict:
    return {
        "session_id": session.session_id,
        "task": session.task,
        "session_labels": None if session.raw_labels is None else dict(session.raw_labels),
        "turns": [
            {
                "speaker": t.role,
                "words": list(t.words),
                "labels": None if t.raw_labels is None else dict(t.raw_labels),
            }
            for t in session.turns
        ],
    }


def dump_corpus_lines(corpus: Corpus) -> str:
    return "".join(json.dumps(session_to_json(s), ensure_ascii=False) + "\n" for s in corpus.sessions)


def write_corpus(corpus: Corpus, path: str | Path) -> None:
    Path(path).write_text(dump_corpus_lines(corpus), encoding="utf-8")
