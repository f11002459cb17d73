"""Turn-level samples, context windows and deterministic shuffling."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ..corpus import Corpus
from ..encoders import window_indices


@dataclass
class Batch:
    """Everything an encoder needs for one batch of target turns."""

    words: list[tuple[str, ...]]  # distinct turns referenced by the windows
    roles: list[str]
    windows: np.ndarray  # (B, 2C+1) rows into words/roles, -1 = padding
    labels: np.ndarray  # (B, L)
    samples: np.ndarray  # (B,) global sample indices

    def __len__(self) -> int:
        return len(self.samples)


class TurnIndex:
    """Flat view of a corpus: sample ``k`` is the ``k``-th turn in corpus order."""

    def __init__(self, corpus: Corpus):
        self.corpus = corpus
        self.session_of: list[int] = []
        self.turn_of: list[int] = []
        self.offsets: list[int] = []
        for si, s in enumerate(corpus.sessions):
            self.offsets.append(len(self.session_of))
            for tj in range(s.n_turns):
                self.session_of.append(si)
                self.turn_of.append(tj)
        self.session_of_arr = np.asarray(self.session_of, dtype=np.int64)
        self.labels = corpus.turn_labels()

    def __len__(self) -> int:
        return len(self.session_of)

    def batch(self, samples, radius: int) -> Batch:
        samples = np.asarray(samples, dtype=np.int64)
        sessions = self.corpus.sessions
        global_windows = np.empty((len(samples), 2 * radius + 1), dtype=np.int64)
        for r, k in enumerate(samples):
            si = self.session_of[k]
            local = window_indices(sessions[si].n_turns, [self.turn_of[k]], radius)[0]
            global_windows[r] = np.where(local < 0, -1, local + self.offsets[si])
        needed = np.unique(global_windows[global_windows >= 0])
        windows = np.where(global_windows < 0, -1, np.searchsorted(needed, global_windows)).astype(np.int64)
        words, roles = [], []
        for g in needed:
            turn = sessions[self.session_of[g]].turns[self.turn_of[g]]
            words.append(turn.words)
            roles.append(turn.role)
        return Batch(words, roles, windows, self.labels[samples], samples)


def make_batches(
    n_samples: int, batch_size: int = 32, seed: int | Sequence[int] = 0, epoch: int = 0
) -> list[np.ndarray]:
    """Shuffle sample indices by (seed, epoch) and cut into batches; the last may be short."""
    key = [*seed, epoch] if isinstance(seed, (list, tuple)) else [seed, epoch]
    order = np.random.default_rng(key).permutation(n_samples)
    return [order[i : i + batch_size] for i in range(0, n_samples, batch_size)]


def sequential_batches(n_samples: int, batch_size: int) -> list[np.ndarray]:
    return [np.arange(i, min(i + batch_size, n_samples)) for i in range(0, n_samples, batch_size)]
