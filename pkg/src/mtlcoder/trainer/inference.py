"""Posterior prediction, feature extraction and evaluation of trained checkpoints."""

from __future__ import annotations

import numpy as np

from ..corpus import SESSION, Corpus
from ..errors import DataError, UsageError
from ..evalreport import EvalReport, aggregate_session, threshold
from ..tensor import no_grad
from .batching import TurnIndex, sequential_batches
from .checkpoint import (
    MULTITASK,
    SINGLE,
    SL_BUNDLE,
    Checkpoint,
    multitask_from_checkpoint,
    single_from_checkpoint,
    sl_from_checkpoint,
)
from .loops import EVAL_BATCH


class TrainedModel:
    """Read-only wrapper that rebuilds the network stored in a checkpoint."""

    def __init__(self, ckpt: Checkpoint):
        self.checkpoint = ckpt
        self.config = ckpt.config
        self.spaces = ckpt.spaces
        if ckpt.kind == SINGLE:
            self._nets = [single_from_checkpoint(ckpt)]
        elif ckpt.kind == SL_BUNDLE:
            self._nets = sl_from_checkpoint(ckpt)
        elif ckpt.kind == MULTITASK:
            self._mt = multitask_from_checkpoint(ckpt)
        else:
            raise UsageError(f"checkpoint of kind {ckpt.kind!r} holds no predictor")

    @property
    def tasks(self) -> list[str]:
        return list(self.spaces)

    def _check_task(self, corpus: Corpus) -> str:
        if corpus.task not in self.spaces:
            raise DataError(f"checkpoint covers tasks {self.tasks}, corpus is {corpus.task!r}")
        if tuple(self.spaces[corpus.task].codes) != tuple(corpus.space.codes):
            raise DataError(f"label codes of corpus {corpus.task!r} differ from the checkpoint's")
        return corpus.task

    def posteriors(self, corpus: Corpus) -> np.ndarray:
        """Per-turn posteriors ``(n_turns, L)`` in corpus order."""
        task = self._check_task(corpus)
        index = TurnIndex(corpus)
        C = self.config.context
        L = self.spaces[task].size
        if len(index) == 0:
            return np.zeros((0, L))
        out = []
        with no_grad():
            for ids in sequential_batches(len(index), EVAL_BATCH):
                batch = index.batch(ids, C)
                if self.checkpoint.kind == MULTITASK:
                    out.append(self._mt.forward(task, batch).data)
                else:
                    out.append(np.concatenate([net.forward(batch).data for net in self._nets], axis=1))
        return np.concatenate(out)

    def features(self, corpus: Corpus, which: str = "shared") -> np.ndarray:
        """Frozen multi-task encodings: ``shared`` or the corpus task's ``private`` encoder."""
        if self.checkpoint.kind != MULTITASK:
            raise UsageError("features are only defined for multi-task checkpoints")
        task = self._check_task(corpus)
        index = TurnIndex(corpus)
        out = []
        with no_grad():
            for ids in sequential_batches(len(index), EVAL_BATCH):
                batch = index.batch(ids, self.config.context)
                G_shared, G_private = self._mt.encode(task, batch)
                out.append((G_shared if which == "shared" else G_private).data)
        return np.concatenate(out)

    def predict(self, corpus: Corpus) -> tuple[np.ndarray, np.ndarray]:
        """(reference, predicted) label matrices at the task's granularity."""
        P = self.posteriors(corpus)
        tau = self.config.threshold
        if corpus.space.granularity == SESSION:
            index = TurnIndex(corpus)
            session_post = np.stack([aggregate_session(P[index.session_of_arr == si]) for si in range(len(corpus))]) \
                if len(corpus) else np.zeros((0, corpus.space.size))
            return corpus.session_labels(), threshold(session_post, tau)
        return corpus.turn_labels(), threshold(P, tau)

    def evaluate(self, corpus: Corpus) -> EvalReport:
        ref, pred = self.predict(corpus)
        return EvalReport.from_predictions(
            corpus.task, corpus.space.codes, ref, pred,
            level=corpus.space.granularity, fingerprint=self.config.fingerprint(),
        )


def evaluate_checkpoint(ckpt: Checkpoint, corpus: Corpus) -> EvalReport:
    return TrainedModel(ckpt).evaluate(corpus)
