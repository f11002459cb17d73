"""Loss functions and inverse-frequency multi-label sample weights."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import tensor as tn
from .errors import DimensionError, UsageError
from .tensor import Tensor

log = logging.getLogger(__name__)

CLIP_EPS = 1e-7
DEFAULT_LAMBDA = 0.05
DEFAULT_GAMMA = 0.01


def _as_label_matrix(Y) -> np.ndarray:
    Y = np.asarray(Y, dtype=np.float64)
    return Y.reshape(1, -1) if Y.ndim == 1 else Y


def bce_per_sample(Y, Yhat: Tensor) -> Tensor:
    """Clipped binary cross entropy summed over labels; one value per row."""
    Y = _as_label_matrix(Y)
    if Yhat.ndim == 1:
        Yhat = tn.reshape(Yhat, (1, -1))
    if Y.shape != Yhat.shape:
        raise UsageError(f"label shape {Y.shape} does not match posterior shape {Yhat.shape}")
    p = tn.clip(Yhat, CLIP_EPS, 1.0 - CLIP_EPS)
    ll = tn.log(p) * Y + tn.log(1.0 - p) * (1.0 - Y)
    return -tn.sum(ll, axis=1)


def multilabel_bce(Y, Yhat: Tensor) -> Tensor:
    """-sum_l [Y log Yhat + (1 - Y) log(1 - Yhat)], summed over rows when batched."""
    return tn.sum(bce_per_sample(Y, Yhat))


# ---------------------------------------------------------------------------
# sample weights


@dataclass(frozen=True)
class SampleWeightTable:
    """Per-label counts over the training split and the derived positive ratios.

    ``ratios[l]`` is #negatives / #positives of label ``l``; a label with no
    positives gets the number of training samples instead.
    """

    positives: np.ndarray
    negatives: np.ndarray
    ratios: np.ndarray

    @property
    def n_labels(self) -> int:
        return len(self.ratios)

    def weights(self, Y) -> np.ndarray:
        """s = mean over labels of (ratio if positive else 1), one per row."""
        Y = _as_label_matrix(Y)
        if Y.shape[1] != self.n_labels:
            raise UsageError(f"label sets have {Y.shape[1]} labels, table has {self.n_labels}")
        per_label = np.where(Y > 0.5, self.ratios[None, :], 1.0)
        return per_label.mean(axis=1)


def compute_sample_weights(train_labels) -> SampleWeightTable:
    Y = _as_label_matrix(train_labels)
    if Y.shape[0] == 0:
        raise UsageError("sample weights need a nonempty training split")
    pos = (Y > 0.5).sum(axis=0)
    neg = Y.shape[0] - pos
    ratios = np.empty(Y.shape[1])
    for l in range(Y.shape[1]):
        if pos[l] == 0:
            log.warning("label %d has no positives in the training split; ratio capped at %d", l, Y.shape[0])
            ratios[l] = float(Y.shape[0])
        else:
            ratios[l] = neg[l] / pos[l]
    return SampleWeightTable(pos.astype(np.int64), neg.astype(np.int64), ratios)


def weighted_loss(Y, Yhat: Tensor, weights: np.ndarray | None = None) -> Tensor:
    """sum_i s_i * BCE(Y_i, Yhat_i); unit weights when ``weights`` is None."""
    per = bce_per_sample(Y, Yhat)
    if weights is None:
        return tn.sum(per)
    weights = np.asarray(weights, dtype=np.float64)
    if weights.shape != per.shape:
        raise UsageError(f"{weights.shape[0]} weights for {per.shape[0]} samples")
    return tn.sum(per * weights)


# ---------------------------------------------------------------------------
# adversarial multi-task pieces


def task_discriminator(G_shared: Tensor, U_T: Tensor, b_T: Tensor) -> Tensor:
    """sigmoid(G U_T + b_T); ``U_T`` is ``(width, 1)``, result is ``(B,)`` (or scalar for a vector input)."""
    single = G_shared.ndim == 1
    G = tn.reshape(G_shared, (1, -1)) if single else G_shared
    if U_T.ndim != 2 or U_T.shape != (G.shape[1], 1) or b_T.size != 1:
        raise DimensionError(f"discriminator shapes G={G.shape} U_T={U_T.shape} b_T={b_T.shape}")
    out = tn.sigmoid(G @ U_T + tn.reshape(b_T, (1, 1)))
    out = tn.reshape(out, (G.shape[0],))
    return out[0] if single else out


def task_loss(T, That: Tensor) -> Tensor:
    """Binary cross entropy between task indicators and discriminator posteriors, summed."""
    T = np.asarray(T, dtype=np.float64).reshape(-1)
    That = tn.reshape(That, (-1,)) if That.ndim != 1 else That
    if T.shape != That.shape:
        raise UsageError(f"{T.shape[0]} task labels for {That.shape[0]} posteriors")
    return multilabel_bce(T.reshape(-1, 1), tn.reshape(That, (-1, 1)))


def diff_loss(G_shared: Tensor, G_tasks: Tensor | Sequence[Tensor]) -> Tensor:
    """sum_m ||G_shared^T G_m||_F^2 over batch-stacked rows."""
    if isinstance(G_tasks, Tensor):
        G_tasks = [G_tasks]
    total = None
    for G in G_tasks:
        if G.ndim != 2 or G_shared.ndim != 2 or G.shape[0] != G_shared.shape[0]:
            raise DimensionError(f"diff_loss: batch mismatch {G_shared.shape} vs {G.shape}")
        term = tn.sq_frobenius(G_shared.T @ G)
        total = term if total is None else total + term
    if total is None:
        raise UsageError("diff_loss needs at least one task encoding")
    return total


def total_multitask_loss(
    task_losses: Sequence,
    E_task,
    E_diff,
    lam: float = DEFAULT_LAMBDA,
    gamma: float = DEFAULT_GAMMA,
):
    """sum_m E_m + lam * E_task + gamma * E_diff (works on tensors or floats)."""
    if not task_losses:
        raise UsageError("need at least one task loss")
    total = task_losses[0]
    for e in task_losses[1:]:
        total = total + e
    if isinstance(total, Tensor) or isinstance(E_task, Tensor) or isinstance(E_diff, Tensor):
        return tn.as_tensor(total) + tn.scale(tn.as_tensor(E_task), lam) + tn.scale(tn.as_tensor(E_diff), gamma)
    return total + lam * E_task + gamma * E_diff
