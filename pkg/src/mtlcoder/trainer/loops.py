"""Training loops with early stopping on validation loss."""

from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass
from typing import Callable, Iterable, Iterator, Mapping, TextIO

import numpy as np

from .. import tensor as tn
from ..corpus import Corpus, build_vocab, split_train_val
from ..corpus.model import Corpus as _Corpus
from ..encoders import PAD_INDEX, EmbeddingTable, TurnEncoder
from ..errors import ConfigError, NumericError, TrainingError
from ..objectives import compute_sample_weights, weighted_loss
from ..tensor import AdamState, Tensor, adam_step, backward, no_grad
from .batching import TurnIndex, make_batches, sequential_batches
from .checkpoint import (
    Checkpoint,
    multitask_to_checkpoint,
    private_encoder_from,
    single_to_checkpoint,
    sl_to_checkpoint,
)
from .config import ML, MLMT, SL, ModelConfig
from .networks import MultiTaskNet, Predictor, SingleTaskNet

log = logging.getLogger(__name__)

EVAL_BATCH = 256


class MetricsLog:
    """One JSON object per epoch on a text stream."""

    def __init__(self, stream: TextIO | None = None, **context):
        self.stream = stream
        self.context = context
        self.records: list[dict] = []

    def write(self, **record) -> None:
        rec = {**self.context, **record}
        self.records.append(rec)
        if self.stream is not None:
            self.stream.write(json.dumps(rec, sort_keys=True) + "\n")
            self.stream.flush()


def _snapshot(params: Mapping[str, Tensor]) -> dict[str, np.ndarray]:
    return {n: p.data.copy() for n, p in params.items()}


def _restore(params: Mapping[str, Tensor], snap: Mapping[str, np.ndarray]) -> None:
    for n, p in params.items():
        p.data = snap[n].copy()


def _mask_padding_rows(grads: dict[str, np.ndarray]) -> None:
    for name, g in grads.items():
        if name.endswith("embedding"):
            g[PAD_INDEX] = 0.0


def fit(
    params: Mapping[str, Tensor],
    step_losses: Callable[[int], Iterable[Tensor]],
    val_loss: Callable[[], float],
    config: ModelConfig,
    learning_rate: float,
    metrics: MetricsLog | None = None,
) -> dict:
    """Generic early-stopping loop; leaves ``params`` at the best-validation values.

    ``step_losses(epoch)`` yields one scalar loss per optimizer step.
    Returns training metadata (epochs run, best epoch, validation history).
    """
    metrics = metrics or MetricsLog()
    state = AdamState(learning_rate=learning_rate)
    best_val = val_loss()
    if not np.isfinite(best_val):
        raise TrainingError("non-finite validation loss at initialization", epoch=0)
    best = _snapshot(params)
    best_epoch = 0
    history = [best_val]
    metrics.write(epoch=0, train_loss=None, val_loss=best_val, wall_time=0.0)
    wait = 0
    epochs_run = 0
    start = time.perf_counter()
    for epoch in range(1, config.max_epochs + 1):
        train_total = 0.0
        b = -1
        try:
            for b, loss in enumerate(step_losses(epoch)):
                value = loss.item()
                if not np.isfinite(value):
                    raise TrainingError("non-finite training loss", epoch=epoch, batch=b)
                grads = backward(loss, params)
                _mask_padding_rows(grads)
                adam_step(params, grads, state)
                train_total += value
        except NumericError as exc:
            raise TrainingError(f"numeric failure: {exc}", epoch=epoch, batch=b + 1) from exc
        try:
            current = val_loss()
        except NumericError as exc:
            raise TrainingError(f"numeric failure in validation: {exc}", epoch=epoch) from exc
        if not np.isfinite(current):
            raise TrainingError("non-finite validation loss", epoch=epoch)
        epochs_run = epoch
        history.append(current)
        metrics.write(epoch=epoch, train_loss=train_total, val_loss=current, wall_time=time.perf_counter() - start)
        if current < best_val:
            best_val, best, best_epoch, wait = current, _snapshot(params), epoch, 0
        else:
            wait += 1
            if wait >= config.patience:
                break
    _restore(params, best)
    return {"epochs_run": epochs_run, "best_epoch": best_epoch, "best_val_loss": best_val, "val_history": history}


# ---------------------------------------------------------------------------
# losses over whole splits


def split_loss(forward: Callable, index: TurnIndex, radius: int, labels: np.ndarray | None = None) -> float:
    """Unweighted summed BCE of ``forward(batch)`` over every sample of ``index``."""
    total = 0.0
    with no_grad():
        for ids in sequential_batches(len(index), EVAL_BATCH):
            batch = index.batch(ids, radius)
            Y = batch.labels if labels is None else labels[ids]
            total += weighted_loss(Y, forward(batch)).item()
    return total


def _weights_for(index: TurnIndex, labels: np.ndarray, enabled: bool) -> np.ndarray | None:
    if not enabled:
        return None
    return compute_sample_weights(labels).weights(labels)


def _prepare_split(corpus: Corpus, val: Corpus | None, config: ModelConfig) -> tuple[Corpus, Corpus]:
    if val is None:
        return split_train_val(corpus, config.val_fraction, seed=config.seed)
    return corpus, val


# ---------------------------------------------------------------------------
# single task


def _train_net(
    net: SingleTaskNet,
    train_idx: TurnIndex,
    val_idx: TurnIndex,
    train_labels: np.ndarray,
    val_labels: np.ndarray,
    config: ModelConfig,
    batch_seed,
    metrics: MetricsLog | None,
) -> dict:
    weights = _weights_for(train_idx, train_labels, config.sample_weighting)
    C = config.context

    def steps(epoch: int) -> Iterator[Tensor]:
        for ids in make_batches(len(train_idx), config.batch_size, batch_seed, epoch):
            batch = train_idx.batch(ids, C)
            yield weighted_loss(train_labels[ids], net.forward(batch), None if weights is None else weights[ids])

    return fit(
        net.trainable_parameters(),
        steps,
        lambda: split_loss(net.forward, val_idx, C, val_labels),
        config,
        config.learning_rate,
        metrics,
    )


def train_single_task(
    corpus: Corpus,
    config: ModelConfig,
    val_corpus: Corpus | None = None,
    embedding: EmbeddingTable | None = None,
    metrics_stream: TextIO | None = None,
) -> Checkpoint:
    """Train an SL bundle or an ML network; returns the best-validation checkpoint."""
    if config.regime == MLMT:
        raise ConfigError("use train_multitask for the ML-MT regime")
    train, val = _prepare_split(corpus, val_corpus, config)
    space = corpus.space
    vocab = dict(embedding.token_to_index) if embedding is not None else build_vocab(corpus, config.min_count)
    train_idx, val_idx = TurnIndex(train), TurnIndex(val)
    config = config.replace(tasks=[space.task])
    meta_common = {"seed": config.seed, "task": space.task, "regime": config.regime}

    if config.regime == ML:
        rng = np.random.default_rng(config.seed)
        net = SingleTaskNet.initialize(config, vocab, space.size, rng, embedding=_copy_table(embedding))
        meta = _train_net(net, train_idx, val_idx, train_idx.labels, val_idx.labels, config, config.seed,
                          MetricsLog(metrics_stream, seed=config.seed, task=space.task))
        return single_to_checkpoint(net, config, space, {**meta_common, **meta})

    nets, runs = [], []
    for k, code in enumerate(space.codes):
        rng = np.random.default_rng([config.seed, k])
        net = SingleTaskNet.initialize(config, vocab, 1, rng, embedding=_copy_table(embedding),
                                       role_dim=config.role_dim(space.size))
        meta = _train_net(net, train_idx, val_idx, train_idx.labels[:, [k]], val_idx.labels[:, [k]], config,
                          [config.seed, k], MetricsLog(metrics_stream, seed=config.seed, task=space.task, label=code))
        nets.append(net)
        runs.append(meta)
    meta = {
        **meta_common,
        "epochs_run": max(r["epochs_run"] for r in runs),
        "best_val_loss": float(np.sum([r["best_val_loss"] for r in runs])),
        "per_label": runs,
    }
    return sl_to_checkpoint(nets, config, space, meta)


def _copy_table(table: EmbeddingTable | None) -> EmbeddingTable | None:
    if table is None:
        return None
    return EmbeddingTable(dict(table.token_to_index), Tensor(table.matrix.data.copy(), requires_grad=True))


# ---------------------------------------------------------------------------
# multi-task


def _joint_vocab(corpora: Iterable[Corpus], min_count: int) -> dict[str, int]:
    sessions = tuple(s for c in corpora for s in c.sessions)
    first = next(iter(corpora))
    return build_vocab(_Corpus(first.space, sessions), min_count)


def build_multitask_net(
    corpus_a: Corpus, corpus_b: Corpus, config: ModelConfig, init_a: Checkpoint | None, init_b: Checkpoint | None,
    rng: np.random.Generator,
) -> MultiTaskNet:
    tasks = [corpus_a.task, corpus_b.task]
    if tasks[0] == tasks[1]:
        raise ConfigError("multi-task training needs two distinct tasks")
    if init_a is None or init_b is None:
        raise ConfigError("ML-MT requires single-task checkpoints to initialize the private encoders")
    private = {}
    for t, ckpt in zip(tasks, (init_a, init_b)):
        if t not in ckpt.spaces:
            raise ConfigError(f"init checkpoint for {t!r} was trained on {sorted(ckpt.spaces)}")
        private[t] = private_encoder_from(ckpt)
    dims = {t: (e.embedding.dim, e.word_fwd.hidden_dim, e.turn_fwd.hidden_dim) for t, e in private.items()}
    if len(set(dims.values())) != 1:
        raise ConfigError(f"private encoder dimensions differ across tasks: {dims}")
    sizes = {corpus_a.space.size, corpus_b.space.size}
    if config.role_proj_dim is None and len(sizes) != 1:
        raise ConfigError("tasks have different label counts; set role_proj_dim for the shared encoder")
    role_dim = config.role_proj_dim or corpus_a.space.size
    shared = TurnEncoder.initialize(
        _joint_vocab([corpus_a, corpus_b], config.min_count),
        embedding_dim=config.embedding_dim,
        hidden_dim=config.word_hidden,
        turn_hidden_dim=config.turn_hidden,
        role_proj_dim=role_dim,
        rng=rng,
        embeddings_trainable=config.train_embeddings,
    )
    predictors = {
        t: Predictor.initialize(shared.output_dim + private[t].output_dim, c.space.size, rng)
        for t, c in zip(tasks, (corpus_a, corpus_b))
    }
    return MultiTaskNet(
        tasks=tasks,
        shared=shared,
        private=private,
        predictors=predictors,
        disc_U=tn.glorot_uniform_init(shared.output_dim, 1, rng),
        disc_b=tn.zeros_param(1),
        lam=config.lam,
        gamma=config.gamma,
    )


def multitask_steps(
    net: MultiTaskNet, indices: Mapping[str, TurnIndex], config: ModelConfig,
    weights: Mapping[str, np.ndarray | None], epoch: int,
) -> Iterator[Tensor]:
    """Alternating schedule: each step takes one batch from every task; shorter tasks cycle."""
    per_task = {
        t: make_batches(len(indices[t]), config.batch_size, [config.seed, k], epoch)
        for k, t in enumerate(net.tasks)
    }
    n_steps = max(len(b) for b in per_task.values())
    for s in range(n_steps):
        batches, w = {}, {}
        for t in net.tasks:
            ids = per_task[t][s % len(per_task[t])]
            batches[t] = indices[t].batch(ids, config.context)
            w[t] = None if weights[t] is None else weights[t][ids]
        yield net.step_loss(batches, w)


def train_multitask(
    corpus_a: Corpus,
    corpus_b: Corpus,
    config: ModelConfig,
    init_a: Checkpoint | None,
    init_b: Checkpoint | None,
    val_a: Corpus | None = None,
    val_b: Corpus | None = None,
    metrics_stream: TextIO | None = None,
) -> Checkpoint:
    """Fine-tune private encoders and train the shared encoder adversarially."""
    config = config.replace(regime=MLMT, tasks=[corpus_a.task, corpus_b.task])
    rng = np.random.default_rng(config.seed)
    net = build_multitask_net(corpus_a, corpus_b, config, init_a, init_b, rng)
    train_a, val_a = _prepare_split(corpus_a, val_a, config)
    train_b, val_b = _prepare_split(corpus_b, val_b, config)
    tr = {net.tasks[0]: TurnIndex(train_a), net.tasks[1]: TurnIndex(train_b)}
    va = {net.tasks[0]: TurnIndex(val_a), net.tasks[1]: TurnIndex(val_b)}
    weights = {t: _weights_for(tr[t], tr[t].labels, config.sample_weighting) for t in net.tasks}

    def val_loss() -> float:
        return float(np.sum([split_loss(lambda b, t=t: net.forward(t, b), va[t], config.context) for t in net.tasks]))

    meta = fit(
        net.trainable_parameters(),
        lambda epoch: multitask_steps(net, tr, config, weights, epoch),
        val_loss,
        config,
        config.finetune_learning_rate,
        MetricsLog(metrics_stream, seed=config.seed, tasks=net.tasks),
    )
    spaces = {corpus_a.task: corpus_a.space, corpus_b.task: corpus_b.space}
    return multitask_to_checkpoint(net, config, spaces, {"seed": config.seed, "regime": MLMT, **meta})
