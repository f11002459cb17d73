"""Skip-gram with negative sampling over the training turns.

Each turn is one sentence. Pairs are (center, context) within a fixed
window radius; pairs of a token with itself are dropped, as are negative
draws that coincide with the positive context, so a corpus with a single
token yields no updates at all. Mini-batches of pairs are applied with
plain SGD at a constant learning rate.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass

import numpy as np

from .corpus import Corpus, build_vocab
from .encoders import PAD_INDEX, UNK_INDEX, EmbeddingTable
from .errors import NumericError, UsageError
from .tensor import Tensor

log = logging.getLogger(__name__)

DESK_DIM = 32


@dataclass(frozen=True)
class SgnsConfig:
    dim: int = 300
    window: int = 5
    negatives: int = 5
    epochs: int = 5
    learning_rate: float = 0.025
    seed: int = 0
    unigram_power: float = 0.75
    batch_pairs: int = 128
    min_count: int = 1

    def validate(self) -> None:
        for name in ("dim", "window", "negatives", "batch_pairs", "min_count"):
            if getattr(self, name) < 1:
                raise UsageError(f"sgns {name} must be positive")
        if self.epochs < 0:
            raise UsageError("sgns epochs must be non-negative")
        if not self.learning_rate > 0 or not self.unigram_power > 0:
            raise UsageError("sgns learning rate and unigram power must be positive")

    def to_json(self) -> dict:
        return asdict(self)


def _sigmoid(x: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def skipgram_pairs(sentences: list[np.ndarray], window: int) -> np.ndarray:
    """All ``(center, context)`` index pairs within ``window``, self-pairs removed: ``(P, 2)``."""
    chunks = []
    for ids in sentences:
        n = len(ids)
        for off in range(1, window + 1):
            if off >= n:
                break
            a, b = ids[:-off], ids[off:]
            chunks.append(np.stack([a, b], axis=1))
            chunks.append(np.stack([b, a], axis=1))
    if not chunks:
        return np.zeros((0, 2), dtype=np.int64)
    pairs = np.concatenate(chunks)
    return pairs[pairs[:, 0] != pairs[:, 1]]


def noise_distribution(counts: np.ndarray, power: float) -> np.ndarray:
    """Unigram counts raised to ``power`` and normalized; zero-count rows get no mass."""
    w = np.asarray(counts, dtype=np.float64) ** power
    total = w.sum()
    if total <= 0:
        raise UsageError("noise distribution needs at least one counted token")
    return w / total


def sgns_loss(W_in: np.ndarray, W_out: np.ndarray, centers, contexts, negatives, neg_mask=None) -> float:
    """Summed negative log-likelihood of a pair batch."""
    v = W_in[centers]
    pos = np.einsum("nd,nd->n", v, W_out[contexts])
    neg = np.einsum("nkd,nd->nk", W_out[negatives], v)
    mask = np.ones(neg.shape) if neg_mask is None else neg_mask
    # -log sigmoid(x) = logaddexp(0, -x)
    return float(np.logaddexp(0.0, -pos).sum() + (mask * np.logaddexp(0.0, neg)).sum())


def sgns_gradients(W_in, W_out, centers, contexts, negatives, neg_mask=None):
    """Per-row gradients ``(d_in (n, d), d_pos (n, d), d_neg (n, k, d))`` of :func:`sgns_loss`."""
    v = W_in[centers]
    u_pos = W_out[contexts]
    u_neg = W_out[negatives]
    mask = np.ones(negatives.shape) if neg_mask is None else neg_mask
    g_pos = _sigmoid(np.einsum("nd,nd->n", v, u_pos)) - 1.0
    g_neg = _sigmoid(np.einsum("nkd,nd->nk", u_neg, v)) * mask
    d_in = g_pos[:, None] * u_pos + np.einsum("nk,nkd->nd", g_neg, u_neg)
    return d_in, g_pos[:, None] * v, g_neg[:, :, None] * v[:, None, :]


def sgns_update(W_in, W_out, centers, contexts, negatives, lr: float, neg_mask=None) -> float:
    """One SGD step in place; returns the batch loss before the step."""
    loss = sgns_loss(W_in, W_out, centers, contexts, negatives, neg_mask)
    d_in, d_pos, d_neg = sgns_gradients(W_in, W_out, centers, contexts, negatives, neg_mask)
    np.add.at(W_in, centers, -lr * d_in)
    np.add.at(W_out, contexts, -lr * d_pos)
    np.add.at(W_out, negatives.ravel(), -lr * d_neg.reshape(-1, W_out.shape[1]))
    return loss


def draw_negatives(rng: np.random.Generator, noise: np.ndarray, contexts: np.ndarray, k: int) -> tuple[np.ndarray, np.ndarray]:
    """``(n, k)`` noise draws plus a mask that drops draws equal to the positive context."""
    neg = rng.choice(len(noise), size=(len(contexts), k), p=noise)
    return neg, (neg != contexts[:, None]).astype(np.float64)


def pretrain_embeddings(corpus: Corpus, cfg: SgnsConfig = SgnsConfig(), token_to_index: dict[str, int] | None = None) -> EmbeddingTable:
    """Input-vector table over the corpus vocabulary (or ``token_to_index`` if given)."""
    cfg.validate()
    if corpus.n_words == 0:
        raise UsageError("cannot pretrain embeddings on an empty corpus")
    vocab = dict(token_to_index) if token_to_index is not None else build_vocab(corpus, cfg.min_count)
    rng = np.random.default_rng(cfg.seed)
    V = len(vocab)
    W_in = rng.uniform(-0.5 / cfg.dim, 0.5 / cfg.dim, size=(V, cfg.dim))
    W_in[PAD_INDEX] = 0.0
    W_out = np.zeros((V, cfg.dim))

    sentences = []
    counts = np.zeros(V)
    for session in corpus.sessions:
        for turn in session.turns:
            ids = np.fromiter((vocab.get(w, UNK_INDEX) for w in turn.words), dtype=np.int64, count=len(turn.words))
            ids = ids[ids != UNK_INDEX]
            np.add.at(counts, ids, 1.0)
            sentences.append(ids)
    pairs = skipgram_pairs(sentences, cfg.window)
    if len(pairs) == 0:
        log.warning("corpus yields no skip-gram pairs; embeddings stay at initialization")
        return EmbeddingTable(vocab, Tensor(W_in, requires_grad=True))
    noise = noise_distribution(counts, cfg.unigram_power)

    for epoch in range(cfg.epochs):
        order = rng.permutation(len(pairs))
        total = 0.0
        for start in range(0, len(order), cfg.batch_pairs):
            batch = pairs[order[start : start + cfg.batch_pairs]]
            neg, mask = draw_negatives(rng, noise, batch[:, 1], cfg.negatives)
            total += sgns_update(W_in, W_out, batch[:, 0], batch[:, 1], neg, cfg.learning_rate, mask)
        if not np.isfinite(W_in).all():
            raise NumericError(f"sgns diverged in epoch {epoch}")
        log.info("sgns epoch %d: mean pair loss %.4f", epoch + 1, total / len(pairs))
    assert not W_in[PAD_INDEX].any()
    return EmbeddingTable(vocab, Tensor(W_in, requires_grad=True))
