"""Word and turn encoders.

Shapes follow a row-per-sample layout: a batch of ``n`` inputs of width
``d`` is an ``(n, d)`` tensor. Variable-length word sequences are padded on
the right and masked, so every sequence is encoded at its true length:
masked steps carry the forward state through unchanged and keep the
backward state at zero until the sequence's last real token.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from . import tensor as tn
from .errors import DataError, DimensionError, UsageError
from .tensor import Tensor

PAD = "<pad>"
UNK = "<unk>"
PAD_INDEX = 0
UNK_INDEX = 1

ROLES = ("T", "C")
ROLE_ALIASES = {"T": "T", "therapist": "T", "C": "C", "client": "C"}


def role_index(role: str) -> int:
    try:
        return ROLES.index(ROLE_ALIASES[role])
    except KeyError:
        raise DataError(f"unknown speaker role {role!r}") from None


# ---------------------------------------------------------------------------
# embeddings


@dataclass
class EmbeddingTable:
    """Token -> row map plus the embedding matrix (row 0 padding, row 1 unknown)."""

    token_to_index: dict[str, int]
    matrix: Tensor

    def __post_init__(self):
        if self.token_to_index.get(PAD) != PAD_INDEX or self.token_to_index.get(UNK) != UNK_INDEX:
            raise UsageError("token map must reserve index 0 for padding and 1 for unknown")
        if self.matrix.shape[0] != len(self.token_to_index):
            raise DimensionError(
                f"embedding matrix has {self.matrix.shape[0]} rows for {len(self.token_to_index)} tokens"
            )

    @property
    def vocab_size(self) -> int:
        return self.matrix.shape[0]

    @property
    def dim(self) -> int:
        return self.matrix.shape[1]

    def index(self, token: str) -> int:
        return self.token_to_index.get(token, UNK_INDEX)

    def indices(self, words: Sequence[str]) -> np.ndarray:
        get = self.token_to_index.get
        return np.fromiter((get(w, UNK_INDEX) for w in words), dtype=np.int64, count=len(words))

    @classmethod
    def initialize(cls, token_to_index: Mapping[str, int], dim: int, rng: np.random.Generator) -> "EmbeddingTable":
        matrix = tn.glorot_uniform_init(len(token_to_index), dim, rng, name="embedding")
        matrix.data[PAD_INDEX] = 0.0
        return cls(dict(token_to_index), matrix)


# ---------------------------------------------------------------------------
# LSTM


@dataclass
class LstmParams:
    """Fused gate weights; columns are the input, forget, output and candidate blocks.

    ``W`` maps the concatenation ``[x ; h_prev]`` (width input_dim + hidden_dim)
    to the four gate pre-activations (width 4 * hidden_dim).
    """

    W: Tensor
    b: Tensor
    input_dim: int = field(init=False)
    hidden_dim: int = field(init=False)

    def __post_init__(self):
        if self.W.ndim != 2 or self.b.ndim != 1 or self.W.shape[1] % 4 or self.b.shape[0] != self.W.shape[1]:
            raise DimensionError(f"inconsistent LSTM shapes W={self.W.shape} b={self.b.shape}")
        self.hidden_dim = self.W.shape[1] // 4
        self.input_dim = self.W.shape[0] - self.hidden_dim
        if self.input_dim <= 0:
            raise DimensionError(f"LSTM weight {self.W.shape} leaves no room for an input")

    @classmethod
    def initialize(
        cls, input_dim: int, hidden_dim: int, rng: np.random.Generator, forget_bias: float = 1.0
    ) -> "LstmParams":
        W = tn.glorot_uniform_init(input_dim + hidden_dim, 4 * hidden_dim, rng)
        b = np.zeros(4 * hidden_dim)
        b[hidden_dim : 2 * hidden_dim] = forget_bias
        return cls(W, Tensor(b, requires_grad=True))

    @classmethod
    def zeros(cls, input_dim: int, hidden_dim: int) -> "LstmParams":
        return cls(tn.zeros_param(input_dim + hidden_dim, 4 * hidden_dim), tn.zeros_param(4 * hidden_dim))

    def parameters(self, prefix: str) -> dict[str, Tensor]:
        return {f"{prefix}.W": self.W, f"{prefix}.b": self.b}


def lstm_step(params: LstmParams, x: Tensor, h_prev: Tensor, c_prev: Tensor) -> tuple[Tensor, Tensor]:
    """One LSTM recurrence step on a ``(n, input_dim)`` batch."""
    if x.ndim != 2 or x.shape[1] != params.input_dim:
        raise DimensionError(f"lstm_step: input shape {x.shape}, expected (n, {params.input_dim})")
    if h_prev.shape != (x.shape[0], params.hidden_dim) or c_prev.shape != h_prev.shape:
        raise DimensionError(f"lstm_step: state shapes {h_prev.shape}/{c_prev.shape} do not match the batch")
    hc = tn.lstm_cell(x, h_prev, c_prev, params.W, params.b)
    hd = params.hidden_dim
    return hc[:, :hd], hc[:, hd:]


def run_lstm(
    params: LstmParams, steps: Sequence[Tensor], mask: np.ndarray | None = None, reverse: bool = False
) -> list[Tensor]:
    """Hidden states for every step, in input order.

    ``mask`` is ``(n, T)`` with 1 for real positions; padding positions keep
    the previous state.
    """
    if not steps:
        raise UsageError("run_lstm needs at least one step")
    n = steps[0].shape[0]
    h = Tensor(np.zeros((n, params.hidden_dim)))
    c = Tensor(np.zeros((n, params.hidden_dim)))
    order = range(len(steps) - 1, -1, -1) if reverse else range(len(steps))
    out: list[Tensor | None] = [None] * len(steps)
    for t in order:
        h_new, c_new = lstm_step(params, steps[t], h, c)
        if mask is None or mask[:, t].all():
            h, c = h_new, c_new
        else:
            m = mask[:, t : t + 1].astype(np.float64)
            keep = 1.0 - m
            h = h_new * m + h * keep
            c = c_new * m + c * keep
        out[t] = h
    return out


def bilstm_mean(
    fwd: LstmParams, bwd: LstmParams, steps: Sequence[Tensor], mask: np.ndarray | None = None
) -> Tensor:
    """Run both directions, concatenate per step, average over real steps: ``(n, 2h)``."""
    if fwd.input_dim != bwd.input_dim:
        raise DimensionError("forward and backward LSTMs disagree on input width")
    hf = run_lstm(fwd, steps, mask)
    hb = run_lstm(bwd, steps, mask, reverse=True)
    if mask is None:
        total_f, total_b = hf[0], hb[0]
        for t in range(1, len(steps)):
            total_f = total_f + hf[t]
            total_b = total_b + hb[t]
        return tn.scale(tn.concat([total_f, total_b], axis=1), 1.0 / len(steps))
    lengths = mask.sum(axis=1).astype(np.float64)
    if np.any(lengths == 0):
        raise UsageError("every sequence needs at least one real step")
    # masked steps already hold a copy of a neighbouring state, so zero them before summing
    total_f = total_b = None
    for t in range(len(steps)):
        m = mask[:, t]
        f_t, b_t = hf[t], hb[t]
        if not m.all():
            mt = m[:, None].astype(np.float64)
            f_t, b_t = f_t * mt, b_t * mt
        total_f = f_t if total_f is None else total_f + f_t
        total_b = b_t if total_b is None else total_b + b_t
    return tn.concat([total_f, total_b], axis=1) * (1.0 / lengths)[:, None]


# ---------------------------------------------------------------------------
# word encoder


def pad_sequences(index_lists: Sequence[np.ndarray]) -> tuple[np.ndarray, np.ndarray]:
    """Right-pad to ``(n, T)`` id and mask arrays."""
    if any(len(ix) == 0 for ix in index_lists):
        raise UsageError("cannot encode an empty word sequence")
    T = max(len(ix) for ix in index_lists)
    ids = np.full((len(index_lists), T), PAD_INDEX, dtype=np.int64)
    mask = np.zeros((len(index_lists), T), dtype=bool)
    for r, ix in enumerate(index_lists):
        ids[r, : len(ix)] = ix
        mask[r, : len(ix)] = True
    return ids, mask


def encode_words_batch(
    table: EmbeddingTable, fwd: LstmParams, bwd: LstmParams, sequences: Sequence[Sequence[str]]
) -> Tensor:
    """Mean-pooled BiLSTM encoding of each token sequence: ``(n, 2 * hidden)``."""
    if fwd.input_dim != table.dim:
        raise DimensionError(f"word LSTM expects width {fwd.input_dim}, embeddings are {table.dim}")
    ids, mask = pad_sequences([table.indices(s) for s in sequences])
    n, T = ids.shape
    flat = tn.gather_rows(table.matrix, ids.T.reshape(-1))
    steps = [flat[t * n : (t + 1) * n] for t in range(T)]
    return bilstm_mean(fwd, bwd, steps, None if mask.all() else mask)


def encode_words(table: EmbeddingTable, fwd: LstmParams, bwd: LstmParams, words: Sequence[str]) -> Tensor:
    """Encode a single turn; returns a ``(2 * hidden,)`` vector."""
    if len(words) == 0:
        raise UsageError("cannot encode an empty word sequence")
    return encode_words_batch(table, fwd, bwd, [words])[0]


# ---------------------------------------------------------------------------
# role projection and turn context


def role_onehot(roles: Sequence[str]) -> np.ndarray:
    out = np.zeros((len(roles), len(ROLES)))
    for r, role in enumerate(roles):
        out[r, role_index(role)] = 1.0
    return out


def role_projection(role, U_X: Tensor, b_X: Tensor) -> Tensor:
    """Affine map of one-hot roles.

    ``role`` is a single role string (returns a vector) or a sequence of them
    (returns one row per role). ``U_X`` is ``(2, proj_dim)``: row ``k`` is
    the projection of role ``k`` before the bias.
    """
    if U_X.ndim != 2 or U_X.shape[0] != len(ROLES) or b_X.shape != (U_X.shape[1],):
        raise DimensionError(f"role projection shapes U_X={U_X.shape} b_X={b_X.shape}")
    if isinstance(role, str):
        return (Tensor(role_onehot([role])) @ U_X + b_X)[0]
    return Tensor(role_onehot(role)) @ U_X + b_X


def window_indices(n_turns: int, targets: Sequence[int], radius: int) -> np.ndarray:
    """``(len(targets), 2C+1)`` turn indices of each window; -1 beyond session edges."""
    if radius < 0:
        raise UsageError(f"context radius must be >= 0, got {radius}")
    offsets = np.arange(-radius, radius + 1)
    idx = np.asarray(targets, dtype=np.int64)[:, None] + offsets[None, :]
    idx[(idx < 0) | (idx >= n_turns)] = -1
    return idx


def gather_windows(X: Tensor, windows: np.ndarray) -> list[Tensor]:
    """One ``(B, width)`` tensor per window slot; index -1 yields a zero row."""
    padded = tn.concat([X, Tensor(np.zeros((1, X.shape[1])))], axis=0)
    pad_row = X.shape[0]
    safe = np.where(windows < 0, pad_row, windows)
    return [tn.gather_rows(padded, safe[:, k]) for k in range(windows.shape[1])]


def encode_turn_context(window: Sequence[Tensor], fwd: LstmParams, bwd: LstmParams, radius: int | None = None) -> Tensor:
    """Mean-pooled BiLSTM over the 2C+1 turn vectors of a window.

    Each element of ``window`` is either a ``(width,)`` vector (one target
    turn) or a ``(B, width)`` batch of slot vectors.
    """
    if radius is not None:
        if radius < 0:
            raise UsageError(f"context radius must be >= 0, got {radius}")
        if len(window) != 2 * radius + 1:
            raise UsageError(f"window of {len(window)} turns does not match radius {radius}")
    single = window[0].ndim == 1
    steps = [tn.reshape(w, (1, -1)) if single else w for w in window]
    out = bilstm_mean(fwd, bwd, steps)
    return out[0] if single else out


# ---------------------------------------------------------------------------
# full turn encoder


@dataclass
class TurnEncoder:
    """Embedding -> word BiLSTM -> [H ; role projection] -> context BiLSTM."""

    embedding: EmbeddingTable
    word_fwd: LstmParams
    word_bwd: LstmParams
    role_U: Tensor
    role_b: Tensor
    turn_fwd: LstmParams
    turn_bwd: LstmParams
    embeddings_trainable: bool = True

    @classmethod
    def initialize(
        cls,
        token_to_index: Mapping[str, int],
        embedding_dim: int,
        hidden_dim: int,
        turn_hidden_dim: int,
        role_proj_dim: int,
        rng: np.random.Generator,
        embedding: EmbeddingTable | None = None,
        embeddings_trainable: bool = True,
    ) -> "TurnEncoder":
        if embedding is None:
            embedding = EmbeddingTable.initialize(token_to_index, embedding_dim, rng)
        elif embedding.dim != embedding_dim:
            raise DimensionError(f"pretrained embeddings are {embedding.dim}-dim, config asks for {embedding_dim}")
        x_dim = 2 * hidden_dim + role_proj_dim
        return cls(
            embedding=embedding,
            word_fwd=LstmParams.initialize(embedding_dim, hidden_dim, rng),
            word_bwd=LstmParams.initialize(embedding_dim, hidden_dim, rng),
            role_U=tn.glorot_uniform_init(len(ROLES), role_proj_dim, rng),
            role_b=tn.zeros_param(role_proj_dim),
            turn_fwd=LstmParams.initialize(x_dim, turn_hidden_dim, rng),
            turn_bwd=LstmParams.initialize(x_dim, turn_hidden_dim, rng),
            embeddings_trainable=embeddings_trainable,
        )

    @property
    def output_dim(self) -> int:
        return 2 * self.turn_fwd.hidden_dim

    @property
    def turn_vector_dim(self) -> int:
        return 2 * self.word_fwd.hidden_dim + self.role_U.shape[1]

    def parameters(self, prefix: str = "encoder") -> dict[str, Tensor]:
        params: dict[str, Tensor] = {}
        params[f"{prefix}.embedding"] = self.embedding.matrix
        params.update(self.word_fwd.parameters(f"{prefix}.word_fwd"))
        params.update(self.word_bwd.parameters(f"{prefix}.word_bwd"))
        params[f"{prefix}.role.U"] = self.role_U
        params[f"{prefix}.role.b"] = self.role_b
        params.update(self.turn_fwd.parameters(f"{prefix}.turn_fwd"))
        params.update(self.turn_bwd.parameters(f"{prefix}.turn_bwd"))
        return params

    def trainable_parameters(self, prefix: str = "encoder") -> dict[str, Tensor]:
        params = self.parameters(prefix)
        if not self.embeddings_trainable:
            params.pop(f"{prefix}.embedding")
        return params

    def turn_vectors(self, words: Sequence[Sequence[str]], roles: Sequence[str]) -> Tensor:
        H = encode_words_batch(self.embedding, self.word_fwd, self.word_bwd, words)
        return tn.concat([H, role_projection(roles, self.role_U, self.role_b)], axis=1)

    def encode(self, words: Sequence[Sequence[str]], roles: Sequence[str], windows: np.ndarray) -> Tensor:
        """Context encodings ``(B, output_dim)``.

        ``words``/``roles`` describe the distinct turns needed by the batch;
        ``windows`` is ``(B, 2C+1)`` indices into them (-1 for padding).
        """
        X = self.turn_vectors(words, roles)
        return encode_turn_context(gather_windows(X, windows), self.turn_fwd, self.turn_bwd)
