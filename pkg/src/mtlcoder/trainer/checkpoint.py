"""Binary checkpoint archive and model (de)serialization.

Layout::

    magic "MTLCKPT\\0" | u32 version | u64 header length | JSON header | float64 LE payload

The header carries the config snapshot, label spaces, token maps, training
metadata and a manifest of ``{name, shape, offset, count}`` tensor entries
(offsets in float64 elements from the start of the payload).
"""

from __future__ import annotations

import json
import logging
import os
import struct
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np

from ..corpus import LabelSpace
from ..encoders import EmbeddingTable, LstmParams, TurnEncoder
from ..errors import CheckpointError, ConfigError, DimensionError
from ..tensor import Tensor
from .config import ModelConfig
from .networks import MultiTaskNet, Predictor, SingleTaskNet

log = logging.getLogger(__name__)

MAGIC = b"MTLCKPT\0"
FORMAT_VERSION = 1
_PREFIX = struct.Struct("<IQ")

SINGLE, SL_BUNDLE, MULTITASK, EMBEDDING = "single", "sl", "multitask", "embedding"


@dataclass
class Checkpoint:
    kind: str
    config: ModelConfig | None
    tensors: dict[str, np.ndarray]
    token_maps: dict[str, dict[str, int]] = field(default_factory=dict)
    spaces: dict[str, LabelSpace] = field(default_factory=dict)
    metadata: dict = field(default_factory=dict)
    version: int = FORMAT_VERSION


def save_checkpoint(ckpt: Checkpoint) -> bytes:
    manifest = []
    offset = 0
    for name, arr in ckpt.tensors.items():
        arr = np.asarray(arr, dtype=np.float64)
        manifest.append({"name": name, "shape": list(arr.shape), "offset": offset, "count": int(arr.size)})
        offset += arr.size
    header = {
        "kind": ckpt.kind,
        "config": None if ckpt.config is None else ckpt.config.to_json(),
        "spaces": {t: s.to_json() for t, s in ckpt.spaces.items()},
        "token_maps": ckpt.token_maps,
        "metadata": ckpt.metadata,
        "tensors": manifest,
    }
    blob = json.dumps(header, sort_keys=True, ensure_ascii=False, separators=(",", ":")).encode("utf-8")
    payload = b"".join(np.ascontiguousarray(a, dtype="<f8").tobytes() for a in ckpt.tensors.values())
    return MAGIC + _PREFIX.pack(ckpt.version, len(blob)) + blob + payload


def load_checkpoint(data: bytes) -> Checkpoint:
    if len(data) < len(MAGIC) + _PREFIX.size or data[: len(MAGIC)] != MAGIC:
        raise CheckpointError("not a checkpoint archive (bad magic or truncated prefix)")
    version, header_len = _PREFIX.unpack_from(data, len(MAGIC))
    if version != FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint format version {version} (expected {FORMAT_VERSION})")
    start = len(MAGIC) + _PREFIX.size
    if len(data) < start + header_len:
        raise CheckpointError("truncated checkpoint header")
    try:
        header = json.loads(data[start : start + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"corrupt checkpoint header: {exc}") from None
    payload = memoryview(data)[start + header_len :]
    total = sum(e["count"] for e in header["tensors"])
    if len(payload) != 8 * total:
        raise CheckpointError(f"payload holds {len(payload)} bytes, manifest expects {8 * total}")
    tensors: dict[str, np.ndarray] = {}
    for e in header["tensors"]:
        flat = np.frombuffer(payload, dtype="<f8", count=e["count"], offset=8 * e["offset"])
        tensors[e["name"]] = flat.astype(np.float64).reshape(e["shape"])
    return Checkpoint(
        kind=header["kind"],
        config=None if header["config"] is None else ModelConfig.from_json(header["config"]),
        tensors=tensors,
        token_maps={k: dict(v) for k, v in header["token_maps"].items()},
        spaces={t: LabelSpace.from_json(s) for t, s in header["spaces"].items()},
        metadata=header["metadata"],
        version=version,
    )


def write_checkpoint(ckpt: Checkpoint, path: str | Path) -> None:
    """Write atomically: a crash never leaves a partial archive at ``path``."""
    path = Path(path)
    data = save_checkpoint(ckpt)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        Path(tmp).unlink(missing_ok=True)
        raise


def read_checkpoint(path: str | Path) -> Checkpoint:
    return load_checkpoint(Path(path).read_bytes())


# ---------------------------------------------------------------------------
# model <-> tensors


def _lstm(tensors: Mapping[str, np.ndarray], prefix: str) -> LstmParams:
    return LstmParams(Tensor(tensors[f"{prefix}.W"], requires_grad=True), Tensor(tensors[f"{prefix}.b"], requires_grad=True))


def encoder_from_tensors(
    tensors: Mapping[str, np.ndarray], prefix: str, token_map: Mapping[str, int], trainable: bool = True
) -> TurnEncoder:
    param = lambda n: Tensor(np.array(tensors[f"{prefix}.{n}"]), requires_grad=True)
    try:
        return TurnEncoder(
            embedding=EmbeddingTable(dict(token_map), param("embedding")),
            word_fwd=_lstm(tensors, f"{prefix}.word_fwd"),
            word_bwd=_lstm(tensors, f"{prefix}.word_bwd"),
            role_U=param("role.U"),
            role_b=param("role.b"),
            turn_fwd=_lstm(tensors, f"{prefix}.turn_fwd"),
            turn_bwd=_lstm(tensors, f"{prefix}.turn_bwd"),
            embeddings_trainable=trainable,
        )
    except KeyError as exc:
        raise CheckpointError(f"checkpoint lacks tensor {exc}") from None


def _predictor(tensors, prefix: str) -> Predictor:
    return Predictor(Tensor(np.array(tensors[f"{prefix}.U"]), requires_grad=True),
                     Tensor(np.array(tensors[f"{prefix}.b"]), requires_grad=True))


def _arrays(params: Mapping[str, Tensor]) -> dict[str, np.ndarray]:
    return {name: p.data.copy() for name, p in params.items()}


def single_to_checkpoint(net: SingleTaskNet, config: ModelConfig, space: LabelSpace, metadata: dict) -> Checkpoint:
    return Checkpoint(SINGLE, config, _arrays(net.parameters()), {"encoder": dict(net.encoder.embedding.token_to_index)},
                      {space.task: space}, dict(metadata))


def sl_to_checkpoint(nets: list[SingleTaskNet], config: ModelConfig, space: LabelSpace, metadata: dict) -> Checkpoint:
    tensors: dict[str, np.ndarray] = {}
    maps: dict[str, dict[str, int]] = {}
    for k, net in enumerate(nets):
        for name, arr in _arrays(net.parameters()).items():
            tensors[f"label{k}.{name}"] = arr
        maps[f"label{k}.encoder"] = dict(net.encoder.embedding.token_to_index)
    return Checkpoint(SL_BUNDLE, config, tensors, maps, {space.task: space}, dict(metadata))


def multitask_to_checkpoint(net: MultiTaskNet, config: ModelConfig, spaces: Mapping[str, LabelSpace], metadata: dict) -> Checkpoint:
    maps = {"shared": dict(net.shared.embedding.token_to_index)}
    for t in net.tasks:
        maps[f"private.{t}"] = dict(net.private[t].embedding.token_to_index)
    return Checkpoint(MULTITASK, config, _arrays(net.parameters()), maps, {t: spaces[t] for t in net.tasks},
                      {**metadata, "tasks": list(net.tasks)})


def single_from_checkpoint(ckpt: Checkpoint, prefix: str = "") -> SingleTaskNet:
    trainable = ckpt.config.train_embeddings if ckpt.config else True
    enc = encoder_from_tensors(ckpt.tensors, f"{prefix}encoder", ckpt.token_maps[f"{prefix}encoder"], trainable)
    return SingleTaskNet(enc, _predictor(ckpt.tensors, f"{prefix}predictor"))


def sl_from_checkpoint(ckpt: Checkpoint) -> list[SingleTaskNet]:
    n = len(next(iter(ckpt.spaces.values())).codes)
    return [single_from_checkpoint(ckpt, f"label{k}.") for k in range(n)]


def multitask_from_checkpoint(ckpt: Checkpoint) -> MultiTaskNet:
    tasks = list(ckpt.metadata["tasks"])
    trainable = ckpt.config.train_embeddings
    t = ckpt.tensors
    return MultiTaskNet(
        tasks=tasks,
        shared=encoder_from_tensors(t, "shared", ckpt.token_maps["shared"], trainable),
        private={m: encoder_from_tensors(t, f"private.{m}", ckpt.token_maps[f"private.{m}"], trainable) for m in tasks},
        predictors={m: _predictor(t, f"predictor.{m}") for m in tasks},
        disc_U=Tensor(np.array(t["discriminator.U"]), requires_grad=True),
        disc_b=Tensor(np.array(t["discriminator.b"]), requires_grad=True),
        lam=ckpt.config.lam,
        gamma=ckpt.config.gamma,
    )


def private_encoder_from(ckpt: Checkpoint, expected_embedding_dim: int | None = None) -> TurnEncoder:
    """Take the word/turn encoder (and embeddings) of a single-task checkpoint by name.

    Predictor weights are dropped. An SL bundle contributes its first
    label network; the others are ignored.
    """
    if ckpt.kind == SINGLE:
        prefix = ""
    elif ckpt.kind == SL_BUNDLE:
        prefix = "label0."
        ignored = sorted({n.split(".", 1)[0] for n in ckpt.tensors} - {"label0"})
        if ignored:
            log.warning("initializing from SL bundle: using label0 encoder, ignoring %s", ", ".join(ignored))
    else:
        raise ConfigError(f"cannot initialize a private encoder from a {ckpt.kind!r} checkpoint")
    extra = sorted(n for n in ckpt.tensors if n.startswith(f"{prefix}predictor."))
    if extra:
        log.warning("ignoring predictor weights from init checkpoint: %s", ", ".join(extra))
    trainable = ckpt.config.train_embeddings if ckpt.config else True
    enc = encoder_from_tensors(ckpt.tensors, f"{prefix}encoder", ckpt.token_maps[f"{prefix}encoder"], trainable)
    _validate_encoder(enc)
    if expected_embedding_dim is not None and enc.embedding.dim != expected_embedding_dim:
        raise ConfigError(f"init checkpoint embeddings are {enc.embedding.dim}-dim, expected {expected_embedding_dim}")
    return enc


def _validate_encoder(enc: TurnEncoder) -> None:
    if enc.word_fwd.input_dim != enc.embedding.dim or enc.word_bwd.input_dim != enc.embedding.dim:
        raise DimensionError("word LSTM input width does not match the embedding width")
    if enc.turn_fwd.input_dim != enc.turn_vector_dim or enc.turn_bwd.input_dim != enc.turn_vector_dim:
        raise DimensionError("turn LSTM input width does not match the turn vector width")
    if enc.role_b.shape != (enc.role_U.shape[1],):
        raise DimensionError("role projection bias does not match its weight")


def embedding_to_checkpoint(table: EmbeddingTable, metadata: dict | None = None) -> Checkpoint:
    return Checkpoint(EMBEDDING, None, {"embedding": table.matrix.data.copy()}, {"embedding": dict(table.token_to_index)},
                      metadata=dict(metadata or {}))


def embedding_from_checkpoint(ckpt: Checkpoint) -> EmbeddingTable:
    if ckpt.kind != EMBEDDING or set(ckpt.tensors) != {"embedding"}:
        raise CheckpointError("not an embedding archive")
    return EmbeddingTable(dict(ckpt.token_maps["embedding"]), Tensor(np.array(ckpt.tensors["embedding"]), requires_grad=True))
