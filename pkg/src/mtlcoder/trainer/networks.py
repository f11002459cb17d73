"""Network assemblies for the single-task and adversarial multi-task regimes."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping

import numpy as np

from .. import tensor as tn
from ..encoders import EmbeddingTable, TurnEncoder
from ..objectives import diff_loss, task_discriminator, task_loss, total_multitask_loss, weighted_loss
from ..tensor import Tensor
from .batching import Batch
from .config import ModelConfig


@dataclass
class Predictor:
    """Affine layer + sigmoid producing per-label posteriors."""

    U: Tensor  # (input_dim, L)
    b: Tensor  # (L,)

    @classmethod
    def initialize(cls, input_dim: int, n_labels: int, rng: np.random.Generator) -> "Predictor":
        return cls(tn.glorot_uniform_init(input_dim, n_labels, rng), tn.zeros_param(n_labels))

    def __call__(self, G: Tensor) -> Tensor:
        return tn.sigmoid(G @ self.U + self.b)

    def parameters(self, prefix: str) -> dict[str, Tensor]:
        return {f"{prefix}.U": self.U, f"{prefix}.b": self.b}


@dataclass
class SingleTaskNet:
    encoder: TurnEncoder
    predictor: Predictor

    @classmethod
    def initialize(
        cls,
        config: ModelConfig,
        token_to_index: Mapping[str, int],
        n_labels: int,
        rng: np.random.Generator,
        embedding: EmbeddingTable | None = None,
        role_dim: int | None = None,
    ) -> "SingleTaskNet":
        encoder = TurnEncoder.initialize(
            token_to_index,
            embedding_dim=config.embedding_dim,
            hidden_dim=config.word_hidden,
            turn_hidden_dim=config.turn_hidden,
            role_proj_dim=role_dim or config.role_dim(n_labels),
            rng=rng,
            embedding=embedding,
            embeddings_trainable=config.train_embeddings,
        )
        return cls(encoder, Predictor.initialize(encoder.output_dim, n_labels, rng))

    def parameters(self) -> dict[str, Tensor]:
        return {**self.encoder.parameters("encoder"), **self.predictor.parameters("predictor")}

    def trainable_parameters(self) -> dict[str, Tensor]:
        return {**self.encoder.trainable_parameters("encoder"), **self.predictor.parameters("predictor")}

    def forward(self, batch: Batch) -> Tensor:
        return self.predictor(self.encoder.encode(batch.words, batch.roles, batch.windows))

    def loss(self, batch: Batch, weights: np.ndarray | None = None) -> Tensor:
        return weighted_loss(batch.labels, self.forward(batch), weights)


@dataclass
class MultiTaskNet:
    """Shared encoder + one private encoder and predictor per task + task discriminator.

    Each task's predictor reads ``[G_shared ; G_private]``. Task index 0 is
    labelled 0 for the discriminator and task index 1 is labelled 1.
    """

    tasks: list[str]
    shared: TurnEncoder
    private: dict[str, TurnEncoder]
    predictors: dict[str, Predictor]
    disc_U: Tensor
    disc_b: Tensor
    lam: float = 0.05
    gamma: float = 0.01

    def parameters(self) -> dict[str, Tensor]:
        params = dict(self.shared.parameters("shared"))
        for t in self.tasks:
            params.update(self.private[t].parameters(f"private.{t}"))
            params.update(self.predictors[t].parameters(f"predictor.{t}"))
        params["discriminator.U"] = self.disc_U
        params["discriminator.b"] = self.disc_b
        return params

    def trainable_parameters(self) -> dict[str, Tensor]:
        params = dict(self.shared.trainable_parameters("shared"))
        for t in self.tasks:
            params.update(self.private[t].trainable_parameters(f"private.{t}"))
            params.update(self.predictors[t].parameters(f"predictor.{t}"))
        params["discriminator.U"] = self.disc_U
        params["discriminator.b"] = self.disc_b
        return params

    def encode(self, task: str, batch: Batch) -> tuple[Tensor, Tensor]:
        G_shared = self.shared.encode(batch.words, batch.roles, batch.windows)
        G_private = self.private[task].encode(batch.words, batch.roles, batch.windows)
        return G_shared, G_private

    def forward(self, task: str, batch: Batch) -> Tensor:
        G_shared, G_private = self.encode(task, batch)
        return self.predictors[task](tn.concat([G_shared, G_private], axis=1))

    def task_terms(self, task: str, batch: Batch, weights: np.ndarray | None = None) -> dict[str, Tensor]:
        """Predictor loss, discriminator loss and diff loss for one task's batch."""
        G_shared, G_private = self.encode(task, batch)
        Yhat = self.predictors[task](tn.concat([G_shared, G_private], axis=1))
        That = task_discriminator(tn.gradient_reversal(G_shared), self.disc_U, self.disc_b)
        T = np.full(len(batch), float(self.tasks.index(task)))
        return {
            "task_loss": weighted_loss(batch.labels, Yhat, weights),
            "disc_loss": task_loss(T, That),
            "diff_loss": diff_loss(G_shared, G_private),
        }

    def step_loss(self, batches: Mapping[str, Batch], weights: Mapping[str, np.ndarray | None] | None = None) -> Tensor:
        """Total objective over one batch per task."""
        weights = weights or {}
        terms = [self.task_terms(t, batches[t], weights.get(t)) for t in self.tasks if t in batches]
        E_task = terms[0]["disc_loss"]
        E_diff = terms[0]["diff_loss"]
        for tm in terms[1:]:
            E_task = E_task + tm["disc_loss"]
            E_diff = E_diff + tm["diff_loss"]
        return total_multitask_loss([tm["task_loss"] for tm in terms], E_task, E_diff, self.lam, self.gamma)
