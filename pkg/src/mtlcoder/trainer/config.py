"""Model and training hyperparameters."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields

from ..errors import ConfigError
from ..objectives import DEFAULT_GAMMA, DEFAULT_LAMBDA
from ..tensor.optim import DEFAULT_LR, FINETUNE_LR

SL, ML, MLMT = "SL", "ML", "ML-MT"
REGIMES = (SL, ML, MLMT)
REGIME_ALIASES = {"sl": SL, "ml": ML, "mlmt": MLMT, "ml-mt": MLMT, SL: SL, ML: ML, MLMT: MLMT}

BATCH_SIZE = 32
N_SEEDS = 10
DEFAULT_PATIENCE = 3
EMBEDDING_DIM = 300


@dataclass
class ModelConfig:
    regime: str = ML
    sample_weighting: bool = False
    context: int = 0
    embedding_dim: int = EMBEDDING_DIM
    hidden_dim: int | None = None
    turn_hidden_dim: int | None = None
    role_proj_dim: int | None = None
    lam: float = DEFAULT_LAMBDA
    gamma: float = DEFAULT_GAMMA
    learning_rate: float = DEFAULT_LR
    finetune_learning_rate: float = FINETUNE_LR
    batch_size: int = BATCH_SIZE
    patience: int = DEFAULT_PATIENCE
    max_epochs: int = 50
    seed: int = 0
    n_seeds: int = N_SEEDS
    val_fraction: float = 0.10
    min_count: int = 1
    train_embeddings: bool = True
    threshold: float = 0.5
    tasks: list[str] = field(default_factory=list)

    def __post_init__(self):
        self.regime = REGIME_ALIASES.get(self.regime, self.regime)
        self.validate()

    def validate(self) -> None:
        if self.regime not in REGIMES:
            raise ConfigError(f"unknown regime {self.regime!r}")
        if self.context < 0:
            raise ConfigError("context radius must be >= 0")
        for name in ("embedding_dim", "batch_size", "n_seeds"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")
        for name in ("hidden_dim", "turn_hidden_dim", "role_proj_dim"):
            v = getattr(self, name)
            if v is not None and v < 1:
                raise ConfigError(f"{name} must be positive")
        if self.learning_rate <= 0 or self.finetune_learning_rate <= 0:
            raise ConfigError("learning rates must be positive")
        if self.patience < 1 or self.max_epochs < 0:
            raise ConfigError("patience must be >= 1 and max_epochs >= 0")
        if self.lam < 0 or self.gamma < 0:
            raise ConfigError("loss weights must be non-negative")
        if self.regime == MLMT and self.tasks and len(self.tasks) != 2:
            raise ConfigError("ML-MT needs exactly two tasks")

    @property
    def word_hidden(self) -> int:
        return self.hidden_dim or self.embedding_dim

    @property
    def turn_hidden(self) -> int:
        return self.turn_hidden_dim or self.word_hidden

    def role_dim(self, n_labels: int) -> int:
        return self.role_proj_dim or n_labels

    def replace(self, **changes) -> "ModelConfig":
        d = asdict(self)
        d.update(changes)
        return ModelConfig(**d)

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, obj: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(obj) - known
        if unknown:
            raise ConfigError(f"unknown config fields: {sorted(unknown)}")
        return cls(**obj)

    def fingerprint(self) -> str:
        blob = json.dumps(self.to_json(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]
