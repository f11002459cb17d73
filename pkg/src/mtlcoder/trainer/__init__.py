"""Training regimes, batching, checkpoints and evaluation of trained models."""

from .batching import Batch, TurnIndex, make_batches
from .checkpoint import (
    FORMAT_VERSION,
    Checkpoint,
    embedding_from_checkpoint,
    embedding_to_checkpoint,
    load_checkpoint,
    private_encoder_from,
    read_checkpoint,
    save_checkpoint,
    write_checkpoint,
)
from .config import BATCH_SIZE, ML, MLMT, N_SEEDS, SL, ModelConfig
from .inference import TrainedModel, evaluate_checkpoint
from .loops import MetricsLog, build_multitask_net, fit, train_multitask, train_single_task
from .networks import MultiTaskNet, Predictor, SingleTaskNet
from .seeds import SeedRun, run_seeds

__all__ = [
    "Batch", "TurnIndex", "make_batches", "FORMAT_VERSION", "Checkpoint", "embedding_from_checkpoint",
    "embedding_to_checkpoint", "load_checkpoint", "private_encoder_from", "read_checkpoint",
    "save_checkpoint", "write_checkpoint", "BATCH_SIZE", "ML", "MLMT", "N_SEEDS", "SL", "ModelConfig",
    "TrainedModel", "evaluate_checkpoint", "MetricsLog", "build_multitask_net", "fit", "train_multitask",
    "train_single_task", "MultiTaskNet", "Predictor", "SingleTaskNet", "SeedRun", "run_seeds",
]
