"""Repeated training from consecutive seeds and per-seed metric aggregation."""

from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from ..errors import TrainingError, UsageError
from ..evalreport import EvalReport
from .checkpoint import Checkpoint
from .config import ModelConfig

log = logging.getLogger(__name__)


@dataclass
class SeedRun:
    seeds: list[int]
    checkpoints: dict[int, Checkpoint] = field(default_factory=dict)
    reports: dict[int, EvalReport] = field(default_factory=dict)
    failures: dict[int, str] = field(default_factory=dict)

    @property
    def macro_f1s(self) -> list[float]:
        return [self.reports[s].macro_f1 for s in self.seeds if s in self.reports]

    @property
    def mean_macro_f1(self) -> float:
        return float(np.mean(self.macro_f1s)) if self.macro_f1s else float("nan")

    @property
    def std_macro_f1(self) -> float:
        return float(np.std(self.macro_f1s)) if self.macro_f1s else float("nan")

    def mean_label_f1(self) -> np.ndarray:
        return np.mean([self.reports[s].f1 for s in self.seeds if s in self.reports], axis=0)

    def summary_report(self) -> EvalReport:
        """Mean over successful seeds, with the per-seed breakdown attached."""
        done = [s for s in self.seeds if s in self.reports]
        if not done:
            raise TrainingError("every seed run failed")
        first = self.reports[done[0]]
        mean = lambda attr: np.mean([getattr(self.reports[s], attr) for s in done], axis=0).tolist()
        per_seed = [{"seed": s, "macro_f1": self.reports[s].macro_f1, "f1": self.reports[s].f1} for s in done]
        per_seed += [{"seed": s, "failed": msg} for s, msg in self.failures.items()]
        return EvalReport(
            task=first.task,
            labels=list(first.labels),
            precision=mean("precision"),
            recall=mean("recall"),
            f1=mean("f1"),
            macro_f1=self.mean_macro_f1,
            baseline=list(first.baseline),
            level=first.level,
            n_samples=first.n_samples,
            flagged=sorted({l for s in done for l in self.reports[s].flagged}) + (["<failed seeds>"] if self.failures else []),
            per_seed=per_seed,
            fingerprint=first.fingerprint,
        )


def _one(train_fn, eval_fn, config: ModelConfig, seed: int):
    cfg = config.replace(seed=seed)
    try:
        ckpt = train_fn(cfg)
    except TrainingError as exc:
        return seed, None, None, str(exc)
    return seed, ckpt, eval_fn(ckpt) if eval_fn else None, None


def run_seeds(
    config: ModelConfig,
    train_fn: Callable[[ModelConfig], Checkpoint],
    eval_fn: Callable[[Checkpoint], EvalReport] | None = None,
    n: int | None = None,
    parallel: int = 1,
) -> SeedRun:
    """Train with seeds ``config.seed .. config.seed + n - 1``; diverged runs are recorded, not fatal.

    ``parallel > 1`` runs seeds in worker processes, in which case both
    callables must be picklable.
    """
    n = config.n_seeds if n is None else n
    if n < 1:
        raise UsageError("need at least one seed")
    seeds = [config.seed + k for k in range(n)]
    run = SeedRun(seeds)
    if parallel > 1:
        with ProcessPoolExecutor(max_workers=parallel) as pool:
            results = list(pool.map(_one, [train_fn] * n, [eval_fn] * n, [config] * n, seeds))
    else:
        results = [_one(train_fn, eval_fn, config, s) for s in seeds]
    for seed, ckpt, report, err in results:
        if err is not None:
            log.warning("seed %d diverged: %s", seed, err)
            run.failures[seed] = err
            continue
        run.checkpoints[seed] = ckpt
        if report is not None:
            run.reports[seed] = report
    return run
