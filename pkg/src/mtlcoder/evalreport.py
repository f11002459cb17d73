"""Per-label F1, macro-F1, the always-present baseline and report serialization."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .errors import UsageError

DEFAULT_THRESHOLD = 0.5


def aggregate_session(turn_posteriors) -> np.ndarray:
    """Session posterior as the elementwise mean of its turns' posteriors."""
    P = np.asarray(turn_posteriors, dtype=np.float64)
    if P.ndim == 1:
        P = P.reshape(-1, 1)
    if P.shape[0] == 0:
        raise UsageError("cannot aggregate an empty session")
    return P.mean(axis=0)


def threshold(posterior, tau: float = DEFAULT_THRESHOLD) -> np.ndarray:
    """1 where posterior >= tau (boundary inclusive)."""
    return (np.asarray(posterior, dtype=np.float64) >= tau).astype(np.int8)


def confusion_counts(ref, pred) -> dict[str, np.ndarray]:
    R = np.asarray(ref).astype(bool)
    P = np.asarray(pred).astype(bool)
    if R.shape != P.shape:
        raise UsageError(f"reference {R.shape} and prediction {P.shape} are not aligned")
    if R.ndim == 1:
        R, P = R[:, None], P[:, None]
    return {
        "tp": (R & P).sum(axis=0),
        "fp": (~R & P).sum(axis=0),
        "fn": (R & ~P).sum(axis=0),
        "tn": (~R & ~P).sum(axis=0),
    }


@dataclass
class LabelScores:
    precision: np.ndarray
    recall: np.ndarray
    f1: np.ndarray
    degenerate: np.ndarray  # label neither present nor predicted

    @property
    def macro_f1(self) -> float:
        return float(self.f1.mean()) if self.f1.size else 0.0


def _ratio(num: np.ndarray, den: np.ndarray) -> np.ndarray:
    out = np.zeros(num.shape, dtype=np.float64)
    np.divide(num, den, out=out, where=den > 0)
    return out


def f1_per_label(ref, pred) -> LabelScores:
    """F1 = 2TP / (2TP + FP + FN); 0 when that denominator is 0."""
    c = confusion_counts(ref, pred)
    tp, fp, fn = (c[k].astype(np.float64) for k in ("tp", "fp", "fn"))
    return LabelScores(
        precision=_ratio(tp, tp + fp),
        recall=_ratio(tp, tp + fn),
        f1=_ratio(2 * tp, 2 * tp + fp + fn),
        degenerate=(tp + fp + fn) == 0,
    )


def baseline_always_present(ref) -> np.ndarray:
    """F1 of predicting every label in every sample: 2p / (1 + p) for prevalence p."""
    R = np.asarray(ref, dtype=np.float64)
    if R.ndim == 1:
        R = R[:, None]
    if R.shape[0] == 0:
        raise UsageError("baseline needs a nonempty reference")
    p = R.mean(axis=0)
    return 2 * p / (1 + p)


# ---------------------------------------------------------------------------
# reports


@dataclass
class EvalReport:
    task: str
    labels: list[str]
    precision: list[float]
    recall: list[float]
    f1: list[float]
    macro_f1: float
    baseline: list[float]
    level: str = "turn"
    n_samples: int = 0
    flagged: list[str] = field(default_factory=list)
    per_seed: list[dict] = field(default_factory=list)
    fingerprint: str = ""

    @classmethod
    def from_predictions(cls, task: str, labels: Sequence[str], ref, pred, level: str = "turn", fingerprint: str = "") -> "EvalReport":
        ref = np.asarray(ref)
        if ref.ndim == 1:
            ref = ref[:, None]
        scores = f1_per_label(ref, pred)
        base = baseline_always_present(ref) if len(ref) else np.zeros(len(labels))
        return cls(
            task=task,
            labels=list(labels),
            precision=scores.precision.tolist(),
            recall=scores.recall.tolist(),
            f1=scores.f1.tolist(),
            macro_f1=scores.macro_f1,
            baseline=base.tolist(),
            level=level,
            n_samples=int(len(ref)),
            flagged=[l for l, d in zip(labels, scores.degenerate) if d],
            fingerprint=fingerprint,
        )

    def to_json(self) -> dict:
        return {
            "task": self.task,
            "labels": list(self.labels),
            "metrics": {
                "level": self.level,
                "n_samples": self.n_samples,
                "precision": list(self.precision),
                "recall": list(self.recall),
                "f1": list(self.f1),
                "macro_f1": self.macro_f1,
                "baseline": list(self.baseline),
                "flagged": list(self.flagged),
                "per_seed": list(self.per_seed),
                "fingerprint": self.fingerprint,
            },
        }

    @classmethod
    def from_json(cls, obj: Mapping) -> "EvalReport":
        m = obj["metrics"]
        return cls(
            task=obj["task"],
            labels=list(obj["labels"]),
            precision=list(m["precision"]),
            recall=list(m["recall"]),
            f1=list(m["f1"]),
            macro_f1=m["macro_f1"],
            baseline=list(m["baseline"]),
            level=m.get("level", "turn"),
            n_samples=m.get("n_samples", 0),
            flagged=list(m.get("flagged", [])),
            per_seed=list(m.get("per_seed", [])),
            fingerprint=m.get("fingerprint", ""),
        )


def _avg(values: Sequence[float]) -> float:
    return float(np.mean(values)) if len(values) else 0.0


def _table(header: Sequence[str], rows: Sequence[Sequence[str]]) -> str:
    widths = [max(len(h), *(len(r[i]) for r in rows)) if rows else len(h) for i, h in enumerate(header)]
    fmt = lambda cells: "  ".join(c.ljust(w) if i == 0 else c.rjust(w) for i, (c, w) in enumerate(zip(cells, widths)))
    lines = [fmt(header), "  ".join("-" * w for w in widths)]
    lines += [fmt(r) for r in rows]
    return "\n".join(lines) + "\n"


def emit_report(report: EvalReport, fmt: str = "table") -> bytes:
    """Serialize one report as an aligned table, JSON or CSV (codes as rows, AVG last)."""
    if fmt == "json":
        return (json.dumps(report.to_json(), indent=2, sort_keys=True) + "\n").encode()
    header = ["code", "baseline", "precision", "recall", "f1"]
    rows = [
        [code, f"{b:.3f}", f"{p:.3f}", f"{r:.3f}", f"{f:.3f}"]
        for code, b, p, r, f in zip(report.labels, report.baseline, report.precision, report.recall, report.f1)
    ]
    if report.labels:
        rows.append(["AVG", f"{_avg(report.baseline):.3f}", f"{_avg(report.precision):.3f}",
                     f"{_avg(report.recall):.3f}", f"{report.macro_f1:.3f}"])
    if fmt == "csv":
        return _csv(header, rows)
    if fmt == "table":
        return _table(header, rows).encode()
    raise UsageError(f"unknown report format {fmt!r}")


def emit_comparison(columns: Mapping[str, EvalReport], fmt: str = "table") -> bytes:
    """Side-by-side F1 of several systems on one task, laid out like the results tables."""
    reports = list(columns.values())
    if not reports:
        raise UsageError("nothing to compare")
    labels = reports[0].labels
    if any(r.labels != labels for r in reports):
        raise UsageError("reports cover different label lists")
    names = list(columns)
    if fmt == "json":
        obj = {"task": reports[0].task, "labels": labels,
               "metrics": {"baseline": reports[0].baseline, **{n: {"f1": r.f1, "macro_f1": r.macro_f1} for n, r in columns.items()}}}
        return (json.dumps(obj, indent=2, sort_keys=True) + "\n").encode()
    header = ["code", "baseline", *names]
    rows = [[code, f"{reports[0].baseline[i]:.3f}", *(f"{r.f1[i]:.3f}" for r in reports)] for i, code in enumerate(labels)]
    if labels:
        rows.append(["AVG", f"{_avg(reports[0].baseline):.3f}", *(f"{r.macro_f1:.3f}" for r in reports)])
    if fmt == "csv":
        return _csv(header, rows)
    if fmt == "table":
        return _table(header, rows).encode()
    raise UsageError(f"unknown report format {fmt!r}")


def _csv(header, rows) -> bytes:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    return buf.getvalue().encode()
