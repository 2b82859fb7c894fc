"""Binary F1 reports and CC-vs-SFT deltas."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import DatasetMismatch, LengthMismatch


@dataclass(frozen=True)
class Counts:
    tp: int
    fp: int
    fn: int
    tn: int

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn


def _binary(a, name) -> np.ndarray:
    arr = np.asarray(a)
    if arr.size and not np.isin(arr, (0, 1)).all():
        raise ValueError(f"{name} must be binary")
    return arr.astype(bool)


def confusion(predictions, labels) -> Counts:
    p = _binary(predictions, "predictions")
    y = _binary(labels, "labels")
    if p.shape != y.shape:
        raise LengthMismatch(f"predictions {p.shape} and labels {y.shape} differ")
    return Counts(
        tp=int(np.sum(p & y)), fp=int(np.sum(p & ~y)), fn=int(np.sum(~p & y)), tn=int(np.sum(~p & ~y))
    )


def prf(c: Counts) -> tuple[float, float, float]:
    precision = c.tp / (c.tp + c.fp) if c.tp + c.fp else 0.0
    recall = c.tp / (c.tp + c.fn) if c.tp + c.fn else 0.0
    f = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return precision, recall, f


def concept_scores(predictions, labels) -> tuple[float, tuple[float, ...]]:
    """Micro F1 over every (statement, concept) cell, plus per-concept F1."""
    p = _binary(predictions, "concept predictions")
    y = _binary(labels, "concept labels")
    if p.shape != y.shape:
        raise LengthMismatch(f"concept predictions {p.shape} and labels {y.shape} differ")
    if p.ndim != 2:
        raise ValueError("concept matrices must be S x N")
    micro = prf(confusion(p.ravel(), y.ravel()))[2]
    per = tuple(prf(confusion(p[:, k], y[:, k]))[2] for k in range(p.shape[1]))
    return micro, per


@dataclass(frozen=True)
class EvalReport:
    task_f1: float
    precision: float
    recall: float
    counts: Counts
    concept_f1: float = 0.0
    per_concept_f1: tuple[float, ...] = ()
    extra: dict = field(default_factory=dict)

    @property
    def n_records(self) -> int:
        return self.counts.total

    def to_json(self) -> str:
        d = asdict(self)
        d["per_concept_f1"] = list(self.per_concept_f1)
        return json.dumps(d, sort_keys=True)

    @classmethod
    def from_json(cls, line: str) -> "EvalReport":
        d = json.loads(line)
        return cls(
            task_f1=d["task_f1"],
            precision=d["precision"],
            recall=d["recall"],
            counts=Counts(**d["counts"]),
            concept_f1=d.get("concept_f1", 0.0),
            per_concept_f1=tuple(d.get("per_concept_f1", ())),
            extra=d.get("extra", {}),
        )


def f1(predictions, labels, concept_predictions=None, concept_labels=None, **extra) -> EvalReport:
    counts = confusion(predictions, labels)
    precision, recall, f = prf(counts)
    micro, per = 0.0, ()
    if concept_predictions is not None:
        micro, per = concept_scores(concept_predictions, concept_labels)
    return EvalReport(f, precision, recall, counts, micro, per, dict(extra))


@dataclass(frozen=True)
class Delta:
    delta_c: float
    delta_v: float


def delta_report(cc: EvalReport, sft: EvalReport) -> Delta:
    if cc.n_records != sft.n_records:
        raise DatasetMismatch(f"reports cover {cc.n_records} and {sft.n_records} records")
    return Delta(cc.concept_f1 - sft.concept_f1, cc.task_f1 - sft.task_f1)


def format_deltas(rows) -> str:
    """Two-column text, one ``delta_c delta_v`` row per entry."""
    lines = ["delta_c delta_v"]
    lines += [f"{d.delta_c:.6f} {d.delta_v:.6f}" for d in rows]
    return "\n".join(lines) + "\n"
