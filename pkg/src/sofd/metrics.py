"""Open-set metrics, confusion matrices and report files.

Class indices are 0-based; the last index (``K``) is the unknown class.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any, Iterable

import numpy as np


def confusion_matrix(y_true, y_pred, n_classes: int) -> np.ndarray:
    """Entry ``(i, j)`` counts samples of true class ``i`` predicted as ``j``."""
    y_true = np.asarray(y_true, dtype=int)
    y_pred = np.asarray(y_pred, dtype=int)
    if y_true.shape != y_pred.shape:
        raise ValueError(f"length mismatch: {len(y_true)} true labels, {len(y_pred)} predictions")
    for name, y in (("true", y_true), ("predicted", y_pred)):
        if y.size and (y.min() < 0 or y.max() >= n_classes):
            raise ValueError(f"{name} label out of range 0..{n_classes - 1}")
    cm = np.zeros((n_classes, n_classes), dtype=int)
    np.add.at(cm, (y_true, y_pred), 1)
    return cm


def u_recall(cm: np.ndarray) -> float:
    """Fraction of true-unknown samples predicted unknown; 0 when there are none."""
    row = cm[-1].sum()
    return float(cm[-1, -1] / row) if row else 0.0


def known_acc(cm: np.ndarray) -> float:
    """Accuracy over true-known samples; predicting unknown counts as an error."""
    known = cm[:-1]
    total = known.sum()
    return float(np.trace(known[:, :-1]) / total) if total else 0.0


def per_class_f1(cm: np.ndarray) -> np.ndarray:
    tp = np.diag(cm).astype(float)
    pred = cm.sum(axis=0)
    true = cm.sum(axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        p = np.where(pred > 0, tp / pred, 0.0)
        r = np.where(true > 0, tp / true, 0.0)
        f1 = np.where(p + r > 0, 2 * p * r / (p + r), 0.0)
    return f1


def macro_f1(cm: np.ndarray) -> float:
    return float(per_class_f1(cm).mean())


@dataclass
class DiagnosisReport:
    u_recall: float
    acc: float
    macro_f1: float
    confusion: list[list[int]]
    n_known: int
    n_test: int
    n_pseudo: int = 0  # |D_p|
    n_reliable: int = 0  # |D_s|
    n_reliable_unknown: int = 0  # true unknowns inside D_s (scored after the run)
    seed: int = 0
    speed: int | None = None
    variant: str = "full"
    config_hash: str = ""
    flags: list[str] = field(default_factory=list)
    config: dict[str, Any] = field(default_factory=dict)

    @classmethod
    def from_predictions(cls, y_true, y_pred, n_known: int, **extra) -> "DiagnosisReport":
        cm = confusion_matrix(y_true, y_pred, n_known + 1)
        flags = list(extra.pop("flags", []))
        if cm[-1].sum() == 0:
            flags.append("no_unknown_samples")
        if cm[:-1].sum() == 0:
            flags.append("no_known_samples")
        return cls(u_recall(cm), known_acc(cm), macro_f1(cm), cm.tolist(), n_known,
                   int(cm.sum()), flags=flags, **extra)

    def to_dict(self) -> dict[str, Any]:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "DiagnosisReport":
        return cls(**d)


def dumps_report(report: DiagnosisReport) -> str:
    return json.dumps(report.to_dict(), indent=2) + "\n"


def write_report(report: DiagnosisReport, path: str | Path) -> Path:
    path = Path(path)
    path.write_text(dumps_report(report), encoding="utf-8")
    return path


def read_report(path: str | Path) -> DiagnosisReport:
    return DiagnosisReport.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def write_confusion_csv(cm, path: str | Path) -> None:
    cm = np.asarray(cm)
    k = len(cm) - 1
    names = [f"class{i}" for i in range(k)] + ["unknown"]
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["true\\pred", *names])
        for name, row in zip(names, cm):
            w.writerow([name, *map(int, row)])


def write_long_csv(reports: Iterable[DiagnosisReport], path: str | Path) -> None:
    """Plot-ready rows ``metric,speed,variant,seed,value``."""
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["metric", "speed", "variant", "seed", "value"])
        for r in reports:
            for metric in ("u_recall", "acc", "macro_f1"):
                w.writerow([metric, "" if r.speed is None else r.speed, r.variant, r.seed,
                            f"{getattr(r, metric):.6f}"])

