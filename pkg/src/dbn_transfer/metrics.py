from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class EvaluationResult:
    """Binary confusion matrix (rows true, columns predicted; index 0 = Negative)."""

    confusion: np.ndarray
    accuracy: float
    uar: float
    n_test: int
    seed: int | None = None

    @classmethod
    def from_confusion(cls, confusion, seed: int | None = None) -> "EvaluationResult":
        c = np.asarray(confusion, dtype=np.int64).reshape(2, 2)
        n = int(c.sum())
        if n == 0:
            raise ValueError("empty confusion matrix")
        recalls = []
        for k in range(2):
            support = c[k].sum()
            # an absent class is counted as perfectly recalled
            recalls.append(1.0 if support == 0 else c[k, k] / support)
        return cls(c, float(np.trace(c) / n), float(np.mean(recalls)), n, seed)


def evaluate(predictions, truth, seed: int | None = None) -> EvaluationResult:
    pred = np.asarray(predictions, dtype=np.int64).ravel()
    true = np.asarray(truth, dtype=np.int64).ravel()
    if pred.size != true.size:
        raise ValueError(f"{pred.size} predictions for {true.size} labels")
    if true.size == 0:
        raise ValueError("nothing to evaluate")
    confusion = np.zeros((2, 2), dtype=np.int64)
    np.add.at(confusion, (true, pred), 1)
    return EvaluationResult.from_confusion(confusion, seed)


def summarize(values) -> dict:
    v = np.asarray(values, dtype=np.float64)
    return {
        "mean": float(v.mean()),
        "std": float(v.std()),
        "median": float(np.median(v)),
        "min": float(v.min()),
        "max": float(v.max()),
    }
