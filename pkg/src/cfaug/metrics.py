"""Evaluation metrics: accuracy, weighted/macro/minority F1, R^2, normalized RMSE."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np

from .data import TaskSpec


def confusion_matrix(y_true: np.ndarray, y_pred: np.ndarray, n_classes: int) -> np.ndarray:
    """``cm[i, j]`` counts rows with true class i predicted as j."""
    t = np.asarray(y_true, dtype=np.int64)
    p = np.asarray(y_pred, dtype=np.int64)
    return np.bincount(t * n_classes + p, minlength=n_classes * n_classes).reshape(n_classes, n_classes)


def per_class_f1(cm: np.ndarray) -> np.ndarray:
    tp = np.diag(cm).astype(float)
    fp = cm.sum(axis=0) - tp
    fn = cm.sum(axis=1) - tp
    denom = 2 * tp + fp + fn
    return np.divide(2 * tp, denom, out=np.zeros_like(tp), where=denom > 0)


def classification_metrics(y_true, y_pred, task: TaskSpec) -> dict[str, float]:
    """Accuracy plus three F1 aggregates.

    ``f1`` is the support-weighted mean of per-class F1; ``f1_macro`` is the
    unweighted mean over classes appearing in either labels or predictions;
    ``f1_minority`` is the F1 of ``task.minority_class`` (0 if it never occurs).
    """
    y_true = np.asarray(y_true)
    cm = confusion_matrix(y_true, y_pred, task.n_classes)
    f1 = per_class_f1(cm)
    support = cm.sum(axis=1)
    present = (support + cm.sum(axis=0)) > 0
    return {
        "accuracy": float(np.trace(cm) / cm.sum()),
        "f1": float((f1 * support).sum() / support.sum()),
        "f1_macro": float(f1[present].mean()),
        "f1_minority": float(f1[task.minority_class]),
    }


def regression_metrics(y_true, y_pred) -> dict[str, float]:
    """R^2 and RMSE divided by the population (divisor n) std of ``y_true``."""
    y = np.asarray(y_true, dtype=float)
    resid = y - np.asarray(y_pred, dtype=float)
    centred = y - y.mean()
    ss_res = float(resid @ resid)
    ss_tot = float(centred @ centred)
    if ss_tot == 0:
        raise ValueError("evaluation labels have zero variance")
    return {"r2": 1 - ss_res / ss_tot, "nrmse": float(np.sqrt(ss_res / ss_tot))}


CLASSIFICATION_KEYS = ("accuracy", "f1", "f1_macro", "f1_minority")
REGRESSION_KEYS = ("r2", "nrmse")


@dataclass(frozen=True)
class MetricsReport:
    n_eval: int
    seed: int | None = None
    config_hash: str | None = None
    accuracy: float | None = None
    f1: float | None = None
    f1_macro: float | None = None
    f1_minority: float | None = None
    r2: float | None = None
    nrmse: float | None = None

    def metrics(self) -> dict[str, float]:
        keys = CLASSIFICATION_KEYS if self.accuracy is not None else REGRESSION_KEYS
        return {k: getattr(self, k) for k in keys}

    def to_dict(self) -> dict:
        return {k: v for k, v in asdict(self).items() if v is not None}

    def to_text(self) -> str:
        return "".join(f"{k}={v}\n" for k, v in self.to_dict().items())

    @classmethod
    def from_text(cls, text: str) -> MetricsReport:
        fields: dict = {}
        for line in text.splitlines():
            if not line.strip():
                continue
            k, v = line.split("=", 1)
            fields[k] = v if k == "config_hash" else json.loads(v)
        return cls(**fields)


def compute_report(y_true, y_pred, task: TaskSpec, seed: int | None = None, config_hash: str | None = None) -> MetricsReport:
    if len(y_true) == 0:
        raise ValueError("empty evaluation set")
    if task.is_classification:
        values = classification_metrics(y_true, y_pred, task)
    else:
        values = regression_metrics(y_true, y_pred)
    return MetricsReport(n_eval=len(y_true), seed=seed, config_hash=config_hash, **values)
