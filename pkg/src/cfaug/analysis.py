"""Post-hoc analyses: generated-vs-withheld label distributions and label balance."""

from __future__ import annotations

import os
from dataclasses import asdict, dataclass

import numpy as np

from .augmentation import CorrectedDataset
from .bias import BiasedTrainSet
from .data import TaskSpec, write_table
from .gan import CfLabels

N_BINS = 20


def histogram(y: np.ndarray, task: TaskSpec, edges: np.ndarray | None = None) -> np.ndarray:
    """Counts per class, or per bin of ``edges`` for regression."""
    y = np.asarray(y, dtype=float)
    if task.is_classification:
        return np.bincount(y.astype(np.int64), minlength=task.n_classes)
    return np.histogram(y, bins=edges)[0]


def shared_edges(*samples: np.ndarray, bins: int = N_BINS) -> np.ndarray:
    pooled = np.concatenate([np.asarray(s, dtype=float) for s in samples])
    lo, hi = (float(pooled.min()), float(pooled.max())) if len(pooled) else (0.0, 1.0)
    if hi == lo:
        hi = lo + 1.0
    return np.linspace(lo, hi, bins + 1)


def normalize(counts: np.ndarray) -> np.ndarray:
    total = counts.sum()
    return counts / total if total else np.zeros(len(counts))


def tv_distance(p: np.ndarray, q: np.ndarray) -> float:
    """Half the L1 distance between two normalized histograms."""
    return 0.5 * float(np.abs(normalize(p) - normalize(q)).sum())


def ks_statistic(p: np.ndarray, q: np.ndarray) -> float:
    """Largest gap between the cumulative histograms."""
    return float(np.abs(np.cumsum(normalize(p)) - np.cumsum(normalize(q))).max()) if len(p) else 0.0


def entropy(counts: np.ndarray) -> float:
    """Shannon entropy in nats of a label histogram."""
    p = normalize(np.asarray(counts, dtype=float))
    p = p[p > 0]
    return float(-(p * np.log(p)).sum())


@dataclass
class DistReport:
    n_a: int
    n_b: int
    tv: float
    ks: float
    entropy_a: float
    entropy_b: float
    agreement: float | None
    bins: list[str]
    counts_a: list[int]
    counts_b: list[int]

    def to_dict(self) -> dict:
        return asdict(self)


def _bin_labels(task: TaskSpec, edges: np.ndarray | None) -> list[str]:
    if task.is_classification:
        return [str(k) for k in range(task.n_classes)]
    return [f"[{lo:.4g},{hi:.4g})" for lo, hi in zip(edges[:-1], edges[1:])]


def compare(a: np.ndarray, b: np.ndarray, task: TaskSpec, agreement: float | None = None) -> DistReport:
    edges = None if task.is_classification else shared_edges(a, b)
    ha, hb = histogram(a, task, edges), histogram(b, task, edges)
    return DistReport(
        len(a), len(b), tv_distance(ha, hb), ks_statistic(ha, hb), entropy(ha), entropy(hb),
        agreement, _bin_labels(task, edges), ha.tolist(), hb.tolist(),
    )


def counterfactual_report(cf: CfLabels, b: BiasedTrainSet) -> DistReport:
    """Generated labels (a) against the withheld true labels (b) of the same rows."""
    ids, truth = b.vault.reveal("analysis")
    order = np.argsort(ids)
    pos = np.searchsorted(ids[order], cf.ids)
    if len(cf) and not np.array_equal(ids[order][np.clip(pos, 0, len(ids) - 1)], cf.ids):
        raise ValueError("counterfactual ids not found in the vault")
    matched = truth[order][pos] if len(cf) else np.zeros(0)
    agreement = None
    if b.task.is_classification and len(cf):
        agreement = float((matched == cf.labels).mean())
    return compare(cf.labels, matched, b.task, agreement)


@dataclass
class BalanceReport:
    entropy_observed: float
    entropy_corrected: float
    minority_share_observed: float | None
    minority_share_corrected: float | None
    counts_observed: list[int]
    counts_corrected: list[int]

    @property
    def improved(self) -> bool:
        return self.entropy_corrected >= self.entropy_observed

    def to_dict(self) -> dict:
        return {**asdict(self), "improved": self.improved}


def label_balance_report(b: BiasedTrainSet, corrected: CorrectedDataset) -> BalanceReport:
    """P(Y | A=1) from the observed rows against P_CA(Y) from the corrected set."""
    task = b.task
    y_obs = b.y_obs[b.observed_mask]
    y_ca = corrected.dataset.y
    edges = None if task.is_classification else shared_edges(y_obs, y_ca)
    ho, hc = histogram(y_obs, task, edges), histogram(y_ca, task, edges)
    share_o = share_c = None
    if task.is_classification:
        k = task.minority_class
        share_o, share_c = float(normalize(ho)[k]), float(normalize(hc)[k])
    return BalanceReport(entropy(ho), entropy(hc), share_o, share_c, ho.tolist(), hc.tolist())


def write_plot_data(path: str | os.PathLike, bins: list[str], series: dict[str, list[int]]) -> None:
    """Long-format (bin, source, count) table for plotting label histograms."""
    rows_bin, rows_src, rows_count = [], [], []
    for name, counts in series.items():
        for label, c in zip(bins, counts):
            rows_bin.append(label)
            rows_src.append(name)
            rows_count.append(int(c))
    write_table(path, ["bin", "source", "count"], [np.array(rows_bin), np.array(rows_src), np.array(rows_count)])
