"""Presentation-bias induction.

A tabular-only recommender is fit on D_original; its recommendations ``r``
decide which D_train labels get observed (``a``) and which D_eval rows
survive into the biased evaluation split. Withheld labels go into a
``Vault`` that only oracle and analysis code may open.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from .data import (
    ColumnSchema,
    DataError,
    Dataset,
    TaskSpec,
    format_value,
    read_table,
    write_table,
)
from .task import check_trainable

VAULT_MODES = ("oracle", "analysis")
VAULT_MARKER = "ORACLE-ONLY withheld labels; readable in oracle/analysis mode only"


class VaultAccessError(PermissionError):
    pass


class Vault:
    """Sealed mapping id -> true label for rows whose label was masked."""

    def __init__(self, ids: np.ndarray, labels: np.ndarray, sealed_missing: bool = False):
        self._ids = np.asarray(ids, dtype=np.int64)
        self._labels = np.asarray(labels, dtype=float)
        self._missing = sealed_missing

    @classmethod
    def missing(cls) -> Vault:
        """Placeholder for a biased set loaded without its vault file."""
        return cls(np.zeros(0, np.int64), np.zeros(0), sealed_missing=True)

    @property
    def ids(self) -> np.ndarray:
        return self._ids.copy()

    @property
    def is_missing(self) -> bool:
        return self._missing

    def __len__(self) -> int:
        return len(self._ids)

    def reveal(self, mode: str) -> tuple[np.ndarray, np.ndarray]:
        if mode not in VAULT_MODES:
            raise VaultAccessError(f"vault is readable only in {VAULT_MODES} mode, not {mode!r}")
        if self._missing:
            raise VaultAccessError("vault missing: this biased set was loaded without its oracle file")
        return self._ids.copy(), self._labels.copy()


# ------------------------------------------------------------------ tab model


def logistic_fit(features: np.ndarray, target: np.ndarray, ridge: float = 1e-6, iters: int = 100) -> np.ndarray:
    """Newton-Raphson logistic regression; returns coefficients with the intercept last."""
    xs = np.hstack([features, np.ones((len(features), 1))])
    beta = np.zeros(xs.shape[1])
    for _ in range(iters):
        p = 1 / (1 + np.exp(-np.clip(xs @ beta, -35, 35)))
        grad = xs.T @ (target - p) - ridge * beta
        hess = (xs * (p * (1 - p))[:, None]).T @ xs + ridge * np.eye(len(beta))
        step = np.linalg.solve(hess, grad)
        beta = beta + step
        if np.abs(step).max() < 1e-10:
            break
    return beta


@dataclass
class TabModel:
    """Linear recommender over the tabular block only.

    Binary tasks use logistic regression and recommend the predicted class.
    Multiclass and regression tasks use least squares on the label value and
    recommend rows whose prediction exceeds ``t_rec``, the median training
    prediction.
    """

    task: TaskSpec
    d_tab: int
    coef: np.ndarray
    t_rec: float | None = None

    def scores(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.ndim != 2 or x.shape[1] != self.d_tab:
            raise DataError(f"tabular dimension mismatch: model expects {self.d_tab}, got {x.shape[-1]}")
        s = x @ self.coef[:-1] + self.coef[-1]
        if self.task.kind == "binary":
            return 1 / (1 + np.exp(-np.clip(s, -35, 35)))
        return s

    def recommend(self, x: np.ndarray) -> np.ndarray:
        s = self.scores(x)
        if self.task.kind == "binary":
            return (s > 0.5).astype(np.int64)
        return (s > self.t_rec).astype(np.int64)


def fit_tab_model(d_original: Dataset, task: TaskSpec | None = None, seed: int = 0) -> TabModel:
    """Fit M_tab on ``x`` only. The fit is a deterministic convex solve; ``seed`` is accepted for interface symmetry."""
    task = task or d_original.task
    if len(d_original) == 0:
        raise DataError("d_original is empty")
    x = d_original.x
    if task.kind == "binary":
        check_trainable(d_original.y, task)
        return TabModel(task, x.shape[1], logistic_fit(x, d_original.y))
    if task.is_classification:
        check_trainable(d_original.y, task)
    design = np.hstack([x, np.ones((len(x), 1))])
    coef, *_ = np.linalg.lstsq(design, d_original.y, rcond=None)
    m = TabModel(task, x.shape[1], coef)
    m.t_rec = float(np.median(m.scores(x)))
    return m


def predict_recs(m: TabModel, d: Dataset) -> np.ndarray:
    return m.recommend(d.x)


# ------------------------------------------------------------- biased train


@dataclass(frozen=True, eq=False)
class BiasedTrainSet:
    """Training pool after masking and row removal.

    ``y_obs`` is NaN wherever ``a == 0``; the true values live only in the vault.
    """

    ids: np.ndarray
    x: np.ndarray
    w: np.ndarray
    y_obs: np.ndarray
    r: np.ndarray
    a: np.ndarray
    task: TaskSpec
    vault: Vault

    def __post_init__(self) -> None:
        hidden = self.a == 0
        if not np.array_equal(np.isnan(self.y_obs), hidden):
            raise DataError("label visibility must match a")
        if not self.vault.is_missing and not np.array_equal(np.sort(self.vault.ids), np.sort(self.ids[hidden])):
            raise DataError("vault must cover exactly the a = 0 rows")
        for arr in (self.ids, self.x, self.w, self.y_obs, self.r, self.a):
            arr.flags.writeable = False

    def __len__(self) -> int:
        return len(self.ids)

    @property
    def d_tab(self) -> int:
        return self.x.shape[1]

    @property
    def d_rich(self) -> int:
        return self.w.shape[1]

    def features(self) -> np.ndarray:
        return np.hstack([self.x, self.w])

    @property
    def observed_mask(self) -> np.ndarray:
        return self.a == 1

    def observed(self) -> Dataset:
        """Rows with a = 1 and their factual labels."""
        m = self.observed_mask
        return Dataset(self.ids[m], self.x[m], self.w[m], self.y_obs[m], self.task)

    def unobserved_ids(self) -> np.ndarray:
        return self.ids[self.a == 0]

    def restored(self, mode: str) -> Dataset:
        """Every row with its true label (vault access; oracle/analysis only)."""
        vids, vlabels = self.vault.reveal(mode)
        y = self.y_obs.copy()
        pos = {int(i): k for k, i in enumerate(self.ids)}
        for i, lab in zip(vids, vlabels):
            y[pos[int(i)]] = lab
        return Dataset(self.ids, self.x, self.w, y, self.task)

    def select_rich(self, columns) -> BiasedTrainSet:
        cols = list(columns or [])
        return BiasedTrainSet(self.ids, self.x, self.w[:, cols], self.y_obs, self.r, self.a, self.task, self.vault)


def induce_train_bias(
    pool: Dataset,
    r: np.ndarray,
    label_drop: float = 0.9,
    row_drop: float = 0.35,
    seed: int = 0,
) -> BiasedTrainSet:
    """Mask r = 0 labels with prob. ``label_drop``, then drop rows with prob. ``row_drop``."""
    r = np.asarray(r, dtype=np.int64)
    if len(r) != len(pool):
        raise ValueError(f"{len(r)} recommendations for {len(pool)} rows")
    for name, f in (("label_drop", label_drop), ("row_drop", row_drop)):
        if not 0 <= f < 1:
            raise ValueError(f"{name} must lie in [0, 1)")
    rng = np.random.default_rng(seed)
    n = len(pool)
    masked = (r == 0) & (rng.random(n) < label_drop)
    keep = rng.random(n) >= row_drop
    if not (keep & ~masked).any():
        raise DataError("biased train set has zero observed labels")
    a = np.where(masked, 0, 1)[keep]
    y_true = pool.y[keep]
    ids = pool.ids[keep]
    y_obs = np.where(a == 1, y_true, np.nan)
    vault = Vault(ids[a == 0], y_true[a == 0])
    return BiasedTrainSet(ids, pool.x[keep], pool.w[keep], y_obs, r[keep], a, pool.task, vault)


def make_biased_eval(d_eval: Dataset, m: TabModel, sample_drop: float = 0.9, seed: int = 0) -> Dataset:
    """Drop r = 0 eval rows with probability ``sample_drop``; survivors keep true labels."""
    if len(d_eval) == 0:
        raise DataError("d_eval is empty")
    if not 0 <= sample_drop <= 1:
        raise ValueError("sample_drop must lie in [0, 1]")
    r = predict_recs(m, d_eval)
    rng = np.random.default_rng(seed)
    drop = (r == 0) & (rng.random(len(d_eval)) < sample_drop)
    if drop.all():
        raise DataError("biased eval split is empty")
    return d_eval.subset(np.flatnonzero(~drop))


# -------------------------------------------------------------- serialization


def write_biased(b: BiasedTrainSet, path: str | os.PathLike) -> None:
    """data_core columns plus r and a; masked labels are written as empty cells."""
    schema = ColumnSchema.standard(b.d_tab, b.d_rich)
    header = [schema.id, *schema.tabular, *schema.rich, schema.label, "r", "a"]
    write_table(path, header, [b.ids, *b.x.T, *b.w.T, b.y_obs, b.r, b.a])


def write_vault(b: BiasedTrainSet, path: str | os.PathLike) -> None:
    ids, labels = b.vault.reveal("oracle")
    write_table(path, ["id", "y"], [ids, labels], comment=VAULT_MARKER)


def read_vault(path: str | os.PathLike, mode: str) -> Vault:
    if mode not in VAULT_MODES:
        raise VaultAccessError(f"refusing to read oracle-only file {path} in {mode!r} mode")
    with open(path) as fh:
        if VAULT_MARKER not in fh.readline():
            raise DataError(f"{path} is not a vault file")
    header, rows = read_table(path)
    ids = np.array([int(float(r[0])) for r in rows], dtype=np.int64)
    labels = np.array([float(r[1]) for r in rows])
    return Vault(ids, labels)


def read_biased(
    path: str | os.PathLike,
    task: TaskSpec,
    vault_path: str | os.PathLike | None = None,
    mode: str | None = None,
) -> BiasedTrainSet:
    header, rows = read_table(path)
    if not rows:
        raise DataError(f"{path}: no rows")
    pos = {c: i for i, c in enumerate(header)}
    xs = [c for c in header if c.startswith("x_")]
    ws = [c for c in header if c.startswith("w_")]
    table = np.array([[np.nan if c.strip() == "" else float(c) for c in r] for r in rows])
    ids = table[:, pos["id"]].astype(np.int64)
    a = table[:, pos["a"]].astype(np.int64)
    y_obs = table[:, pos["y"]]
    if np.isnan(table[:, [pos[c] for c in xs + ws]]).any():
        bad = int(np.flatnonzero(np.isnan(table[:, [pos[c] for c in xs + ws]]).any(axis=1))[0]) + 1
        raise DataError(f"row {bad}: missing feature value")
    vault = read_vault(vault_path, mode) if vault_path is not None else Vault.missing()
    return BiasedTrainSet(
        ids,
        table[:, [pos[c] for c in xs]],
        table[:, [pos[c] for c in ws]].reshape(len(rows), len(ws)),
        y_obs,
        table[:, pos["r"]].astype(np.int64),
        a,
        task,
        vault,
    )


def label_share_text(b: BiasedTrainSet) -> str:
    obs = b.y_obs[b.a == 1]
    return f"n={len(b)} observed={len(obs)} mean_observed_label={format_value(obs.mean()) if len(obs) else 'nan'}"
