"""Counterfactually augmented dataset: observed labels plus generated ones."""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from .bias import BiasedTrainSet
from .data import ColumnSchema, DataError, Dataset, TaskSpec, read_table, write_table
from .gan import CfLabels

OBSERVED, GENERATED = "observed", "generated"


@dataclass(frozen=True, eq=False)
class CorrectedDataset:
    """A labelled ``Dataset`` with a per-row provenance flag.

    ``generated[i]`` is True when row i's label came from the generator.
    The mixture counts are the empirical P(A=1) and P(A=0) weights.
    """

    dataset: Dataset
    generated: np.ndarray

    def __post_init__(self) -> None:
        if self.generated.shape != (len(self.dataset),):
            raise ValueError("provenance flags must cover every row")
        self.generated.flags.writeable = False

    def __len__(self) -> int:
        return len(self.dataset)

    @property
    def task(self) -> TaskSpec:
        return self.dataset.task

    @property
    def mixture(self) -> tuple[int, int]:
        n_gen = int(self.generated.sum())
        return len(self) - n_gen, n_gen

    @property
    def sources(self) -> list[str]:
        return [GENERATED if g else OBSERVED for g in self.generated]

    def labels_from(self, source: str) -> np.ndarray:
        return self.dataset.y[self.generated == (source == GENERATED)]

    def write(self, path: str | os.PathLike) -> None:
        d = self.dataset
        schema = ColumnSchema.standard(d.d_tab, d.d_rich)
        header = [schema.id, *schema.tabular, *schema.rich, schema.label, "source"]
        write_table(path, header, [d.ids, *d.x.T, *d.w.T, d.y, np.array(self.sources)])

    @classmethod
    def read(cls, path: str | os.PathLike, task: TaskSpec) -> CorrectedDataset:
        header, rows = read_table(path)
        if "source" not in header:
            raise DataError(f"{path}: missing source column")
        pos = {c: i for i, c in enumerate(header)}
        xs = [pos[c] for c in header if c.startswith("x_")]
        ws = [pos[c] for c in header if c.startswith("w_")]
        num = np.array([[float(r[i]) for i in [pos["id"], *xs, *ws, pos["y"]]] for r in rows])
        src = np.array([r[pos["source"]] == GENERATED for r in rows])
        n_x = len(xs)
        d = Dataset(
            num[:, 0].astype(np.int64),
            num[:, 1 : 1 + n_x],
            num[:, 1 + n_x : 1 + n_x + len(ws)],
            num[:, -1],
            task,
        )
        return cls(d, src)


def augment(b: BiasedTrainSet, cf: CfLabels) -> CorrectedDataset:
    """Fill each a = 0 row with its generated label; observed labels pass through."""
    hidden = b.a == 0
    want = np.sort(b.ids[hidden])
    have = np.sort(cf.ids)
    if not np.array_equal(want, have):
        missing = np.setdiff1d(want, have)
        extra = np.setdiff1d(have, want)
        raise DataError(f"counterfactual labels do not match the unobserved rows: missing {missing[:5].tolist()}, extra {extra[:5].tolist()}")
    y = b.y_obs.copy()
    if hidden.any():
        order = np.argsort(cf.ids)
        pos = np.searchsorted(cf.ids[order], b.ids[hidden])
        y[hidden] = cf.labels[order][pos]
    b.task.validate_labels(y)
    d = Dataset(b.ids, b.x, b.w, y, b.task)
    return CorrectedDataset(d, hidden.copy())
