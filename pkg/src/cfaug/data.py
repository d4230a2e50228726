"""Dataset model, delimited-text ingestion, label binarization and splitting."""

from __future__ import annotations

import csv
import math
import os
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

BINARY = "binary"
MULTICLASS = "multiclass"
REGRESSION = "regression"
_KINDS = (BINARY, MULTICLASS, REGRESSION)


class DataError(ValueError):
    """Raised when input data violates the dataset contract."""


@dataclass(frozen=True)
class TaskSpec:
    kind: str
    n_classes: int | None = None
    minority_class: int | None = None

    def __post_init__(self) -> None:
        if self.kind not in _KINDS:
            raise ValueError(f"unknown task kind {self.kind!r}")
        if self.kind == BINARY:
            object.__setattr__(self, "n_classes", 2)
        if self.kind == MULTICLASS and (self.n_classes is None or self.n_classes < 2):
            raise ValueError("multiclass task needs n_classes >= 2")
        if self.kind == REGRESSION:
            if self.minority_class is not None:
                raise ValueError("regression task has no minority class")
            object.__setattr__(self, "n_classes", None)
        elif self.minority_class is None:
            object.__setattr__(self, "minority_class", 0)
        elif not 0 <= self.minority_class < self.n_classes:
            raise ValueError(f"minority_class {self.minority_class} out of range")

    @classmethod
    def binary(cls, minority_class: int = 0) -> TaskSpec:
        return cls(BINARY, 2, minority_class)

    @classmethod
    def multiclass(cls, n_classes: int, minority_class: int = 0) -> TaskSpec:
        return cls(MULTICLASS, n_classes, minority_class)

    @classmethod
    def regression(cls) -> TaskSpec:
        return cls(REGRESSION)

    @property
    def is_classification(self) -> bool:
        return self.kind != REGRESSION

    def validate_labels(self, y: np.ndarray) -> None:
        """Raise DataError naming the first (1-based) row whose label is invalid."""
        y = np.asarray(y, dtype=float)
        bad = ~np.isfinite(y)
        if self.is_classification:
            bad |= (y != np.round(y)) | (y < 0) | (y >= self.n_classes)
        if bad.any():
            i = int(np.flatnonzero(bad)[0])
            raise DataError(f"row {i + 1}: label {y[i]!r} out of range for {self.kind} task")

    def to_dict(self) -> dict:
        return {"kind": self.kind, "n_classes": self.n_classes, "minority_class": self.minority_class}

    @classmethod
    def from_dict(cls, d: dict) -> TaskSpec:
        return cls(d["kind"], d.get("n_classes"), d.get("minority_class"))


@dataclass(frozen=True)
class Row:
    id: int
    x: np.ndarray
    w: np.ndarray
    y: float


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class Dataset:
    """Immutable columnar store of (id, x, w, y) rows.

    ``x`` holds the tabular block (n, d_tab) and ``w`` the precomputed rich
    embedding block (n, d_rich); ``d_rich`` may be 0.
    """

    ids: np.ndarray
    x: np.ndarray
    w: np.ndarray
    y: np.ndarray
    task: TaskSpec

    def __post_init__(self) -> None:
        ids = np.asarray(self.ids, dtype=np.int64).reshape(-1)
        n = len(ids)
        x = np.asarray(self.x, dtype=float).reshape(n, -1) if n else np.zeros((0, np.shape(self.x)[-1]))
        w = np.asarray(self.w, dtype=float)
        w = w.reshape(n, -1) if w.size else np.zeros((n, w.shape[-1] if w.ndim == 2 else 0))
        y = np.asarray(self.y, dtype=float).reshape(-1)
        if len(y) != n:
            raise DataError(f"{len(y)} labels for {n} rows")
        if len(np.unique(ids)) != n:
            raise DataError("row ids are not unique")
        for name, block in (("x", x), ("w", w)):
            if not np.isfinite(block).all():
                i = int(np.flatnonzero(~np.isfinite(block).all(axis=1))[0])
                raise DataError(f"row {i + 1}: non-finite value in {name}")
        self.task.validate_labels(y)
        object.__setattr__(self, "ids", _frozen(ids))
        object.__setattr__(self, "x", _frozen(x))
        object.__setattr__(self, "w", _frozen(w))
        object.__setattr__(self, "y", _frozen(y))

    def __len__(self) -> int:
        return len(self.ids)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Dataset):
            return NotImplemented
        return (
            self.task == other.task
            and np.array_equal(self.ids, other.ids)
            and np.array_equal(self.x, other.x)
            and np.array_equal(self.w, other.w)
            and np.array_equal(self.y, other.y)
        )

    @property
    def d_tab(self) -> int:
        return self.x.shape[1]

    @property
    def d_rich(self) -> int:
        return self.w.shape[1]

    def features(self) -> np.ndarray:
        return np.hstack([self.x, self.w])

    def rows(self) -> Iterator[Row]:
        for i in range(len(self)):
            yield Row(int(self.ids[i]), self.x[i], self.w[i], float(self.y[i]))

    def subset(self, index: np.ndarray | Sequence[int]) -> Dataset:
        index = np.asarray(index, dtype=np.int64) if not isinstance(index, np.ndarray) or index.dtype != bool else index
        return Dataset(self.ids[index], self.x[index], self.w[index], self.y[index], self.task)

    def with_labels(self, y: np.ndarray, task: TaskSpec | None = None) -> Dataset:
        return Dataset(self.ids, self.x, self.w, y, task or self.task)

    def select_rich(self, columns: Sequence[int] | None) -> Dataset:
        """Keep only the given rich-embedding columns (``None`` or [] drops the block)."""
        cols = list(columns or [])
        return Dataset(self.ids, self.x, self.w[:, cols], self.y, self.task)

    def tabular_only(self) -> Dataset:
        return self.select_rich(None)


# --------------------------------------------------------------------------- I/O


@dataclass(frozen=True)
class ColumnSchema:
    """Assigns roles to the header columns of a delimited file."""

    id: str
    tabular: tuple[str, ...]
    label: str
    rich: tuple[str, ...] = field(default_factory=tuple)

    @classmethod
    def standard(cls, d_tab: int, d_rich: int = 0) -> ColumnSchema:
        return cls(
            "id",
            tuple(f"x_{i}" for i in range(d_tab)),
            "y",
            tuple(f"w_{i}" for i in range(d_rich)),
        )

    @classmethod
    def for_toolkit_file(cls, path: str | os.PathLike) -> ColumnSchema:
        """Standard schema sized from the header of a file this toolkit wrote."""
        header = read_header(path)
        return cls.standard(
            sum(1 for c in header if c.startswith("x_")),
            sum(1 for c in header if c.startswith("w_")),
        )

    def feature_columns(self) -> list[str]:
        return list(self.tabular) + list(self.rich)


def read_header(path: str | os.PathLike) -> list[str]:
    with open(path, newline="") as fh:
        for line in fh:
            if not line.startswith("#"):
                return next(csv.reader([line]))
    raise DataError(f"{path}: no header")


def format_value(v) -> str:
    """Shortest decimal string that round-trips the float exactly; text passes through."""
    if isinstance(v, (str, np.str_)):
        return str(v)
    v = float(v)
    if v.is_integer() and abs(v) < 1e15:
        return str(int(v))
    return repr(v)


def _data_lines(fh) -> Iterator[str]:
    for line in fh:
        if not line.startswith("#"):
            yield line


def read_table(path: str | os.PathLike) -> tuple[list[str], list[list[str]]]:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"no such dataset file: {path}")
    with open(path, newline="") as fh:
        reader = csv.reader(_data_lines(fh))
        header = next(reader, None)
        if header is None:
            raise DataError(f"{path}: no rows")
        rows = [r for r in reader if r]
    return header, rows


def _parse_float(cell: str, row: int, col: str) -> float:
    cell = cell.strip()
    if cell == "":
        raise DataError(f"row {row}: missing value in column {col!r}")
    try:
        v = float(cell)
    except ValueError:
        raise DataError(f"row {row}: non-numeric value {cell!r} in column {col!r}") from None
    if not math.isfinite(v):
        raise DataError(f"row {row}: non-finite value in column {col!r}")
    return v


def load_dataset(path: str | os.PathLike, schema: ColumnSchema, task: TaskSpec) -> Dataset:
    """Read a header-plus-rows delimited file into a validated Dataset.

    Rows are numbered from 1 (the first line after the header) in error
    messages. Missing values are rejected, never imputed.
    """
    header, rows = read_table(path)
    if not rows:
        raise DataError(f"{path}: no rows")
    pos = {c: i for i, c in enumerate(header)}
    wanted = [schema.id, schema.label, *schema.feature_columns()]
    missing = [c for c in wanted if c not in pos]
    if missing:
        raise DataError(f"{path}: header lacks columns {missing}")

    n = len(rows)
    ids = np.empty(n, dtype=np.int64)
    x = np.empty((n, len(schema.tabular)))
    w = np.empty((n, len(schema.rich)))
    y = np.empty(n)
    for i, cells in enumerate(rows):
        k = i + 1
        if len(cells) != len(header):
            raise DataError(f"row {k}: expected {len(header)} cells, got {len(cells)}")
        idv = _parse_float(cells[pos[schema.id]], k, schema.id)
        if not idv.is_integer():
            raise DataError(f"row {k}: id {idv} is not an integer")
        ids[i] = int(idv)
        for j, c in enumerate(schema.tabular):
            x[i, j] = _parse_float(cells[pos[c]], k, c)
        for j, c in enumerate(schema.rich):
            w[i, j] = _parse_float(cells[pos[c]], k, c)
        y[i] = _parse_float(cells[pos[schema.label]], k, schema.label)
    task.validate_labels(y)
    return Dataset(ids, x, w, y, task)


def write_table(
    path: str | os.PathLike,
    header: Sequence[str],
    columns: Sequence[np.ndarray],
    comment: str | None = None,
) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    n = len(columns[0]) if columns else 0
    with open(path, "w", newline="") as fh:
        if comment:
            fh.write(f"# {comment}\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for i in range(n):
            writer.writerow(["" if _is_blank(col[i]) else format_value(col[i]) for col in columns])


def _is_blank(v) -> bool:
    if isinstance(v, (str, np.str_)):
        return v == ""
    return v is None or (isinstance(v, float) and math.isnan(v)) or (isinstance(v, np.floating) and np.isnan(v))


def dataset_columns(d: Dataset) -> tuple[list[str], list[np.ndarray]]:
    schema = ColumnSchema.standard(d.d_tab, d.d_rich)
    header = [schema.id, *schema.tabular, *schema.rich, schema.label]
    cols = [d.ids, *d.x.T, *d.w.T, d.y]
    return header, cols


def write_dataset(d: Dataset, path: str | os.PathLike) -> None:
    header, cols = dataset_columns(d)
    write_table(path, header, cols)


# ----------------------------------------------------------------- binarization


def binarize_labels(d: Dataset, positive_share: float) -> Dataset:
    """Threshold continuous/ordinal labels at their (1 - positive_share) quantile.

    Uses the inverted-CDF quantile; values equal to the threshold map to 0.
    """
    if not 0 < positive_share < 1:
        raise ValueError("positive_share must lie in (0, 1)")
    y = d.y
    if len(y) == 0 or np.all(y == y[0]):
        raise DataError("all labels identical; no threshold separates classes")
    t = float(np.quantile(y, 1 - positive_share, method="inverted_cdf"))
    yb = (y > t).astype(float)
    share = yb.mean()
    if abs(share - positive_share) > 0.03:
        warnings.warn(
            f"ties at threshold {t}: positive share {share:.3f} vs requested {positive_share}",
            stacklevel=2,
        )
    minority = 0 if share >= 0.5 else 1
    return d.with_labels(yb, TaskSpec.binary(minority))


# ---------------------------------------------------------------------- splits


@dataclass(frozen=True)
class SplitBundle:
    d_original: Dataset
    d_train_pool: Dataset
    d_eval: Dataset

    def sizes(self) -> tuple[int, int, int]:
        return len(self.d_original), len(self.d_train_pool), len(self.d_eval)


def split_sizes(n: int, fractions: Sequence[float]) -> tuple[int, int, int]:
    f_orig, f_train, f_eval = fractions
    if min(fractions) <= 0 or sum(fractions) > 1 + 1e-9:
        raise ValueError(f"fractions must be positive and sum to <= 1, got {tuple(fractions)}")
    n_orig, n_train = round(f_orig * n), round(f_train * n)
    if abs(sum(fractions) - 1) < 1e-9:
        n_eval = n - n_orig - n_train
    else:
        n_eval = min(round(f_eval * n), n - n_orig - n_train)
    sizes = (n_orig, n_train, n_eval)
    if min(sizes) <= 0:
        raise ValueError(f"split sizes {sizes} contain an empty split")
    return sizes


def split_dataset(d: Dataset, fractions: Sequence[float], seed: int) -> SplitBundle:
    """Uniform random partition into D_original, D_train (pool) and D_eval."""
    n_orig, n_train, n_eval = split_sizes(len(d), fractions)
    perm = np.random.default_rng(seed).permutation(len(d))
    a, b = n_orig, n_orig + n_train
    return SplitBundle(
        d.subset(np.sort(perm[:a])),
        d.subset(np.sort(perm[a:b])),
        d.subset(np.sort(perm[b : b + n_eval])),
    )
