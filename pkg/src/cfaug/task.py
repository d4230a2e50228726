"""Downstream task models: training with validation selection, and evaluation."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np
import torch
from torch import nn

from . import nets
from .data import DataError, Dataset, TaskSpec
from .metrics import MetricsReport, compute_report


@dataclass(frozen=True)
class TrainConfig:
    """Recipe for the downstream predictor.

    Defaults follow the light fine-tuning recipe used for the final task
    layer: Adam at 2e-5, mini-batches of 8, 5 epochs, keep the epoch with the
    lowest validation loss.
    """

    hidden: int = 256
    epochs: int = 5
    learning_rate: float = 2e-5
    batch_size: int = 8
    val_fraction: float = 0.1

    def __post_init__(self) -> None:
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.hidden < 1 or self.batch_size < 1:
            raise ValueError("hidden and batch_size must be positive")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if not 0 <= self.val_fraction < 1:
            raise ValueError("val_fraction must lie in [0, 1)")

    def hash(self) -> str:
        return hashlib.sha256(json.dumps(asdict(self), sort_keys=True).encode()).hexdigest()[:12]


@dataclass
class FitHistory:
    train_loss: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)
    best_epoch: int = -1


def fit_with_validation(
    net: nn.Module,
    batch_loss: Callable[[np.ndarray], torch.Tensor],
    n: int,
    cfg: TrainConfig,
    seed: int,
    learning_rate: float | None = None,
) -> FitHistory:
    """Mini-batch Adam over rows ``0..n-1``; restores the best-validation epoch.

    ``batch_loss(index)`` returns the mean loss over the given row indices.
    With ``val_fraction == 0`` the last epoch is kept.
    """
    rng = np.random.default_rng(seed)
    order = rng.permutation(n)
    n_val = int(n * cfg.val_fraction)
    val, train = order[:n_val], order[n_val:]
    if len(train) == 0:
        raise DataError("no training rows left after the validation split")
    opt = torch.optim.Adam(net.parameters(), lr=learning_rate or cfg.learning_rate)
    hist = FitHistory()
    best_loss, best_state = np.inf, None
    for epoch in range(cfg.epochs):
        perm = rng.permutation(train)
        total = 0.0
        for start in range(0, len(perm), cfg.batch_size):
            idx = perm[start : start + cfg.batch_size]
            loss = batch_loss(idx)
            opt.zero_grad()
            loss.backward()
            opt.step()
            total += loss.item() * len(idx)
        hist.train_loss.append(total / len(train))
        if n_val:
            with torch.no_grad():
                v = batch_loss(val).item()
        else:
            v = -epoch  # keeps the latest epoch
        hist.val_loss.append(float(v) if n_val else float("nan"))
        if v < best_loss:
            best_loss, best_state, hist.best_epoch = v, nets.state_arrays(net), epoch
    nets.load_state_arrays(net, best_state)
    return hist


class TaskModel:
    """Single-hidden-layer network over ``x ⊕ w`` with a task-shaped head."""

    kind = "task"

    def __init__(self, net: nn.Module, task: TaskSpec, d_tab: int, d_rich: int, config: TrainConfig, seed: int, history: FitHistory | None = None):
        self.net = net
        self.task = task
        self.d_tab = d_tab
        self.d_rich = d_rich
        self.config = config
        self.seed = seed
        self.history = history or FitHistory()

    @property
    def d_in(self) -> int:
        return self.d_tab + self.d_rich

    def _check(self, d: Dataset) -> None:
        if (d.d_tab, d.d_rich) != (self.d_tab, self.d_rich):
            raise DataError(f"schema mismatch: model expects ({self.d_tab}, {self.d_rich}), got ({d.d_tab}, {d.d_rich})")

    def outputs(self, features: np.ndarray) -> torch.Tensor:
        with torch.no_grad():
            return self.net(nets.tensor(features))

    def predict(self, d: Dataset, r: np.ndarray | None = None) -> np.ndarray:
        self._check(d)
        return nets.predict_labels(self.task, self.outputs(d.features()))

    def scores(self, features: np.ndarray) -> np.ndarray:
        """Continuous prediction: P(y=1), expected class index, or the raw value."""
        out = self.outputs(features)
        if self.task.kind == "binary":
            return torch.sigmoid(out.squeeze(-1)).numpy()
        if self.task.kind == "multiclass":
            k = torch.arange(self.task.n_classes, dtype=nets.DTYPE)
            return (torch.softmax(out, -1) * k).sum(-1).numpy()
        return out.squeeze(-1).numpy()

    def loss(self, features: torch.Tensor, y: torch.Tensor, weights: torch.Tensor | None = None) -> torch.Tensor:
        per_row = nets.pointwise_loss(self.task, self.net(features), y)
        return (per_row if weights is None else per_row * weights).mean()

    def parameters(self) -> list[torch.Tensor]:
        return list(self.net.parameters())

    def save(self, path) -> None:
        nets.save_checkpoint(
            path,
            self.kind,
            nets.schema_hash(self.d_tab, self.d_rich, self.task),
            {"train": asdict(self.config), "seed": self.seed, "task": self.task.to_dict(), "d_tab": self.d_tab, "d_rich": self.d_rich},
            {"net": self.net},
            telemetry=asdict(self.history),
        )

    @classmethod
    def load(cls, path) -> TaskModel:
        meta, arrays = nets.load_checkpoint(path)
        c = meta["config"]
        task = TaskSpec.from_dict(c["task"])
        cfg = TrainConfig(**c["train"])
        net = build_task_net(c["d_tab"] + c["d_rich"], task, cfg.hidden)
        nets.load_state_arrays(net, arrays["net"])
        return cls(net, task, c["d_tab"], c["d_rich"], cfg, c["seed"], FitHistory(**meta["telemetry"]))


def build_task_net(d_in: int, task: TaskSpec, hidden: int) -> nn.Sequential:
    return nets.mlp([d_in, hidden, nets.output_dim(task)])


def _training_view(d) -> Dataset:
    # CorrectedDataset and similar wrappers expose the labelled rows as .dataset
    return getattr(d, "dataset", d)


def check_trainable(y: np.ndarray, task: TaskSpec) -> None:
    if len(y) == 0:
        raise DataError("no labelled rows to train on")
    if task.is_classification and len(np.unique(y)) < 2:
        raise DataError("training labels contain a single class")


def train_task_model(
    d,
    task: TaskSpec | None = None,
    seed: int = 0,
    weights: np.ndarray | None = None,
    config: TrainConfig | None = None,
) -> TaskModel:
    d = _training_view(d)
    task = task or d.task
    cfg = config or TrainConfig()
    check_trainable(d.y, task)
    if weights is not None:
        weights = np.asarray(weights, dtype=float)
        if weights.shape != (len(d),):
            raise ValueError(f"weights length {len(weights)} != {len(d)} rows")
    feats = nets.tensor(d.features())
    y = nets.tensor(d.y)
    wt = None if weights is None else nets.tensor(weights)
    with nets.seeded(seed):
        net = build_task_net(feats.shape[1], task, cfg.hidden)
    model = TaskModel(net, task, d.d_tab, d.d_rich, cfg, seed)

    def batch_loss(idx):
        return model.loss(feats[idx], y[idx], None if wt is None else wt[idx])

    model.history = fit_with_validation(net, batch_loss, len(d), cfg, seed)
    return model


def evaluate(m, d_eval: Dataset, task: TaskSpec | None = None, r: np.ndarray | None = None, seed: int | None = None) -> MetricsReport:
    """Metric suite for ``m`` on ``d_eval``; ``r`` is forwarded to models that route on it."""
    task = task or d_eval.task
    if len(d_eval) == 0:
        raise ValueError("empty evaluation set")
    pred = m.predict(d_eval, r=r)
    return compute_report(d_eval.y, pred, task, seed=seed, config_hash=m.config.hash())


def train_oracle(b, task: TaskSpec | None = None, seed: int = 0, config: TrainConfig | None = None) -> TaskModel:
    """Train on the biased set with every withheld label restored from the vault."""
    return train_task_model(b.restored("oracle"), task, seed, config=config)
