"""Comparison models: uncorrected, inverse-propensity weighted, and Dragonnet."""

from __future__ import annotations

import os
from dataclasses import asdict, dataclass, field

import numpy as np
import torch
from torch import nn

from . import nets
from .bias import BiasedTrainSet, logistic_fit
from .data import DataError, Dataset, TaskSpec
from .task import FitHistory, TaskModel, TrainConfig, check_trainable, fit_with_validation, train_task_model


def train_uncorrected(b: BiasedTrainSet, task: TaskSpec | None = None, seed: int = 0, config: TrainConfig | None = None) -> TaskModel:
    """Task model fit on the observed rows only, unit weights."""
    obs = b.observed()
    check_trainable(obs.y, task or b.task)
    return train_task_model(obs, task, seed, config=config)


# ------------------------------------------------------------------------- IPW


@dataclass(frozen=True)
class PropensityTable:
    """P(A=1 | r=c) for both conditions, floored at ``clip_min``.

    ``row_scores`` optionally holds per-row propensities (feature-based
    estimate), aligned with the rows of the biased set it was fit on.
    """

    e_0: float
    e_1: float
    clip_min: float = 0.01
    row_scores: np.ndarray | None = field(default=None, compare=False, repr=False)

    def __post_init__(self) -> None:
        if not 0 < self.clip_min <= 1:
            raise ValueError("clip_min must lie in (0, 1]")
        for e in (self.e_0, self.e_1):
            if not self.clip_min <= e <= 1:
                raise ValueError(f"propensity {e} outside [{self.clip_min}, 1]")

    def weights(self, r: np.ndarray) -> np.ndarray:
        r = np.asarray(r)
        if self.row_scores is not None:
            if len(self.row_scores) != len(r):
                raise ValueError("per-row propensities do not align with the rows")
            return 1.0 / np.maximum(self.row_scores, self.clip_min)
        return np.where(r == 1, 1.0 / self.e_1, 1.0 / self.e_0)


def estimate_propensities(b: BiasedTrainSet, clip_min: float = 0.01, feature_based: bool = False) -> PropensityTable:
    """Observation frequency per recommendation condition.

    With ``feature_based`` a logistic model of ``a`` on ``x ⊕ w ⊕ r`` supplies
    per-row propensities; the per-condition table is still reported.
    """
    e = {}
    for c in (0, 1):
        sel = b.r == c
        if not sel.any():
            raise DataError(f"no rows with r={c}; propensity undefined")
        e[c] = max(float(b.a[sel].mean()), clip_min)
    rows = None
    if feature_based:
        feats = np.hstack([b.features(), b.r[:, None]])
        beta = logistic_fit(feats, b.a.astype(float))
        rows = np.maximum(1 / (1 + np.exp(-np.clip(np.c_[feats, np.ones(len(feats))] @ beta, -35, 35))), clip_min)
    return PropensityTable(e[0], e[1], clip_min, rows)


def train_ipw(b: BiasedTrainSet, p: PropensityTable, task: TaskSpec | None = None, seed: int = 0, config: TrainConfig | None = None) -> TaskModel:
    """Same loop as the uncorrected model, each observed row weighted by 1/e_r."""
    m = b.observed_mask
    weights = p.weights(b.r)[m] if p.row_scores is not None else p.weights(b.r[m])
    obs = b.observed()
    check_trainable(obs.y, task or b.task)
    return train_task_model(obs, task, seed, weights=weights, config=config)


# -------------------------------------------------------------------- Dragonnet


@dataclass(frozen=True)
class DragonnetConfig:
    trunk_width: int = 200
    trunk_layers: int = 2
    head_width: int = 100
    propensity_weight: float = 1.0
    train: TrainConfig = field(default_factory=TrainConfig)

    def __post_init__(self) -> None:
        if min(self.trunk_width, self.trunk_layers, self.head_width) < 1:
            raise ValueError("dragonnet layer widths and depth must be positive")
        if self.propensity_weight < 0:
            raise ValueError("propensity_weight must be non-negative")

    def hash(self) -> str:
        return self.train.hash() + f"-dn{self.trunk_width}x{self.trunk_layers}-{self.head_width}"


class DragonnetNet(nn.Module):
    """Shared trunk, a propensity head for P(r=1 | features), one outcome head per r."""

    def __init__(self, d_in: int, cfg: DragonnetConfig):
        super().__init__()
        sizes = [d_in] + [cfg.trunk_width] * cfg.trunk_layers
        self.trunk = nn.Sequential(nets.mlp(sizes), nn.ELU())
        self.propensity = nn.Linear(cfg.trunk_width, 1, dtype=nets.DTYPE)
        self.heads = nn.ModuleList(nets.mlp([cfg.trunk_width, cfg.head_width, 1]) for _ in range(2))

    def forward(self, features: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        h = self.trunk(features)
        outcomes = torch.cat([head(h) for head in self.heads], dim=1)
        return self.propensity(h).squeeze(-1), outcomes


class DragonnetModel:
    kind = "dragonnet"

    def __init__(self, net: DragonnetNet, task: TaskSpec, d_tab: int, d_rich: int, config: DragonnetConfig, seed: int, history: FitHistory | None = None):
        self.net = net
        self.task = task
        self.d_tab = d_tab
        self.d_rich = d_rich
        self.config = config
        self.seed = seed
        self.history = history or FitHistory()

    def propensity(self, features: np.ndarray) -> np.ndarray:
        with torch.no_grad():
            return torch.sigmoid(self.net(nets.tensor(features))[0]).numpy()

    def outcome_logits(self, features: np.ndarray, r: np.ndarray) -> np.ndarray:
        with torch.no_grad():
            _, out = self.net(nets.tensor(features))
        return out.numpy()[np.arange(len(r)), np.asarray(r, dtype=np.int64)]

    def predict(self, d: Dataset, r: np.ndarray | None = None) -> np.ndarray:
        """Outcome head chosen by each row's r; without r, by the propensity head's call."""
        if (d.d_tab, d.d_rich) != (self.d_tab, self.d_rich):
            raise DataError("schema mismatch")
        feats = d.features()
        if r is None:
            r = (self.propensity(feats) > 0.5).astype(np.int64)
        return (self.outcome_logits(feats, r) > 0).astype(float)

    def loss(self, features: torch.Tensor, y: torch.Tensor, r: torch.Tensor, observed: torch.Tensor) -> torch.Tensor:
        logit_r, out = self.net(features)
        bce = nn.functional.binary_cross_entropy_with_logits
        prop = bce(logit_r, r, reduction="mean")
        picked = out.gather(1, r.long()[:, None]).squeeze(-1)
        per_row = bce(picked, y, reduction="none") * observed
        outcome = per_row.sum() / observed.sum().clamp(min=1)
        return outcome + self.config.propensity_weight * prop

    def parameters(self) -> list[torch.Tensor]:
        return list(self.net.parameters())

    def save(self, path: str | os.PathLike) -> None:
        cfg = asdict(self.config)
        nets.save_checkpoint(
            path,
            self.kind,
            nets.schema_hash(self.d_tab, self.d_rich, self.task),
            {"dragonnet": cfg, "seed": self.seed, "task": self.task.to_dict(), "d_tab": self.d_tab, "d_rich": self.d_rich},
            {"net": self.net},
            telemetry=asdict(self.history),
        )

    @classmethod
    def load(cls, path: str | os.PathLike) -> DragonnetModel:
        meta, arrays = nets.load_checkpoint(path)
        c = meta["config"]
        raw = dict(c["dragonnet"])
        raw["train"] = TrainConfig(**raw["train"])
        cfg = DragonnetConfig(**raw)
        net = DragonnetNet(c["d_tab"] + c["d_rich"], cfg)
        nets.load_state_arrays(net, arrays["net"])
        return cls(net, TaskSpec.from_dict(c["task"]), c["d_tab"], c["d_rich"], cfg, c["seed"], FitHistory(**meta["telemetry"]))


def train_dragonnet(b: BiasedTrainSet, task: TaskSpec | None = None, seed: int = 0, config: DragonnetConfig | None = None) -> DragonnetModel:
    """Propensity head trained on every row; outcome heads on observed rows of their own r."""
    task = task or b.task
    if task.kind != "binary":
        raise DataError(f"dragonnet is unsupported for {task.kind} tasks (binary only)")
    cfg = config or DragonnetConfig()
    obs_mask = b.observed_mask
    check_trainable(b.y_obs[obs_mask], task)
    feats = nets.tensor(b.features())
    y = nets.tensor(np.nan_to_num(b.y_obs))
    r = nets.tensor(b.r)
    observed = nets.tensor(obs_mask.astype(float))
    with nets.seeded(seed):
        net = DragonnetNet(feats.shape[1], cfg)
    model = DragonnetModel(net, task, b.d_tab, b.d_rich, cfg, seed)

    def batch_loss(idx):
        return model.loss(feats[idx], y[idx], r[idx], observed[idx])

    model.history = fit_with_validation(net, batch_loss, len(b), cfg.train, seed)
    return model
