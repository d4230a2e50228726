"""Synthetic benchmark data: Gaussian features, label from a noisy linear score."""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .data import Dataset, TaskSpec, binarize_labels


@dataclass(frozen=True)
class SynthConfig:
    n: int = 22_895
    d_tab: int = 8
    d_rich: int = 8
    noise_sd: float = 0.5
    positive_share: float = 0.75
    weight_seed: int = 0
    data_seed: int = 0
    binarize: bool = True

    def __post_init__(self) -> None:
        if self.n < 1:
            raise ValueError("n must be >= 1")
        if self.d_tab < 1 or self.d_rich < 0:
            raise ValueError("need d_tab >= 1 and d_rich >= 0")
        if self.noise_sd < 0:
            raise ValueError("noise_sd must be >= 0")
        if not 0 < self.positive_share < 1:
            raise ValueError("positive_share must lie in (0, 1)")


@dataclass(frozen=True)
class GroundTruth:
    beta_tab: np.ndarray
    beta_rich: np.ndarray
    ids: np.ndarray
    scores: np.ndarray

    def to_json(self) -> str:
        return json.dumps(
            {
                "beta_tab": self.beta_tab.tolist(),
                "beta_rich": self.beta_rich.tolist(),
                "ids": self.ids.tolist(),
                "scores": self.scores.tolist(),
            }
        )

    @classmethod
    def from_json(cls, text: str) -> GroundTruth:
        d = json.loads(text)
        return cls(
            np.asarray(d["beta_tab"], dtype=float),
            np.asarray(d["beta_rich"], dtype=float),
            np.asarray(d["ids"], dtype=np.int64),
            np.asarray(d["scores"], dtype=float),
        )


def _unit_variance_weights(rng: np.random.Generator, d: int) -> np.ndarray:
    # For x ~ N(0, I), Var(beta . x) = |beta|^2, so a unit-norm beta gives each block unit variance.
    if d == 0:
        return np.zeros(0)
    beta = rng.standard_normal(d)
    return beta / np.linalg.norm(beta)


def generate_synthetic(cfg: SynthConfig) -> tuple[Dataset, GroundTruth]:
    wrng = np.random.default_rng(cfg.weight_seed)
    beta_tab = _unit_variance_weights(wrng, cfg.d_tab)
    beta_rich = _unit_variance_weights(wrng, cfg.d_rich)

    rng = np.random.default_rng(cfg.data_seed)
    x = rng.standard_normal((cfg.n, cfg.d_tab))
    w = rng.standard_normal((cfg.n, cfg.d_rich))
    noise = rng.standard_normal(cfg.n) * cfg.noise_sd
    scores = x @ beta_tab + w @ beta_rich + noise

    ids = np.arange(cfg.n, dtype=np.int64)
    d = Dataset(ids, x, w, scores, TaskSpec.regression())
    if cfg.binarize:
        d = binarize_labels(d, cfg.positive_share)
    return d, GroundTruth(beta_tab, beta_rich, ids, scores)


def write_ground_truth(gt: GroundTruth, path: str | os.PathLike) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(gt.to_json() + "\n")


def read_ground_truth(path: str | os.PathLike) -> GroundTruth:
    return GroundTruth.from_json(Path(path).read_text())


def config_dict(cfg: SynthConfig) -> dict:
    return asdict(cfg)
