"""Counterfactual label GAN with one discriminator per recommendation condition.

The generator maps ``x ⊕ w ⊕ z`` to a label head. On observed rows its
output is fit to the factual label (supervised loss); on unobserved rows it
must fool the discriminator of that row's recommendation condition, which
is trained to tell factual labels of observed rows from generated labels of
unobserved rows with the same ``r``.
"""

from __future__ import annotations

import os
from dataclasses import asdict, dataclass, field, replace
from typing import Iterator

import numpy as np
import torch
from torch import nn

from . import nets
from .bias import BiasedTrainSet
from .data import DataError, TaskSpec, read_table, write_table

LABEL_PASSING = ("straight_through", "soft")
MODES = ("expected", "sampled")


@dataclass(frozen=True)
class GanConfig:
    """GAN hyperparameters.

    ``noise_dim=None`` means "same as d_tab". ``label_passing`` controls what
    the discriminators see for generated labels: ``soft`` shows the label
    head's probabilities, ``straight_through`` shows a hard sampled label and
    back-propagates through the probabilities.
    """

    hidden_size: int = 128
    g_iters: int = 500
    d_steps: int = 8
    learning_rate: float = 1e-5
    separate_discriminators: bool = True
    scale_features: bool = False
    noise_dim: int | None = None
    batch_size: int = 128
    adv_weight: float = 1.0
    label_passing: str = "soft"

    def __post_init__(self) -> None:
        if self.g_iters < 1:
            raise ValueError("untrained model: g_iters must be positive")
        for name in ("hidden_size", "d_steps", "batch_size"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.batch_size < 2:
            raise ValueError("batch_size must be at least 2 for a 50/50 mixture")
        if self.noise_dim is not None and self.noise_dim < 1:
            raise ValueError("noise_dim must be positive")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if self.adv_weight < 0:
            raise ValueError("adv_weight must be non-negative")
        if self.label_passing not in LABEL_PASSING:
            raise ValueError(f"label_passing must be one of {LABEL_PASSING}")

    def resolved_noise_dim(self, d_tab: int) -> int:
        return self.noise_dim or max(d_tab, 1)


@dataclass
class GanTelemetry:
    sup_loss: list[float] = field(default_factory=list)
    adv_loss: dict[str, list[float]] = field(default_factory=dict)
    d_loss: dict[str, list[float]] = field(default_factory=dict)
    d_accuracy: dict[str, list[float]] = field(default_factory=dict)
    # rows_seen[d][r]: how many rows with recommendation r discriminator d was shown
    rows_seen: dict[str, dict[str, int]] = field(default_factory=dict)
    fallback_conditions: list[str] = field(default_factory=list)
    # final accuracy against emitted (hard) labels, and against the relaxed labels D trained on
    final_d_accuracy: dict[str, float] = field(default_factory=dict)
    final_d_accuracy_train_input: dict[str, float] = field(default_factory=dict)


def _cond_key(c: int | None) -> str:
    return "all" if c is None else str(c)


def label_width(task: TaskSpec) -> int:
    return task.n_classes if task.kind == "multiclass" else 1


def encode_labels(task: TaskSpec, y: torch.Tensor) -> torch.Tensor:
    """Factual labels in the discriminator's label encoding."""
    if task.kind == "multiclass":
        return nn.functional.one_hot(y.long(), task.n_classes).to(nets.DTYPE)
    return y.reshape(-1, 1)


class CganModel:
    kind = "cgan"

    def __init__(
        self,
        generator: nn.Module,
        discriminators: dict[str, nn.Module],
        task: TaskSpec,
        d_tab: int,
        d_rich: int,
        config: GanConfig,
        seed: int,
        telemetry: GanTelemetry | None = None,
        shift: np.ndarray | None = None,
        scale: np.ndarray | None = None,
    ):
        self.generator = generator
        self.discriminators = discriminators
        self.task = task
        self.d_tab = d_tab
        self.d_rich = d_rich
        self.config = config
        self.seed = seed
        self.telemetry = telemetry or GanTelemetry()
        d = d_tab + d_rich
        self.shift = np.zeros(d) if shift is None else np.asarray(shift, dtype=float)
        self.scale = np.ones(d) if scale is None else np.asarray(scale, dtype=float)

    @property
    def noise_dim(self) -> int:
        return self.config.resolved_noise_dim(self.d_tab)

    @property
    def schema(self) -> str:
        return nets.schema_hash(self.d_tab, self.d_rich, self.task)

    def check_schema(self, b: BiasedTrainSet) -> None:
        if (b.d_tab, b.d_rich) != (self.d_tab, self.d_rich) or b.task != self.task:
            raise DataError(
                f"schema mismatch: model trained on ({self.d_tab}, {self.d_rich}, {self.task.kind}), "
                f"got ({b.d_tab}, {b.d_rich}, {b.task.kind})"
            )

    def prepare(self, features: np.ndarray) -> torch.Tensor:
        return nets.tensor((np.asarray(features, dtype=float) - self.shift) / self.scale)

    def head(self, feats: torch.Tensor, z: torch.Tensor) -> torch.Tensor:
        """Raw generator output: logit, class logits, or scalar."""
        return self.generator(torch.cat([feats, z], dim=1))

    def noise(self, n: int, gen: torch.Generator) -> torch.Tensor:
        return torch.rand(n, self.noise_dim, generator=gen, dtype=nets.DTYPE)

    def soft_labels(self, out: torch.Tensor) -> torch.Tensor:
        if self.task.kind == "binary":
            return torch.sigmoid(out)
        if self.task.kind == "multiclass":
            return torch.softmax(out, dim=-1)
        return out

    def hard_labels(self, out: torch.Tensor, u: torch.Tensor) -> torch.Tensor:
        """Labels the generator emits, encoded as a discriminator sees them."""
        soft = self.soft_labels(out)
        if self.task.kind == "regression":
            return soft
        if self.task.kind == "binary":
            return (u[:, :1] < soft).to(nets.DTYPE)
        idx = (u[:, :1] > soft.cumsum(-1)).sum(-1).clamp(max=self.task.n_classes - 1)
        return nn.functional.one_hot(idx, self.task.n_classes).to(nets.DTYPE)

    def passed_labels(self, out: torch.Tensor, u: torch.Tensor) -> torch.Tensor:
        """Generated labels as fed to a discriminator during training, given uniforms ``u``."""
        soft = self.soft_labels(out)
        if self.config.label_passing == "soft" or self.task.kind == "regression":
            return soft
        return self.hard_labels(out, u) + soft - soft.detach()

    def discriminator_for(self, r: int) -> nn.Module:
        return self.discriminators[_cond_key(r if self.config.separate_discriminators else None)]

    def modules(self) -> dict[str, nn.Module]:
        return {"generator": self.generator, **{f"d_{k}": d for k, d in self.discriminators.items()}}

    def save(self, path: str | os.PathLike) -> None:
        nets.save_checkpoint(
            path,
            self.kind,
            self.schema,
            {
                "gan": asdict(self.config),
                "seed": self.seed,
                "task": self.task.to_dict(),
                "d_tab": self.d_tab,
                "d_rich": self.d_rich,
            },
            self.modules(),
            telemetry=asdict(self.telemetry),
            extra={"shift": self.shift.tolist(), "scale": self.scale.tolist()},
        )

    @classmethod
    def load(cls, path: str | os.PathLike) -> CganModel:
        meta, arrays = nets.load_checkpoint(path)
        if meta["kind"] != cls.kind:
            raise DataError(f"{path} holds a {meta['kind']!r} checkpoint, not a GAN")
        c = meta["config"]
        task = TaskSpec.from_dict(c["task"])
        cfg = GanConfig(**c["gan"])
        g, ds = build_networks(c["d_tab"], c["d_rich"], task, cfg)
        nets.load_state_arrays(g, arrays["generator"])
        for k, d in ds.items():
            nets.load_state_arrays(d, arrays[f"d_{k}"])
        m = cls(g, ds, task, c["d_tab"], c["d_rich"], cfg, c["seed"], GanTelemetry(**meta["telemetry"]),
                meta["extra"]["shift"], meta["extra"]["scale"])
        if m.schema != meta["schema_hash"]:
            raise DataError(f"{path}: schema hash mismatch")
        return m


def build_networks(d_tab: int, d_rich: int, task: TaskSpec, cfg: GanConfig) -> tuple[nn.Module, dict[str, nn.Module]]:
    d = d_tab + d_rich
    h = cfg.hidden_size
    gen = nets.scaled_normal_init(nets.mlp([d + cfg.resolved_noise_dim(d_tab), h, h, nets.output_dim(task)]))
    keys = ["0", "1"] if cfg.separate_discriminators else ["all"]
    discs = {k: nets.scaled_normal_init(nets.mlp([d + label_width(task), h, h, 1])) for k in keys}
    return gen, discs


# --------------------------------------------------------------------- training


def _pools(b: BiasedTrainSet, c: int | None) -> tuple[np.ndarray, np.ndarray, bool]:
    """Observed and unobserved row indices for condition ``c`` (None = all rows).

    When the condition has no unobserved rows the generated side falls back
    to the generator's output on that condition's observed rows; the third
    element reports the fallback.
    """
    sel = np.ones(len(b), bool) if c is None else b.r == c
    obs = np.flatnonzero(sel & (b.a == 1))
    un = np.flatnonzero(sel & (b.a == 0))
    if len(un) == 0:
        return obs, obs, True
    return obs, un, False


def train_cgan(b: BiasedTrainSet, cfg: GanConfig | None = None, task: TaskSpec | None = None, seed: int = 0) -> CganModel:
    cfg = cfg or GanConfig()
    task = task or b.task
    if task != b.task:
        raise DataError("task does not match the biased train set")
    if not (b.a == 1).any():
        raise DataError("no observed labels to train the generator on")
    conds: list[int | None] = [0, 1] if cfg.separate_discriminators else [None]
    pools = {}
    telemetry = GanTelemetry()
    for c in conds:
        obs, gen_pool, fallback = _pools(b, c)
        if len(obs) == 0:
            raise DataError(
                f"recommendation condition r={c} has zero observed labels; "
                "set separate_discriminators=False to use a single discriminator"
            )
        pools[c] = (obs, gen_pool)
        k = _cond_key(c)
        if fallback:
            telemetry.fallback_conditions.append(k)
        for store in (telemetry.adv_loss, telemetry.d_loss, telemetry.d_accuracy):
            store[k] = []
        telemetry.rows_seen[k] = {"0": 0, "1": 0}

    raw = b.features()
    shift, scale = None, None
    if cfg.scale_features:
        shift = raw.mean(axis=0)
        scale = np.where(raw.std(axis=0) > 0, raw.std(axis=0), 1.0)
    with nets.seeded(seed):
        g_net, d_nets = build_networks(b.d_tab, b.d_rich, task, cfg)
    m = CganModel(g_net, d_nets, task, b.d_tab, b.d_rich, cfg, seed, telemetry, shift, scale)

    feats = m.prepare(raw)
    y_enc = encode_labels(task, nets.tensor(np.nan_to_num(b.y_obs)))
    y_raw = nets.tensor(np.nan_to_num(b.y_obs))
    r = b.r
    observed = np.flatnonzero(b.a == 1)
    rng = np.random.default_rng(seed)
    tgen = nets.generator(seed)
    g_opt = torch.optim.Adam(g_net.parameters(), lr=cfg.learning_rate)
    d_opts = {k: torch.optim.Adam(d.parameters(), lr=cfg.learning_rate) for k, d in d_nets.items()}
    half = cfg.batch_size // 2
    bce = nn.functional.binary_cross_entropy_with_logits
    lw = label_width(task)

    def generated(idx: np.ndarray) -> torch.Tensor:
        out = m.head(feats[idx], m.noise(len(idx), tgen))
        u = torch.rand(len(idx), lw, generator=tgen, dtype=nets.DTYPE)
        return m.passed_labels(out, u)

    def show(key: str, c: int | None, idx: np.ndarray) -> None:
        seen = r[idx]
        if c is not None and (seen != c).any():
            raise AssertionError(f"discriminator {key} shown a row with r != {c}")
        counts = telemetry.rows_seen[key]
        counts["0"] += int((seen == 0).sum())
        counts["1"] += int((seen == 1).sum())

    for _ in range(cfg.g_iters):
        for _ in range(cfg.d_steps):
            for c in conds:
                key = _cond_key(c)
                obs, gen_pool = pools[c]
                fo = rng.choice(obs, half)
                fu = rng.choice(gen_pool, half)
                show(key, c, fo)
                show(key, c, fu)
                with torch.no_grad():
                    yg = generated(fu)
                inp = torch.cat([torch.cat([feats[fo], y_enc[fo]], 1), torch.cat([feats[fu], yg], 1)])
                target = torch.cat([torch.ones(half, dtype=nets.DTYPE), torch.zeros(half, dtype=nets.DTYPE)])
                logits = d_nets[key](inp).squeeze(-1)
                loss = bce(logits, target)
                d_opts[key].zero_grad()
                loss.backward()
                d_opts[key].step()
                telemetry.d_loss[key].append(loss.item())
                telemetry.d_accuracy[key].append(((logits > 0).to(nets.DTYPE) == target).to(nets.DTYPE).mean().item())

        sb = rng.choice(observed, cfg.batch_size)
        out = m.head(feats[sb], m.noise(len(sb), tgen))
        sup = nets.pointwise_loss(task, out, y_raw[sb]).mean()
        total = sup
        for c in conds:
            key = _cond_key(c)
            fu = rng.choice(pools[c][1], half)
            adv = bce(d_nets[key](torch.cat([feats[fu], generated(fu)], 1)).squeeze(-1), torch.ones(half, dtype=nets.DTYPE))
            telemetry.adv_loss[key].append(adv.item())
            total = total + cfg.adv_weight * adv
        g_opt.zero_grad()
        total.backward()
        g_opt.step()
        telemetry.sup_loss.append(sup.item())

    eval_rng = np.random.default_rng([seed, 1])
    for c in conds:
        key = _cond_key(c)
        telemetry.final_d_accuracy[key] = discriminator_accuracy(m, b, c, eval_rng, tgen)
        telemetry.final_d_accuracy_train_input[key] = discriminator_accuracy(m, b, c, eval_rng, tgen, emitted=False)
    return m


def discriminator_accuracy(
    m: CganModel, b: BiasedTrainSet, c: int | None, rng: np.random.Generator, tgen: torch.Generator, n: int = 1024, emitted: bool = True
) -> float:
    """Accuracy of D_c on a fresh balanced mixture of factual and generated rows.

    ``emitted`` scores the labels the generator actually produces; otherwise
    the generated side uses the training-time encoding (relaxed under soft passing).
    """
    obs, gen_pool, _ = _pools(b, c)
    fo = rng.choice(obs, n)
    fu = rng.choice(gen_pool, n)
    feats = m.prepare(b.features())
    y_enc = encode_labels(m.task, nets.tensor(np.nan_to_num(b.y_obs)))
    with torch.no_grad():
        out = m.head(feats[fu], m.noise(n, tgen))
        u = torch.rand(n, label_width(m.task), generator=tgen, dtype=nets.DTYPE)
        yg = m.hard_labels(out, u) if emitted else m.passed_labels(out, u)
        d = m.discriminators[_cond_key(c)]
        real = d(torch.cat([feats[fo], y_enc[fo]], 1)).squeeze(-1) > 0
        fake = d(torch.cat([feats[fu], yg], 1)).squeeze(-1) <= 0
    return float((real.sum() + fake.sum()).item() / (2 * n))


# ------------------------------------------------------------------- generation


class CfLabels:
    """Generated labels keyed by row id; covers exactly the unobserved rows."""

    def __init__(self, ids, labels):
        self.ids = np.asarray(ids, dtype=np.int64)
        self.labels = np.asarray(labels, dtype=float)
        if self.ids.shape != self.labels.shape:
            raise ValueError("ids and labels differ in length")
        if len(np.unique(self.ids)) != len(self.ids):
            raise DataError("duplicate ids in counterfactual labels")

    def __len__(self) -> int:
        return len(self.ids)

    def __getitem__(self, i: int) -> float:
        hit = np.flatnonzero(self.ids == i)
        if not len(hit):
            raise KeyError(i)
        return float(self.labels[hit[0]])

    def __iter__(self) -> Iterator[int]:
        return iter(int(i) for i in self.ids)

    def items(self) -> Iterator[tuple[int, float]]:
        return ((int(i), float(v)) for i, v in zip(self.ids, self.labels))

    def as_dict(self) -> dict[int, float]:
        return dict(self.items())

    def write(self, path: str | os.PathLike) -> None:
        write_table(path, ["id", "y"], [self.ids, self.labels])

    @classmethod
    def read(cls, path: str | os.PathLike) -> CfLabels:
        header, rows = read_table(path)
        if header[:2] != ["id", "y"]:
            raise DataError(f"{path}: expected columns id,y")
        return cls([int(float(r[0])) for r in rows], [float(r[1]) for r in rows])


def generate_counterfactuals(m: CganModel, b: BiasedTrainSet, seed: int = 0, mode: str = "sampled") -> CfLabels:
    """Label every a = 0 row of ``b`` with a draw from the generator."""
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}")
    m.check_schema(b)
    idx = np.flatnonzero(b.a == 0)
    if len(idx) == 0:
        return CfLabels([], [])
    tgen = nets.generator(seed)
    with torch.no_grad():
        out = m.head(m.prepare(b.features()[idx]), m.noise(len(idx), tgen))
        soft = m.soft_labels(out)
        u = torch.rand(len(idx), 1, generator=tgen, dtype=nets.DTYPE)
    task = m.task
    if task.kind == "binary":
        p = soft.squeeze(-1)
        labels = (p >= 0.5) if mode == "expected" else (u[:, 0] < p)
        labels = labels.to(nets.DTYPE)
    elif task.kind == "multiclass":
        if mode == "expected":
            labels = soft.argmax(-1)
        else:
            labels = (u > soft.cumsum(-1)).sum(-1).clamp(max=task.n_classes - 1)
        labels = labels.to(nets.DTYPE)
    else:
        labels = soft.squeeze(-1)
    return CfLabels(b.ids[idx], labels.numpy())


# --------------------------------------------------------------- gradient check


@dataclass
class GanBatch:
    features: np.ndarray
    y: np.ndarray  # NaN where unobserved
    r: np.ndarray
    z: np.ndarray


def random_batch(m: CganModel, n: int = 8, seed: int = 0) -> GanBatch:
    rng = np.random.default_rng(seed)
    feats = rng.normal(size=(n, m.d_tab + m.d_rich))
    if m.task.kind == "binary":
        y = rng.integers(0, 2, n).astype(float)
    elif m.task.kind == "multiclass":
        y = rng.integers(0, m.task.n_classes, n).astype(float)
    else:
        y = rng.normal(size=n)
    y[rng.random(n) < 0.5] = np.nan
    y[0] = y[0] if not np.isnan(y[0]) else 0.0
    return GanBatch(feats, y, rng.integers(0, 2, n), rng.random((n, m.noise_dim)))


def gan_losses(m: CganModel, batch: GanBatch) -> dict[str, callable]:
    """Deterministic loss closures for the generator and each discriminator.

    Generated labels use the soft path: it is the function whose gradient the
    straight-through estimator back-propagates.
    """
    feats = m.prepare(batch.features)
    z = nets.tensor(batch.z)
    obs = ~np.isnan(batch.y)
    un = ~obs if (~obs).any() else obs
    y_raw = nets.tensor(np.nan_to_num(batch.y))
    y_enc = encode_labels(m.task, y_raw)
    bce = nn.functional.binary_cross_entropy_with_logits
    keys = list(m.discriminators)

    def rows(key: str, mask: np.ndarray) -> np.ndarray:
        if key == "all":
            return np.flatnonzero(mask)
        sel = np.flatnonzero(mask & (batch.r == int(key)))
        return sel if len(sel) else np.flatnonzero(mask)

    def g_loss() -> torch.Tensor:
        out = m.head(feats, z)
        loss = nets.pointwise_loss(m.task, out[obs], y_raw[obs]).mean()
        soft = m.soft_labels(out)
        for key in keys:
            u = rows(key, un)
            d = m.discriminators[key](torch.cat([feats[u], soft[u]], 1)).squeeze(-1)
            loss = loss + m.config.adv_weight * bce(d, torch.ones_like(d))
        return loss

    def d_loss(key: str):
        def f() -> torch.Tensor:
            with torch.no_grad():
                soft = m.soft_labels(m.head(feats, z))
            o, u = rows(key, obs), rows(key, un)
            real = m.discriminators[key](torch.cat([feats[o], y_enc[o]], 1)).squeeze(-1)
            fake = m.discriminators[key](torch.cat([feats[u], soft[u]], 1)).squeeze(-1)
            return bce(real, torch.ones_like(real)) + bce(fake, torch.zeros_like(fake))

        return f

    return {"generator": g_loss, **{f"d_{k}": d_loss(k) for k in keys}}


def gradient_check_parts(m: CganModel, batch: GanBatch, eps: float = 1e-5, max_coords: int | None = 64) -> dict[str, float]:
    if len(batch.features) == 0:
        raise ValueError("empty batch")
    losses = gan_losses(m, batch)
    out = {}
    for name, fn in losses.items():
        module = m.generator if name == "generator" else m.discriminators[name[2:]]
        out[name] = nets.gradient_check(fn, module.parameters(), eps=eps, max_coords=max_coords)
    return out


def gradient_check(m: CganModel, batch: GanBatch, eps: float = 1e-5) -> float:
    """Max relative error of analytic vs central-difference gradients over G and every D."""
    return max(gradient_check_parts(m, batch, eps).values())


def untrained_model(d_tab: int, d_rich: int, task: TaskSpec, cfg: GanConfig | None = None, seed: int = 0) -> CganModel:
    """Freshly initialized networks, for gradient checks and tests."""
    cfg = cfg or GanConfig()
    with nets.seeded(seed):
        g, ds = build_networks(d_tab, d_rich, task, cfg)
    return CganModel(g, ds, task, d_tab, d_rich, cfg, seed)


def with_config(cfg: GanConfig, **changes) -> GanConfig:
    return replace(cfg, **changes)
