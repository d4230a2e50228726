"""Small torch helpers shared by the GAN, baselines and task models.

Everything runs in float64 on CPU so finite-difference gradient checks are
meaningful and seeded runs are bit-reproducible.
"""

from __future__ import annotations

import hashlib
import io
import json
import os
from contextlib import contextmanager
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np
import torch
from torch import nn

DTYPE = torch.float64
CHECKPOINT_VERSION = 1


@contextmanager
def seeded(seed: int):
    """Seed torch's global RNG for the block without leaking state outside it."""
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        yield


def generator(seed: int) -> torch.Generator:
    g = torch.Generator()
    g.manual_seed(int(seed) % (2**63))
    return g


def tensor(a, dtype=DTYPE) -> torch.Tensor:
    return torch.tensor(np.asarray(a), dtype=dtype)


def mlp(sizes: Sequence[int], activation: type[nn.Module] = nn.ELU) -> nn.Sequential:
    """Fully connected stack; ``activation`` between every pair of linear layers."""
    if any(s <= 0 for s in sizes):
        raise ValueError(f"layer widths must be positive, got {list(sizes)}")
    layers: list[nn.Module] = []
    for i, (a, b) in enumerate(zip(sizes[:-1], sizes[1:])):
        layers.append(nn.Linear(a, b, dtype=DTYPE))
        if i < len(sizes) - 2:
            layers.append(activation())
    return nn.Sequential(*layers)


def scaled_normal_init(module: nn.Module) -> nn.Module:
    """Weights ~ Normal(0, 2 / fan_in), zero biases (the GANITE reference init)."""
    for layer in module.modules():
        if isinstance(layer, nn.Linear):
            nn.init.normal_(layer.weight, std=(2.0 / layer.in_features) ** 0.5)
            nn.init.zeros_(layer.bias)
    return module


def output_dim(task) -> int:
    return task.n_classes if task.kind == "multiclass" else 1


def pointwise_loss(task, out: torch.Tensor, y: torch.Tensor) -> torch.Tensor:
    """Unreduced task loss: BCE on logits, cross-entropy, or squared error."""
    if task.kind == "binary":
        return nn.functional.binary_cross_entropy_with_logits(out.squeeze(-1), y, reduction="none")
    if task.kind == "multiclass":
        return nn.functional.cross_entropy(out, y.long(), reduction="none")
    return (out.squeeze(-1) - y) ** 2


def predict_labels(task, out: torch.Tensor) -> np.ndarray:
    if task.kind == "binary":
        return (out.squeeze(-1) > 0).double().numpy()
    if task.kind == "multiclass":
        return out.argmax(-1).double().numpy()
    return out.squeeze(-1).numpy()


def state_arrays(module: nn.Module) -> dict[str, np.ndarray]:
    return {k: v.detach().numpy().copy() for k, v in module.state_dict().items()}


def load_state_arrays(module: nn.Module, arrays: dict[str, np.ndarray]) -> None:
    module.load_state_dict({k: torch.as_tensor(v) for k, v in arrays.items()})


def schema_hash(d_tab: int, d_rich: int, task) -> str:
    blob = json.dumps({"d_tab": d_tab, "d_rich": d_rich, "task": task.to_dict()}, sort_keys=True)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


# ------------------------------------------------------------- gradient check


def gradient_check(
    loss_fn: Callable[[], torch.Tensor],
    params: Iterable[torch.Tensor],
    eps: float = 1e-5,
    max_coords: int | None = 64,
    seed: int = 0,
    floor: float = 1e-6,
) -> float:
    """Max relative error between autograd and central finite differences.

    ``loss_fn`` must be deterministic (fix any noise outside it). Relative
    error per coordinate is ``|a - n| / max(|a|, |n|, floor)``; ``floor``
    keeps exact-zero gradients from dividing by zero. At most ``max_coords``
    randomly chosen coordinates per tensor are probed (``None`` probes all).
    """
    params = [p for p in params if p.requires_grad]
    for p in params:
        p.grad = None
    loss = loss_fn()
    analytic = torch.autograd.grad(loss, params, allow_unused=True)
    rng = np.random.default_rng(seed)
    worst = 0.0
    with torch.no_grad():
        for p, g in zip(params, analytic):
            g = torch.zeros_like(p) if g is None else g
            flat, gflat = p.view(-1), g.reshape(-1)
            n = flat.numel()
            coords = range(n) if max_coords is None or n <= max_coords else rng.choice(n, max_coords, replace=False)
            for i in coords:
                orig = flat[i].item()
                flat[i] = orig + eps
                up = loss_fn().item()
                flat[i] = orig - eps
                down = loss_fn().item()
                flat[i] = orig
                num = (up - down) / (2 * eps)
                ana = gflat[i].item()
                if not (np.isfinite(num) and np.isfinite(ana)):
                    return float("inf")
                worst = max(worst, abs(ana - num) / max(abs(ana), abs(num), floor))
    return worst


# ----------------------------------------------------------------- checkpoints


def save_checkpoint(
    path: str | os.PathLike,
    kind: str,
    schema: str,
    config: dict,
    modules: dict[str, nn.Module],
    telemetry: dict | None = None,
    extra: dict | None = None,
) -> None:
    """Versioned ``.npz`` container: metadata JSON plus named parameter arrays."""
    meta = {
        "version": CHECKPOINT_VERSION,
        "kind": kind,
        "schema_hash": schema,
        "config": config,
        "telemetry": telemetry or {},
        "extra": extra or {},
    }
    arrays = {"__meta__": np.frombuffer(json.dumps(meta, sort_keys=True).encode(), dtype=np.uint8)}
    for name, module in modules.items():
        for k, v in state_arrays(module).items():
            arrays[f"{name}/{k}"] = v
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    buf = io.BytesIO()
    np.savez(buf, **arrays)
    path.write_bytes(buf.getvalue())


def load_checkpoint(path: str | os.PathLike) -> tuple[dict, dict[str, dict[str, np.ndarray]]]:
    with np.load(path) as z:
        meta = json.loads(z["__meta__"].tobytes().decode())
        if meta.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {meta.get('version')}")
        modules: dict[str, dict[str, np.ndarray]] = {}
        for key in z.files:
            if key == "__meta__":
                continue
            name, param = key.split("/", 1)
            modules.setdefault(name, {})[param] = z[key]
    return meta, modules
