"""Config-driven benchmark: data -> bias -> methods -> metrics -> tables."""

from __future__ import annotations

import hashlib
import io
import json
import math
import os
import traceback
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from .analysis import counterfactual_report, label_balance_report, write_plot_data
from .augmentation import augment
from .baselines import DragonnetConfig, estimate_propensities, train_dragonnet, train_ipw, train_uncorrected
from .bias import VAULT_MARKER, fit_tab_model, induce_train_bias, make_biased_eval, predict_recs
from .data import ColumnSchema, DataError, Dataset, TaskSpec, load_dataset, split_dataset
from .gan import GanConfig, generate_counterfactuals, train_cgan
from .metrics import CLASSIFICATION_KEYS, REGRESSION_KEYS, MetricsReport
from .synthetic import SynthConfig, generate_synthetic
from .task import TrainConfig, evaluate, train_oracle, train_task_model

METHODS = ("uncorrected", "ipw", "dragonnet", "ca", "oracle")
METHOD_NAMES = {"uncorrected": "Uncorrected", "ipw": "IPW", "dragonnet": "Dragonnet", "ca": "CA", "oracle": "Oracle"}
SPLITS = ("unbiased", "biased")
OUTPUT_ENV = "CFAUG_OUTPUT_ROOT"
LOWER_IS_BETTER = {"nrmse"}
# Excluded from the improvement row: it is an upper bound, not a competitor.
REFERENCE_METHODS = {"oracle"}
STAGES = ("data", "split", "tab", "bias", "eval_bias", "gan", "generate", "task")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class BiasParams:
    label_drop: float = 0.9
    row_drop: float = 0.35
    sample_drop: float = 0.9


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything a benchmark run depends on.

    Exactly one of ``synthetic`` or ``data_file`` names the data source.
    ``rich_columns`` selects embedding columns (``[]`` = tabular only,
    ``None`` = all of them).
    """

    synthetic: SynthConfig | None = None
    data_file: str | None = None
    schema: ColumnSchema | None = None
    task: TaskSpec | None = None
    rich_columns: tuple[int, ...] | None = None
    splits: tuple[float, float, float] = (0.2, 0.4, 0.4)
    bias: BiasParams = field(default_factory=BiasParams)
    gan: GanConfig = field(default_factory=GanConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    dragonnet: DragonnetConfig = field(default_factory=DragonnetConfig)
    methods: tuple[str, ...] = METHODS
    cf_mode: str = "expected"
    seeds: tuple[int, ...] = (0,)
    output_dir: str = "runs/default"

    def __post_init__(self) -> None:
        if (self.synthetic is None) == (self.data_file is None):
            raise ConfigError("config must name exactly one dataset source (synthetic or data_file)")
        if self.data_file is not None and self.task is None:
            raise ConfigError("a data_file source needs a task")
        if not self.methods:
            raise ConfigError("at least one method must be enabled")
        unknown = set(self.methods) - set(METHODS)
        if unknown:
            raise ConfigError(f"unknown methods {sorted(unknown)}")
        if not self.seeds:
            raise ConfigError("at least one seed is required")
        if len(set(self.seeds)) != len(self.seeds):
            raise ConfigError("seeds must be distinct")
        if self.cf_mode not in ("expected", "sampled"):
            raise ConfigError("cf_mode must be expected or sampled")

    @property
    def tasks(self) -> TaskSpec:
        if self.task is not None:
            return self.task
        return TaskSpec.binary(0) if self.synthetic.binarize else TaskSpec.regression()

    def to_dict(self) -> dict:
        return {
            "synthetic": None if self.synthetic is None else asdict(self.synthetic),
            "data_file": self.data_file,
            "schema": None if self.schema is None else asdict(self.schema),
            "task": None if self.task is None else self.task.to_dict(),
            "rich_columns": None if self.rich_columns is None else list(self.rich_columns),
            "splits": list(self.splits),
            "bias": asdict(self.bias),
            "gan": asdict(self.gan),
            "train": asdict(self.train),
            "dragonnet": {k: v for k, v in asdict(self.dragonnet).items() if k != "train"},
            "methods": list(self.methods),
            "cf_mode": self.cf_mode,
            "seeds": list(self.seeds),
        }

    def hash(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()[:12]

    def output_path(self) -> Path:
        root = os.environ.get(OUTPUT_ENV)
        out = Path(self.output_dir)
        return Path(root) / out if root and not out.is_absolute() else out


def _build(cls, raw: dict | None, where: str):
    raw = dict(raw or {})
    known = {f.name for f in fields(cls)}
    extra = set(raw) - known
    if extra:
        raise ConfigError(f"unknown keys in {where}: {sorted(extra)}")
    try:
        return cls(**raw)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"{where}: {e}") from e


def config_from_dict(raw: dict) -> ExperimentConfig:
    raw = dict(raw or {})
    allowed = {"data", "splits", "bias", "gan", "train", "dragonnet", "methods", "cf_mode", "seeds", "output_dir", "task"}
    extra = set(raw) - allowed
    if extra:
        raise ConfigError(f"unknown top-level keys: {sorted(extra)}")
    data = raw.get("data")
    if not data:
        raise ConfigError("config is missing a dataset source under 'data'")
    task = None
    if raw.get("task") is not None:
        try:
            task = TaskSpec.from_dict(raw["task"] if isinstance(raw["task"], dict) else {"kind": raw["task"]})
        except (KeyError, ValueError) as e:
            raise ConfigError(f"task: {e}") from e
    synthetic = data_file = schema = None
    if "synthetic" in data:
        synthetic = _build(SynthConfig, data["synthetic"], "data.synthetic")
    if "file" in data:
        data_file = str(data["file"])
        if data.get("schema"):
            s = data["schema"]
            schema = ColumnSchema(s["id"], tuple(s["tabular"]), s["label"], tuple(s.get("rich", ())))
    rich = data.get("rich_columns")
    methods = raw.get("methods", list(METHODS))
    if isinstance(methods, dict):
        methods = [m for m in METHODS if methods.get(m, False)]
    kwargs = dict(
        synthetic=synthetic,
        data_file=data_file,
        schema=schema,
        task=task,
        rich_columns=None if rich is None else tuple(int(c) for c in rich),
        bias=_build(BiasParams, raw.get("bias"), "bias"),
        gan=_build(GanConfig, raw.get("gan"), "gan"),
        train=_build(TrainConfig, raw.get("train"), "train"),
        methods=tuple(methods),
    )
    dn = dict(raw.get("dragonnet") or {})
    dn["train"] = kwargs["train"]
    kwargs["dragonnet"] = _build(DragonnetConfig, dn, "dragonnet")
    if "splits" in raw:
        kwargs["splits"] = tuple(float(f) for f in raw["splits"])
    for key in ("cf_mode", "output_dir"):
        if key in raw:
            kwargs[key] = raw[key]
    if "seeds" in raw:
        kwargs["seeds"] = tuple(int(s) for s in raw["seeds"])
    return ExperimentConfig(**kwargs)


def load_config(path: str | os.PathLike) -> ExperimentConfig:
    with open(path) as fh:
        raw = yaml.safe_load(fh)
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: expected a mapping at the top level")
    return config_from_dict(raw)


def stage_seeds(seed: int) -> dict[str, int]:
    """Independent per-stage seeds spawned from one master seed."""
    state = np.random.SeedSequence(seed).generate_state(len(STAGES), dtype=np.uint32)
    return {name: int(s) for name, s in zip(STAGES, state)}


# ------------------------------------------------------------------- the run


@dataclass
class SeedRun:
    seed: int
    reports: dict[str, dict[str, MetricsReport]] = field(default_factory=dict)
    failures: dict[str, str] = field(default_factory=dict)
    analyses: dict[str, dict] = field(default_factory=dict)


@dataclass
class ExperimentResult:
    config_hash: str
    version: str
    task: TaskSpec
    methods: tuple[str, ...]
    seeds: tuple[int, ...]
    # summary[method][split][metric] = (mean, stdev, n_seeds)
    summary: dict[str, dict[str, dict[str, tuple[float, float, int]]]]
    improvement: dict[str, dict[str, float]]
    failures: dict[str, dict[str, str]]
    analyses: dict[str, dict] = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return not any(self.failures.values())

    def to_dict(self) -> dict:
        return {
            "config_hash": self.config_hash,
            "version": self.version,
            "task": self.task.to_dict(),
            "methods": list(self.methods),
            "seeds": list(self.seeds),
            "summary": {m: {s: {k: list(v) for k, v in d.items()} for s, d in sp.items()} for m, sp in self.summary.items()},
            "improvement": self.improvement,
            "failures": self.failures,
            "analyses": self.analyses,
        }

    @classmethod
    def from_dict(cls, d: dict) -> ExperimentResult:
        summary = {m: {s: {k: tuple(v) for k, v in dd.items()} for s, dd in sp.items()} for m, sp in d["summary"].items()}
        return cls(d["config_hash"], d["version"], TaskSpec.from_dict(d["task"]), tuple(d["methods"]), tuple(d["seeds"]),
                   summary, d["improvement"], d["failures"], d.get("analyses", {}))


def load_source(cfg: ExperimentConfig, data_seed: int) -> Dataset:
    if cfg.synthetic is not None:
        synth = cfg.synthetic.__class__(**{**asdict(cfg.synthetic), "data_seed": data_seed})
        d, _ = generate_synthetic(synth)
    else:
        schema = cfg.schema or ColumnSchema.for_toolkit_file(cfg.data_file)
        d = load_dataset(cfg.data_file, schema, cfg.tasks)
    if cfg.rich_columns is not None:
        d = d.select_rich(list(cfg.rich_columns))
    return d


def run_seed(cfg: ExperimentConfig, seed: int) -> SeedRun:
    """One full pipeline pass; method failures are recorded, not raised."""
    out = SeedRun(seed)
    ss = stage_seeds(seed)
    task = cfg.tasks
    d = load_source(cfg, ss["data"])
    bundle = split_dataset(d, cfg.splits, ss["split"])
    tab = fit_tab_model(bundle.d_original, task, ss["tab"])
    r_pool = predict_recs(tab, bundle.d_train_pool)
    b = induce_train_bias(bundle.d_train_pool, r_pool, cfg.bias.label_drop, cfg.bias.row_drop, ss["bias"])
    evals = {"unbiased": bundle.d_eval, "biased": make_biased_eval(bundle.d_eval, tab, cfg.bias.sample_drop, ss["eval_bias"])}
    recs = {name: predict_recs(tab, e) for name, e in evals.items()}

    def trainers():
        yield "uncorrected", lambda: train_uncorrected(b, task, ss["task"], cfg.train)
        yield "ipw", lambda: train_ipw(b, estimate_propensities(b), task, ss["task"], cfg.train)
        yield "dragonnet", lambda: train_dragonnet(b, task, ss["task"], cfg.dragonnet)
        yield "ca", train_ca
        yield "oracle", lambda: train_oracle(b, task, ss["task"], cfg.train)

    def train_ca():
        gan = train_cgan(b, cfg.gan, task, ss["gan"])
        cf = generate_counterfactuals(gan, b, ss["generate"], cfg.cf_mode)
        corrected = augment(b, cf)
        bal = label_balance_report(b, corrected)
        out.analyses["label_balance"] = bal.to_dict()
        if "oracle" in cfg.methods:
            # reading withheld labels is reserved for runs that enable the oracle
            out.analyses["counterfactual"] = counterfactual_report(cf, b).to_dict()
        out.analyses["gan_final_d_accuracy"] = dict(gan.telemetry.final_d_accuracy)
        out.analyses["gan_final_d_accuracy_train_input"] = dict(gan.telemetry.final_d_accuracy_train_input)
        return train_task_model(corrected, task, ss["task"], config=cfg.train)

    for name, fit in trainers():
        if name not in cfg.methods:
            continue
        try:
            model = fit()
            out.reports[name] = {
                split: evaluate(model, e, task, r=recs[split], seed=seed) for split, e in evals.items()
            }
        except Exception as e:  # one method failing must not take the others down
            out.failures[name] = f"{type(e).__name__}: {e}"
    return out


def aggregate(cfg: ExperimentConfig, runs: list[SeedRun]) -> ExperimentResult:
    task = cfg.tasks
    keys = CLASSIFICATION_KEYS if task.is_classification else REGRESSION_KEYS
    runs = sorted(runs, key=lambda r: r.seed)
    summary: dict = {}
    for m in cfg.methods:
        for split in SPLITS:
            vals = {k: [r.reports[m][split].metrics()[k] for r in runs if m in r.reports] for k in keys}
            if not vals[keys[0]]:
                continue
            summary.setdefault(m, {})[split] = {
                k: (float(np.mean(v)), float(np.std(v, ddof=1)) if len(v) > 1 else None, len(v)) for k, v in vals.items()
            }
    improvement = improvement_rows(summary, keys)
    failures = {str(r.seed): dict(sorted(r.failures.items())) for r in runs}
    analyses = {str(r.seed): r.analyses for r in runs if r.analyses}
    return ExperimentResult(cfg.hash(), __version__, task, tuple(m for m in cfg.methods), tuple(r.seed for r in runs),
                            summary, improvement, failures, analyses)


def improvement_rows(summary: dict, keys) -> dict[str, dict[str, float]]:
    """CA's margin over the best competing method, per split and metric.

    Positive means CA is better; for lower-is-better metrics the sign is flipped.
    """
    if "ca" not in summary:
        return {}
    rivals = [m for m in summary if m != "ca" and m not in REFERENCE_METHODS]
    rows = {}
    for split in SPLITS:
        have = [m for m in rivals if split in summary[m]]
        if split not in summary["ca"] or not have:
            continue
        row = {}
        for k in keys:
            ca = summary["ca"][split][k][0]
            others = [summary[m][split][k][0] for m in have]
            row[k] = min(others) - ca if k in LOWER_IS_BETTER else ca - max(others)
        rows[split] = row
    return rows


def run_experiment(cfg: ExperimentConfig, write: bool = True) -> ExperimentResult:
    runs, errors = [], {}
    for seed in cfg.seeds:
        try:
            runs.append(run_seed(cfg, seed))
        except Exception as e:
            failed = SeedRun(seed)
            failed.failures = {m: f"seed aborted: {type(e).__name__}: {e}" for m in cfg.methods}
            errors[seed] = traceback.format_exc()
            runs.append(failed)
    if all(not r.reports for r in runs):
        msg = "; ".join(f"seed {r.seed}: {next(iter(r.failures.values()))}" for r in runs)
        raise RuntimeError(f"experiment failed on every seed: {msg}")
    result = aggregate(cfg, runs)
    if write:
        write_outputs(cfg, result, runs)
    return result


# ------------------------------------------------------------------ rendering


def _label(metric: str) -> str:
    return {"accuracy": "Acc", "f1": "F1", "f1_macro": "F1_mac", "f1_minority": "F1_min", "r2": "R2", "nrmse": "NRMSE"}[metric]


def _table_rows(r: ExperimentResult, split: str) -> tuple[list[str], list[tuple[str, list[tuple[float, float] | float]]]]:
    keys = CLASSIFICATION_KEYS if r.task.is_classification else REGRESSION_KEYS
    rows = []
    for m in METHODS:
        if m in r.summary and split in r.summary[m]:
            rows.append((METHOD_NAMES[m], [r.summary[m][split][k][:2] for k in keys]))
    if len(rows) > 1 and split in r.improvement:
        rows.append(("Improvement", [r.improvement[split][k] for k in keys]))
    return list(keys), rows


def _pct(v: float) -> str:
    return f"{100 * v:.1f}"


def _cell(c) -> str:
    if not isinstance(c, tuple):
        return f"{100 * c:+.1f}"
    return _pct(c[0]) if c[1] is None else f"{_pct(c[0])} ± {_pct(c[1])}"


def render_tables(r: ExperimentResult, fmt: str = "plain") -> str:
    """One table per evaluation split, in ``plain``, ``delimited`` or ``markup`` form."""
    if fmt not in ("plain", "delimited", "markup"):
        raise ValueError(f"unknown table format {fmt!r}")
    if not r.summary:
        raise ValueError("empty result")
    buf = io.StringIO()
    if fmt == "delimited":
        buf.write("task,split,method,metric,mean,stdev\n")
    for split in SPLITS:
        keys, rows = _table_rows(r, split)
        if not rows:
            continue
        head = [_label(k) for k in keys]
        if fmt == "delimited":
            for name, cells in rows:
                for k, c in zip(keys, cells):
                    mean, sd = c if isinstance(c, tuple) else (c, None)
                    sd_text = "" if sd is None else repr(float(sd))
                    buf.write(f"{r.task.kind},{split},{name},{k},{float(mean)!r},{sd_text}\n")
            continue
        body = [[name] + [_cell(c) for c in cells] for name, cells in rows]
        spread = f"mean ± stdev over {len(r.seeds)} seeds" if len(r.seeds) > 1 else "single seed"
        title = f"{r.task.kind} task, {split} eval split ({spread}, x100)"
        if fmt == "markup":
            buf.write(f"### {title}\n\n| Method | " + " | ".join(head) + " |\n")
            buf.write("|---" * (len(head) + 1) + "|\n")
            for line in body:
                buf.write("| " + " | ".join(line) + " |\n")
            buf.write("\n")
        else:
            widths = [max(len(x) for x in col) for col in zip(["Method"] + head, *body)]
            buf.write(title + "\n")
            buf.write("  ".join(h.ljust(w) for h, w in zip(["Method"] + head, widths)).rstrip() + "\n")
            buf.write("  ".join("-" * w for w in widths) + "\n")
            for line in body:
                buf.write("  ".join(c.ljust(w) for c, w in zip(line, widths)).rstrip() + "\n")
            buf.write("\n")
    return buf.getvalue()


def parse_delimited(text: str) -> dict[tuple[str, str, str], tuple[float, float | None]]:
    """Inverse of the delimited table: (split, method, metric) -> (mean, stdev)."""
    out = {}
    lines = text.strip().splitlines()
    for line in lines[1:]:
        task, split, method, metric, mean, sd = line.split(",")
        out[(split, method, metric)] = (float(mean), float(sd) if sd else None)
    return out


# -------------------------------------------------------------------- outputs


def _dump(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2, allow_nan=True) + "\n"


def write_outputs(cfg: ExperimentConfig, result: ExperimentResult, runs: list[SeedRun]) -> Path:
    root = cfg.output_path()
    root.mkdir(parents=True, exist_ok=True)
    (root / "config.json").write_text(_dump(cfg.to_dict()))
    (root / "results.json").write_text(_dump(result.to_dict()))
    (root / "tables.txt").write_text(render_tables(result, "plain"))
    (root / "tables.csv").write_text(render_tables(result, "delimited"))
    (root / "tables.md").write_text(render_tables(result, "markup"))
    for run in sorted(runs, key=lambda r: r.seed):
        sd = root / f"seed_{run.seed}"
        sd.mkdir(exist_ok=True)
        for m, per_split in run.reports.items():
            for split, rep in per_split.items():
                (sd / f"metrics_{m}_{split}.txt").write_text(rep.to_text())
        (sd / "failures.json").write_text(_dump(run.failures))
        bal = run.analyses.get("label_balance")
        if bal:
            bins = [str(k) for k in range(len(bal["counts_observed"]))]
            write_plot_data(sd / "plot_label_balance.csv", bins, {"observed": bal["counts_observed"], "corrected": bal["counts_corrected"]})
        cfr = run.analyses.get("counterfactual")
        if cfr:
            write_plot_data(sd / "plot_counterfactual.csv", cfr["bins"], {"generated": cfr["counts_a"], "true_counterfactual": cfr["counts_b"]})
    return root


HYGIENE_TOKENS = (VAULT_MARKER, "ORACLE-ONLY", "oracle", "Oracle", "vault", "true_counterfactual")


def vault_hygiene_scan(run_dir: str | os.PathLike) -> list[str]:
    """Files in ``run_dir`` that carry vault-derived content (empty list = clean).

    Withheld labels only ever reach outputs through the oracle model, the
    counterfactual-vs-truth analysis, or a vault file; each is tagged with
    one of ``HYGIENE_TOKENS``, so a token-free directory holds none of them.
    """
    hits = []
    for p in sorted(Path(run_dir).rglob("*")):
        if not p.is_file():
            continue
        text = p.read_text(errors="replace")
        if any(t in text or t in p.name for t in HYGIENE_TOKENS):
            hits.append(str(p))
    return hits


def _finite(x) -> bool:
    return isinstance(x, float) and math.isfinite(x)
