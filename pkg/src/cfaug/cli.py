"""Command-line entry point: ``cfaug <subcommand>``.

Exit codes: 0 success, 1 some method/seed failed (or a hygiene scan found
vault content), 2 bad usage or config, 3 data error or total failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import asdict, replace
from pathlib import Path

from . import __version__
from .augmentation import augment
from .bias import fit_tab_model, induce_train_bias, make_biased_eval, predict_recs, read_biased, write_biased, write_vault
from .data import ColumnSchema, DataError, TaskSpec, load_dataset, split_dataset, write_dataset
from .experiment import ConfigError, ExperimentResult, config_from_dict, load_config, render_tables, run_experiment, vault_hygiene_scan
from .gan import CfLabels, CganModel, GanConfig, generate_counterfactuals, train_cgan
from .synthetic import SynthConfig, generate_synthetic, write_ground_truth

EXIT_OK, EXIT_PARTIAL, EXIT_USAGE, EXIT_DATA = 0, 1, 2, 3


def _task(args) -> TaskSpec:
    if args.task == "binary":
        return TaskSpec.binary(args.minority_class)
    if args.task == "multiclass":
        if not args.n_classes:
            raise ConfigError("--n-classes is required for a multiclass task")
        return TaskSpec.multiclass(args.n_classes, args.minority_class)
    return TaskSpec.regression()


def _add_task(p: argparse.ArgumentParser) -> None:
    p.add_argument("--task", choices=["binary", "multiclass", "regression"], default="binary")
    p.add_argument("--n-classes", type=int)
    p.add_argument("--minority-class", type=int, default=0)


def _add_gan(p: argparse.ArgumentParser) -> None:
    d = GanConfig()
    p.add_argument("--hidden-size", type=int, default=d.hidden_size)
    p.add_argument("--g-iters", type=int, default=d.g_iters)
    p.add_argument("--d-steps", type=int, default=d.d_steps)
    p.add_argument("--learning-rate", type=float, default=d.learning_rate)
    p.add_argument("--single-discriminator", action="store_true")
    p.add_argument("--scale-features", action="store_true")
    p.add_argument("--noise-dim", type=int)
    p.add_argument("--batch-size", type=int, default=d.batch_size)
    p.add_argument("--adv-weight", type=float, default=d.adv_weight)
    p.add_argument("--label-passing", choices=["soft", "straight_through"], default=d.label_passing)


def _gan_config(args) -> GanConfig:
    return GanConfig(
        hidden_size=args.hidden_size,
        g_iters=args.g_iters,
        d_steps=args.d_steps,
        learning_rate=args.learning_rate,
        separate_discriminators=not args.single_discriminator,
        scale_features=args.scale_features,
        noise_dim=args.noise_dim,
        batch_size=args.batch_size,
        adv_weight=args.adv_weight,
        label_passing=args.label_passing,
    )


def cmd_synth(args) -> int:
    base = SynthConfig()
    if args.config:
        cfg = config_from_dict(_yaml(args.config))
        if cfg.synthetic is None:
            raise ConfigError("config has no synthetic data source")
        base = cfg.synthetic
    overrides = {k: v for k, v in {
        "n": args.n, "d_tab": args.d_tab, "d_rich": args.d_rich, "noise_sd": args.noise_sd,
        "positive_share": args.positive_share, "weight_seed": args.weight_seed, "data_seed": args.data_seed,
    }.items() if v is not None}
    if args.regression:
        overrides["binarize"] = False
    cfg = replace(base, **overrides)
    d, truth = generate_synthetic(cfg)
    write_dataset(d, args.out)
    write_ground_truth(truth, args.truth or Path(str(args.out) + ".truth.json"))
    print(f"wrote {len(d)} rows to {args.out}")
    return EXIT_OK


def cmd_bias(args) -> int:
    task = _task(args)
    d = load_dataset(args.data, ColumnSchema.for_toolkit_file(args.data), task)
    if args.tabular_only:
        d = d.select_rich([])
    bundle = split_dataset(d, args.splits, args.seed)
    tab = fit_tab_model(bundle.d_original, task, args.seed)
    r = predict_recs(tab, bundle.d_train_pool)
    b = induce_train_bias(bundle.d_train_pool, r, args.label_drop, args.row_drop, args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_biased(b, out / "biased_train.csv")
    write_vault(b, out / "vault.oracle-only.csv")
    write_dataset(bundle.d_original, out / "original.csv")
    write_dataset(bundle.d_eval, out / "eval_unbiased.csv")
    write_dataset(make_biased_eval(bundle.d_eval, tab, args.sample_drop, args.seed), out / "eval_biased.csv")
    print(f"biased train set: {len(b)} rows, {int((b.a == 0).sum())} labels withheld")
    return EXIT_OK


def cmd_train_cgan(args) -> int:
    task = _task(args)
    b = read_biased(args.biased, task)
    m = train_cgan(b, _gan_config(args), task, args.seed)
    m.save(args.out)
    acc = ", ".join(f"D_{k}={v:.3f}" for k, v in sorted(m.telemetry.final_d_accuracy.items()))
    print(f"saved GAN to {args.out}; final discriminator accuracy {acc}")
    return EXIT_OK


def cmd_augment(args) -> int:
    task = _task(args)
    b = read_biased(args.biased, task)
    m = CganModel.load(args.model)
    cf = generate_counterfactuals(m, b, args.seed, args.mode)
    if args.labels_out:
        cf.write(args.labels_out)
    corrected = augment(b, cf)
    corrected.write(args.out)
    n_obs, n_gen = corrected.mixture
    print(f"corrected dataset: {n_obs} observed + {n_gen} generated rows")
    return EXIT_OK


def cmd_bench(args) -> int:
    raw = _yaml(args.config)
    if args.seeds:
        raw["seeds"] = args.seeds
    if args.output_dir:
        raw["output_dir"] = args.output_dir
    if args.methods:
        raw["methods"] = args.methods
    cfg = config_from_dict(raw)
    try:
        result = run_experiment(cfg)
    except RuntimeError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_DATA
    print(render_tables(result, args.format), end="")
    for seed, fails in result.failures.items():
        for method, msg in fails.items():
            print(f"seed {seed} {method} failed: {msg}", file=sys.stderr)
    return EXIT_OK if result.ok else EXIT_PARTIAL


def cmd_report(args) -> int:
    run = Path(args.run)
    if args.hygiene:
        hits = vault_hygiene_scan(run)
        for h in hits:
            print(f"vault-derived content: {h}")
        print("hygiene scan: " + ("clean" if not hits else f"{len(hits)} file(s) flagged"))
        return EXIT_OK if not hits else EXIT_PARTIAL
    result = ExperimentResult.from_dict(json.loads((run / "results.json").read_text()))
    print(render_tables(result, args.format), end="")
    return EXIT_OK


def _yaml(path) -> dict:
    import yaml

    with open(path) as fh:
        raw = yaml.safe_load(fh)
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: expected a mapping")
    return raw


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cfaug", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="generate a synthetic dataset")
    s.add_argument("--config")
    s.add_argument("--n", type=int)
    s.add_argument("--d-tab", type=int)
    s.add_argument("--d-rich", type=int)
    s.add_argument("--noise-sd", type=float)
    s.add_argument("--positive-share", type=float)
    s.add_argument("--weight-seed", type=int)
    s.add_argument("--data-seed", type=int)
    s.add_argument("--regression", action="store_true", help="keep the continuous score as the label")
    s.add_argument("--out", required=True)
    s.add_argument("--truth")
    s.set_defaults(fn=cmd_synth)

    s = sub.add_parser("bias", help="split a dataset and induce presentation bias")
    s.add_argument("--data", required=True)
    _add_task(s)
    s.add_argument("--splits", type=float, nargs=3, default=(0.2, 0.4, 0.4))
    s.add_argument("--label-drop", type=float, default=0.9)
    s.add_argument("--row-drop", type=float, default=0.35)
    s.add_argument("--sample-drop", type=float, default=0.9)
    s.add_argument("--tabular-only", action="store_true")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(fn=cmd_bias)

    s = sub.add_parser("train-cgan", help="train the counterfactual GAN on a biased train set")
    s.add_argument("--biased", required=True)
    _add_task(s)
    _add_gan(s)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(fn=cmd_train_cgan)

    s = sub.add_parser("augment", help="fill withheld labels with generated counterfactuals")
    s.add_argument("--biased", required=True)
    s.add_argument("--model", required=True)
    _add_task(s)
    s.add_argument("--mode", choices=["expected", "sampled"], default="expected")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--labels-out")
    s.add_argument("--out", required=True)
    s.set_defaults(fn=cmd_augment)

    s = sub.add_parser("bench", help="run the full benchmark from a YAML config")
    s.add_argument("--config", required=True)
    s.add_argument("--seeds", type=int, nargs="+")
    s.add_argument("--methods", nargs="+", choices=["uncorrected", "ipw", "dragonnet", "ca", "oracle"])
    s.add_argument("--output-dir")
    s.add_argument("--format", choices=["plain", "delimited", "markup"], default="plain")
    s.set_defaults(fn=cmd_bench)

    s = sub.add_parser("report", help="render tables from a finished run, or scan it for vault content")
    s.add_argument("--run", required=True)
    s.add_argument("--format", choices=["plain", "delimited", "markup"], default="plain")
    s.add_argument("--hygiene", action="store_true")
    s.set_defaults(fn=cmd_report)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, FileNotFoundError, PermissionError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_DATA
    except ValueError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
