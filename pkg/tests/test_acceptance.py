"""Acceptance suite: one test per criterion, summarised as PASS/FAIL lines at the end of the run."""

import subprocess
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest

from cfaug import nets
from cfaug.baselines import estimate_propensities
from cfaug.bias import fit_tab_model, induce_train_bias, predict_recs
from cfaug.data import TaskSpec, split_dataset
from cfaug.experiment import config_from_dict, load_config, run_experiment, run_seed, vault_hygiene_scan
from cfaug.gan import GanConfig, gradient_check_parts, random_batch, train_cgan, untrained_model
from cfaug.metrics import classification_metrics, regression_metrics
from cfaug.synthetic import SynthConfig, generate_synthetic
from cfaug.task import train_task_model

from conftest import FAST_TRAIN, make_dataset
from test_gan import biased_set
from test_metrics import brute_force_classification, brute_force_regression

ROOT = Path(__file__).resolve().parents[1]
BENCH_CONFIG = ROOT / "configs" / "synthetic_tabular.yaml"


def tag(record, crit, detail):
    record("criterion", str(crit))
    record("detail", detail)


@pytest.fixture(scope="module")
def bench(tmp_path_factory):
    """The five-seed tabular-only benchmark at default GAN settings, run once."""
    cfg = load_config(BENCH_CONFIG)
    cfg = replace(cfg, methods=("uncorrected", "ipw", "ca", "oracle"), output_dir=str(tmp_path_factory.mktemp("bench") / "run"))
    t0 = time.perf_counter()
    result = run_experiment(cfg)
    return cfg, result, time.perf_counter() - t0


def test_c01_bias_induction_rates(record_property):
    t0 = time.perf_counter()
    d, _ = generate_synthetic(SynthConfig(n=20_000, d_tab=8, d_rich=0, data_seed=7))
    tab = fit_tab_model(d)
    r = predict_recs(tab, d)
    b = induce_train_bias(d, r, seed=7)
    elapsed = time.perf_counter() - t0
    obs0 = float(b.a[b.r == 0].mean())
    obs1 = float(b.a[b.r == 1].mean())
    keep = len(b) / len(d)
    tag(record_property, 1, f"obs|r=0 {obs0:.4f}, obs|r=1 {obs1:.4f}, retention {keep:.4f}, {elapsed:.2f}s")
    assert 0.08 <= obs0 <= 0.12
    assert obs1 == 1.0
    assert 0.63 <= keep <= 0.67
    assert elapsed < 10


def test_c02_directional_minority_f1(bench, record_property):
    _, r, elapsed = bench
    f1 = {m: r.summary[m]["unbiased"]["f1_minority"][0] for m in ("uncorrected", "ipw", "ca")}
    gain, gap = 100 * (f1["ca"] - f1["uncorrected"]), 100 * (f1["ca"] - f1["ipw"])
    tag(record_property, 2, f"minority F1 unc {f1['uncorrected']:.3f} ipw {f1['ipw']:.3f} ca {f1['ca']:.3f}; CA-unc {gain:+.1f} pts, CA-IPW {gap:+.1f} pts; {elapsed / 60:.1f} min")
    assert r.ok
    assert len(r.seeds) == 5
    assert gain >= 15
    assert gap >= -2
    assert elapsed < 15 * 60


def test_c03_oracle_gap(bench, record_property):
    _, r, _ = bench
    ca, orc = r.summary["ca"]["unbiased"]["f1_macro"][0], r.summary["oracle"]["unbiased"]["f1_macro"][0]
    tag(record_property, 3, f"macro F1 ca {ca:.3f} oracle {orc:.3f}, gap {100 * (orc - ca):+.1f} pts")
    assert orc - ca <= 0.12


def test_c04_counterfactual_fidelity(bench, record_property, tmp_path):
    _, r, _ = bench
    tvs = [r.analyses[str(s)]["counterfactual"]["tv"] for s in r.seeds]
    raw = {"data": {"synthetic": {"d_tab": 8, "d_rich": 0, "noise_sd": 0.0}, "rich_columns": []},
           "methods": ["ca", "oracle"], "seeds": [0], "output_dir": str(tmp_path)}
    noiseless = run_seed(config_from_dict(raw), 0)
    agreement = noiseless.analyses["counterfactual"]["agreement"]
    tag(record_property, 4, f"TV per seed max {max(tvs):.3f} (mean {np.mean(tvs):.3f}); noiseless agreement {agreement:.3f}")
    assert max(tvs) <= 0.15
    assert agreement >= 0.90


def test_c05_label_balance(bench, record_property):
    _, r, _ = bench
    pairs = [(r.analyses[str(s)]["label_balance"]["entropy_corrected"], r.analyses[str(s)]["label_balance"]["entropy_observed"]) for s in r.seeds]
    tag(record_property, 5, "entropy corrected/observed " + ", ".join(f"{c:.3f}/{o:.3f}" for c, o in pairs))
    assert all(c >= o for c, o in pairs)


def test_c06_ipw_mean(record_property):
    d, _ = generate_synthetic(SynthConfig(n=20_000, d_tab=8, d_rich=0, data_seed=21))
    bundle = split_dataset(d, (0.2, 0.4, 0.4), seed=3)
    tab = fit_tab_model(bundle.d_original)
    b = induce_train_bias(bundle.d_train_pool, predict_recs(tab, bundle.d_train_pool), seed=5)
    obs = b.observed_mask
    w = estimate_propensities(b).weights(b.r[obs])
    ipw = float((w * b.y_obs[obs]).sum() / w.sum())
    full = float(b.restored("oracle").y.mean())
    tag(record_property, 6, f"{len(b)} rows; weighted mean {ipw:.4f} vs full {full:.4f} (naive {b.y_obs[obs].mean():.4f})")
    assert len(b) >= 2000
    assert abs(ipw - full) <= 0.03


def test_c07_gradient_check(record_property):
    errs = {}
    for task in (TaskSpec.binary(), TaskSpec.multiclass(3), TaskSpec.regression()):
        m = untrained_model(4, 3, task, GanConfig(hidden_size=32), seed=1)
        for name, e in gradient_check_parts(m, random_batch(m, 8, seed=2)).items():
            errs[f"{task.kind}/{name}"] = e
        d = make_dataset(40, task=task)
        tm = train_task_model(d, seed=0, config=FAST_TRAIN)
        rng = np.random.default_rng(1)
        idx = rng.choice(len(d), 8, replace=False)
        f, y, w = nets.tensor(d.features()[idx]), nets.tensor(d.y[idx]), nets.tensor(rng.uniform(0.5, 3, 8))
        errs[f"{task.kind}/task"] = nets.gradient_check(lambda: tm.loss(f, y, w), tm.parameters())
    worst = max(errs, key=errs.get)
    tag(record_property, 7, f"max relative error {errs[worst]:.2e} ({worst}) over {len(errs)} checks")
    assert errs[worst] < 1e-4


def test_c08_metric_oracle(record_property):
    rng = np.random.default_rng(0)
    worst = 0.0
    for _ in range(100):
        n = int(rng.integers(1, 51))
        k = int(rng.integers(2, 5))
        task = TaskSpec.multiclass(k, int(rng.integers(0, k))) if k > 2 else TaskSpec.binary(int(rng.integers(0, 2)))
        y, p = rng.integers(0, k, n), rng.integers(0, k, n)
        got, want = classification_metrics(y, p, task), brute_force_classification(y.tolist(), p.tolist(), k, task.minority_class)
        worst = max([worst] + [abs(got[key] - want[key]) for key in want])
        yr, pr = rng.normal(size=max(n, 2)), rng.normal(size=max(n, 2))
        got, want = regression_metrics(yr, pr), brute_force_regression(yr.tolist(), pr.tolist())
        worst = max([worst] + [abs(got[key] - want[key]) for key in want])
    y = rng.normal(size=37)
    mean_pred = regression_metrics(y, np.full_like(y, y.mean()))
    tag(record_property, 8, f"max deviation from brute force {worst:.1e} over 100 instances; mean predictor nrmse {mean_pred['nrmse']!r} r2 {mean_pred['r2']!r}")
    assert worst <= 1e-12
    assert mean_pred["nrmse"] == 1.0 and mean_pred["r2"] == 0.0


def test_c09_null_equilibrium(record_property):
    b = biased_set(4000, null=True, mask_r1=True, seed=5)
    m = train_cgan(b, GanConfig(), seed=0)
    acc = m.telemetry.final_d_accuracy
    tag(record_property, 9, "final discriminator accuracy " + ", ".join(f"D_{k} {v:.3f}" for k, v in sorted(acc.items())))
    assert set(acc) == {"0", "1"}
    assert all(0.40 <= v <= 0.60 for v in acc.values())


def test_c10_determinism_and_hygiene(record_property, tmp_path):
    cfg = tmp_path / "bench.yaml"
    cfg.write_text(
        "data:\n  synthetic: {n: 4000, d_tab: 4, d_rich: 0}\n  rich_columns: []\n"
        "gan: {g_iters: 50}\n"
        "methods: [uncorrected, ipw, dragonnet, ca]\nseeds: [0, 1]\n"
    )
    runs = [tmp_path / "a", tmp_path / "b"]
    for run in runs:
        proc = subprocess.run([sys.executable, "-m", "cfaug.cli", "bench", "--config", str(cfg), "--output-dir", str(run)], capture_output=True, text=True)
        assert proc.returncode == 0, proc.stderr
    files = sorted(p.relative_to(runs[0]) for p in runs[0].rglob("*") if p.is_file())
    differing = [str(f) for f in files if (runs[0] / f).read_bytes() != (runs[1] / f).read_bytes()]
    same_set = files == sorted(p.relative_to(runs[1]) for p in runs[1].rglob("*") if p.is_file())
    flagged = vault_hygiene_scan(runs[0])
    tag(record_property, 10, f"{len(files)} files, {len(differing)} differ; hygiene flagged {len(flagged)}")
    assert same_set and not differing
    assert flagged == []
