import numpy as np
import pytest

from cfaug.bias import fit_tab_model, induce_train_bias, predict_recs
from cfaug.data import Dataset, TaskSpec, split_dataset
from cfaug.synthetic import SynthConfig, generate_synthetic
from cfaug.task import TrainConfig

FAST_TRAIN = TrainConfig(hidden=32, epochs=2, learning_rate=1e-3, batch_size=64)


def make_dataset(n=200, d_tab=3, d_rich=2, task=None, seed=0):
    rng = np.random.default_rng(seed)
    task = task or TaskSpec.binary()
    x = rng.normal(size=(n, d_tab))
    w = rng.normal(size=(n, d_rich))
    if task.kind == "binary":
        y = (x[:, 0] + 0.3 * rng.normal(size=n) > -0.5).astype(float)
    elif task.kind == "multiclass":
        y = np.digitize(x[:, 0], [-0.5, 0.5]).astype(float)
    else:
        y = x[:, 0] + 0.1 * rng.normal(size=n)
    return Dataset(np.arange(n) + 1000, x, w, y, task)


@pytest.fixture(scope="session")
def synth_pipeline():
    """A small tabular-only biased train set with its splits."""
    d, truth = generate_synthetic(SynthConfig(n=4000, d_tab=4, d_rich=0, data_seed=3))
    bundle = split_dataset(d, (0.2, 0.4, 0.4), seed=1)
    tab = fit_tab_model(bundle.d_original, seed=2)
    r = predict_recs(tab, bundle.d_train_pool)
    b = induce_train_bias(bundle.d_train_pool, r, seed=4)
    return {"data": d, "bundle": bundle, "tab": tab, "biased": b}


ACCEPTANCE_LINES: dict[str, str] = {}


def pytest_runtest_logreport(report):
    if report.when != "call" and not (report.when == "setup" and report.outcome != "passed"):
        return
    crit = dict(report.user_properties).get("criterion")
    if crit is None:
        return
    status = "PASS" if report.passed else "FAIL"
    detail = dict(report.user_properties).get("detail", "")
    ACCEPTANCE_LINES[crit] = f"criterion {crit:>2}: {status}  {detail}".rstrip()


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for crit in sorted(ACCEPTANCE_LINES, key=int):
        terminalreporter.write_line(ACCEPTANCE_LINES[crit])
