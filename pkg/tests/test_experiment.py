import json
import numpy as np
import pytest

from cfaug.experiment import (
    ConfigError,
    ExperimentResult,
    config_from_dict,
    load_config,
    parse_delimited,
    render_tables,
    run_experiment,
    stage_seeds,
    vault_hygiene_scan,
)

TINY = {
    "data": {"synthetic": {"n": 600, "d_tab": 3, "d_rich": 2}, "rich_columns": []},
    "gan": {"hidden_size": 16, "g_iters": 10, "d_steps": 2, "batch_size": 32, "learning_rate": 1e-3},
    "train": {"hidden": 16, "epochs": 1, "learning_rate": 1e-3, "batch_size": 64},
    "dragonnet": {"trunk_width": 16, "head_width": 8},
    "seeds": [0, 1],
}


def tiny(tmp_path, **over):
    raw = {**TINY, "output_dir": str(tmp_path / "run"), **over}
    return config_from_dict(raw)


@pytest.fixture(scope="module")
def tiny_result(tmp_path_factory):
    out = tmp_path_factory.mktemp("exp")
    cfg = config_from_dict({**TINY, "output_dir": str(out / "run")})
    return cfg, run_experiment(cfg)


def test_config_validation(tmp_path):
    with pytest.raises(ConfigError, match="dataset source"):
        config_from_dict({"seeds": [0]})
    with pytest.raises(ConfigError, match="exactly one"):
        config_from_dict({"data": {"synthetic": {}, "file": "x.csv"}, "task": "binary"})
    with pytest.raises(ConfigError, match="needs a task"):
        config_from_dict({"data": {"file": "x.csv"}})
    with pytest.raises(ConfigError, match="unknown keys in gan"):
        tiny(tmp_path, gan={"hidden": 3})
    with pytest.raises(ConfigError, match="untrained"):
        tiny(tmp_path, gan={"g_iters": 0})
    with pytest.raises(ConfigError, match="at least one method"):
        tiny(tmp_path, methods={"ca": False})
    with pytest.raises(ConfigError, match="distinct"):
        tiny(tmp_path, seeds=[1, 1])
    with pytest.raises(ConfigError, match="unknown top-level"):
        tiny(tmp_path, colour="red")


def test_methods_as_toggles(tmp_path):
    cfg = tiny(tmp_path, methods={"ca": True, "ipw": True, "oracle": False})
    assert cfg.methods == ("ipw", "ca")


def test_yaml_loading(tmp_path):
    p = tmp_path / "c.yaml"
    p.write_text("data:\n  synthetic: {n: 100}\nseeds: [3]\n")
    assert load_config(p).seeds == (3,)
    p.write_text("- a\n")
    with pytest.raises(ConfigError):
        load_config(p)


def test_stage_seeds_independent_and_stable():
    a, b = stage_seeds(0), stage_seeds(1)
    assert a == stage_seeds(0)
    assert len(set(a.values())) == len(a)
    assert a != b


def test_output_root_override(tmp_path, monkeypatch):
    cfg = config_from_dict({**TINY, "output_dir": "rel/run"})
    monkeypatch.setenv("CFAUG_OUTPUT_ROOT", str(tmp_path))
    assert cfg.output_path() == tmp_path / "rel" / "run"


def test_run_produces_every_cell(tiny_result):
    cfg, r = tiny_result
    assert r.ok
    for m in cfg.methods:
        for split in ("unbiased", "biased"):
            mean, sd, n = r.summary[m][split]["f1_minority"]
            assert n == 2 and 0 <= mean <= 1 and sd >= 0
    assert "oracle" not in r.improvement
    assert set(r.improvement["unbiased"]) >= {"f1_minority", "f1_macro"}


def test_improvement_row_is_ca_minus_best_rival(tiny_result):
    _, r = tiny_result
    s = r.summary
    rivals = [m for m in ("uncorrected", "ipw", "dragonnet")]
    best = max(s[m]["unbiased"]["f1_macro"][0] for m in rivals)
    assert r.improvement["unbiased"]["f1_macro"] == pytest.approx(s["ca"]["unbiased"]["f1_macro"][0] - best)


def test_render_formats_and_roundtrip(tiny_result):
    _, r = tiny_result
    plain = render_tables(r, "plain")
    assert "CA" in plain and "Uncorrected" in plain
    md = render_tables(r, "markup")
    assert md.count("|") > 10
    parsed = parse_delimited(render_tables(r, "delimited"))
    mean, sd = parsed[("unbiased", "CA", "f1_macro")]
    want = r.summary["ca"]["unbiased"]["f1_macro"]
    assert mean == pytest.approx(want[0], abs=1e-12) and sd == pytest.approx(want[1], abs=1e-12)


def test_results_json_roundtrip(tiny_result):
    cfg, r = tiny_result
    raw = json.loads((cfg.output_path() / "results.json").read_text())
    back = ExperimentResult.from_dict(raw)
    assert render_tables(back, "delimited") == render_tables(r, "delimited")


def test_single_method_table(tmp_path):
    cfg = tiny(tmp_path, methods=["uncorrected"], seeds=[0])
    r = run_experiment(cfg)
    text = render_tables(r, "delimited")
    assert "Uncorrected" in text and ",CA," not in text
    assert r.summary["uncorrected"]["unbiased"]["f1_macro"][1] is None
    assert parse_delimited(text)[("unbiased", "Uncorrected", "f1_macro")][1] is None
    assert " ± " not in render_tables(r, "plain")


def test_method_failure_isolated(tmp_path):
    cfg = tiny(tmp_path, seeds=[0], task={"kind": "regression"}, data={"synthetic": {"n": 600, "d_tab": 3, "d_rich": 0, "binarize": False}})
    r = run_experiment(cfg)
    assert "dragonnet" in r.failures["0"]
    assert not r.ok
    assert "nrmse" in r.summary["ca"]["unbiased"]


def test_hygiene_clean_without_oracle(tmp_path):
    cfg = tiny(tmp_path, methods=["uncorrected", "ipw", "ca"], seeds=[0])
    run_experiment(cfg)
    assert vault_hygiene_scan(cfg.output_path()) == []


def test_hygiene_flags_vault_content(tmp_path):
    cfg = tiny(tmp_path, seeds=[0])
    run_experiment(cfg)
    flagged = vault_hygiene_scan(cfg.output_path())
    assert any("plot_counterfactual" in f for f in flagged)


def test_identical_reruns(tmp_path):
    a = tiny(tmp_path / "a", methods=["ipw", "ca"], seeds=[2])
    b = tiny(tmp_path / "b", methods=["ipw", "ca"], seeds=[2])
    run_experiment(a)
    run_experiment(b)
    files = sorted(p.relative_to(a.output_path()) for p in a.output_path().rglob("*") if p.is_file())
    assert files
    for f in files:
        assert (a.output_path() / f).read_bytes() == (b.output_path() / f).read_bytes(), f
