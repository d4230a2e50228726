import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cfaug.analysis import (
    compare,
    entropy,
    histogram,
    ks_statistic,
    label_balance_report,
    shared_edges,
    tv_distance,
    write_plot_data,
)
from cfaug.augmentation import augment
from cfaug.data import TaskSpec, read_table
from cfaug.gan import CfLabels


def brute_tv(p, q):
    """max over events S of |P(S) - Q(S)|."""
    p, q = p / p.sum(), q / q.sum()
    best = 0.0
    for k in range(len(p) + 1):
        for s in itertools.combinations(range(len(p)), k):
            best = max(best, abs(p[list(s)].sum() - q[list(s)].sum()))
    return best


counts = st.lists(st.integers(0, 20), min_size=1, max_size=8)


@settings(max_examples=60, deadline=None)
@given(counts, counts)
def test_tv_matches_event_maximum(a, b):
    n = max(len(a), len(b))
    p = np.array(a + [0] * (n - len(a)), float)
    q = np.array(b + [0] * (n - len(b)), float)
    if p.sum() == 0 or q.sum() == 0:
        return
    assert tv_distance(p, q) == pytest.approx(brute_tv(p, q), abs=1e-12)


def test_tv_identities():
    assert tv_distance(np.array([3, 1, 0]), np.array([6, 2, 0])) == 0
    assert tv_distance(np.array([5, 0]), np.array([0, 2])) == 1
    assert ks_statistic(np.array([5, 0]), np.array([0, 2])) == 1
    assert ks_statistic(np.array([1, 1]), np.array([1, 1])) == 0


def test_ks_known_value():
    assert ks_statistic(np.array([1, 0, 1]), np.array([0, 1, 1])) == pytest.approx(0.5)


def test_entropy():
    assert entropy(np.array([5, 5])) == pytest.approx(np.log(2))
    assert entropy(np.array([4, 0])) == 0
    assert entropy(np.array([1, 1, 1, 1])) == pytest.approx(np.log(4))


def test_histograms():
    t = TaskSpec.multiclass(4)
    assert histogram(np.array([0, 0, 3]), t).tolist() == [2, 0, 0, 1]
    edges = shared_edges(np.array([0.0, 1.0]), np.array([2.0]), bins=4)
    assert edges[0] == 0 and edges[-1] == 2 and len(edges) == 5
    h = histogram(np.array([0.0, 0.6, 2.0]), TaskSpec.regression(), edges)
    assert h.sum() == 3


def test_compare_regression_uses_shared_bins():
    rep = compare(np.array([0.0, 1.0]), np.array([0.0, 1.0]), TaskSpec.regression())
    assert rep.tv == 0 and len(rep.bins) == 20
    assert sum(rep.counts_a) == 2


def test_balance_report_masses(synth_pipeline):
    b = synth_pipeline["biased"]
    hidden = b.ids[b.a == 0]
    minority = b.task.minority_class
    c = augment(b, CfLabels(hidden, np.full(len(hidden), float(minority))))
    rep = label_balance_report(b, c)
    assert sum(rep.counts_observed) == int(b.observed_mask.sum())
    assert sum(rep.counts_corrected) == len(b)
    assert rep.counts_corrected[minority] == rep.counts_observed[minority] + len(hidden)
    assert rep.improved


def test_balance_identity_when_generated_matches_observed(synth_pipeline):
    b = synth_pipeline["biased"]
    obs = b.y_obs[b.observed_mask]
    hidden = b.ids[b.a == 0]
    # replicate the observed marginal exactly (up to rounding) on the hidden rows
    share = obs.mean()
    k = int(round(share * len(hidden)))
    labels = np.r_[np.ones(k), np.zeros(len(hidden) - k)]
    rep = label_balance_report(b, augment(b, CfLabels(hidden, labels)))
    assert rep.entropy_corrected == pytest.approx(rep.entropy_observed, abs=1e-3)


def test_plot_data(tmp_path):
    write_plot_data(tmp_path / "p.csv", ["0", "1"], {"generated": [3, 4], "withheld": [5, 2]})
    header, rows = read_table(tmp_path / "p.csv")
    assert header == ["bin", "source", "count"]
    assert rows[0] == ["0", "generated", "3"] and len(rows) == 4
