import numpy as np
import pytest
import torch

from cfaug import nets
from cfaug.baselines import train_uncorrected
from cfaug.data import DataError, Dataset, TaskSpec
from cfaug.synthetic import SynthConfig, generate_synthetic
from cfaug.task import TaskModel, TrainConfig, evaluate, train_oracle, train_task_model

from conftest import FAST_TRAIN, make_dataset


def test_zero_epochs_is_config_error():
    with pytest.raises(ValueError):
        TrainConfig(epochs=0)


def test_single_class_labels_rejected():
    d = make_dataset(30)
    d1 = d.with_labels(np.ones(len(d)))
    with pytest.raises(DataError, match="single class"):
        train_task_model(d1, seed=0, config=FAST_TRAIN)


def test_weights_length_checked():
    d = make_dataset(30)
    with pytest.raises(ValueError):
        train_task_model(d, seed=0, weights=np.ones(3), config=FAST_TRAIN)


def test_noiseless_training_loss_falls_monotonically():
    d, _ = generate_synthetic(SynthConfig(n=200, d_tab=3, d_rich=0, noise_sd=0.0, positive_share=0.5))
    cfg = TrainConfig(hidden=64, epochs=1500, learning_rate=1e-2, batch_size=200, val_fraction=0.0)
    losses = train_task_model(d, seed=0, config=cfg).history.train_loss
    assert all(b < a for a, b in zip(losses, losses[1:]))
    assert losses[-1] < 1e-3


def test_deterministic_given_seed():
    d = make_dataset(120)
    a = train_task_model(d, seed=5, config=FAST_TRAIN)
    b = train_task_model(d, seed=5, config=FAST_TRAIN)
    for pa, pb in zip(a.parameters(), b.parameters()):
        assert torch.equal(pa, pb)


@pytest.mark.parametrize("task", [TaskSpec.binary(), TaskSpec.multiclass(3), TaskSpec.regression()])
def test_task_model_gradient_check(task):
    d = make_dataset(40, task=task)
    m = train_task_model(d, seed=0, config=FAST_TRAIN)
    rng = np.random.default_rng(1)
    idx = rng.choice(len(d), 8, replace=False)
    feats, y = nets.tensor(d.features()[idx]), nets.tensor(d.y[idx])
    w = nets.tensor(rng.uniform(0.5, 3, 8))
    err = nets.gradient_check(lambda: m.loss(feats, y, w), m.parameters())
    assert err < 1e-4


def test_loss_scaling_doubles_gradients():
    d = make_dataset(20)
    m = train_task_model(d, seed=0, config=FAST_TRAIN)
    feats, y = nets.tensor(d.features()), nets.tensor(d.y)
    g1 = torch.autograd.grad(m.loss(feats, y), m.parameters())
    g2 = torch.autograd.grad(2 * m.loss(feats, y), m.parameters())
    assert all(torch.equal(2 * a, b) for a, b in zip(g1, g2))


def test_evaluate_is_read_only_and_repeatable():
    d = make_dataset(100)
    m = train_task_model(d, seed=0, config=FAST_TRAIN)
    before = [p.clone() for p in m.parameters()]
    r1, r2 = evaluate(m, d), evaluate(m, d)
    assert r1 == r2
    assert all(torch.equal(a, b) for a, b in zip(before, m.parameters()))


def test_evaluate_schema_and_empty_errors():
    d = make_dataset(50)
    m = train_task_model(d, seed=0, config=FAST_TRAIN)
    with pytest.raises(DataError):
        evaluate(m, make_dataset(50, d_rich=1))
    with pytest.raises(ValueError):
        evaluate(m, d.subset([]))


def test_checkpoint_roundtrip(tmp_path):
    d = make_dataset(60, task=TaskSpec.multiclass(3))
    m = train_task_model(d, seed=0, config=FAST_TRAIN)
    m.save(tmp_path / "m.npz")
    back = TaskModel.load(tmp_path / "m.npz")
    assert np.array_equal(back.predict(d), m.predict(d))
    assert back.config == m.config


def test_oracle_without_masking_equals_uncorrected(synth_pipeline):
    from cfaug.bias import induce_train_bias

    pool = synth_pipeline["bundle"].d_train_pool
    b = induce_train_bias(pool, np.ones(len(pool), int), seed=0)
    a = train_oracle(b, seed=3, config=FAST_TRAIN)
    u = train_uncorrected(b, seed=3, config=FAST_TRAIN)
    assert all(torch.equal(p, q) for p, q in zip(a.parameters(), u.parameters()))


def test_oracle_restores_every_withheld_label(synth_pipeline):
    b = synth_pipeline["biased"]
    restored = b.restored("oracle")
    assert len(restored) == len(b)
    assert not np.isnan(restored.y).any()
    assert int((b.a == 0).sum()) == len(b.vault)
