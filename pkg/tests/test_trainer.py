from dataclasses import replace

import numpy as np
import pytest

from conftest import trained_run
from pcicorr.correlation import correlation_loss, masked_corr
from pcicorr.evaluation import fd_gradient
from pcicorr.mask import MaskSet, PgdConfig, lipschitz_estimate
from pcicorr.synthgen import Subset, SynthSpec, generate, load_matrix
from pcicorr.trainer import (
    LinearEncoder,
    TaskHead,
    TrainConfig,
    centered,
    cross_entropy,
    init_model,
    loss_and_gradients,
    total_loss,
    train,
    update_masks,
)

SEEDS = range(10)


def small_problem(rng, k=2, m=3, d_raw=4, n=8, classes=3):
    raw = [rng.standard_normal((n, d_raw)) for _ in range(k)]
    encoders = [LinearEncoder(rng.standard_normal((m, d_raw)), i) for i in range(k)]
    head = TaskHead(rng.standard_normal((classes, k * m)), rng.standard_normal(classes))
    labels = rng.integers(0, classes, size=n)
    masks = MaskSet.random(k, m, PgdConfig(sum_threshold=m / 2), seed=1)
    return raw, encoders, head, labels, masks


def feats(encoders, raw):
    return [centered(e.encode(x), i) for i, (e, x) in enumerate(zip(encoders, raw))]


def test_total_loss_theta_zero_is_cross_entropy(rng):
    raw, enc, head, labels, masks = small_problem(rng)
    b = feats(enc, raw)
    assert total_loss(b, masks, head, labels, 0.0) == cross_entropy(head, b, labels)


def test_total_loss_zero_masks(rng):
    raw, enc, head, labels, _ = small_problem(rng)
    zero = MaskSet.constant(2, 3, 0.0, 1.5)
    b = feats(enc, raw)
    assert total_loss(b, zero, head, labels, 0.7) == cross_entropy(head, b, labels)


def test_total_loss_composes_exactly(rng):
    raw, enc, head, labels, masks = small_problem(rng, k=3)
    b = feats(enc, raw)
    theta = 0.003
    expected = theta * correlation_loss(b, masks) + cross_entropy(head, b, labels)
    assert total_loss(b, masks, head, labels, theta) == expected


def test_total_loss_shape_errors(rng):
    raw, enc, head, labels, masks = small_problem(rng)
    with pytest.raises(ValueError):
        total_loss(feats(enc, raw), masks, head, labels[:-1], 0.1)
    with pytest.raises(ValueError):
        total_loss(feats(enc, raw), masks, head, labels + 5, 0.1)


def test_loss_and_gradients_values_match_total_loss(rng):
    raw, enc, head, labels, masks = small_problem(rng)
    corr, ce, tot, *_ = loss_and_gradients(enc, head, raw, labels, masks, 0.4)
    b = feats(enc, raw)
    assert corr == pytest.approx(correlation_loss(b, masks), rel=1e-12)
    assert tot == pytest.approx(total_loss(b, masks, head, labels, 0.4), rel=1e-12)


@pytest.mark.parametrize("theta", [0.0, 0.003, 0.5])
def test_encoder_and_head_gradients_match_finite_differences(theta):
    rng = np.random.default_rng(5)
    raw, enc, head, labels, masks = small_problem(rng)
    _, _, _, enc_grads, ghw, ghb = loss_and_gradients(enc, head, raw, labels, masks, theta)

    def loss_at(i):
        def f(flat):
            e = [LinearEncoder(x.weight.copy(), x.modality_id) for x in enc]
            e[i].weight = flat.reshape(e[i].weight.shape)
            return total_loss(feats(e, raw), masks, head, labels, theta)
        return f

    worst = 0.0
    for i, g in enumerate(enc_grads):
        fd = fd_gradient(loss_at(i), enc[i].weight.ravel())
        worst = max(worst, np.max(np.abs(g.ravel() - fd) / np.maximum(np.abs(fd), 1e-8)))
    fd_w = fd_gradient(
        lambda w: total_loss(feats(enc, raw), masks, TaskHead(w.reshape(head.weight.shape),
                                                              head.bias), labels, theta),
        head.weight.ravel(),
    )
    fd_b = fd_gradient(
        lambda b: total_loss(feats(enc, raw), masks, TaskHead(head.weight, b), labels, theta),
        head.bias,
    )
    worst = max(worst, np.max(np.abs(ghw.ravel() - fd_w) / np.maximum(np.abs(fd_w), 1e-8)))
    worst = max(worst, np.max(np.abs(ghb - fd_b) / np.maximum(np.abs(fd_b), 1e-8)))
    assert worst <= 1e-5


def tiny_spec(seed=0, n=256):
    return SynthSpec(k=3, d_raw=8, m=8, subsets=(Subset((0, 1), 2), Subset((0, 1, 2), 2)),
                     n=n, n_classes=2, seed=seed)


def test_zero_epochs_returns_initial_model():
    ds = generate(tiny_spec())
    cfg = TrainConfig(epochs=0, seed=3)
    model = train(ds, cfg)
    ref = init_model(ds, cfg)
    assert model.history == []
    assert all(np.array_equal(a.weight, b.weight) for a, b in zip(model.encoders, ref.encoders))
    assert all(np.array_equal(model.masks[p].weights, ref.masks[p].weights) for p in ref.masks)


def test_training_is_deterministic():
    ds = generate(tiny_spec())
    a = train(ds, TrainConfig(epochs=3, seed=1))
    b = train(ds, TrainConfig(epochs=3, seed=1))
    assert a.history == b.history
    assert all(np.array_equal(x.weight, y.weight) for x, y in zip(a.encoders, b.encoders))
    c = train(ds, TrainConfig(epochs=3, seed=2))
    assert c.history != a.history


def test_history_has_one_record_per_epoch():
    ds = generate(tiny_spec())
    model = train(ds, TrainConfig(epochs=4, theta=0.0))
    assert [r.epoch for r in model.history] == [0, 1, 2, 3]
    # correlation loss is still tracked when it carries no weight
    assert all(r.correlation_loss < 0 and r.total_loss == r.task_loss for r in model.history)


def test_mask_updates_never_increase_correlation_loss():
    ds = generate(tiny_spec(n=512))
    model = init_model(ds, TrainConfig(seed=4))
    rng = np.random.default_rng(0)
    masks = model.masks
    for _ in range(50):
        idx = rng.choice(ds.n, size=32, replace=False)
        b = feats(model.encoders, [x[idx] for x in ds.raw])
        lip = max(lipschitz_estimate(b[i], b[j]) for i, j in masks.pairs)
        pgd = PgdConfig(sum_threshold=2.0, step_size=0.9 / lip, tolerable_error=1e-12,
                        max_iterations=5)
        new = update_masks(masks, b, pgd)
        for p in masks.pairs:
            before = masked_corr(b[p[0]], b[p[1]], masks[p])
            assert masked_corr(b[p[0]], b[p[1]], new[p]) >= before - 1e-12 * (1 + abs(before))
        assert correlation_loss(b, new) <= correlation_loss(b, masks) + 1e-12
        masks = new


def test_config_validation():
    for bad in ({"theta": -1}, {"learning_rate": 0}, {"batch_size": 1}, {"epochs": -1},
                {"mask_update_cadence": 0}, {"encoder_init": "xavier"}):
        with pytest.raises(ValueError):
            TrainConfig(**bad)
    with pytest.raises(ValueError):
        train(generate(tiny_spec(n=16)), TrainConfig(batch_size=32))


def test_checkpoint_files(tmp_path):
    ds = generate(tiny_spec())
    model = train(ds, TrainConfig(epochs=1))
    model.save(tmp_path)
    np.testing.assert_array_equal(load_matrix(tmp_path / "encoder_2.csv"), model.encoders[2].weight)
    assert (tmp_path / "masks" / "mask_0_2.csv").exists()
    assert (tmp_path / "history.csv").read_text().startswith(
        "epoch,correlation_loss,task_loss,total_loss\n0,")


def test_random_init_option():
    ds = generate(tiny_spec())
    model = init_model(ds, TrainConfig(encoder_init="random"))
    assert not np.allclose(model.encoders[0].weight, ds.oracle_encoders()[0], atol=0.2)


@pytest.mark.slow
def test_default_run_recovers_planted_structure():
    assert trained_run(0, 0.003)["mass_on_planted"] >= 0.8


@pytest.mark.slow
def test_theta_run_matches_accuracy_and_raises_correlation():
    for seed in SEEDS:
        on, off = trained_run(seed, 0.003), trained_run(seed, 0.0)
        assert on["heldout_accuracy"] >= off["heldout_accuracy"] - 0.02, seed
        assert on["heldout_max_masked_corr"] > off["heldout_max_masked_corr"], seed
