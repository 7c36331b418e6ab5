import numpy as np
import pytest

from ssflsim.data import augment_batch, generate_synthetic
from ssflsim.errors import ConfigError
from ssflsim.model import MLP, OptimizerState, sgd_step
from ssflsim.training import MOMENTUM, client_train, make_pseudo_batch, server_train


def _logit_params(model, logits):
    """Weights that produce fixed output logits regardless of input."""
    d_in, h, k = model.sizes
    return model.flatten(np.zeros((d_in, h)), np.zeros(h),
                         np.zeros((h, k)), np.asarray(logits, dtype=float))


def test_server_train_zero_epochs():
    model = MLP(4, 2)
    rng = np.random.default_rng(0)
    params = model.init_params(rng)
    out = server_train(model, params, rng.random((10, 4)),
                       rng.integers(0, 2, 10), 0, 4, 0.1, rng)
    assert np.array_equal(out, params)


def test_server_train_empty_set():
    model = MLP(4, 2)
    with pytest.raises(ConfigError):
        server_train(model, np.zeros(model.num_params), np.zeros((0, 4)),
                     np.zeros(0, dtype=int), 1, 4, 0.1, np.random.default_rng(0))


def test_server_train_reduces_loss():
    ds = generate_synthetic(2, 40, 4, seed=1)
    model = MLP(4, 2)
    params = model.init_params(np.random.default_rng(1))
    loss0, _ = model.loss_and_grad(params, ds.features, ds.labels)
    trained = server_train(model, params, ds.features, ds.labels, 1, 16, 0.05,
                           np.random.default_rng(2))
    loss1, _ = model.loss_and_grad(trained, ds.features, ds.labels)
    assert loss1 < loss0


def test_server_train_deterministic():
    ds = generate_synthetic(3, 30, 5, seed=2)
    model = MLP(5, 3)
    params = model.init_params(np.random.default_rng(3))
    a = server_train(model, params, ds.features, ds.labels, 2, 8, 0.05,
                     np.random.default_rng(7))
    b = server_train(model, params, ds.features, ds.labels, 2, 8, 0.05,
                     np.random.default_rng(7))
    assert np.array_equal(a, b)


def test_pseudo_batch_confident_sample_kept():
    model = MLP(3, 2, hidden=2)
    params = _logit_params(model, [np.log(0.97), np.log(0.03)])
    X = np.random.default_rng(0).random((4, 3))
    batch = make_pseudo_batch(model, params, X, 0.95, np.random.default_rng(1))
    assert np.allclose(batch.confidence, 0.97)
    assert np.all(batch.mask == 1.0)
    assert np.all(batch.labels == 0)


def test_pseudo_batch_low_confidence_masked():
    model = MLP(3, 2, hidden=2)
    params = _logit_params(model, [np.log(0.60), np.log(0.40)])
    X = np.random.default_rng(0).random((4, 3))
    batch = make_pseudo_batch(model, params, X, 0.95, np.random.default_rng(1))
    assert np.allclose(batch.confidence, 0.60)
    assert np.all(batch.mask == 0.0)


def test_pseudo_batch_self_consistent():
    ds = generate_synthetic(4, 30, 6, seed=3)
    model = MLP(6, 4)
    params = model.init_params(np.random.default_rng(4))
    batch = make_pseudo_batch(model, params, ds.features[:40], 0.4,
                              np.random.default_rng(5))
    assert np.array_equal(batch.mask, (batch.confidence >= 0.4).astype(float))
    assert np.all((batch.labels >= 0) & (batch.labels < 4))
    assert batch.features.shape == ds.features[:40].shape


def test_pseudo_batch_threshold_validation():
    model = MLP(3, 2)
    with pytest.raises(ConfigError):
        make_pseudo_batch(model, np.zeros(model.num_params), np.zeros((2, 3)),
                          0.0, np.random.default_rng(0))


def test_mask_monotone_in_threshold():
    ds = generate_synthetic(4, 30, 6, seed=6)
    model = MLP(6, 4)
    params = model.init_params(np.random.default_rng(6))
    masks = {}
    for lam in (0.2, 0.5, 0.8):
        batch = make_pseudo_batch(model, params, ds.features[:50], lam,
                                  np.random.default_rng(9))
        masks[lam] = batch.mask
    assert masks[0.2].sum() >= masks[0.5].sum() >= masks[0.8].sum()
    assert np.all(masks[0.8] <= masks[0.5])
    assert np.all(masks[0.5] <= masks[0.2])


def test_client_train_fully_masked_returns_zero():
    model = MLP(3, 2, hidden=2)
    params = _logit_params(model, [np.log(0.60), np.log(0.40)])
    X = np.random.default_rng(1).random((20, 3))
    delta = client_train(model, params, X, 3, 8, 0.95, 0.1,
                         np.random.default_rng(2))
    assert np.all(delta == 0.0)


def test_client_train_empty_shard():
    model = MLP(3, 2)
    with pytest.raises(ConfigError):
        client_train(model, np.zeros(model.num_params), np.zeros((0, 3)),
                     1, 4, 0.5, 0.1, np.random.default_rng(0))


def test_client_train_deterministic():
    ds = generate_synthetic(3, 40, 5, seed=7)
    model = MLP(5, 3)
    params = model.init_params(np.random.default_rng(8))
    a = client_train(model, params, ds.features[:30], 2, 8, 0.2, 0.05,
                     np.random.default_rng(11))
    b = client_train(model, params, ds.features[:30], 2, 8, 0.2, 0.05,
                     np.random.default_rng(11))
    assert np.array_equal(a, b)


def test_client_train_matches_supervised_oracle_when_unmasked():
    # With a tiny threshold every sample passes; the oracle replays the exact
    # loop with argmax labels and full weights, scaled like the client step.
    ds = generate_synthetic(3, 40, 5, seed=9)
    model = MLP(5, 3)
    params0 = server_train(model, model.init_params(np.random.default_rng(1)),
                           ds.features, ds.labels, 3, 16, 0.05,
                           np.random.default_rng(2))
    X = ds.features[:36]
    lam = 1e-9

    delta = client_train(model, params0, X, 2, 16, lam, 0.05,
                         np.random.default_rng(3))

    rng = np.random.default_rng(3)
    params = params0
    state = OptimizerState(np.zeros_like(params), 0.05, MOMENTUM)
    for _ in range(2):
        order = rng.permutation(X.shape[0])
        for start in range(0, X.shape[0], 16):
            idx = order[start:start + 16]
            weak = augment_batch(X[idx], rng, strong=False)
            labels = model.predict(params, weak)
            strong = augment_batch(X[idx], rng, strong=True)
            _, grad = model.loss_and_grad(params, strong, labels)
            params, state = sgd_step(params, grad, state)
    assert np.allclose(delta, params - params0, atol=1e-12)


def test_pseudo_labels_accurate_under_good_model():
    ds = generate_synthetic(5, 60, 8, seed=10)
    model = MLP(8, 5)
    params = model.init_params(np.random.default_rng(12))
    params = server_train(model, params, ds.features, ds.labels, 120, 32, 0.1,
                          np.random.default_rng(13))
    train_acc = float(np.mean(model.predict(params, ds.features) == ds.labels))
    assert train_acc >= 0.99
    batch = make_pseudo_batch(model, params, ds.features, 0.95,
                              np.random.default_rng(14))
    kept = batch.mask > 0
    assert kept.sum() > 0
    agreement = np.mean(batch.labels[kept] == ds.labels[kept])
    assert agreement >= 0.95


def test_update_norm_bounded_by_step_budget():
    # Replay the same stream to find the largest scaled gradient, then check
    # the momentum-budget bound E * steps * lr * G / (1 - mu).
    ds = generate_synthetic(3, 40, 5, seed=11)
    model = MLP(5, 3)
    params0 = model.init_params(np.random.default_rng(15))
    X = ds.features[:30]
    lr, epochs, bsz, lam = 0.05, 2, 8, 0.3

    delta = client_train(model, params0, X, epochs, bsz, lam, lr,
                         np.random.default_rng(16))

    rng = np.random.default_rng(16)
    params = params0
    state = OptimizerState(np.zeros_like(params0), lr, MOMENTUM)
    max_grad = 0.0
    steps = 0
    for _ in range(epochs):
        order = rng.permutation(X.shape[0])
        for start in range(0, X.shape[0], bsz):
            idx = order[start:start + bsz]
            batch = make_pseudo_batch(model, params, X[idx], lam, rng)
            _, grad = model.loss_and_grad(params, batch.features, batch.labels,
                                          batch.mask)
            grad = grad * batch.mask.mean()
            max_grad = max(max_grad, float(np.linalg.norm(grad)))
            params, state = sgd_step(params, grad, state)
            steps += 1
    bound = steps * lr * max_grad / (1 - MOMENTUM)
    assert np.isfinite(delta).all()
    assert np.linalg.norm(delta) <= bound + 1e-12


def test_client_train_zero_lr_zero_update():
    ds = generate_synthetic(3, 30, 5, seed=12)
    model = MLP(5, 3)
    params = model.init_params(np.random.default_rng(17))
    delta = client_train(model, params, ds.features[:20], 2, 8, 0.2, 0.0,
                         np.random.default_rng(18))
    assert np.all(delta == 0.0)
