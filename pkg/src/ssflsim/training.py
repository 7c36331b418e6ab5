"""Semi-supervised training steps.

The server runs supervised mini-batch SGD on its labeled pool (with weak
augmentation). Clients label their own unlabeled batches: the current model
predicts on a weakly augmented view, predictions above the confidence
threshold become pseudo labels, and the strongly augmented view is trained on
those labels with below-threshold samples masked out. Clients upload the
delta between their trained weights and the broadcast weights.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .data import augment_batch
from .errors import ConfigError
from .model import MLP, OptimizerState, sgd_step

MOMENTUM = 0.9

BatchTransform = Callable[["PseudoBatch"], "PseudoBatch"]


@dataclass(frozen=True)
class PseudoBatch:
    """A self-labeled training batch.

    mask[i] is 1 exactly when confidence[i] reached the threshold; features are
    the strongly augmented views that the masked cross-entropy trains on.
    """

    features: np.ndarray    # (n, d) strong-augmented
    labels: np.ndarray      # (n,) pseudo labels (argmax of weak-view prediction)
    mask: np.ndarray        # (n,) float 0/1
    confidence: np.ndarray  # (n,) max softmax probability on the weak view


def _batches(n: int, batch_size: int, rng: np.random.Generator):
    order = rng.permutation(n)
    for start in range(0, n, batch_size):
        yield order[start:start + batch_size]


def server_train(model: MLP, params: np.ndarray, X: np.ndarray, y: np.ndarray,
                 epochs: int, batch_size: int, lr: float,
                 rng: np.random.Generator,
                 image_shape: tuple[int, int] | None = None) -> np.ndarray:
    """Supervised cross-entropy SGD on weakly augmented labeled samples."""
    if X.shape[0] == 0:
        raise ConfigError("server labeled set is empty")
    state = OptimizerState(np.zeros_like(params), lr, MOMENTUM)
    for _ in range(epochs):
        for idx in _batches(X.shape[0], batch_size, rng):
            xb = augment_batch(X[idx], rng, strong=False, image_shape=image_shape)
            _, grad = model.loss_and_grad(params, xb, y[idx])
            params, state = sgd_step(params, grad, state)
    return params


def make_pseudo_batch(model: MLP, params: np.ndarray, X: np.ndarray,
                      threshold: float, rng: np.random.Generator,
                      image_shape: tuple[int, int] | None = None) -> PseudoBatch:
    """Label a raw unlabeled batch with the model's confident predictions."""
    if not 0.0 < threshold <= 1.0:
        raise ConfigError(f"confidence threshold must be in (0,1], got {threshold}")
    weak = augment_batch(X, rng, strong=False, image_shape=image_shape)
    probs = model.forward(params, weak)
    confidence = probs.max(axis=1)
    labels = probs.argmax(axis=1)
    mask = (confidence >= threshold).astype(np.float64)
    strong = augment_batch(X, rng, strong=True, image_shape=image_shape)
    return PseudoBatch(strong, labels, mask, confidence)


def client_train(model: MLP, params0: np.ndarray, X: np.ndarray,
                 epochs: int, batch_size: int, threshold: float, lr: float,
                 rng: np.random.Generator,
                 image_shape: tuple[int, int] | None = None,
                 batch_transform: BatchTransform | None = None) -> np.ndarray:
    """Local pseudo-label training; returns the update (trained - broadcast).

    Pseudo labels are recomputed from the live local weights for every batch,
    so label quality tracks the model as it trains. ``batch_transform`` lets a
    caller corrupt each PseudoBatch before the gradient step (poisoning hooks).
    """
    if X.shape[0] == 0:
        raise ConfigError("client shard is empty")
    params = params0
    state = OptimizerState(np.zeros_like(params), lr, MOMENTUM)
    for _ in range(epochs):
        for idx in _batches(X.shape[0], batch_size, rng):
            batch = make_pseudo_batch(model, params, X[idx], threshold, rng,
                                      image_shape)
            if batch_transform is not None:
                batch = batch_transform(batch)
            _, grad = model.loss_and_grad(params, batch.features, batch.labels,
                                          batch.mask)
            # The local objective averages masked losses over the whole batch,
            # so the step size ramps up with the engaged fraction.
            grad = grad * batch.mask.mean()
            params, state = sgd_step(params, grad, state)
    return params - params0
