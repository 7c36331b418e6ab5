"""Poisoning attacks and attack telemetry.

Label flipping corrupts a client's pseudo batches (data poisoning); the
Gaussian attack replaces a client's upload with noise centered on the honest
clients' mean update (model poisoning). The attack objective s^T(w - w') is
logged per round: s is the sign pattern of the previous global change, w the
honest aggregate, w' the malicious aggregate.
"""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import ConfigError
from .training import PseudoBatch

ATTACK_KINDS = ("none", "label_flip", "gaussian")


class AttackError(RuntimeError):
    """An attack transform was invoked without the inputs it needs."""


@dataclass(frozen=True)
class AttackConfig:
    """Which attack runs and who runs it.

    Clients 0..num_malicious-1 are the malicious ones. ``flip_from``/``flip_to``
    drive label flipping (default remaps class 1 to class 7); ``variance``
    scales the Gaussian attack noise.
    """

    kind: str = "none"
    num_malicious: int = 0
    flip_from: int = 1
    flip_to: int = 7
    variance: float = 10.0

    def validate(self, num_clients: int, num_classes: int | None = None) -> None:
        if self.kind not in ATTACK_KINDS:
            raise ConfigError(f"attack kind must be one of {ATTACK_KINDS}, got {self.kind!r}")
        if not 0 <= self.num_malicious <= num_clients:
            raise ConfigError(
                f"malicious count must be in [0, {num_clients}], got {self.num_malicious}")
        if self.kind == "none" and self.num_malicious > 0:
            raise ConfigError("malicious count must be 0 when attack kind is none")
        if self.kind != "none" and self.num_malicious == 0:
            raise ConfigError(f"attack {self.kind!r} needs a positive malicious count")
        if self.kind == "label_flip":
            if self.flip_from == self.flip_to:
                raise ConfigError("flip_from and flip_to must differ")
            if num_classes is not None and not (
                    0 <= self.flip_from < num_classes and 0 <= self.flip_to < num_classes):
                raise ConfigError(
                    f"flip classes must be in [0, {num_classes}), "
                    f"got {self.flip_from}->{self.flip_to}")
        if self.kind == "gaussian" and self.variance < 0:
            raise ConfigError(f"gaussian variance must be >= 0, got {self.variance}")


def flip_pseudo_labels(batch: PseudoBatch, flip_from: int, flip_to: int) -> PseudoBatch:
    """Remap every unmasked pseudo label ``flip_from`` to ``flip_to``.

    Features, masks and confidences are untouched.
    """
    labels = batch.labels.copy()
    labels[(labels == flip_from) & (batch.mask > 0)] = flip_to
    return replace(batch, labels=labels)


def gaussian_update(honest_updates: list[np.ndarray], variance: float,
                    rng: np.random.Generator) -> np.ndarray:
    """Draw a poisoned upload ~ N(mean of honest updates, variance) per coordinate."""
    if not honest_updates:
        raise AttackError("gaussian attack needs at least one honest update")
    if variance < 0:
        raise ValueError(f"variance must be >= 0, got {variance}")
    mean = np.mean(np.stack(honest_updates), axis=0)
    return rng.normal(mean, np.sqrt(variance))


def direction_vector(current: np.ndarray, previous: np.ndarray) -> np.ndarray:
    """Sign (+1/-1, ties +1) of the last global parameter change."""
    if current.shape != previous.shape:
        raise ValueError("parameter vectors must have equal length")
    return np.where(current - previous >= 0, 1.0, -1.0)


def attack_objective(direction: np.ndarray, honest_agg: np.ndarray,
                     malicious_agg: np.ndarray) -> float:
    """s^T (w - w'): how far the malicious aggregate pushes against the trend."""
    if not (direction.shape == honest_agg.shape == malicious_agg.shape):
        raise ValueError("vectors must have equal length")
    return float(direction @ (honest_agg - malicious_agg))
