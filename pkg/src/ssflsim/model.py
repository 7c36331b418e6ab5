"""A small MLP (input -> hidden ReLU -> softmax) over a flat parameter vector.

Parameters are always handled as a single flat float64 vector so protocol code
(aggregation, selection, quantization) can treat models as plain vectors.
Gradients are derived by hand and checked against finite differences in tests.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, replace

import numpy as np

DEFAULT_HIDDEN = 64


@dataclass
class OptimizerState:
    """SGD-with-momentum state for one training context."""

    momentum: np.ndarray
    lr: float
    mu: float = 0.9


def sgd_step(params: np.ndarray, grad: np.ndarray,
             state: OptimizerState) -> tuple[np.ndarray, OptimizerState]:
    """One momentum SGD step: buffer' = mu*buffer + grad; w' = w - lr*buffer'."""
    if params.shape != grad.shape or params.shape != state.momentum.shape:
        raise ValueError("params, grad and momentum buffer must have equal length")
    buf = state.mu * state.momentum + grad
    return params - state.lr * buf, replace(state, momentum=buf)


class MLP:
    """One-hidden-layer perceptron with cross-entropy loss."""

    def __init__(self, input_dim: int, num_classes: int, hidden: int = DEFAULT_HIDDEN):
        if input_dim < 1 or num_classes < 2 or hidden < 1:
            raise ValueError(
                f"bad layer sizes ({input_dim}, {hidden}, {num_classes})")
        self.input_dim = input_dim
        self.hidden = hidden
        self.num_classes = num_classes

    @property
    def sizes(self) -> tuple[int, int, int]:
        return (self.input_dim, self.hidden, self.num_classes)

    @property
    def num_params(self) -> int:
        d_in, h, k = self.sizes
        return d_in * h + h + h * k + k

    def init_params(self, rng: np.random.Generator) -> np.ndarray:
        """Uniform init in [-1/sqrt(fan_in), 1/sqrt(fan_in)] per layer."""
        d_in, h, k = self.sizes
        lim1 = 1.0 / np.sqrt(d_in)
        lim2 = 1.0 / np.sqrt(h)
        parts = [
            rng.uniform(-lim1, lim1, size=d_in * h),
            rng.uniform(-lim1, lim1, size=h),
            rng.uniform(-lim2, lim2, size=h * k),
            rng.uniform(-lim2, lim2, size=k),
        ]
        return np.concatenate(parts)

    def unflatten(self, params: np.ndarray) -> tuple[np.ndarray, ...]:
        """Split the flat vector into (W1, b1, W2, b2) views."""
        d_in, h, k = self.sizes
        if params.shape != (self.num_params,):
            raise ValueError(
                f"expected parameter vector of length {self.num_params}, "
                f"got shape {params.shape}")
        o1 = d_in * h
        o2 = o1 + h
        o3 = o2 + h * k
        return (params[:o1].reshape(d_in, h), params[o1:o2],
                params[o2:o3].reshape(h, k), params[o3:])

    @staticmethod
    def flatten(w1: np.ndarray, b1: np.ndarray, w2: np.ndarray,
                b2: np.ndarray) -> np.ndarray:
        return np.concatenate([w1.ravel(), b1, w2.ravel(), b2])

    def _logits(self, params, X):
        w1, b1, w2, b2 = self.unflatten(params)
        z1 = X @ w1 + b1
        h = np.maximum(z1, 0.0)
        return h @ w2 + b2, z1, h

    def forward(self, params: np.ndarray, x: np.ndarray) -> np.ndarray:
        """Class probabilities; accepts a single vector or a (n, d) batch."""
        single = x.ndim == 1
        X = x[None, :] if single else x
        if X.shape[1] != self.input_dim:
            raise ValueError(
                f"input has {X.shape[1]} features, model expects {self.input_dim}")
        logits, _, _ = self._logits(params, X)
        logits = logits - logits.max(axis=1, keepdims=True)
        e = np.exp(logits)
        probs = e / e.sum(axis=1, keepdims=True)
        return probs[0] if single else probs

    def loss_and_grad(self, params: np.ndarray, X: np.ndarray, y: np.ndarray,
                      sample_weight: np.ndarray | None = None
                      ) -> tuple[float, np.ndarray]:
        """Weighted-mean cross-entropy over unmasked samples and its exact gradient.

        sample_weight entries are 0/1 masks; an all-zero mask yields loss 0 and
        a zero gradient.
        """
        if X.shape[0] == 0:
            raise ValueError("batch must be nonempty")
        if X.shape[1] != self.input_dim:
            raise ValueError(
                f"input has {X.shape[1]} features, model expects {self.input_dim}")
        w = np.ones(X.shape[0]) if sample_weight is None else np.asarray(
            sample_weight, dtype=np.float64)
        n_eff = w.sum()
        if n_eff == 0:
            return 0.0, np.zeros_like(params)

        logits, z1, h = self._logits(params, X)
        shifted = logits - logits.max(axis=1, keepdims=True)
        log_norm = np.log(np.exp(shifted).sum(axis=1))
        log_probs = shifted - log_norm[:, None]
        losses = -log_probs[np.arange(X.shape[0]), y]
        loss = float(w @ losses / n_eff)

        probs = np.exp(log_probs)
        dlogits = probs.copy()
        dlogits[np.arange(X.shape[0]), y] -= 1.0
        dlogits *= (w / n_eff)[:, None]

        w1, _, w2, _ = self.unflatten(params)
        dw2 = h.T @ dlogits
        db2 = dlogits.sum(axis=0)
        dh = dlogits @ w2.T
        dh[z1 <= 0] = 0.0
        dw1 = X.T @ dh
        db1 = dh.sum(axis=0)
        return loss, self.flatten(dw1, db1, dw2, db2)

    def predict(self, params: np.ndarray, X: np.ndarray) -> np.ndarray:
        return np.argmax(self.forward(params, X), axis=-1)


def serialize_params(sizes: tuple[int, ...], params: np.ndarray) -> bytes:
    """Checkpoint format: u32 layer count, u32 layer sizes, little-endian f32 values."""
    header = struct.pack("<I", len(sizes)) + struct.pack(f"<{len(sizes)}I", *sizes)
    return header + params.astype("<f4").tobytes()


def deserialize_params(blob: bytes) -> tuple[tuple[int, ...], np.ndarray]:
    if len(blob) < 4:
        raise ValueError("checkpoint truncated")
    (n_sizes,) = struct.unpack_from("<I", blob, 0)
    end = 4 + 4 * n_sizes
    if len(blob) < end:
        raise ValueError("checkpoint truncated in layer sizes")
    sizes = struct.unpack_from(f"<{n_sizes}I", blob, 4)
    values = np.frombuffer(blob, dtype="<f4", offset=end).astype(np.float64)
    return sizes, values
