"""Update aggregation rules: mean (fedavg/fedsgd) and geometric median.

The geometric median is the point minimizing the summed Euclidean distance to
the update vectors; a minority of wild outliers barely moves it, which is what
makes it robust. It is computed with smoothed Weiszfeld fixed-point iteration.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

GMA_EPS = 1e-8
GMA_MAX_ITER = 200

# Added to every distance so points coinciding with the iterate stay finite.
_DIST_SMOOTHING = 1e-10


@dataclass(frozen=True)
class AggregationRule:
    kind: str  # fedavg | fedsgd | gma
    eps: float = GMA_EPS
    max_iter: int = GMA_MAX_ITER

    def __post_init__(self):
        if self.kind not in ("fedavg", "fedsgd", "gma"):
            raise ValueError(f"unknown aggregation kind {self.kind!r}")
        if self.eps <= 0:
            raise ValueError("eps must be > 0")
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")


def fedavg(prev: np.ndarray, updates: list[np.ndarray]) -> np.ndarray:
    """New weights = previous weights + mean of the updates."""
    if not updates:
        raise ValueError("cannot aggregate an empty update list")
    stack = np.stack(updates)
    if stack.shape[1] != prev.shape[0]:
        raise ValueError("update length does not match model size")
    return prev + stack.mean(axis=0)


def geometric_median(points: list[np.ndarray], eps: float = GMA_EPS,
                     max_iter: int = GMA_MAX_ITER) -> np.ndarray:
    """argmin_y sum_z ||y - z|| via Weiszfeld iteration.

    Starts at the coordinate-wise mean and stops when the iterate moves less
    than eps. The summed-distance objective is non-increasing (asserted in
    debug runs).
    """
    if not points:
        raise ValueError("cannot take the geometric median of an empty list")
    stack = np.stack([np.asarray(p, dtype=np.float64) for p in points])
    y = stack.mean(axis=0)
    prev_obj = np.inf
    for _ in range(max_iter):
        dist = np.linalg.norm(stack - y, axis=1) + _DIST_SMOOTHING
        if __debug__:
            obj = float(dist.sum())
            assert obj <= prev_obj + 1e-9 * (1.0 + abs(prev_obj)), \
                "Weiszfeld objective increased"
            prev_obj = obj
        inv = 1.0 / dist
        y_next = (stack * inv[:, None]).sum(axis=0) / inv.sum()
        if np.linalg.norm(y_next - y) < eps:
            return y_next
        y = y_next
    return y


def gma_aggregate(prev: np.ndarray, updates: list[np.ndarray],
                  eps: float = GMA_EPS, max_iter: int = GMA_MAX_ITER) -> np.ndarray:
    """New weights = previous weights + geometric median of the updates."""
    if not updates:
        raise ValueError("cannot aggregate an empty update list")
    return prev + geometric_median(updates, eps, max_iter)


def aggregate(rule: AggregationRule, prev: np.ndarray,
              updates: list[np.ndarray]) -> np.ndarray:
    """Apply the configured rule. fedsgd shares fedavg's arithmetic; the
    difference (single full-batch local step) lives in the round loop."""
    if rule.kind == "gma":
        return gma_aggregate(prev, updates, rule.eps, rule.max_iter)
    return fedavg(prev, updates)
