"""Reputation-based client selection.

Each client's standing is the running sum of every update it has uploaded.
A client is admitted when that historical sum points the same way as the
global model's accumulated update (cosine above a threshold) and its entry
distribution looks similar (small 2-Wasserstein distance between fitted
univariate Gaussians). If nobody qualifies, the single best-aligned client is
admitted so training never stalls.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError

SELECTION_MODES = ("cosine", "wasserstein", "both")

# Norms below this are treated as zero vectors (cosine defined as 0).
_NORM_FLOOR = 1e-12

# Auto cap for the Wasserstein gate: this multiple of the round's median score.
_WASSERSTEIN_CAP_FACTOR = 3.0


@dataclass
class ClientState:
    """Per-client bookkeeping on the server.

    ``malicious`` is ground truth recorded for evaluation; selection logic never
    reads it.
    """

    client_id: int
    malicious: bool
    historical_sum: np.ndarray

    @classmethod
    def fresh(cls, client_id: int, malicious: bool, dim: int) -> "ClientState":
        return cls(client_id, malicious, np.zeros(dim))


@dataclass(frozen=True)
class SelectionScore:
    client_id: int
    cosine: float
    wasserstein: float
    admitted: bool


def cosine_score(server_update: np.ndarray, historical_sum: np.ndarray) -> float:
    """Cosine of the two vectors; 0 when either is (numerically) zero."""
    if server_update.shape != historical_sum.shape:
        raise ValueError("vectors must have equal length")
    nw = np.linalg.norm(server_update)
    nh = np.linalg.norm(historical_sum)
    if nw < _NORM_FLOOR or nh < _NORM_FLOOR:
        return 0.0
    return float(server_update @ historical_sum / (nw * nh))


def fit_gaussian(v: np.ndarray) -> tuple[float, float]:
    """Mean and population variance of the vector's entries."""
    if v.size < 2:
        raise ConfigError(f"need at least 2 entries to fit a Gaussian, got {v.size}")
    return float(np.mean(v)), float(np.var(v))


def wasserstein2_gaussian(mu1: float, var1: float, mu2: float, var2: float) -> float:
    """Squared 2-Wasserstein distance between two univariate Gaussians."""
    if var1 < 0 or var2 < 0:
        raise ValueError(f"variances must be >= 0, got {var1}, {var2}")
    return (mu1 - mu2) ** 2 + (np.sqrt(var1) - np.sqrt(var2)) ** 2


def select_clients(server_update: np.ndarray, states: list[ClientState],
                   updates: dict[int, np.ndarray], delta: float,
                   wasserstein_cap: float | None = None,
                   mode: str = "both") -> list[SelectionScore]:
    """Score every client with a current upload and decide admission.

    Callers must fold the current round's uploads into each historical sum
    before scoring. ``wasserstein_cap`` None means the auto rule (3x the median
    of this round's scores). Scores come back in client-id order.
    """
    if mode not in SELECTION_MODES:
        raise ConfigError(f"selection mode must be one of {SELECTION_MODES}, got {mode!r}")
    scored = sorted((s for s in states if s.client_id in updates),
                    key=lambda s: s.client_id)
    if not scored:
        raise ConfigError("no clients to score")

    mu_s, var_s = fit_gaussian(server_update)
    cosines = [cosine_score(server_update, s.historical_sum) for s in scored]
    wassersteins = [
        wasserstein2_gaussian(mu_s, var_s, *fit_gaussian(s.historical_sum))
        for s in scored
    ]

    if wasserstein_cap is None:
        wasserstein_cap = _WASSERSTEIN_CAP_FACTOR * float(np.median(wassersteins))

    admitted = []
    pass_w = []
    for cos, w2 in zip(cosines, wassersteins):
        ok_cos = cos >= delta
        ok_w = w2 <= wasserstein_cap
        pass_w.append(ok_w)
        if mode == "cosine":
            admitted.append(ok_cos)
        elif mode == "wasserstein":
            admitted.append(ok_w)
        else:
            admitted.append(ok_cos and ok_w)

    if not any(admitted):
        # Keep training alive: admit the best-aligned client, preferring those
        # whose distribution already passed the Wasserstein gate (when active).
        candidates = range(len(scored))
        if mode != "cosine" and any(pass_w):
            candidates = [i for i in candidates if pass_w[i]]
        best = max(candidates, key=lambda i: cosines[i])
        admitted[best] = True

    return [SelectionScore(s.client_id, c, w, a)
            for s, c, w, a in zip(scored, cosines, wassersteins, admitted)]
