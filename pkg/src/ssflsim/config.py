"""Simulation configuration.

Defaults follow the reference experiment setup (100 clients, 10% participation,
250 rounds, 5 local epochs, lr 0.001, batch 32, 10k labeled server samples,
confidence threshold 0.95, cosine threshold 0.90, clip threshold 0.5).
"""
from __future__ import annotations

from dataclasses import dataclass, field

from .aggregate import GMA_EPS, GMA_MAX_ITER
from .attack import AttackConfig
from .errors import ConfigError
from .quant import SUPPORTED_BITS
from .selection import SELECTION_MODES

AGGREGATION_KINDS = ("fedavg", "fedsgd", "gma")
DISTRIBUTIONS = ("iid", "non_iid")


@dataclass
class SimConfig:
    # protocol
    clients: int = 100
    participation: float = 0.1
    rounds: int = 250
    local_epochs: int = 5
    server_epochs: int = 1           # per-round labeled passes at the server
    init_epochs: int = 5             # labeled passes before the first broadcast
    lr: float = 0.001
    batch_size: int = 32
    server_samples: int = 10000
    pseudo_threshold: float = 0.95   # confidence needed to keep a pseudo label
    # defense
    selection: str = "both"          # off | cosine | wasserstein | both
    cosine_threshold: float = 0.90
    wasserstein_cap: float | None = None  # None = 3x round-median rule
    aggregation: str = "gma"
    gma_eps: float = GMA_EPS
    gma_max_iter: int = GMA_MAX_ITER
    # communication
    quant_bits: int | None = None    # None = uploads stay full precision
    alpha: float | None = None       # None = per-update MMD search
    # threat
    attack: AttackConfig = field(default_factory=AttackConfig)
    # data
    dataset: str = "synthetic"       # synthetic | mnist:<img>,<lbl>[,<timg>,<tlbl>]
    distribution: str = "iid"
    classes: int = 10
    per_class: int = 1500
    feature_dim: int = 16
    test_fraction: float = 0.2
    # bookkeeping
    weighting: str = "uniform"
    seed: int = 0
    out: str | None = None

    def validate(self) -> None:
        def need(cond: bool, name: str, msg: str):
            if not cond:
                raise ConfigError(f"{name}: {msg}")

        need(self.clients >= 1, "clients", f"must be >= 1, got {self.clients}")
        need(0.0 < self.participation < 1.0, "participation",
             f"must be in (0,1), got {self.participation}")
        need(self.rounds >= 0, "rounds", f"must be >= 0, got {self.rounds}")
        need(self.local_epochs >= 0, "local_epochs",
             f"must be >= 0, got {self.local_epochs}")
        need(self.server_epochs >= 0, "server_epochs",
             f"must be >= 0, got {self.server_epochs}")
        need(self.init_epochs >= 0, "init_epochs",
             f"must be >= 0, got {self.init_epochs}")
        need(self.lr > 0, "lr", f"must be > 0, got {self.lr}")
        need(self.batch_size >= 1, "batch_size",
             f"must be >= 1, got {self.batch_size}")
        need(self.server_samples >= 1, "server_samples",
             f"must be >= 1, got {self.server_samples}")
        need(0.0 < self.pseudo_threshold <= 1.0, "pseudo_threshold",
             f"must be in (0,1], got {self.pseudo_threshold}")
        need(0.0 < self.cosine_threshold <= 1.0, "cosine_threshold",
             f"must be in (0,1], got {self.cosine_threshold}")
        need(self.wasserstein_cap is None or self.wasserstein_cap >= 0,
             "wasserstein_cap", f"must be >= 0, got {self.wasserstein_cap}")
        need(self.selection in ("off",) + SELECTION_MODES, "selection",
             f"must be off or one of {SELECTION_MODES}, got {self.selection!r}")
        need(self.aggregation in AGGREGATION_KINDS, "aggregation",
             f"must be one of {AGGREGATION_KINDS}, got {self.aggregation!r}")
        need(self.quant_bits is None or self.quant_bits in SUPPORTED_BITS,
             "quant_bits", f"must be off or one of {SUPPORTED_BITS}, got {self.quant_bits}")
        need(self.alpha is None or self.alpha > 0, "alpha",
             f"must be > 0, got {self.alpha}")
        need(self.distribution in DISTRIBUTIONS, "distribution",
             f"must be one of {DISTRIBUTIONS}, got {self.distribution!r}")
        need(self.weighting == "uniform", "weighting",
             f"only uniform weighting is supported, got {self.weighting!r}")
        if self.dataset == "synthetic":
            need(self.classes >= 2, "classes", f"must be >= 2, got {self.classes}")
            need(self.per_class >= 10, "per_class",
                 f"must be >= 10, got {self.per_class}")
            need(self.feature_dim >= 2, "feature_dim",
                 f"must be >= 2, got {self.feature_dim}")
            need(0.0 < self.test_fraction < 1.0, "test_fraction",
                 f"must be in (0,1), got {self.test_fraction}")
        elif not self.dataset.startswith("mnist:"):
            raise ConfigError(
                f"dataset: must be synthetic or mnist:<paths>, got {self.dataset!r}")
        try:
            self.attack.validate(self.clients)
        except ConfigError as exc:
            raise ConfigError(f"attack: {exc}") from exc


def parse_config_file(path) -> dict[str, str]:
    """Read a flat key=value file (\"#\" starts a comment). Keys mirror CLI flags."""
    values: dict[str, str] = {}
    with open(path, encoding="utf-8") as f:
        for lineno, raw in enumerate(f, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected key=value, got {raw.strip()!r}")
            key, value = line.split("=", 1)
            values[key.strip()] = value.strip()
    return values
