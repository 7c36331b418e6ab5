"""Deterministic simulator for robust, communication-efficient
semi-supervised federated learning."""

from .aggregate import AggregationRule, fedavg, geometric_median, gma_aggregate
from .attack import AttackConfig, attack_objective, direction_vector, flip_pseudo_labels, gaussian_update
from .config import SimConfig, parse_config_file
from .data import Dataset, FederatedData, Shard, augment_strong, augment_weak, generate_synthetic, load_idx, partition, split_test
from .errors import ConfigError, IdxFormatError
from .model import MLP, OptimizerState, sgd_step
from .quant import QuantizedUpdate, dequantize, mmd2, optimize_alpha, payload_bytes, quantize
from .selection import ClientState, SelectionScore, cosine_score, fit_gaussian, select_clients, wasserstein2_gaussian
from .sim import RoundMetrics, SimResult, emit_csv, evaluate, load_csv, run
from .training import PseudoBatch, client_train, make_pseudo_batch, server_train

__version__ = "0.1.0"
