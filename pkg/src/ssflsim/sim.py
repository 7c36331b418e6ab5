"""Round orchestrator: wires data, training, attacks, quantization, selection
and aggregation into the full protocol loop, and records per-round metrics.

Every round: sample ceil(q*m) clients, broadcast the global weights, let each
client train locally (attackers corrupt their part), quantize uploads if
enabled, fold uploads into reputation sums, score and select clients against
the global model's cumulative update, aggregate the admitted updates, then
train the aggregated model on the server's labeled pool and evaluate.

All randomness derives from the config seed through named per-purpose streams
(split per round and client id), so the whole trajectory is reproducible and
independent of execution order.
"""
from __future__ import annotations

import csv
import math
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np

from . import attack as attack_mod
from .aggregate import AggregationRule, aggregate
from .config import SimConfig
from .data import Dataset, FederatedData, generate_synthetic, load_idx, partition, split_test
from .errors import ConfigError
from .model import MLP
from .quant import dequantize, optimize_alpha, payload_bytes, quantize
from .selection import ClientState, SelectionScore, select_clients
from .training import client_train, server_train

CSV_COLUMNS = ("round", "accuracy", "n_selected", "n_malicious_selected",
               "bytes_up", "bytes_down", "attack_objective", "wall_ms")

SELECTION_CSV_COLUMNS = ("round", "client_id", "cosine", "wasserstein",
                         "admitted", "malicious")

# Uncompressed vector messages carry the same fixed header as quantized ones.
RAW_HEADER_BYTES = 16

# rng stream tags; every stream is keyed (seed, tag, round, client).
_DATAGEN, _TESTSPLIT, _PARTITION, _INIT, _SAMPLE, _CLIENT, _SERVER, _ATTACK = range(1, 9)


def _stream(seed: int, *key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence((seed,) + key))


def datagen_rng(seed: int):
    return np.random.SeedSequence((seed, _DATAGEN))


def testsplit_rng(seed: int):
    return np.random.SeedSequence((seed, _TESTSPLIT))


def partition_rng(seed: int):
    return np.random.SeedSequence((seed, _PARTITION))


def init_rng(seed: int) -> np.random.Generator:
    return _stream(seed, _INIT)


def sample_rng(seed: int, round_: int) -> np.random.Generator:
    return _stream(seed, _SAMPLE, round_)


def client_rng(seed: int, round_: int, client_id: int) -> np.random.Generator:
    return _stream(seed, _CLIENT, round_, client_id)


def server_rng(seed: int, round_: int) -> np.random.Generator:
    return _stream(seed, _SERVER, round_)


def attack_rng(seed: int, round_: int) -> np.random.Generator:
    return _stream(seed, _ATTACK, round_)


@dataclass(frozen=True)
class RoundMetrics:
    round: int
    accuracy: float
    scores: list[SelectionScore]
    selected_ids: list[int]
    n_malicious_selected: int
    bytes_up: int
    bytes_down: int
    attack_objective: float
    wall_ms: float

    @property
    def n_selected(self) -> int:
        return len(self.selected_ids)

    def csv_row(self) -> list:
        return [self.round, repr(self.accuracy), self.n_selected,
                self.n_malicious_selected, self.bytes_up, self.bytes_down,
                repr(self.attack_objective), repr(self.wall_ms)]


@dataclass
class SimResult:
    rounds: list[RoundMetrics]
    final_params: np.ndarray
    model: MLP
    config: SimConfig


def evaluate(model: MLP, params: np.ndarray, X: np.ndarray, y: np.ndarray) -> float:
    """Top-1 accuracy on a labeled set."""
    if X.shape[0] == 0:
        raise ConfigError("test set is empty")
    return float(np.mean(model.predict(params, X) == y))


def raw_message_bytes(dim: int) -> int:
    """Size of one full-precision (32-bit float) vector message."""
    return RAW_HEADER_BYTES + 4 * dim


def _prepare_data(config: SimConfig) -> tuple[FederatedData, Dataset]:
    if config.dataset == "synthetic":
        full = generate_synthetic(config.classes, config.per_class,
                                  config.feature_dim, datagen_rng(config.seed))
        train, test = split_test(full, config.test_fraction,
                                 testsplit_rng(config.seed))
    else:
        paths = config.dataset.split(":", 1)[1].split(",")
        if len(paths) == 4:
            train = load_idx(paths[0], paths[1])
            test = load_idx(paths[2], paths[3])
        elif len(paths) == 2:
            train, test = split_test(load_idx(paths[0], paths[1]),
                                     config.test_fraction,
                                     testsplit_rng(config.seed))
        else:
            raise ConfigError(
                "dataset: mnist expects <images>,<labels> or "
                "<images>,<labels>,<test images>,<test labels>")
    fed = partition(train, config.clients, config.server_samples,
                    config.distribution, partition_rng(config.seed))
    return fed, test


class _CsvWriter:
    """Incremental CSV writer flushed per row so aborted runs keep data."""

    def __init__(self, path, columns):
        self._file = open(path, "w", newline="", encoding="utf-8")
        self._writer = csv.writer(self._file)
        self._writer.writerow(columns)
        self._file.flush()

    def write(self, row) -> None:
        self._writer.writerow(row)
        self._file.flush()

    def close(self) -> None:
        self._file.close()


def selection_log_path(out) -> Path:
    return Path(out).with_suffix(".selection.csv")


def run(config: SimConfig, *, clock: Callable[[], float] | None = None,
        on_round: Callable[[RoundMetrics], None] | None = None) -> SimResult:
    """Execute the configured number of rounds; deterministic per seed.

    ``clock`` (defaults to time.perf_counter) only feeds the wall_ms metric;
    inject a counter to make emitted CSVs bit-reproducible. ``on_round`` is
    called with each round's metrics as soon as they exist.
    """
    config.validate()
    clock = clock or time.perf_counter
    seed = config.seed

    fed, test = _prepare_data(config)
    config.attack.validate(config.clients, fed.num_classes)
    model = MLP(fed.server_x.shape[1], fed.num_classes)
    dim = model.num_params
    params = model.init_params(init_rng(seed))

    rounds: list[RoundMetrics] = []
    writer = _CsvWriter(config.out, CSV_COLUMNS) if config.out else None
    sel_writer = (_CsvWriter(selection_log_path(config.out), SELECTION_CSV_COLUMNS)
                  if config.out else None)
    try:
        if config.rounds == 0:
            return SimResult([], params, model, config)

        n_mal = config.attack.num_malicious
        states = [ClientState.fresh(cid, cid < n_mal, dim)
                  for cid in range(config.clients)]
        rule = AggregationRule(config.aggregation, config.gma_eps, config.gma_max_iter)
        n_participants = math.ceil(config.participation * config.clients)
        flip = None
        if config.attack.kind == "label_flip":
            flip = lambda b: attack_mod.flip_pseudo_labels(  # noqa: E731
                b, config.attack.flip_from, config.attack.flip_to)

        # The server trains the freshly initialized model on its labeled pool
        # before the first broadcast. Clients are scored against the global
        # model's cumulative update (broadcast weights minus the initial
        # weights), symmetric with their own historical sums; the bootstrap
        # update seeds it with a trusted direction.
        params_init = params
        params = server_train(model, params, fed.server_x, fed.server_y,
                              config.init_epochs, config.batch_size, config.lr,
                              server_rng(seed, 0), fed.image_shape)
        prev_global = params_init

        for t in range(1, config.rounds + 1):
            t_start = clock()
            direction = attack_mod.direction_vector(params, prev_global)

            ids = [int(c) for c in np.sort(sample_rng(seed, t).choice(
                config.clients, size=n_participants, replace=False))]

            uploads: dict[int, np.ndarray] = {}
            for cid in ids:
                shard = fed.shards[cid]
                epochs, batch = config.local_epochs, config.batch_size
                if config.aggregation == "fedsgd":
                    epochs, batch = 1, shard.size
                uploads[cid] = client_train(
                    model, params, shard.features, epochs, batch,
                    config.pseudo_threshold, config.lr,
                    client_rng(seed, t, cid), fed.image_shape,
                    batch_transform=flip if states[cid].malicious else None)

            if config.attack.kind == "gaussian":
                honest = [uploads[cid] for cid in ids if not states[cid].malicious]
                if honest:
                    arng = attack_rng(seed, t)
                    for cid in ids:
                        if states[cid].malicious:
                            uploads[cid] = attack_mod.gaussian_update(
                                honest, config.attack.variance, arng)

            received: dict[int, np.ndarray] = {}
            bytes_up = 0
            for cid in ids:
                if config.quant_bits is None:
                    received[cid] = uploads[cid]
                    bytes_up += raw_message_bytes(dim)
                else:
                    alpha = (config.alpha if config.alpha is not None
                             else optimize_alpha(uploads[cid], config.quant_bits))
                    q = quantize(uploads[cid], config.quant_bits, alpha)
                    received[cid] = dequantize(q)
                    bytes_up += payload_bytes(q)
            bytes_down = n_participants * raw_message_bytes(dim)

            for cid in ids:
                states[cid].historical_sum += received[cid]

            if config.selection == "off":
                scores = [SelectionScore(int(cid), float("nan"), float("nan"), True)
                          for cid in ids]
            else:
                scores = select_clients(params - params_init,
                                        [states[cid] for cid in ids], received,
                                        config.cosine_threshold,
                                        config.wasserstein_cap, config.selection)
            selected_ids = [s.client_id for s in scores if s.admitted]
            n_mal_selected = sum(1 for cid in selected_ids if states[cid].malicious)

            params_agg = aggregate(rule, params, [received[cid] for cid in selected_ids])

            honest_recv = [received[cid] for cid in ids if not states[cid].malicious]
            mal_recv = [received[cid] for cid in ids if states[cid].malicious]
            objective = 0.0
            if honest_recv and mal_recv:
                objective = attack_mod.attack_objective(
                    direction, np.mean(honest_recv, axis=0), np.mean(mal_recv, axis=0))

            new_params = server_train(model, params_agg, fed.server_x, fed.server_y,
                                      config.server_epochs, config.batch_size,
                                      config.lr, server_rng(seed, t), fed.image_shape)
            prev_global = params
            params = new_params

            accuracy = evaluate(model, params, test.features, test.labels)
            metrics = RoundMetrics(t, accuracy, scores, selected_ids,
                                   n_mal_selected, bytes_up, bytes_down,
                                   objective, (clock() - t_start) * 1000.0)
            rounds.append(metrics)
            if writer:
                writer.write(metrics.csv_row())
                for s in metrics.scores:
                    sel_writer.write([t, s.client_id, repr(s.cosine),
                                      repr(s.wasserstein), int(s.admitted),
                                      int(states[s.client_id].malicious)])
            if on_round is not None:
                on_round(metrics)
    finally:
        if writer:
            writer.close()
            sel_writer.close()
    return SimResult(rounds, params, model, config)


def emit_csv(rounds: list[RoundMetrics], path) -> None:
    """Write the metrics CSV (header plus one row per round)."""
    writer = _CsvWriter(path, CSV_COLUMNS)
    try:
        for m in rounds:
            writer.write(m.csv_row())
    finally:
        writer.close()


def load_csv(path) -> list[dict]:
    """Parse a metrics CSV back into typed per-round dicts."""
    out = []
    with open(path, newline="", encoding="utf-8") as f:
        for row in csv.DictReader(f):
            out.append({
                "round": int(row["round"]),
                "accuracy": float(row["accuracy"]),
                "n_selected": int(row["n_selected"]),
                "n_malicious_selected": int(row["n_malicious_selected"]),
                "bytes_up": int(row["bytes_up"]),
                "bytes_down": int(row["bytes_down"]),
                "attack_objective": float(row["attack_objective"]),
                "wall_ms": float(row["wall_ms"]),
            })
    return out
