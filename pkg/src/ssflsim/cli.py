"""Command-line entry point.

Flags mirror the SimConfig fields; a flat key=value config file (--config) can
supply any of them, with explicit command-line flags taking precedence.
"""
from __future__ import annotations

import argparse
import sys

from .attack import AttackConfig
from .config import SimConfig, parse_config_file
from .errors import ConfigError
from .sim import run

_DEFAULTS = SimConfig()


def _build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="ssflsim",
        description="Simulate robust, communication-efficient semi-supervised "
                    "federated learning.")
    p.add_argument("--config", metavar="FILE", help="key=value config file")
    p.add_argument("--clients", type=int)
    p.add_argument("--participation", type=float)
    p.add_argument("--rounds", type=int)
    p.add_argument("--local-epochs", type=int, dest="local_epochs")
    p.add_argument("--lr", type=float)
    p.add_argument("--batch", type=int, dest="batch_size")
    p.add_argument("--server-samples", type=int, dest="server_samples")
    p.add_argument("--lambda", type=float, dest="pseudo_threshold",
                   help="pseudo-label confidence threshold")
    p.add_argument("--delta", type=float, dest="cosine_threshold",
                   help="cosine admission threshold")
    p.add_argument("--quant-bits", dest="quant_bits",
                   choices=["off", "2", "4", "8", "16"])
    p.add_argument("--alpha", help="clip threshold: auto or a positive number")
    p.add_argument("--agg", dest="aggregation",
                   choices=["fedavg", "fedsgd", "gma"])
    p.add_argument("--selection", choices=["off", "cosine", "wasserstein", "both"])
    p.add_argument("--attack", choices=["none", "label-flip", "gaussian"])
    p.add_argument("--malicious", type=int, help="number of malicious clients")
    p.add_argument("--dist", dest="distribution", choices=["iid", "non-iid"])
    p.add_argument("--dataset",
                   help="synthetic or mnist:<images>,<labels>[,<test images>,<test labels>]")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="metrics CSV path")
    p.add_argument("--quiet", action="store_true", help="suppress per-round output")
    return p


def _pick(cli_value, file_values: dict, key: str, default, convert=None):
    if cli_value is not None:
        return cli_value
    if key in file_values:
        raw = file_values[key]
        return convert(raw) if convert else raw
    return default


def build_config(argv: list[str] | None = None) -> tuple[SimConfig, bool]:
    args = _build_parser().parse_args(argv)
    fv = parse_config_file(args.config) if args.config else {}

    def opt(name, key, convert):
        return _pick(getattr(args, name), fv, key, getattr(_DEFAULTS, name), convert)

    quant = _pick(args.quant_bits, fv, "quant-bits", "off")
    alpha = _pick(args.alpha, fv, "alpha", "auto")
    attack_kind = _pick(args.attack, fv, "attack", "none")
    dist = opt("distribution", "dist", str)

    try:
        config = SimConfig(
            clients=opt("clients", "clients", int),
            participation=opt("participation", "participation", float),
            rounds=opt("rounds", "rounds", int),
            local_epochs=opt("local_epochs", "local-epochs", int),
            lr=opt("lr", "lr", float),
            batch_size=opt("batch_size", "batch", int),
            server_samples=opt("server_samples", "server-samples", int),
            pseudo_threshold=opt("pseudo_threshold", "lambda", float),
            cosine_threshold=opt("cosine_threshold", "delta", float),
            quant_bits=None if str(quant) == "off" else int(quant),
            alpha=None if str(alpha) == "auto" else float(alpha),
            aggregation=opt("aggregation", "agg", str),
            selection=opt("selection", "selection", str),
            attack=AttackConfig(
                kind=str(attack_kind).replace("-", "_"),
                num_malicious=_pick(args.malicious, fv, "malicious", 0, int)),
            distribution=str(dist).replace("-", "_"),
            dataset=opt("dataset", "dataset", str),
            seed=opt("seed", "seed", int),
            out=_pick(args.out, fv, "out", None),
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    config.validate()
    return config, args.quiet


def main(argv: list[str] | None = None) -> int:
    try:
        config, quiet = build_config(argv)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2

    def report(m):
        print(f"round {m.round:4d}  acc {m.accuracy:.4f}  "
              f"selected {m.n_selected:3d} (malicious {m.n_malicious_selected})  "
              f"up {m.bytes_up}B", flush=True)

    result = run(config, on_round=None if quiet else report)
    if result.rounds and not quiet:
        print(f"final accuracy: {result.rounds[-1].accuracy:.4f}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
