"""Command-line entry point: ``altmarl run | trace | validate``.

Seed precedence is ``--seed`` flag, then the ``MARL_SEED`` environment
variable, then the config file's ``seeds`` list.  Either override replaces
the list with a single seed.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
from pathlib import Path

from .harness import RunConfig, emit_results, occupancy_trace, records_to_csv, records_to_json, run_experiment
from .model import ModelSpec, ModelValidationError, validate_model

SEED_ENV = "MARL_SEED"


def resolve_seeds(cfg: RunConfig, flag: int | None, env: dict | None = None) -> RunConfig:
    """Apply the seed precedence ``flag > MARL_SEED > file``."""
    env = os.environ if env is None else env
    if flag is not None:
        return dataclasses.replace(cfg, seeds=(int(flag),))
    raw = env.get(SEED_ENV)
    if raw is not None and raw.strip():
        try:
            seed = int(raw)
        except ValueError as exc:
            raise ValueError(f"{SEED_ENV}={raw!r} is not an integer") from exc
        return dataclasses.replace(cfg, seeds=(seed,))
    return cfg


def _load_config(args) -> RunConfig:
    cfg = RunConfig.load(args.config) if args.config else RunConfig()
    overrides = {}
    if getattr(args, "out", None):
        overrides["out"] = args.out
    if getattr(args, "format", None):
        overrides["format"] = args.format
    if overrides:
        cfg = dataclasses.replace(cfg, **overrides)
    return resolve_seeds(cfg, getattr(args, "seed", None))


def _write(text: str, path: str | None) -> None:
    if path:
        Path(path).write_text(text)
    else:
        sys.stdout.write(text)


def cmd_run(args) -> int:
    cfg = _load_config(args)
    records = run_experiment(cfg, jobs=args.jobs)
    if cfg.out:
        emit_results(records, cfg.out, cfg.format)
    else:
        sys.stdout.write(records_to_csv(records) if cfg.format == "csv" else records_to_json(records))
    failed = [r for r in records if r.termination.startswith("failed")]
    for r in failed:
        print(f"cell k={r.k} seed={r.seed}: {r.termination}", file=sys.stderr)
    return 1 if failed else 0


def cmd_trace(args) -> int:
    cfg = _load_config(args)
    k = args.k if args.k is not None else cfg.k_list[0]
    trace = occupancy_trace(cfg, k, cfg.seeds[0])
    _write(trace.to_csv(), cfg.out)
    print(f"k={k} seed={cfg.seeds[0]} mode_rate={trace.mode_rate:.4f}", file=sys.stderr)
    return 0


def cmd_validate(args) -> int:
    """Validate a model file or a run config, detected from its fields."""
    path = Path(args.path)
    try:
        data = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        print(f"{path}: {exc}", file=sys.stderr)
        return 2
    try:
        if isinstance(data, dict) and "pg" in data:
            model = validate_model(ModelSpec.from_dict(data))
            print(f"{path}: valid model (n={model.n_agents}, |S_g|={model.n_sg}, |S_l|={model.n_sl}, |A_g|={model.n_ag}, |A_l|={model.n_al})")
        else:
            cfg = RunConfig.from_dict(data)
            print(f"{path}: valid run config ({len(cfg.k_list)} k values x {len(cfg.seeds)} seeds)")
    except (ModelValidationError, ValueError, TypeError, KeyError) as exc:
        print(f"{path}: invalid: {exc}", file=sys.stderr)
        return 1
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="altmarl", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON run config (RunConfig field names)")
        p.add_argument("--out", help="output path (stdout when omitted)")
        p.add_argument("--format", choices=("csv", "json"), help="output format")
        p.add_argument("--seed", type=int, help=f"single seed; beats {SEED_ENV} and the config")

    run = sub.add_parser("run", help="sweep (k, seed) cells and emit one record per cell")
    common(run)
    run.add_argument("--jobs", type=int, default=1, help="worker processes")
    run.set_defaults(func=cmd_run)

    trace = sub.add_parser("trace", help="emit the per-step zone occupancy of one trained cell")
    common(trace)
    trace.add_argument("--k", type=int, help="subsample size (first k of the config by default)")
    trace.set_defaults(func=cmd_trace)

    val = sub.add_parser("validate", help="check a model file or run config")
    val.add_argument("path")
    val.set_defaults(func=cmd_validate)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
