"""Command line entry point.

    corec run <scenario.json> [--metrics-out P] [--log-out P] [--routing K] [--seed N]
    corec validate <scenario.json>
    corec serve --config <cfg.json>
    corec synth --log <path> [--from N] [--to M]

Exit codes: 0 success, 1 validation failure, 2 runtime failure.
"""
from __future__ import annotations

import argparse
import dataclasses
import sys
from pathlib import Path

from .domain import ValidationError, canonical_dumps
from .engine import build_synthesis, synthesis_to_jsonable
from .store import StorageError, load_events, log_to_bytes
from .travel import ConfigError


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="corec", description="crisis evacuation coordination toolkit"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="execute a scenario and print metrics")
    p_run.add_argument("scenario", help="scenario JSON file")
    p_run.add_argument("--metrics-out", help="write metrics JSON here")
    p_run.add_argument("--log-out", help="write the event log (NDJSON) here")
    p_run.add_argument("--routing", choices=["offline", "external"], help="override the routing provider")
    p_run.add_argument("--seed", type=int, help="override the scenario rng seed")

    p_val = sub.add_parser("validate", help="check a scenario file")
    p_val.add_argument("scenario", help="scenario JSON file")

    p_serve = sub.add_parser("serve", help="start the HTTP service")
    p_serve.add_argument("--config", required=True, help="service config JSON file")

    p_synth = sub.add_parser("synth", help="synthesis report over a log window")
    p_synth.add_argument("--log", required=True, help="event log file (NDJSON)")
    p_synth.add_argument("--from", dest="seq_from", type=int, default=1)
    p_synth.add_argument("--to", dest="seq_to", type=int, default=None)
    return parser


def _cmd_run(args: argparse.Namespace) -> int:
    from . import sim

    scenario = sim.load_scenario(args.scenario)
    if args.routing:
        scenario = dataclasses.replace(
            scenario, routing=dataclasses.replace(scenario.routing, kind=args.routing)
        )
    if args.seed is not None:
        scenario = dataclasses.replace(scenario, rng_seed=args.seed)
    result = sim.run(scenario)
    print(sim.format_metrics_table(result.metrics))
    for note in result.audit:
        print(f"audit: {note}", file=sys.stderr)
    if args.metrics_out:
        Path(args.metrics_out).write_text(sim.metrics_json(result.metrics) + "\n", encoding="ascii")
    if args.log_out:
        Path(args.log_out).write_bytes(log_to_bytes(result.events))
    return 0


def _cmd_validate(args: argparse.Namespace) -> int:
    from . import sim

    scenario = sim.load_scenario(args.scenario)
    print(
        f"ok: {scenario.name}: {len(scenario.initial.units)} units, "
        f"{len(scenario.initial.rescue_points)} points, "
        f"{len(scenario.initial.shelters)} shelters, {len(scenario.script)} actions"
    )
    return 0


def _cmd_serve(args: argparse.Namespace) -> int:
    from . import api, config

    cfg = config.load_config(args.config)
    api.serve(cfg)
    return 0


def _cmd_synth(args: argparse.Namespace) -> int:
    events = load_events(args.log)
    seq_to = args.seq_to if args.seq_to is not None else len(events)
    report = build_synthesis(events, args.seq_from, seq_to)
    print(canonical_dumps(synthesis_to_jsonable(report)))
    return 0


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    handlers = {
        "run": _cmd_run,
        "validate": _cmd_validate,
        "serve": _cmd_serve,
        "synth": _cmd_synth,
    }
    try:
        return handlers[args.command](args)
    except (ValidationError, ConfigError) as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return 1
    except (StorageError, OSError) as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
