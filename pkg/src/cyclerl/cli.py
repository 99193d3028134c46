"""Command-line entry points for the master, the minion, and the exporter."""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

from .master import Master, MasterConfig, MasterError
from .minion import Minion, MinionConfig
from .report import DEFAULT_WINDOW, export_all, export_returns_report, export_trace_report

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_BAD_CONFIG = 2
EXIT_PORT_BUSY = 3


def _setup_logging(verbose: bool):
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.INFO,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )


def master_main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="cyclerl-master",
        description="Run the training master and wait for minions to connect.")
    parser.add_argument("--config", required=True, help="JSON config file")
    parser.add_argument("--total-cycles", type=int, default=None,
                        help="override the configured cycle count")
    parser.add_argument("--output-dir", default=None,
                        help="override the configured output directory")
    parser.add_argument("--seed", type=int, default=None,
                        help="override the configured seed")
    parser.add_argument("-v", "--verbose", action="store_true")
    args = parser.parse_args(argv)
    _setup_logging(args.verbose)

    try:
        data = json.loads(Path(args.config).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        print(f"cannot read config {args.config}: {exc}", file=sys.stderr)
        return EXIT_BAD_CONFIG
    try:
        config = MasterConfig.from_json(data)
    except MasterError as exc:
        print(f"invalid config: {exc}", file=sys.stderr)
        return EXIT_BAD_CONFIG

    overrides = {}
    if args.total_cycles is not None:
        overrides["total_cycles"] = args.total_cycles
    if args.output_dir is not None:
        overrides["output_dir"] = args.output_dir
    if args.seed is not None:
        overrides["seed"] = args.seed
    if overrides:
        try:
            config = dataclasses.replace(config, **overrides)
        except MasterError as exc:
            print(f"invalid override: {exc}", file=sys.stderr)
            return EXIT_BAD_CONFIG

    master = Master(config)
    try:
        summary = master.run()
    except OSError as exc:
        print(f"cannot listen on {config.network.host}:{config.network.port}: "
              f"{exc}", file=sys.stderr)
        return EXIT_PORT_BUSY
    except KeyboardInterrupt:
        print("interrupted", file=sys.stderr)
        return EXIT_FAILURE
    print(json.dumps(summary))
    return EXIT_OK


def minion_main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="cyclerl-minion",
        description="Run a rollout worker against a master.")
    parser.add_argument("--master-host", default="127.0.0.1")
    parser.add_argument("--master-port", type=int, default=5555)
    parser.add_argument("--minion-id", default="minion")
    parser.add_argument("--heartbeat-interval", type=float, default=5.0)
    parser.add_argument("--connect-retries", type=int, default=10)
    parser.add_argument("-v", "--verbose", action="store_true")
    args = parser.parse_args(argv)
    _setup_logging(args.verbose)

    config = MinionConfig(
        master_host=args.master_host,
        master_port=args.master_port,
        minion_id=args.minion_id,
        heartbeat_interval=args.heartbeat_interval,
        connect_retries=args.connect_retries,
    )
    try:
        return Minion(config).run()
    except KeyboardInterrupt:
        return EXIT_FAILURE


def export_main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="cyclerl-export",
        description="Smooth result CSVs and render figures next to them.")
    parser.add_argument("--input", required=True,
                        help="results directory or a single CSV file")
    parser.add_argument("--output-dir", default=None,
                        help="where to write (defaults next to the input)")
    parser.add_argument("--window", type=int, default=DEFAULT_WINDOW,
                        help="moving-average window (odd)")
    parser.add_argument("-v", "--verbose", action="store_true")
    args = parser.parse_args(argv)
    _setup_logging(args.verbose)

    path = Path(args.input)
    if not path.exists():
        print(f"no such input: {path}", file=sys.stderr)
        return EXIT_BAD_CONFIG
    try:
        if path.is_dir():
            written = export_all(path, args.output_dir, args.window)
        elif path.stem.startswith("validation_trace"):
            written = export_trace_report(path, args.output_dir)
        else:
            written = export_returns_report(path, args.output_dir, args.window)
    except (ValueError, OSError) as exc:
        print(f"export failed: {exc}", file=sys.stderr)
        return EXIT_FAILURE
    for p in written:
        print(p)
    return EXIT_OK
