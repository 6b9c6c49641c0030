"""Command-line entry point.

Exit status: 0 on success, 1 on a runtime failure, 2 on a configuration error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys

from . import pipeline
from .dht import BootstrapError
from .metadata import FetchError
from .pipeline import ConfigError
from .sim import WorldConfigError
from .stats import StatsError
from .store import Store, StoreError

log = logging.getLogger("swarmcensus")

EXIT_OK, EXIT_FAILURE, EXIT_CONFIG = 0, 1, 2
COMMANDS = ("crawl", "parse", "match", "export", "report", "simulate")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="swarmcensus", description="DHT torrent census pipeline")
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("-c", "--config", help="TOML config file")
    p.add_argument("--store", help="SQLite store path")
    p.add_argument("--catalog", help="tab-separated title catalog")
    p.add_argument("--mode", choices=("live", "sim"))
    p.add_argument("--out", dest="report_dir", help="report output directory")
    p.add_argument("--export-path", help="CSV destination for export")
    p.add_argument("--trace", dest="trace_path", help="write the simulated discovery trace here")
    p.add_argument("--duration", type=float, help="crawl duration in seconds (virtual in sim mode)")
    p.add_argument("--seed", type=int, help="simulated world seed")
    p.add_argument("--max-neighbors", type=int)
    p.add_argument("--k-sigma", type=float)
    p.add_argument("--min-gram", type=int)
    p.add_argument("--max-gram", type=int)
    p.add_argument("--plots", action="store_true", default=None, help="also render SVG plots")
    p.add_argument("-v", "--verbose", action="count", default=0)
    return p


def run(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(stream=sys.stderr, format="%(asctime)s %(levelname)s %(name)s: %(message)s",
                        level=logging.DEBUG if args.verbose > 1 else
                        logging.INFO if args.verbose else logging.WARNING)
    overrides = {k: getattr(args, k) for k in (
        "store", "catalog", "mode", "report_dir", "export_path", "trace_path", "duration", "seed",
        "max_neighbors", "k_sigma", "min_gram", "max_gram", "plots")}
    try:
        cfg = pipeline.load_config(args.config, overrides)
        outcome = _dispatch(args.command, cfg)
    except (ConfigError, WorldConfigError, ValueError) as exc:
        log.error("configuration error: %s", exc)
        return EXIT_CONFIG
    except (StoreError, StatsError, BootstrapError, FetchError, OSError) as exc:
        log.error("%s failed: %s", args.command, exc)
        return EXIT_FAILURE
    log.info("%s: %s", args.command, json.dumps(outcome, default=str, sort_keys=True))
    return EXIT_OK


def _dispatch(command: str, cfg: pipeline.PipelineConfig):
    if command == "simulate":
        return pipeline.simulate(cfg)
    if command == "crawl":
        return pipeline.crawl(cfg)
    with Store(cfg.store) as store:
        if command == "parse":
            return {"parsed": pipeline.parse_stage(store)}
        if command == "match":
            return pipeline.match_stage(store, cfg)
        if command == "export":
            return {"rows": pipeline.export_stage(store, cfg)}
        return {"files": [str(p) for p in pipeline.report_stage(store, cfg)]}


def main() -> None:
    sys.exit(run())
