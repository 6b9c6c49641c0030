"""Pipeline stages over a store: crawl or simulate, parse, match, export, report.

Every stage reads what the previous one wrote and can be re-run; running a
stage twice over unchanged inputs leaves the store as it was.
"""

from __future__ import annotations

import asyncio
import logging
import socket
import sys
import time
from dataclasses import dataclass, field, fields
from pathlib import Path

from .dht import BootstrapError, CrawlerConfig
from .harvest import Harvester
from .matcher import (AnalyzerConfig, Bm25Params, CatalogError, build_index, compute_threshold,
                      read_catalog)
from .runtime import LiveRuntime
from .scene import SceneParser
from .sim import WorldConfig, WorldConfigError, build_world, run_crawl
from .stats import write_report
from .store import MatchAnnotation, Store, StoreWriter

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

log = logging.getLogger(__name__)

DEFAULT_BOOTSTRAP = ["router.bittorrent.com:6881", "dht.transmissionbt.com:6881",
                     "router.utorrent.com:6881"]


class ConfigError(Exception):
    pass


@dataclass
class PipelineConfig:
    mode: str = "sim"  # live | sim
    store: str = "swarmcensus.db"
    catalog: str | None = None
    report_dir: str = "report"
    export_path: str = "matched.csv"
    trace_path: str | None = None
    k_sigma: float = 2.0
    top_k: int = 10
    plots: bool = False
    duration: float = 600.0
    bind: str = "0.0.0.0:6881"
    bootstrap: list = field(default_factory=lambda: list(DEFAULT_BOOTSTRAP))
    analyzer: AnalyzerConfig = field(default_factory=AnalyzerConfig)
    bm25: Bm25Params = field(default_factory=Bm25Params)
    crawler: CrawlerConfig = field(default_factory=CrawlerConfig)
    world: WorldConfig = field(default_factory=WorldConfig)

    def validate(self) -> "PipelineConfig":
        if self.mode not in ("live", "sim"):
            raise ConfigError(f"mode must be live or sim, got {self.mode!r}")
        if self.k_sigma < 0:
            raise ConfigError("k_sigma must be >= 0")
        if self.top_k < 1 or self.duration <= 0:
            raise ConfigError("top_k must be >= 1 and duration > 0")
        return self


_SCALARS = {"mode", "store", "catalog", "report_dir", "export_path", "trace_path", "k_sigma", "top_k",
            "plots", "duration", "bind", "bootstrap"}


def _section(cls, data: dict, name: str):
    known = {f.name for f in fields(cls)}
    extra = set(data) - known
    if extra:
        raise ConfigError(f"unknown keys in [{name}]: {sorted(extra)}")
    try:
        return cls(**data)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[{name}]: {exc}") from exc


def load_config(path: str | Path | None, overrides: dict | None = None) -> PipelineConfig:
    """Read a TOML config (sections pipeline, analyzer, bm25, crawler, world) and apply overrides."""
    data: dict = {}
    if path is not None:
        try:
            with open(path, "rb") as fh:
                data = tomllib.load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"config {path} is not valid TOML: {exc}") from exc
    unknown = set(data) - {"pipeline", "analyzer", "bm25", "crawler", "world"}
    if unknown:
        raise ConfigError(f"unknown config sections: {sorted(unknown)}")
    overrides = {k: v for k, v in (overrides or {}).items() if v is not None}
    pipe = dict(data.get("pipeline", {}))
    analyzer = dict(data.get("analyzer", {}))
    crawler = dict(data.get("crawler", {}))
    world = dict(data.get("world", {}))
    for k in ("min_gram", "max_gram"):
        if k in overrides:
            analyzer[k] = overrides.pop(k)
    if "max_neighbors" in overrides:
        crawler["max_neighbors"] = overrides.pop("max_neighbors")
    if "seed" in overrides:
        world["seed"] = overrides.pop("seed")
    pipe.update(overrides)
    extra = set(pipe) - _SCALARS
    if extra:
        raise ConfigError(f"unknown keys in [pipeline]: {sorted(extra)}")
    cfg = PipelineConfig(**pipe)
    cfg.analyzer = _section(AnalyzerConfig, analyzer, "analyzer")
    cfg.bm25 = _section(Bm25Params, dict(data.get("bm25", {})), "bm25")
    cfg.crawler = _section(CrawlerConfig, crawler, "crawler")
    try:
        cfg.world = WorldConfig.from_dict(world)
    except WorldConfigError as exc:
        raise ConfigError(str(exc)) from exc
    return cfg.validate()


# ------------------------------------------------------------------ crawl

def simulate(cfg: PipelineConfig) -> dict:
    """Crawl a simulated world and persist every validated torrent plus the world's catalog."""
    world = build_world(cfg.world)
    result = run_crawl(world, cfg.crawler, cfg.duration)
    if cfg.trace_path:
        result.write_trace(cfg.trace_path)
    found = sorted(result.metas.items(), key=lambda kv: (kv[1][1], kv[0]))
    with Store(cfg.store) as store:
        for _, (meta, t) in found:
            store.upsert_torrent(meta, world.epoch(t))
        store.upsert_catalog(world.catalog)
    truth = world.infohashes
    disc = {ih for _, ih, _ in result.trace}
    log.info("simulated crawl: %d/%d discovered, %d fetched, %d failed, %.0f s virtual",
             len(disc & truth), len(truth), len(result.metas), len(result.fetch_failures), world.loop.now)
    return {"discovered": len(disc), "fetched": len(result.metas), "failed": len(result.fetch_failures)}


def _resolve(entries: list[str]) -> list[tuple]:
    out = []
    for e in entries:
        host, _, port = str(e).rpartition(":")
        try:
            infos = socket.getaddrinfo(host, int(port), socket.AF_INET, socket.SOCK_DGRAM)
        except (socket.gaierror, ValueError) as exc:
            log.warning("cannot resolve bootstrap node %s: %s", e, exc)
            continue
        out.extend(sorted({i[4][:2] for i in infos}))
    return out


async def _crawl_live(cfg: PipelineConfig) -> dict:
    loop = asyncio.get_running_loop()
    rt = LiveRuntime(loop)
    crawler_cfg = cfg.crawler
    crawler_cfg.bootstrap = crawler_cfg.bootstrap or _resolve(cfg.bootstrap)
    if not crawler_cfg.bootstrap:
        raise BootstrapError("no bootstrap node could be resolved")
    writer = StoreWriter(cfg.store)
    offset = time.time() - loop.time()
    failed = loop.create_future()

    def persist(meta, t):
        writer.submit(lambda s: s.upsert_torrent(meta, int(t + offset)))

    def status(kind, detail):
        if kind == "bootstrap-failure" and not failed.done():
            failed.set_result(detail)

    harvester = Harvester(rt, crawler_cfg, on_meta=persist)
    harvester.crawler.on_status = status
    host, _, port = cfg.bind.rpartition(":")
    try:
        await rt.bind_udp(host or "0.0.0.0", int(port), harvester.datagram_received)
        harvester.start()
        done, _ = await asyncio.wait([failed], timeout=cfg.duration)
        if done:
            raise BootstrapError(f"no bootstrap node answered: {failed.result()}")
    finally:
        harvester.stop()
        rt.close()
        writer.close()
    return {"discovered": len(harvester.crawler.seen), "fetched": len(harvester.metas),
            "failed": len(harvester.failed)}


def crawl(cfg: PipelineConfig) -> dict:
    if cfg.mode == "sim":
        return simulate(cfg)
    return asyncio.run(_crawl_live(cfg))


# ------------------------------------------------------------------ parse / match

def parse_stage(store: Store, parser: SceneParser | None = None) -> int:
    """Classify unclassified files and parse every video file not parsed yet."""
    store.classify_unclassified()
    parser = parser or SceneParser()
    rows = store.db.execute(
        "SELECT f.id, f.path FROM files f JOIN file_info i ON i.file_id = f.id "
        "LEFT JOIN parsed_names p ON p.file_id = f.id "
        "WHERE i.is_video = 1 AND i.encoding_failed = 0 AND p.file_id IS NULL ORDER BY f.id").fetchall()
    with store.db:
        for fid, path in rows:
            store.save_parse(fid, parser.parse(path.replace("\\", "/").rsplit("/", 1)[-1]))
    return len(rows)


def match_stage(store: Store, cfg: PipelineConfig) -> dict:
    """Top-1 match for every parsed video title, then accept at mean + k_sigma * std."""
    if cfg.catalog:
        try:
            store.upsert_catalog(read_catalog(cfg.catalog))
        except OSError as exc:
            raise ConfigError(f"cannot read catalog {cfg.catalog}: {exc}") from exc
        except CatalogError as exc:
            raise ConfigError(str(exc)) from exc
    entries = store.catalog_entries()
    if not entries:
        raise ConfigError("no catalog: pass --catalog or run simulate first")
    index = build_index(entries, cfg.analyzer, cfg.bm25)
    rows = store.db.execute("SELECT file_id, title FROM parsed_names ORDER BY file_id").fetchall()
    best: list[tuple[int, str, float]] = []
    cache: dict[str, tuple | None] = {}
    for fid, title in rows:
        if title not in cache:
            hits = index.match(title, top_k=1)
            cache[title] = (hits[0].catalog_id, hits[0].score) if hits else None
        hit = cache[title]
        if hit is not None:
            best.append((fid, hit[0], hit[1]))
    threshold = compute_threshold([s for _, _, s in best], cfg.k_sigma) if best else None
    notes = [MatchAnnotation(fid, cid, score, threshold is not None and score >= threshold)
             for fid, cid, score in best]
    store.annotate_matches(notes, replace=True)
    store.set_meta("threshold", threshold)
    store.set_meta("k_sigma", cfg.k_sigma)
    accepted = sum(n.accepted for n in notes)
    log.info("matched %d/%d parsed files; threshold %s accepts %d", len(notes), len(rows),
             "n/a" if threshold is None else f"{threshold:.3f}", accepted)
    return {"candidates": len(notes), "accepted": accepted, "threshold": threshold}


def export_stage(store: Store, cfg: PipelineConfig) -> int:
    return store.export_matched_csv(cfg.export_path)


def report_stage(store: Store, cfg: PipelineConfig) -> list[Path]:
    return write_report(store, cfg.report_dir, plots=cfg.plots)
