"""Crawler plus metadata fetch queue.

Each discovered infohash becomes a fetch job: ask the node that reported it
for peers (falling back to an iterative ``get_peers`` lookup), then try the
peers in order until one serves metadata whose digest checks out. At most
``max_concurrent`` jobs run at once and at most one connection per peer.
"""

from __future__ import annotations

import logging
import random
from collections import deque
from dataclasses import dataclass, field
from typing import Callable

from .dht import Crawler, CrawlerConfig, Lookup
from .dht.engine import parse_values
from .metadata import TorrentMeta, fetch_metadata

log = logging.getLogger(__name__)


@dataclass
class _Job:
    infohash: bytes
    discovered_at: float
    sources: list
    peers: list = field(default_factory=list)
    tried: set = field(default_factory=set)
    looked_up: bool = False
    last_error: str = "no peers"


class Harvester:
    """``on_meta(meta, discovered_at)`` receives every validated torrent."""

    def __init__(self, runtime, config: CrawlerConfig, *, rng: random.Random | None = None,
                 max_concurrent: int = 64, fetch: bool = True, on_meta: Callable | None = None,
                 fetch_timeout: float = 30.0, piece_timeout: float = 5.0):
        self.rt = runtime
        self.rng = rng or random.Random()
        self.crawler = Crawler(runtime, config, self._discovered, rng=self.rng)
        self.max_concurrent = max_concurrent
        self.fetch = fetch
        self.on_meta = on_meta
        self.on_discovery: Callable | None = None
        self.fetch_timeout = fetch_timeout
        self.piece_timeout = piece_timeout
        self.metas: dict[bytes, tuple[TorrentMeta, float]] = {}
        self.failed: dict[bytes, str] = {}
        self.queue: deque[_Job] = deque()
        self.active: set[bytes] = set()
        self.parked: list[_Job] = []
        self.busy_peers: set[tuple] = set()

    def start(self) -> None:
        self.crawler.start()

    def stop(self) -> None:
        self.crawler.stop()

    def datagram_received(self, data: bytes, addr: tuple) -> None:
        self.crawler.datagram_received(data, addr)

    def idle(self) -> bool:
        return not self.queue and not self.active

    # ------------------------------------------------------------ scheduling

    def _discovered(self, ih: bytes, addr: tuple, t: float) -> None:
        if self.on_discovery is not None:
            self.on_discovery(ih, addr, t)
        if self.fetch:
            self.queue.append(_Job(ih, t, list(self.crawler.sources.get(ih, ()))))
            self._pump()

    def _pump(self) -> None:
        while self.queue and len(self.active) < self.max_concurrent:
            job = self.queue.popleft()
            self.active.add(job.infohash)
            self._find_peers(job)

    def _finish(self, job: _Job, meta: TorrentMeta | None) -> None:
        self.active.discard(job.infohash)
        if meta is not None:
            self.metas[job.infohash] = (meta, job.discovered_at)
            self.failed.pop(job.infohash, None)
            if self.on_meta is not None:
                self.on_meta(meta, job.discovered_at)
        else:
            self.failed[job.infohash] = job.last_error
            log.debug("giving up on %s: %s", job.infohash.hex(), job.last_error)
        self._pump()

    # ------------------------------------------------------------ peer discovery

    def _find_peers(self, job: _Job) -> None:
        if not self.crawler.running:
            self._finish(job, None)
            return
        if job.sources:
            node_id, addr = job.sources.pop(0)
            self.crawler.engine.query(addr, "get_peers", {b"info_hash": job.infohash},
                                      lambda m, e: self._on_source(job, m, e), node_id=node_id)
            return
        if not job.looked_up:
            job.looked_up = True
            Lookup(self.crawler.engine, job.infohash, lambda r, e: self._on_lookup(job, r, e),
                   method="get_peers").start()
            return
        self._finish(job, None)

    def _on_source(self, job: _Job, msg, exc) -> None:
        peers = parse_values(msg.args.get(b"values")) if exc is None else []
        if not peers:
            if exc is not None:
                job.last_error = f"source: {exc}"
            self._find_peers(job)
            return
        self._add_peers(job, peers)
        self._try_next(job)

    def _on_lookup(self, job: _Job, result, exc) -> None:
        if exc is not None:
            job.last_error = f"lookup: {exc}"
        else:
            self._add_peers(job, result.peers)
        self._try_next(job)

    def _add_peers(self, job: _Job, peers) -> None:
        for p in peers:
            p = tuple(p)
            if p not in job.tried and p not in job.peers:
                job.peers.append(p)

    # ------------------------------------------------------------ metadata

    def _try_next(self, job: _Job) -> None:
        untried = [p for p in job.peers if p not in job.tried]
        if not untried:
            self._find_peers(job)
            return
        free = [p for p in untried if p not in self.busy_peers]
        if not free:
            self.parked.append(job)
            return
        peer = free[0]
        job.tried.add(peer)
        self.busy_peers.add(peer)
        fetch_metadata(self.rt, job.infohash, peer, lambda m, e: self._on_fetch(job, peer, m, e),
                       timeout=self.fetch_timeout, piece_timeout=self.piece_timeout)

    def _on_fetch(self, job: _Job, peer: tuple, meta, exc) -> None:
        self.busy_peers.discard(peer)
        if meta is not None:
            self._finish(job, meta)
        else:
            job.last_error = f"{type(exc).__name__}: {exc}"
            self._try_next(job)
        if self.parked:
            waiting, self.parked = self.parked, []
            for j in waiting:
                self._try_next(j)
