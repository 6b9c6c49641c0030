"""Infohash harvesting crawler.

The crawler keeps a bounded pool of neighbor nodes. Each neighbor is asked
for ``sample_infohashes`` (re-asked after the advertised interval while it
still yields new hashes) and its returned nodes refill the pool. Nodes that
answer ``method unknown`` are kept in the routing table, so their own
``get_peers`` / ``announce_peer`` traffic toward us is harvested passively.
Every infohash is emitted at most once per crawler instance.
"""

from __future__ import annotations

import logging
import random
from dataclasses import dataclass, field
from typing import Callable

from .engine import DhtEngine, RemoteError
from .ids import ID_LEN, Contact, random_id, unpack_nodes, valid_addr
from .krpc import METHOD_UNKNOWN
from .routing import K

log = logging.getLogger(__name__)


class BootstrapError(Exception):
    """No bootstrap node configured or none answered."""


@dataclass
class CrawlerConfig:
    max_neighbors: int = 10000
    bootstrap: list = field(default_factory=list)
    timeout: float = 2.0
    retries: int = 2
    rate_limit_qps: float = 500.0
    # seconds between sample requests to the same node, lower bound
    min_resample: float = 1.0
    # give up on a neighbor after this many samples without a new hash
    stale_samples: int = 2
    max_samples_per_node: int = 16
    # fraction of neighbor queries spent on sample_infohashes vs find_node
    sample_ratio: float = 1.0
    telemetry_interval: float = 1.0
    # once the pool drains, wait this long before crawling the table again
    recrawl_interval: float = 60.0
    k: int = K

    def __post_init__(self):
        if self.max_neighbors < 1:
            raise ValueError("max_neighbors must be >= 1")
        self.bootstrap = [tuple(a) for a in self.bootstrap]


@dataclass
class Telemetry:
    t: float
    neighbors: int
    queries_per_s: float
    discoveries_per_s: float
    discovered: int


@dataclass
class _Neighbor:
    contact: Contact
    samples: int = 0
    stale: int = 0
    busy: bool = False


class Crawler:
    """Drives a :class:`DhtEngine` to discover infohashes.

    ``sink(infohash, source_addr, observed_at)`` receives each new infohash.
    ``on_status(kind, detail)`` reports ``"bootstrapped"`` and
    ``"bootstrap-failure"``.
    """

    def __init__(self, runtime, config: CrawlerConfig, sink: Callable, *,
                 node_id: bytes | None = None, rng: random.Random | None = None,
                 token_secret: bytes | None = None, on_status: Callable | None = None):
        self.rt = runtime
        self.config = config
        self.sink = sink
        self.rng = rng or random.Random()
        self.node_id = node_id or random_id(self.rng)
        self.engine = DhtEngine(runtime, self.node_id, k=config.k, timeout=config.timeout,
                                retries=config.retries, rate_limit_qps=config.rate_limit_qps,
                                token_secret=token_secret if token_secret is not None
                                else self.rng.randbytes(16), rng=self.rng)
        self.engine.on_infohash = self._passive
        self.on_status = on_status or (lambda kind, detail: None)
        self.neighbors: dict[bytes, _Neighbor] = {}
        self.retired: set[bytes] = set()
        self.seen: set[bytes] = set()
        self.telemetry: list[Telemetry] = []
        self.sources: dict[bytes, list[tuple]] = {}
        self.running = False
        self.bootstrapped = False
        self._boot_pending = 0
        self._last_tick = (0.0, 0, 0)
        self._last_recrawl = 0.0

    # --------------------------------------------------------------- lifecycle

    def start(self) -> None:
        if not self.config.bootstrap:
            raise BootstrapError("no bootstrap nodes configured")
        self.running = True
        self._last_tick = (self.rt.time(), self.engine.stats.sent, 0)
        self._last_recrawl = self.rt.time()
        self._boot_pending = len(self.config.bootstrap)
        for addr in self.config.bootstrap:
            self.engine.query(addr, "find_node", {b"target": self.node_id}, self._on_boot)
        self.rt.call_later(self.config.telemetry_interval, self._tick)

    def stop(self) -> None:
        self.running = False
        self.engine.cancel_all()

    def datagram_received(self, data: bytes, addr: tuple) -> None:
        self.engine.datagram_received(data, addr)

    def _on_boot(self, msg, exc) -> None:
        self._boot_pending -= 1
        if exc is None:
            rid = msg.args.get(b"id")
            if isinstance(rid, bytes) and len(rid) == ID_LEN and msg.addr is not None:
                self._offer(Contact(rid, msg.addr))
            self._absorb_nodes(msg.args.get(b"nodes"))
            if not self.bootstrapped:
                self.bootstrapped = True
                self.on_status("bootstrapped", None)
        elif self._boot_pending == 0 and not self.bootstrapped:
            self.running = False
            self.on_status("bootstrap-failure", exc)

    # --------------------------------------------------------------- neighbors

    def _absorb_nodes(self, raw) -> None:
        if not isinstance(raw, bytes):
            return
        try:
            contacts = unpack_nodes(raw)
        except ValueError:
            return
        for c in contacts:
            self._offer(c)

    def _offer(self, c: Contact) -> None:
        nid = c.node_id
        if (not self.running or nid == self.node_id or nid in self.neighbors
                or nid in self.retired or not valid_addr(c.addr)):
            return
        if len(self.neighbors) >= self.config.max_neighbors:
            return
        n = _Neighbor(c)
        self.neighbors[nid] = n
        self._visit(n)

    def _retire(self, n: _Neighbor) -> None:
        self.neighbors.pop(n.contact.node_id, None)
        self.retired.add(n.contact.node_id)
        if not self.neighbors and self.running:
            self._refill()

    def _refill(self) -> None:
        # pool drained: re-seed from the routing table via a random find_node
        candidates = [c for c in self.engine.routing.closest(random_id(self.rng), 64)
                      if c.node_id not in self.retired]
        for c in candidates:
            self._offer(c)

    def _visit(self, n: _Neighbor) -> None:
        if not self.running or n.busy:
            return
        n.busy = True
        c = n.contact
        if self.rng.random() < self.config.sample_ratio:
            self.engine.query(c.addr, "sample_infohashes", {b"target": random_id(self.rng)},
                              lambda msg, exc: self._on_sample(n, msg, exc), node_id=c.node_id)
        else:
            self.engine.query(c.addr, "find_node", {b"target": random_id(self.rng)},
                              lambda msg, exc: self._on_find(n, msg, exc), node_id=c.node_id)

    def _on_find(self, n: _Neighbor, msg, exc) -> None:
        n.busy = False
        if exc is None:
            self._absorb_nodes(msg.args.get(b"nodes"))
        self._retire(n)

    def _on_sample(self, n: _Neighbor, msg, exc) -> None:
        n.busy = False
        if exc is not None:
            if isinstance(exc, RemoteError) and exc.code == METHOD_UNKNOWN:
                # no sampling support: learn its neighbors instead, stay in routing table
                n.busy = True
                self.engine.query(n.contact.addr, "find_node", {b"target": random_id(self.rng)},
                                  lambda m, e: self._on_find(n, m, e), node_id=n.contact.node_id)
                return
            self._retire(n)
            return
        vals = msg.args
        n.samples += 1
        fresh = 0
        samples = vals.get(b"samples")
        now = self.rt.time()
        if isinstance(samples, bytes):
            for i in range(0, len(samples) - len(samples) % ID_LEN, ID_LEN):
                if self._emit(samples[i:i + ID_LEN], n.contact.addr, now, n.contact.node_id):
                    fresh += 1
        self._absorb_nodes(vals.get(b"nodes"))
        num = vals.get(b"num")
        got = len(samples) // ID_LEN if isinstance(samples, bytes) else 0
        n.stale = 0 if fresh else n.stale + 1
        more = isinstance(num, int) and num > got
        if not more or n.stale >= self.config.stale_samples or n.samples >= self.config.max_samples_per_node:
            self._retire(n)
            return
        interval = vals.get(b"interval")
        wait = max(self.config.min_resample, interval if isinstance(interval, int) else 0)
        self.rt.call_later(wait, self._visit, n)

    # --------------------------------------------------------------- discovery

    def _emit(self, ih: bytes, addr: tuple, now: float, via: bytes | None = None) -> bool:
        self.sources.setdefault(ih, [])
        if via is not None and len(self.sources[ih]) < 16:
            self.sources[ih].append((via, tuple(addr)))
        if ih in self.seen:
            return False
        self.seen.add(ih)
        self.sink(ih, tuple(addr), now)
        return True

    def _passive(self, ih: bytes, addr, method: str) -> None:
        if self.running and addr is not None:
            self._emit(ih, addr, self.rt.time())

    # --------------------------------------------------------------- telemetry

    def _tick(self) -> None:
        if not self.running:
            return
        now = self.rt.time()
        t0, sent0, found0 = self._last_tick
        dt = max(now - t0, 1e-9)
        sent = self.engine.stats.sent
        found = len(self.seen)
        assert len(self.neighbors) <= self.config.max_neighbors
        self.telemetry.append(Telemetry(now, len(self.neighbors), (sent - sent0) / dt,
                                        (found - found0) / dt, found))
        log.debug("neighbors=%d qps=%.1f disc/s=%.1f total=%d", len(self.neighbors),
                  (sent - sent0) / dt, (found - found0) / dt, found)
        self._last_tick = (now, sent, found)
        if (not self.neighbors and self.bootstrapped
                and now - self._last_recrawl >= self.config.recrawl_interval):
            self._last_recrawl = now
            self.retired.clear()
            self._refill()
        self.rt.call_later(self.config.telemetry_interval, self._tick)


def harvest_infohashes(runtime, config: CrawlerConfig, sink: Callable, **kwargs) -> Crawler:
    """Start a crawler on ``runtime``; emissions flow to ``sink`` until ``stop()``."""
    crawler = Crawler(runtime, config, sink, **kwargs)
    crawler.start()
    return crawler
