"""In-memory DHT and peer-wire world driven by a virtual clock.

Every node is a real :class:`DhtEngine` bound to a :class:`NodeRuntime`,
so the crawler and fetcher under test speak the exact wire protocol they
use on a live network. Datagrams suffer seeded loss and lognormal latency;
streams are reliable and ordered.
"""

from __future__ import annotations

import csv
import hashlib
import io
import logging
import math
import random
import sys
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Callable

from .. import _accel
from ..dht import Contact, Crawler, CrawlerConfig, DhtEngine, Lookup
from ..dht.krpc import METHOD_UNKNOWN, KrpcMessage
from ..metadata import MetadataSeeder, TorrentMeta, fetch_metadata
from .corpus import SyntheticTorrent, generate_corpus
from .loop import EventLoop

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

log = logging.getLogger(__name__)

CONFIG_VERSION = 1
DHT_PORT = 6881
PEER_PORT = 6882
PROFILES = ("always", "drop-p", "silent")


class WorldConfigError(ValueError):
    pass


@dataclass
class WorldConfig:
    version: int = CONFIG_VERSION
    seed: int = 1
    nodes: int = 200
    infohashes: int = 1000
    replication: int = 8
    loss_rate: float = 0.0
    # one-way latency is lognormal(mu, sigma) seconds
    latency_median: float = 0.05
    latency_sigma: float = 0.5
    # responsiveness profile shares; the remainder answers always
    drop_share: float = 0.0
    drop_p: float = 0.5
    silent_share: float = 0.0
    sampling_support: float = 1.0
    # seconds between get_peers/announce rounds of each node; 0 disables
    chatter_interval: float = 0.0
    bad_peer_rate: float = 0.0
    bad_utf8_rate: float = 0.03
    catalog_titles: int = 0
    epoch_start: int = 1_546_300_800
    time_scale: float = 1.0
    bootstrap_nodes: int = 8

    def validate(self) -> "WorldConfig":
        if self.version != CONFIG_VERSION:
            raise WorldConfigError(f"unsupported world config version {self.version}")
        if self.nodes < 1:
            raise WorldConfigError("a world needs at least one node")
        if self.infohashes < 0 or self.replication < 1:
            raise WorldConfigError("infohashes must be >= 0 and replication >= 1")
        for name in ("loss_rate", "drop_share", "drop_p", "silent_share", "sampling_support",
                     "bad_peer_rate", "bad_utf8_rate"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise WorldConfigError(f"{name} must lie in [0, 1], got {v}")
        if self.drop_share + self.silent_share > 1.0:
            raise WorldConfigError("drop_share + silent_share exceeds 1")
        if self.latency_median <= 0 or self.latency_sigma < 0:
            raise WorldConfigError("latency_median must be > 0 and latency_sigma >= 0")
        if self.chatter_interval < 0 or self.time_scale <= 0 or self.bootstrap_nodes < 1:
            raise WorldConfigError("bad chatter_interval, time_scale or bootstrap_nodes")
        return self

    @classmethod
    def from_dict(cls, data: dict) -> "WorldConfig":
        known = {f.name for f in fields(cls)}
        extra = set(data) - known
        if extra:
            raise WorldConfigError(f"unknown world config keys: {sorted(extra)}")
        try:
            return cls(**data).validate()
        except TypeError as exc:
            raise WorldConfigError(str(exc)) from exc

    @classmethod
    def load(cls, path: str | Path) -> "WorldConfig":
        try:
            with open(path, "rb") as fh:
                data = tomllib.load(fh)
        except (OSError, tomllib.TOMLDecodeError) as exc:
            raise WorldConfigError(f"cannot read world config {path}: {exc}") from exc
        return cls.from_dict(data.get("world", data))

    def dumps(self) -> str:
        lines = ["[world]"]
        for k, v in asdict(self).items():
            lines.append(f"{k} = {v!r}" if not isinstance(v, str) else f'{k} = "{v}"')
        return "\n".join(lines) + "\n"


# ------------------------------------------------------------------ transport

class SimTransport:
    """One direction-pair of an in-memory stream, asyncio-transport shaped."""

    def __init__(self, net: "Network", local: tuple, remote: tuple):
        self.net = net
        self.local = local
        self.remote = remote
        self.peer: SimTransport | None = None
        self.protocol = None
        self.closed = False
        self._last = 0.0

    def _at(self) -> float:
        # keep stream order: never deliver before the previous segment
        self._last = max(self.net.loop.now + self.net.latency(), self._last)
        return self._last

    def write(self, data: bytes) -> None:
        if self.closed or self.peer is None:
            return
        self.net.bytes_streamed += len(data)
        self.net.loop.call_at(self._at(), self.peer._deliver, bytes(data))

    def _deliver(self, data: bytes) -> None:
        if not self.closed and self.protocol is not None:
            self.protocol.data_received(data)

    def close(self) -> None:
        if self.closed:
            return
        self.closed = True
        if self.peer is not None and not self.peer.closed:
            self.net.loop.call_at(self._at(), self.peer._lost)
        if self.protocol is not None:
            proto, self.protocol = self.protocol, None
            self.net.loop.call_later(0.0, proto.connection_lost, None)

    def _lost(self) -> None:
        if self.closed:
            return
        self.closed = True
        if self.protocol is not None:
            proto, self.protocol = self.protocol, None
            proto.connection_lost(None)

    def is_closing(self) -> bool:
        return self.closed

    def get_extra_info(self, name: str, default=None):
        return {"peername": self.remote, "sockname": self.local}.get(name, default)


class Network:
    """Routes datagrams and streams between endpoints on the shared loop."""

    def __init__(self, loop: EventLoop, rng: random.Random, loss_rate: float,
                 latency_median: float, latency_sigma: float):
        self.loop = loop
        self.rng = rng
        self.loss_rate = loss_rate
        self.mu = math.log(latency_median)
        self.sigma = latency_sigma
        self.udp: dict[tuple, Callable] = {}
        self.tcp: dict[tuple, Callable] = {}
        # per-host inbound drop probability (responsiveness profile)
        self.drop: dict[str, float] = {}
        self.datagrams = 0
        self.lost = 0
        self.bytes_streamed = 0

    def latency(self) -> float:
        return self.rng.lognormvariate(self.mu, self.sigma)

    def _dropped(self, host: str) -> bool:
        p = self.drop.get(host, 0.0)
        if p >= 1.0:
            return True
        if self.loss_rate and self.rng.random() < self.loss_rate:
            return True
        return p > 0.0 and self.rng.random() < p

    def sendto(self, src: tuple, data: bytes, dst: tuple) -> None:
        self.datagrams += 1
        handler = self.udp.get(tuple(dst))
        if handler is None or self._dropped(dst[0]):
            self.lost += 1
            return
        self.loop.call_later(self.latency(), handler, bytes(data), tuple(src))

    def connect(self, src: tuple, dst: tuple, protocol) -> None:
        factory = self.tcp.get(tuple(dst))
        delay = self.latency()
        if factory is None or self.drop.get(dst[0], 0.0) >= 1.0:
            self.loop.call_later(delay, protocol.connection_lost,
                                 ConnectionRefusedError(f"{dst} refused"))
            return
        server = factory()
        a, b = SimTransport(self, src, tuple(dst)), SimTransport(self, tuple(dst), src)
        a.peer, b.peer = b, a
        a.protocol, b.protocol = protocol, server

        def established():
            server.connection_made(b)
            protocol.connection_made(a)

        self.loop.call_later(delay, established)


class NodeRuntime:
    """The runtime contract for one host on a :class:`Network`."""

    def __init__(self, net: Network, addr: tuple):
        self.net = net
        self.addr = tuple(addr)
        self._port = 40000

    def time(self) -> float:
        return self.net.loop.now

    def call_later(self, delay: float, callback: Callable, *args):
        return self.net.loop.call_later(delay, callback, *args)

    def sendto(self, data: bytes, addr: tuple) -> None:
        self.net.sendto(self.addr, data, addr)

    def connect(self, addr: tuple, protocol) -> None:
        self._port = 40000 + (self._port - 39999) % 20000
        self.net.connect((self.addr[0], self._port), tuple(addr), protocol)


# ------------------------------------------------------------------ nodes

class _SimEngine(DhtEngine):
    """A DHT node that may lack ``sample_infohashes``."""

    supports_sampling = True

    def handle_incoming(self, msg: KrpcMessage):
        if msg.method == "sample_infohashes" and not self.supports_sampling:
            return KrpcMessage.fail(msg.tid, METHOD_UNKNOWN, "method unknown")
        return super().handle_incoming(msg)


@dataclass
class SimNode:
    node_id: bytes
    addr: tuple
    peer_addr: tuple
    profile: str
    engine: _SimEngine
    held: list = field(default_factory=list)
    seeder_mode: str = "ok"


@dataclass
class SimWorld:
    config: WorldConfig
    loop: EventLoop
    net: Network
    nodes: list
    torrents: dict  # infohash -> SyntheticTorrent
    catalog: list
    holders: dict  # infohash -> [node index]
    rng: random.Random

    @property
    def infohashes(self) -> set:
        return set(self.torrents)

    @property
    def hash_list(self) -> list:
        return list(self.torrents)

    def bootstrap(self) -> list[tuple]:
        picks = random.Random(self.config.seed ^ 0xB007).sample(
            range(len(self.nodes)), min(self.config.bootstrap_nodes, len(self.nodes)))
        return [self.nodes[i].addr for i in sorted(picks)]

    def client_runtime(self, host: str = "10.255.255.1") -> NodeRuntime:
        return NodeRuntime(self.net, (host, DHT_PORT))

    def epoch(self, t: float) -> int:
        return int(self.config.epoch_start + t * self.config.time_scale)

    def lookup(self, target: bytes, method: str = "find_node", host: str = "10.255.255.2",
               seeds: list | None = None, until: float = 120.0):
        """Run a lookup from a fresh client seeded with the bootstrap nodes."""
        rt = self.client_runtime(host)
        eng = DhtEngine(rt, hashlib.sha1(host.encode()).digest(), rate_limit_qps=0,
                        rng=random.Random(self.config.seed))
        self.net.udp[rt.addr] = eng.datagram_received
        out: list = []
        if seeds is None:
            seeds = [Contact(self.nodes[i].node_id, self.nodes[i].addr)
                     for i in _indices_of(self, self.bootstrap())]
        Lookup(eng, target, lambda r, e: out.append((r, e)), method=method).start(seeds)
        self.loop.run_until(self.loop.now + until, stop=lambda: bool(out))
        del self.net.udp[rt.addr]
        if not out:
            raise TimeoutError("lookup did not finish")
        res, exc = out[0]
        if exc is not None:
            raise exc
        return res

    def fetch(self, infohash: bytes, peer: tuple, host: str = "10.255.255.3",
              until: float = 60.0) -> TorrentMeta:
        out: list = []
        fetch_metadata(self.client_runtime(host), infohash, peer, lambda m, e: out.append((m, e)))
        self.loop.run_until(self.loop.now + until, stop=lambda: bool(out))
        if not out:
            raise TimeoutError("fetch did not finish")
        meta, exc = out[0]
        if exc is not None:
            raise exc
        return meta


def _indices_of(world: SimWorld, addrs: list) -> list[int]:
    index = {n.addr: i for i, n in enumerate(world.nodes)}
    return [index[a] for a in addrs]


def _node_addr(i: int) -> str:
    return f"10.{(i >> 16) & 0xFF}.{(i >> 8) & 0xFF}.{(i & 0xFF) + 1}"


def build_world(config: WorldConfig) -> SimWorld:
    """Build nodes, routing tables, hash placement and seeders from ``config``."""
    config.validate()
    rng = random.Random(config.seed)
    loop = EventLoop(0.0)
    net = Network(loop, random.Random(config.seed * 7919 + 1), config.loss_rate,
                  config.latency_median, config.latency_sigma)
    torrents, catalog = generate_corpus(config.seed, config.infohashes,
                                        config.catalog_titles or None, config.bad_utf8_rate)
    ids: set[bytes] = set()
    nodes: list[SimNode] = []
    for i in range(config.nodes):
        nid = rng.randbytes(20)
        while nid in ids:
            nid = rng.randbytes(20)
        ids.add(nid)
        host = _node_addr(i)
        r = rng.random()
        if r < config.silent_share:
            profile, drop = "silent", 1.0
        elif r < config.silent_share + config.drop_share:
            profile, drop = "drop-p", config.drop_p
        else:
            profile, drop = "always", 0.0
        net.drop[host] = drop
        rt = NodeRuntime(net, (host, DHT_PORT))
        eng = _SimEngine(rt, nid, k=config.replication, rate_limit_qps=0,
                         token_secret=rng.randbytes(16), rng=random.Random(rng.getrandbits(64)))
        eng.supports_sampling = rng.random() < config.sampling_support
        mode = "corrupt" if rng.random() < config.bad_peer_rate else "ok"
        node = SimNode(nid, (host, DHT_PORT), (host, PEER_PORT), profile, eng, seeder_mode=mode)
        nodes.append(node)
        net.udp[node.addr] = eng.datagram_received

    # routing tables: every node learns every other in its own seeded order;
    # full buckets keep the first arrivals, so far buckets are random subsets
    contacts = [Contact(n.node_id, n.addr) for n in nodes]
    for n in nodes:
        order = list(range(len(nodes)))
        rng.shuffle(order)
        for j in order:
            if contacts[j].node_id != n.node_id:
                n.engine.routing.insert(contacts[j], 0.0)

    # placement: each torrent lives on its k XOR-nearest nodes
    words = _accel.ids_to_words([n.node_id for n in nodes])
    holders: dict[bytes, list[int]] = {}
    by_hash: dict[bytes, SyntheticTorrent] = {}
    for t in torrents:
        near = _accel.xor_nearest(words, _accel.ids_to_words(t.infohash)[0], config.replication)
        idx = sorted(int(i) for i in near)
        holders[t.infohash] = idx
        by_hash[t.infohash] = t
        for i in idx:
            nodes[i].held.append(t.infohash)
        for i in idx:
            for j in idx:
                nodes[i].engine.add_peer(t.infohash, nodes[j].peer_addr, 0.0)

    for n in nodes:
        library = {ih: by_hash[ih].raw_info for ih in n.held}
        net.tcp[n.peer_addr] = (lambda lib=library, mode=n.seeder_mode:
                                MetadataSeeder(lib, mode=mode))

    world = SimWorld(config, loop, net, nodes, by_hash, catalog, holders, rng)
    if config.chatter_interval > 0:
        for i, n in enumerate(nodes):
            loop.call_later(rng.uniform(0, config.chatter_interval), _chatter, world, i,
                            random.Random(rng.getrandbits(64)))
    return world


def _chatter(world: SimWorld, i: int, rng: random.Random) -> None:
    """One get_peers + announce round from node ``i`` toward a random contact."""
    node = world.nodes[i]
    eng = node.engine
    if node.profile != "silent" and world.torrents:
        contacts = list(eng.routing.entries())
        if contacts:
            c = contacts[rng.randrange(len(contacts))]
            pool = node.held or world.hash_list
            ih = pool[rng.randrange(len(pool))]

            def got(msg, exc, c=c, ih=ih):
                token = msg.args.get(b"token") if exc is None else None
                if isinstance(token, bytes):
                    eng.query(c.addr, "announce_peer", {b"info_hash": ih, b"port": PEER_PORT,
                                                        b"token": token}, lambda m, e: None)

            eng.query(c.addr, "get_peers", {b"info_hash": ih}, got)
    world.loop.call_later(world.config.chatter_interval * rng.uniform(0.5, 1.5),
                          _chatter, world, i, rng)


# ------------------------------------------------------------------ crawling

@dataclass
class CrawlResult:
    trace: list  # (t, infohash, source addr)
    metas: dict  # infohash -> (TorrentMeta, discovered_at)
    fetch_failures: dict  # infohash -> last error text
    telemetry: list
    events: int

    def trace_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["t", "infohash", "source_host", "source_port"])
        for t, ih, addr in self.trace:
            w.writerow([f"{t:.6f}", ih.hex(), addr[0], addr[1]])
        return buf.getvalue()

    def write_trace(self, path: str | Path) -> None:
        Path(path).write_text(self.trace_csv(), encoding="utf-8")


def run_crawl(world: SimWorld, crawler_config: CrawlerConfig | None = None, duration: float = 600.0,
              fetch: bool = True, max_fetches: int = 64, stop_when_complete: bool = True) -> CrawlResult:
    """Run the crawler (and optionally the metadata fetcher) against ``world``."""
    from ..harvest import Harvester

    cfg = crawler_config or CrawlerConfig()
    if not cfg.bootstrap:
        cfg.bootstrap = world.bootstrap()
    rt = world.client_runtime()
    trace: list = []
    rng = random.Random(world.config.seed ^ 0xC0FFEE)
    harvester = Harvester(rt, cfg, rng=rng, max_concurrent=max_fetches, fetch=fetch)
    harvester.on_discovery = lambda ih, addr, t: trace.append((t, ih, addr))
    world.net.udp[rt.addr] = harvester.datagram_received
    start_events = world.loop.processed
    t0 = world.loop.now
    target = len(world.torrents)
    harvester.start()

    def done() -> bool:
        if not stop_when_complete:
            return False
        if fetch:
            return len(harvester.metas) + len(harvester.failed) >= target and harvester.idle()
        return len(trace) >= target

    if target == 0:
        world.loop.run_until(t0 + min(duration, 5.0))
    else:
        world.loop.run_until(t0 + duration, stop=done)
    harvester.stop()
    del world.net.udp[rt.addr]
    return CrawlResult(trace, dict(harvester.metas), dict(harvester.failed),
                       list(harvester.crawler.telemetry), world.loop.processed - start_events)
