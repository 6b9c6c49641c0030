"""Iterative Kademlia lookup (find_node / get_peers)."""

from __future__ import annotations

from typing import Callable

from .engine import DhtEngine, parse_values
from .ids import Contact, unpack_nodes, xor_distance

ALPHA = 3


class NoRoute(Exception):
    """Every contacted node failed to answer."""


class Lookup:
    """Converge on the ``k`` responsive nodes closest to ``target``.

    At most ``alpha`` queries are in flight. The lookup finishes once the
    ``k`` closest non-failed candidates have all answered; ``on_done`` then
    receives ``(result, exc)`` where ``result`` is a :class:`LookupResult`.
    """

    def __init__(self, engine: DhtEngine, target: bytes, on_done: Callable, *,
                 alpha: int = ALPHA, k: int | None = None, method: str = "find_node"):
        self.engine = engine
        self.target = target
        self.on_done = on_done
        self.alpha = alpha
        self.k = k or engine.k
        self.method = method
        self.candidates: dict[bytes, Contact] = {}
        self.queried: set[bytes] = set()
        self.responded: set[bytes] = set()
        self.failed: set[bytes] = set()
        self.in_flight = 0
        self.peers: list[tuple] = []  # (responder distance, peer addr)
        self.tokens: dict[bytes, bytes] = {}
        self.done = False

    def start(self, seeds: list[Contact] | None = None) -> None:
        if seeds is None:
            seeds = self.engine.routing.closest(self.target, self.k * 2, self.engine.rt.time())
        for c in seeds:
            self._add(c)
        if not self.candidates:
            self._finish(NoRoute("routing table is empty"))
            return
        self._pump()

    def _add(self, c: Contact) -> None:
        if c.node_id != self.engine.node_id and c.node_id not in self.candidates:
            self.candidates[c.node_id] = c

    def _frontier(self) -> list[Contact]:
        live = [c for nid, c in self.candidates.items() if nid not in self.failed]
        live.sort(key=lambda c: xor_distance(c.node_id, self.target))
        return live[:self.k]

    def _pump(self) -> None:
        if self.done:
            return
        for c in self._frontier():
            if self.in_flight >= self.alpha:
                break
            if c.node_id in self.queried:
                continue
            self.queried.add(c.node_id)
            self.in_flight += 1
            key = b"target" if self.method == "find_node" else b"info_hash"
            self.engine.query(c.addr, self.method, {key: self.target},
                              lambda msg, exc, c=c: self._reply(c, msg, exc), node_id=c.node_id)
        if self.in_flight == 0:
            if self.responded:
                self._finish(None)
            else:
                self._finish(NoRoute("no node answered"))

    def _reply(self, c: Contact, msg, exc) -> None:
        self.in_flight -= 1
        if exc is not None:
            self.failed.add(c.node_id)
        else:
            self.responded.add(c.node_id)
            values = msg.args
            rid = values.get(b"id")
            if isinstance(rid, bytes) and rid != c.node_id and len(rid) == 20:
                # the node answered under another id; track it under the reported one
                self.failed.add(c.node_id)
                self.responded.discard(c.node_id)
            nodes = values.get(b"nodes")
            if isinstance(nodes, bytes):
                try:
                    for found in unpack_nodes(nodes):
                        self._add(found)
                except ValueError:
                    pass
            token = values.get(b"token")
            if isinstance(token, bytes):
                self.tokens[c.node_id] = token
            dist = xor_distance(c.node_id, self.target)
            for peer in parse_values(values.get(b"values")):
                self.peers.append((dist, peer))
        self._pump()

    def _finish(self, exc) -> None:
        if self.done:
            return
        self.done = True
        if exc is not None:
            self.on_done(None, exc)
            return
        closest = [c for c in self._frontier() if c.node_id in self.responded]
        self.on_done(LookupResult(closest, _dedup_peers(self.peers), dict(self.tokens)), None)


class LookupResult:
    def __init__(self, closest: list[Contact], peers: list[tuple], tokens: dict):
        self.closest = closest
        self.peers = peers
        self.tokens = tokens

    def __repr__(self) -> str:
        return f"LookupResult({len(self.closest)} nodes, {len(self.peers)} peers)"


def _dedup_peers(peers: list[tuple]) -> list[tuple]:
    seen = set()
    out = []
    for _, addr in sorted(peers):
        if addr not in seen:
            seen.add(addr)
            out.append(addr)
    return out
