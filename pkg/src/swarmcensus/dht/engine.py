"""KRPC node: outbound query bookkeeping and inbound query handling.

The engine owns the transaction table. Callers submit queries with a
completion callback and never touch the table directly; completions fire
exactly once, with either the response message or an exception.
"""

from __future__ import annotations

import logging
import os
import random
from collections import deque
from dataclasses import dataclass, field
from typing import Callable

from .. import bencode
from .ids import (COMPACT_PEER_LEN, ID_LEN, Contact, pack_addr, pack_nodes, unpack_addr,
                  valid_addr)
from .krpc import (METHOD_UNKNOWN, PROTOCOL_ERROR, QUERY, RESPONSE, KrpcError, KrpcMessage,
                   TokenManager)
from .routing import K, RoutingTable

log = logging.getLogger(__name__)

MAX_SAMPLES = 20
MAX_PEER_VALUES = 50


_ONE = 1.0 - 1e-9
_MIN_WAIT = 1e-4


class QueryTimeout(Exception):
    """No response after the configured retries."""


class RemoteError(Exception):
    def __init__(self, code: int, text: str):
        super().__init__(f"{code} {text}")
        self.code = code
        self.text = text


@dataclass
class _Pending:
    tid: bytes
    addr: tuple
    method: str
    payload: bytes
    callback: Callable
    attempts: int = 0
    timer: object = None
    node_id: bytes | None = None


@dataclass
class EngineStats:
    sent: int = 0
    received: int = 0
    timeouts: int = 0
    errors: int = 0
    queued: int = 0
    answered: int = 0
    by_method: dict = field(default_factory=dict)


class DhtEngine:
    def __init__(self, runtime, node_id: bytes, *, k: int = K, timeout: float = 2.0,
                 retries: int = 2, rate_limit_qps: float = 500.0, token_secret: bytes | None = None,
                 sample_interval: int = 60, rng: random.Random | None = None,
                 version: bytes = b"SC01"):
        self.rt = runtime
        self.node_id = node_id
        self.routing = RoutingTable(node_id, k)
        self.k = k
        self.timeout = timeout
        self.retries = retries
        self.rate = float(rate_limit_qps)
        self.tokens = TokenManager(token_secret if token_secret is not None else os.urandom(16))
        self.sample_interval = sample_interval
        self.rng = rng or random.Random()
        self.version = version
        self.peer_store: dict[bytes, dict[tuple, float]] = {}
        self.pending: dict[bytes, _Pending] = {}
        self.on_infohash: Callable | None = None
        self.stats = EngineStats()
        self._tid = 0
        self._burst = max(1.0, self.rate / 10.0)
        self._allowance = self._burst
        self._last_refill = runtime.time()
        self._backlog: deque = deque()
        self._drain_scheduled = False

    # ------------------------------------------------------------ outbound

    def _next_tid(self) -> bytes:
        for _ in range(65536):
            self._tid = (self._tid + 1) & 0xFFFF
            tid = self._tid.to_bytes(2, "big")
            if tid not in self.pending:
                return tid
        raise RuntimeError("transaction table full")

    def query(self, addr: tuple, method: str, args: dict, callback: Callable,
              node_id: bytes | None = None) -> bytes:
        """Send ``method`` to ``addr``; ``callback(msg, exc)`` fires once on completion."""
        tid = self._next_tid()
        payload = KrpcMessage.query(tid, method, {b"id": self.node_id, **args})
        payload.version = self.version
        p = _Pending(tid, tuple(addr), method, payload.to_bytes(), callback, node_id=node_id)
        self.pending[tid] = p
        self._submit(p)
        return tid

    def _refill(self) -> None:
        now = self.rt.time()
        self._allowance = min(self._burst, self._allowance + (now - self._last_refill) * self.rate)
        self._last_refill = now

    def _submit(self, p: _Pending) -> None:
        if self.rate <= 0:
            self._transmit(p)
            return
        self._refill()
        if not self._backlog and self._allowance >= _ONE:
            self._allowance -= 1.0
            self._transmit(p)
        else:
            self.stats.queued += 1
            self._backlog.append(p)
            self._schedule_drain()

    def _schedule_drain(self) -> None:
        if not self._drain_scheduled:
            self._drain_scheduled = True
            # a floor on the wait keeps virtual clocks from stalling on rounding
            wait = max(_MIN_WAIT, (1.0 - self._allowance) / self.rate)
            self.rt.call_later(wait, self._drain)

    def _drain(self) -> None:
        self._drain_scheduled = False
        self._refill()
        while self._backlog and self._allowance >= _ONE:
            p = self._backlog.popleft()
            if p.tid in self.pending:
                self._allowance -= 1.0
                self._transmit(p)
        if self._backlog:
            self._schedule_drain()

    def _transmit(self, p: _Pending) -> None:
        p.attempts += 1
        self.stats.sent += 1
        self.stats.by_method[p.method] = self.stats.by_method.get(p.method, 0) + 1
        self.rt.sendto(p.payload, p.addr)
        p.timer = self.rt.call_later(self.timeout, self._expire, p.tid, p.attempts)

    def _expire(self, tid: bytes, attempt: int) -> None:
        p = self.pending.get(tid)
        if p is None or p.attempts != attempt:
            return
        if p.attempts <= self.retries:
            self._submit(p)
            return
        del self.pending[tid]
        self.stats.timeouts += 1
        if p.node_id is not None:
            self.routing.mark_failed(p.node_id)
        p.callback(None, QueryTimeout(f"{p.method} to {p.addr} timed out"))

    def cancel_all(self) -> None:
        for p in list(self.pending.values()):
            if p.timer is not None:
                p.timer.cancel()
        self.pending.clear()
        self._backlog.clear()

    # ------------------------------------------------------------ inbound

    def datagram_received(self, data: bytes, addr: tuple) -> None:
        addr = tuple(addr)
        self.stats.received += 1
        try:
            msg = KrpcMessage.from_bytes(data, addr)
        except KrpcError as exc:
            tid = _salvage_tid(data)
            if tid is not None:
                self.rt.sendto(KrpcMessage.fail(tid, PROTOCOL_ERROR, str(exc)).to_bytes(), addr)
            return
        if msg.kind == QUERY:
            reply = self.handle_incoming(msg)
            if reply is not None:
                reply.version = self.version
                self.stats.answered += 1
                self.rt.sendto(reply.to_bytes(), addr)
            return
        p = self.pending.get(msg.tid)
        if p is None or p.addr != addr:
            return
        del self.pending[msg.tid]
        if p.timer is not None:
            p.timer.cancel()
        if msg.kind == RESPONSE:
            rid = msg.args.get(b"id")
            if isinstance(rid, bytes) and len(rid) == ID_LEN and rid != self.node_id:
                self.routing.insert(Contact(rid, addr), self.rt.time())
            p.callback(msg, None)
        else:
            self.stats.errors += 1
            p.callback(None, RemoteError(*msg.error))

    def handle_incoming(self, msg: KrpcMessage) -> KrpcMessage | None:
        """Answer one inbound query. Returns the reply, or ``None`` to stay silent."""
        args = msg.args
        tid = msg.tid
        sender = args.get(b"id")
        if not isinstance(sender, bytes) or len(sender) != ID_LEN:
            return KrpcMessage.fail(tid, PROTOCOL_ERROR, "invalid id")
        addr = msg.addr
        now = self.rt.time()
        if sender != self.node_id and addr is not None and valid_addr(addr):
            self.routing.insert(Contact(sender, addr), now)
        method = msg.method
        me = {b"id": self.node_id}

        if method == "ping":
            return KrpcMessage.response(tid, me)

        if method == "find_node":
            target = args.get(b"target")
            if not _is_id(target):
                return KrpcMessage.fail(tid, PROTOCOL_ERROR, "invalid target")
            return KrpcMessage.response(tid, {**me, b"nodes": self._nodes_near(target, now)})

        if method == "get_peers":
            ih = args.get(b"info_hash")
            if not _is_id(ih):
                return KrpcMessage.fail(tid, PROTOCOL_ERROR, "invalid info_hash")
            self._observed(ih, addr, method)
            out = {**me, b"token": self.tokens.issue(addr[0], now) if addr else b""}
            peers = self.peer_store.get(ih)
            if peers:
                out[b"values"] = [pack_addr(a) for a in sorted(peers)[:MAX_PEER_VALUES]]
            else:
                out[b"nodes"] = self._nodes_near(ih, now)
            return KrpcMessage.response(tid, out)

        if method == "announce_peer":
            ih = args.get(b"info_hash")
            token = args.get(b"token")
            port = args.get(b"port")
            implied = args.get(b"implied_port", 0)
            if not _is_id(ih) or not isinstance(token, bytes):
                return KrpcMessage.fail(tid, PROTOCOL_ERROR, "invalid announce arguments")
            if implied:
                port = addr[1]
            if not isinstance(port, int) or not 0 < port < 65536:
                return KrpcMessage.fail(tid, PROTOCOL_ERROR, "invalid port")
            if addr is None or not self.tokens.check(token, addr[0], now):
                return KrpcMessage.fail(tid, PROTOCOL_ERROR, "bad token")
            self.add_peer(ih, (addr[0], port), now)
            self._observed(ih, (addr[0], port), method)
            return KrpcMessage.response(tid, me)

        if method == "sample_infohashes":
            target = args.get(b"target")
            if not _is_id(target):
                return KrpcMessage.fail(tid, PROTOCOL_ERROR, "invalid target")
            known = sorted(self.peer_store)
            picked = known if len(known) <= MAX_SAMPLES else self.rng.sample(known, MAX_SAMPLES)
            return KrpcMessage.response(tid, {
                **me,
                b"interval": self.sample_interval,
                b"num": len(known),
                b"samples": b"".join(picked),
                b"nodes": self._nodes_near(target, now),
            })

        return KrpcMessage.fail(tid, METHOD_UNKNOWN, "method unknown")

    def add_peer(self, infohash: bytes, addr: tuple, now: float = 0.0) -> None:
        self.peer_store.setdefault(infohash, {})[tuple(addr)] = now

    def _nodes_near(self, target: bytes, now: float) -> bytes:
        return pack_nodes(self.routing.closest(target, self.k, now))

    def _observed(self, infohash: bytes, addr, method: str) -> None:
        if self.on_infohash is not None:
            self.on_infohash(infohash, addr, method)


def _is_id(value) -> bool:
    return isinstance(value, bytes) and len(value) == ID_LEN


def _salvage_tid(data: bytes) -> bytes | None:
    try:
        msg, _ = bencode.decode(data)
    except (bencode.BencodeError, IndexError):
        return None
    if isinstance(msg, dict) and isinstance(msg.get(b"t"), bytes) and msg.get(b"y") == b"q":
        return msg[b"t"]
    return None


def parse_values(values) -> list[tuple]:
    """Decode a ``values`` list of compact peers, skipping malformed entries."""
    out = []
    if isinstance(values, list):
        for v in values:
            if isinstance(v, bytes) and len(v) == COMPACT_PEER_LEN:
                out.append(unpack_addr(v))
    return out
