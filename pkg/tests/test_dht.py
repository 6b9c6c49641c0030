import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from swarmcensus import bencode
from swarmcensus.dht import (BootstrapError, Contact, Crawler, CrawlerConfig, DhtEngine, InsertOutcome,
                             KrpcError, KrpcMessage, Lookup, NoRoute, QueryTimeout, RemoteError,
                             RoutingTable, TokenManager, pack_addr, pack_nodes, shared_prefix_len,
                             unpack_addr, unpack_nodes, xor_distance)
from swarmcensus.dht.engine import MAX_SAMPLES
from swarmcensus.dht.krpc import METHOD_UNKNOWN, PROTOCOL_ERROR
from swarmcensus.sim.loop import EventLoop
from swarmcensus.sim.world import Network, NodeRuntime

ids = st.binary(min_size=20, max_size=20)


def brute_distance(a, b):
    # bitwise reference: build the xor bit by bit
    bits = "".join("1" if x != y else "0" for x, y in zip(
        "".join(f"{c:08b}" for c in a), "".join(f"{c:08b}" for c in b)))
    return int(bits, 2)


# ------------------------------------------------------------------ ids

@settings(max_examples=200)
@given(ids, ids, ids)
def test_xor_metric(x, y, z):
    assert xor_distance(x, x) == 0
    assert xor_distance(x, y) == xor_distance(y, x) == brute_distance(x, y)
    assert (xor_distance(x, y) == 0) == (x == y)
    assert xor_distance(x, z) <= xor_distance(x, y) + xor_distance(y, z)
    # unidirectionality: the point at a given distance from x is unique
    d = xor_distance(x, y)
    assert (int.from_bytes(x, "big") ^ d).to_bytes(20, "big") == y


def test_shared_prefix_examples():
    a = bytes(20)
    assert shared_prefix_len(a, a) == 160
    assert shared_prefix_len(a, b"\x80" + bytes(19)) == 0
    assert shared_prefix_len(a, bytes(19) + b"\x01") == 159


@settings(max_examples=100)
@given(st.lists(st.tuples(ids, st.ip_addresses(v=4).map(str), st.integers(1, 65535)), max_size=10))
def test_compact_roundtrip(items):
    contacts = [Contact(nid, (ip, port)) for nid, ip, port in items]
    raw = pack_nodes(contacts)
    assert len(raw) == 26 * len(contacts)
    assert unpack_nodes(raw) == contacts
    for c in contacts:
        assert unpack_addr(pack_addr(c.addr)) == c.addr


def test_unpack_nodes_rejects_partial():
    with pytest.raises(ValueError):
        unpack_nodes(bytes(27))


# ------------------------------------------------------------------ routing

def test_routing_insert_outcomes():
    own = bytes(20)
    table = RoutingTable(own, k=2)
    far = [bytes([0x80, i]) + bytes(18) for i in range(4)]  # all in bucket 0
    assert table.insert(Contact(far[0], ("1.1.1.1", 1))) is InsertOutcome.ADDED
    assert table.insert(Contact(far[0], ("1.1.1.2", 1)), 5.0) is InsertOutcome.UPDATED
    assert table.get(far[0]).addr == ("1.1.1.2", 1)
    assert table.insert(Contact(far[1], ("1.1.1.3", 1))) is InsertOutcome.ADDED
    assert table.insert(Contact(far[2], ("1.1.1.4", 1))) is InsertOutcome.BUCKET_FULL_DROPPED
    table.mark_failed(far[1])
    table.mark_failed(far[1])
    assert table.insert(Contact(far[2], ("1.1.1.4", 1))) is InsertOutcome.REPLACED_BAD
    assert far[1] not in table and far[2] in table
    with pytest.raises(ValueError):
        table.insert(Contact(own, ("1.1.1.1", 1)))
    table.check_invariants()


def test_routing_invariants_random_inserts():
    rng = random.Random(3)
    own = rng.randbytes(20)
    table = RoutingTable(own)
    inserted = []
    for i in range(10_000):
        nid = rng.randbytes(20)
        if table.insert(Contact(nid, ("10.0.0.1", 1000 + i % 60000)), float(i)) is InsertOutcome.ADDED:
            inserted.append(nid)
        if i % 1000 == 0:
            table.check_invariants()
    table.check_invariants()
    assert len(table) == len(inserted)
    for bucket in table.buckets:
        assert len(bucket) <= 8
    target = rng.randbytes(20)
    oracle = sorted(inserted, key=lambda n: brute_distance(n, target))[:8]
    assert [c.node_id for c in table.closest(target)] == oracle


# ------------------------------------------------------------------ krpc

def test_krpc_roundtrip_and_errors():
    q = KrpcMessage.query(b"aa", "ping", {b"id": bytes(20)})
    back = KrpcMessage.from_bytes(q.to_bytes())
    assert (back.tid, back.kind, back.method, back.args) == (b"aa", "q", "ping", {b"id": bytes(20)})
    e = KrpcMessage.from_bytes(KrpcMessage.fail(b"x", 201, "generic").to_bytes())
    assert e.error == (201, "generic")
    for bad in (b"", b"i1e", b"d1:y1:qe", b"d1:t2:aa1:y1:qe", b"d1:t2:aa1:y1:ee", b"d1:t2:aa1:y1:xe"):
        with pytest.raises(KrpcError):
            KrpcMessage.from_bytes(bad)


def test_token_rotation():
    tm = TokenManager(b"secret", period=300)
    tok = tm.issue("1.2.3.4", 100.0)
    assert tm.check(tok, "1.2.3.4", 299.0)
    assert tm.check(tok, "1.2.3.4", 599.0)  # previous period still honored
    assert not tm.check(tok, "1.2.3.4", 600.0)
    assert not tm.check(tok, "5.6.7.8", 100.0)


# ------------------------------------------------------------------ engine over a virtual network

class Pair:
    def __init__(self, latency=0.01, drop_b=0.0):
        self.loop = EventLoop()
        self.net = Network(self.loop, random.Random(1), 0.0, latency, 0.01)
        self.ra = NodeRuntime(self.net, ("10.0.0.1", 6881))
        self.rb = NodeRuntime(self.net, ("10.0.0.2", 6881))
        self.a = DhtEngine(self.ra, b"A" * 20, rate_limit_qps=0, token_secret=b"a")
        self.b = DhtEngine(self.rb, b"B" * 20, rate_limit_qps=0, token_secret=b"b")
        self.net.udp[self.ra.addr] = self.a.datagram_received
        self.net.udp[self.rb.addr] = self.b.datagram_received
        self.net.drop["10.0.0.2"] = drop_b

    def ask(self, method, args, until=30.0):
        out = []
        self.a.query(self.rb.addr, method, args, lambda m, e: out.append((m, e)))
        self.loop.run_until(self.loop.now + until)
        assert len(out) == 1, "callback must fire exactly once"
        return out[0]


def test_ping_inserts_both_sides():
    p = Pair()
    msg, exc = p.ask("ping", {})
    assert exc is None and msg.args[b"id"] == b"B" * 20
    assert b"B" * 20 in p.a.routing and b"A" * 20 in p.b.routing


def test_tid_echoed_raw():
    p = Pair()
    got = []
    p.net.udp[p.ra.addr] = lambda data, addr: got.append(data)
    p.ra.sendto(KrpcMessage.query(b"\xff\x00z", "ping", {b"id": b"A" * 20}).to_bytes(), p.rb.addr)
    p.loop.run_until(5)
    assert bencode.loads(got[0])[b"t"] == b"\xff\x00z"


def test_unknown_method_and_protocol_error():
    p = Pair()
    _, exc = p.ask("frobnicate", {})
    assert isinstance(exc, RemoteError) and exc.code == METHOD_UNKNOWN
    _, exc = p.ask("find_node", {b"target": b"short"})
    assert isinstance(exc, RemoteError) and exc.code == PROTOCOL_ERROR
    got = []
    p.net.udp[p.ra.addr] = lambda data, addr: got.append(data)
    p.ra.sendto(b"d1:t2:zz1:y1:q1:q4:pinge", p.rb.addr)  # query without arguments
    p.loop.run_until(p.loop.now + 5)
    reply = bencode.loads(got[0])
    assert reply[b"t"] == b"zz" and reply[b"e"][0] == PROTOCOL_ERROR


def test_timeout_after_retries():
    p = Pair(drop_b=1.0)
    sent0 = p.a.stats.sent
    msg, exc = p.ask("ping", {}, until=10.0)
    assert msg is None and isinstance(exc, QueryTimeout)
    assert p.a.stats.sent - sent0 == 3  # first try plus 2 retries
    assert 5.9 <= p.loop.now


def test_get_peers_announce_and_stale_token():
    p = Pair()
    ih = b"I" * 20
    msg, _ = p.ask("get_peers", {b"info_hash": ih})
    assert b"values" not in msg.args and b"nodes" in msg.args
    token = msg.args[b"token"]
    msg, exc = p.ask("announce_peer", {b"info_hash": ih, b"port": 7000, b"token": token})
    assert exc is None
    msg, _ = p.ask("get_peers", {b"info_hash": ih})
    assert msg.args[b"values"] == [pack_addr(("10.0.0.1", 7000))]
    # two rotation periods later the token is stale
    p.loop.run_until(p.loop.now + 700)
    _, exc = p.ask("announce_peer", {b"info_hash": ih, b"port": 7001, b"token": token})
    assert isinstance(exc, RemoteError) and exc.code == PROTOCOL_ERROR
    _, exc = p.ask("announce_peer", {b"info_hash": ih, b"port": 0, b"token": token, b"implied_port": 1})
    assert exc is not None  # still stale, implied port does not help


def test_sample_infohashes_caps_at_20():
    p = Pair()
    rng = random.Random(0)
    hashes = {rng.randbytes(20) for _ in range(50)}
    for h in hashes:
        p.b.add_peer(h, ("10.9.9.9", 1))
    msg, _ = p.ask("sample_infohashes", {b"target": bytes(20)})
    samples = msg.args[b"samples"]
    assert len(samples) == 20 * MAX_SAMPLES == 400
    assert msg.args[b"num"] == 50
    got = {samples[i:i + 20] for i in range(0, 400, 20)}
    assert got <= hashes and len(got) == 20


def test_rate_limit_spreads_queries():
    loop = EventLoop()
    net = Network(loop, random.Random(1), 0.0, 0.01, 0.01)
    rt = NodeRuntime(net, ("10.0.0.1", 6881))
    eng = DhtEngine(rt, b"A" * 20, rate_limit_qps=500, timeout=100)
    times = []
    net.udp[("10.0.0.2", 6881)] = lambda data, addr: times.append(loop.now)
    for _ in range(1000):
        eng.query(("10.0.0.2", 6881), "ping", {}, lambda m, e: None)
    loop.run_until(10)
    assert len(times) == 1000
    # burst of 50 then 500/s: the 1000th leaves at about (1000 - 50) / 500 s
    assert times[-1] == pytest.approx(1.9, abs=0.05)
    for i in range(len(times)):
        j = i
        while j < len(times) and times[j] - times[i] < 1.0:
            j += 1
        assert j - i <= 500 + 50 + 1


# ------------------------------------------------------------------ lookup vs brute force

def test_lookup_equals_brute_force_small():
    from swarmcensus.sim import WorldConfig, build_world
    for seed in range(5):
        world = build_world(WorldConfig(seed=seed, nodes=100, infohashes=0))
        rng = random.Random(seed)
        target = rng.randbytes(20)
        res = world.lookup(target)
        oracle = sorted((n.node_id for n in world.nodes), key=lambda n: brute_distance(n, target))[:8]
        assert [c.node_id for c in res.closest] == oracle


def test_lookup_no_route():
    p = Pair()
    out = []
    Lookup(p.a, bytes(20), lambda r, e: out.append(e)).start()
    assert isinstance(out[0], NoRoute)


# ------------------------------------------------------------------ crawler

def test_crawler_requires_bootstrap():
    loop = EventLoop()
    rt = NodeRuntime(Network(loop, random.Random(1), 0.0, 0.01, 0.01), ("10.0.0.1", 6881))
    with pytest.raises(BootstrapError):
        Crawler(rt, CrawlerConfig(), lambda *a: None).start()
    with pytest.raises(ValueError):
        CrawlerConfig(max_neighbors=0)


def test_crawler_bootstrap_failure_reported():
    loop = EventLoop()
    rt = NodeRuntime(Network(loop, random.Random(1), 0.0, 0.01, 0.01), ("10.0.0.1", 6881))
    status = []
    c = Crawler(rt, CrawlerConfig(bootstrap=[("10.0.0.9", 6881)]), lambda *a: None,
                on_status=lambda k, d: status.append(k))
    c.start()
    loop.run_until(20)
    assert status == ["bootstrap-failure"] and not c.running


def test_crawler_dedup_and_neighbor_cap():
    from swarmcensus.sim import WorldConfig, build_world
    world = build_world(WorldConfig(seed=5, nodes=60, infohashes=200))
    emitted = []
    cfg = CrawlerConfig(bootstrap=world.bootstrap(), max_neighbors=5, telemetry_interval=0.5)
    c = Crawler(world.client_runtime(), cfg, lambda ih, addr, t: emitted.append(ih), rng=random.Random(1))
    world.net.udp[("10.255.255.1", 6881)] = c.datagram_received
    c.start()
    world.loop.run_until(300)
    c.stop()
    assert len(emitted) == len(set(emitted)) > 0
    assert set(emitted) <= world.infohashes
    assert max(t.neighbors for t in c.telemetry) <= 5
