import hashlib
import random

import numpy as np
import pytest

from swarmcensus.dht import CrawlerConfig, xor_distance
from swarmcensus.sim import (EventLoop, WorldConfig, WorldConfigError, build_world, generate_corpus,
                             run_crawl)

SMOOTH = 5


def test_event_loop_orders_by_time_then_insertion():
    loop = EventLoop()
    seen = []
    loop.call_later(1.0, seen.append, "b")
    loop.call_later(0.5, seen.append, "a")
    loop.call_later(1.0, seen.append, "c")
    h = loop.call_later(0.7, seen.append, "x")
    h.cancel()
    loop.run_until(2.0)
    assert seen == ["a", "b", "c"] and loop.now == 2.0


def test_single_node_holds_single_hash():
    w = build_world(WorldConfig(nodes=1, infohashes=1))
    (ih,) = w.infohashes
    assert w.nodes[0].held == [ih]


def test_placement_equals_brute_force_nearest():
    w = build_world(WorldConfig(seed=3))
    ids = [n.node_id for n in w.nodes]
    for ih in w.hash_list:
        oracle = sorted(range(len(ids)), key=lambda i: xor_distance(ids[i], ih))[:8]
        assert sorted(oracle) == sorted(i for i, n in enumerate(w.nodes) if ih in n.held)


def test_worlds_are_deterministic():
    a, b = build_world(WorldConfig(seed=9)), build_world(WorldConfig(seed=9))
    assert [n.node_id for n in a.nodes] == [n.node_id for n in b.nodes]
    assert a.hash_list == b.hash_list
    assert [n.held for n in a.nodes] == [n.held for n in b.nodes]
    assert build_world(WorldConfig(seed=10)).hash_list != a.hash_list


def test_corpus_hashes_are_valid():
    torrents, catalog = generate_corpus(4, 300)
    assert len({t.infohash for t in torrents}) == 300
    for t in torrents:
        assert hashlib.sha1(t.raw_info).digest() == t.infohash
    assert len({e.catalog_id for e in catalog}) == len(catalog)


@pytest.mark.parametrize("bad", [
    {"nodes": 0}, {"loss_rate": 1.5}, {"version": 2}, {"drop_share": 0.7, "silent_share": 0.7},
    {"latency_median": 0}, {"replication": 0},
])
def test_invalid_config(bad):
    with pytest.raises(WorldConfigError):
        WorldConfig.from_dict(bad)


def test_unknown_config_key_and_file_roundtrip(tmp_path):
    with pytest.raises(WorldConfigError):
        WorldConfig.from_dict({"nodez": 3})
    cfg = WorldConfig(seed=42, nodes=17, loss_rate=0.25)
    p = tmp_path / "world.toml"
    p.write_text(cfg.dumps())
    assert WorldConfig.load(p) == cfg


def test_zero_hash_world_has_empty_trace():
    r = run_crawl(build_world(WorldConfig(infohashes=0)))
    assert r.trace == [] and r.trace_csv().count("\n") == 1


def test_full_crawl_is_sound_and_complete():
    w = build_world(WorldConfig(seed=1))
    r = run_crawl(w)
    found = {ih for _, ih, _ in r.trace}
    assert found <= w.infohashes
    assert len(found) >= 0.95 * len(w.infohashes)
    for ih, (meta, _) in r.metas.items():
        assert hashlib.sha1(meta.raw_info).digest() == ih == meta.infohash


def _t95(trace, n):
    ts = sorted(t for t, _, _ in trace)
    return ts[int(np.ceil(0.95 * n)) - 1]


def test_loss_tolerance():
    base = run_crawl(build_world(WorldConfig(seed=1)), fetch=False)
    budget = 3 * _t95(base.trace, 1000)
    lossy = run_crawl(build_world(WorldConfig(seed=1, loss_rate=0.3)), fetch=False, duration=budget)
    assert len({ih for _, ih, _ in lossy.trace}) >= 800


def test_unresponsive_nodes_and_bad_peers_do_not_break_the_crawl():
    cfg = WorldConfig(seed=6, drop_share=0.2, silent_share=0.1, bad_peer_rate=0.3, sampling_support=0.7)
    w = build_world(cfg)
    r = run_crawl(w, duration=1200)
    assert {ih for _, ih, _ in r.trace} <= w.infohashes
    for ih, (meta, _) in r.metas.items():
        assert hashlib.sha1(meta.raw_info).digest() == ih
    assert len(r.metas) >= 0.8 * len(w.infohashes)


def test_passive_harvest_without_sampling_support():
    w = build_world(WorldConfig(seed=2, nodes=60, infohashes=100, sampling_support=0.0, chatter_interval=5))
    r = run_crawl(w, fetch=False, duration=300)
    found = {ih for _, ih, _ in r.trace}
    assert found and found <= w.infohashes


def test_burn_in_is_concave():
    # rate-limited crawler so the burn-in spans several one-second bins
    w = build_world(WorldConfig(seed=1))
    r = run_crawl(w, CrawlerConfig(rate_limit_qps=20), fetch=False, duration=600, stop_when_complete=False)
    # nodes advertise a 60 s re-sample interval; the burn-in wave ends before it
    horizon = 55
    per_s = np.bincount([int(t) for t, _, _ in r.trace if t < horizon], minlength=horizon)
    smooth = np.convolve(per_s, np.ones(SMOOTH) / SMOOTH, mode="valid")
    peak = int(np.argmax(smooth))
    assert peak <= 3
    assert np.all(np.diff(smooth[peak:]) <= 1e-9)
    # afterwards discovery continues at a much lower steady rate
    late = [t for t, _, _ in r.trace if t >= horizon]
    assert late and len(late) / (600 - horizon) < smooth[peak] / 10


def test_trace_is_deterministic(tmp_path):
    a = run_crawl(build_world(WorldConfig(seed=8, loss_rate=0.1)))
    b = run_crawl(build_world(WorldConfig(seed=8, loss_rate=0.1)))
    a.write_trace(tmp_path / "a.csv")
    b.write_trace(tmp_path / "b.csv")
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
    assert sorted(a.metas) == sorted(b.metas)
