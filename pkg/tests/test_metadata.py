import hashlib
import math
import random

import pytest

from swarmcensus import bencode
from swarmcensus.metadata import (PIECE_SIZE, ExtensionUnsupported, FetchError, HandshakeRefused,
                                  HashMismatch, MalformedInfo, MetadataRejected, MetadataSeeder,
                                  PieceTimeout, TorrentMeta, fetch_metadata, make_info)
from swarmcensus.sim.loop import EventLoop
from swarmcensus.sim.world import Network, NodeRuntime

PEER = ("10.0.0.2", 6882)


def big_info():
    files = [(f"dir/file{i:04d}.bin", 1000 + i) for i in range(2000)]
    raw = make_info("many files", files, 16384)
    assert len(raw) > 3 * PIECE_SIZE
    return raw


def fetch_with(seeder_factory, ih, piece_timeout=5.0):
    loop = EventLoop()
    net = Network(loop, random.Random(2), 0.0, 0.02, 0.3)
    if seeder_factory is not None:
        net.tcp[PEER] = seeder_factory
    out = []
    fetch_metadata(NodeRuntime(net, ("10.0.0.1", 6881)), ih, PEER, lambda m, e: out.append((m, e)),
                   piece_timeout=piece_timeout)
    loop.run_until(120)
    assert len(out) == 1, "completion fires exactly once"
    return out[0]


@pytest.mark.parametrize("raw", [make_info("one.mkv", [("one.mkv", 123)]), big_info()])
def test_fetch_ok(raw):
    ih = hashlib.sha1(raw).digest()
    meta, exc = fetch_with(lambda: MetadataSeeder({ih: raw}), ih)
    assert exc is None
    assert meta.raw_info == raw and hashlib.sha1(meta.raw_info).digest() == ih


@pytest.mark.parametrize("mode, error", [
    ("corrupt", HashMismatch), ("no-extension", ExtensionUnsupported),
    ("reject", MetadataRejected), ("silent", PieceTimeout),
])
def test_seeder_failure_modes(mode, error):
    raw = big_info()
    ih = hashlib.sha1(raw).digest()
    meta, exc = fetch_with(lambda: MetadataSeeder({ih: raw}, mode=mode), ih)
    assert meta is None and isinstance(exc, error)


def test_connection_refused_and_unknown_hash():
    raw = make_info("a", [("a", 1)])
    ih = hashlib.sha1(raw).digest()
    _, exc = fetch_with(None, ih)
    assert isinstance(exc, HandshakeRefused)
    _, exc = fetch_with(lambda: MetadataSeeder({}), ih)
    assert isinstance(exc, FetchError)


class _Collector:
    def __init__(self):
        self.writes = []

    def write(self, data):
        self.writes.append(data)


class ReversingSeeder(MetadataSeeder):
    """Answers every metadata request, but sends the pieces in reverse order."""

    def data_received(self, data):
        real, col = self.transport, _Collector()
        self.transport = col
        super().data_received(data)
        self.transport = real
        self.held = getattr(self, "held", [])
        for w in col.writes:
            if self.raw is not None and b"msg_typei1e" in w:
                self.held.append(w)
            else:
                real.write(w)
        n = math.ceil(len(self.raw or b"") / PIECE_SIZE)
        if n and len(self.held) == n:
            for w in reversed(self.held):
                real.write(w)
            self.held = []
            self.reversed_pieces = n


def test_piece_order_does_not_matter():
    raw = big_info()
    ih = hashlib.sha1(raw).digest()
    made = []
    meta, exc = fetch_with(lambda: made.append(ReversingSeeder({ih: raw})) or made[-1], ih)
    assert exc is None and meta.raw_info == raw
    assert made[0].reversed_pieces == math.ceil(len(raw) / PIECE_SIZE) > 1


def test_from_info_bytes_validation():
    raw = make_info("x", [("a/b.txt", 1), ("c.txt", 2)])
    ih = hashlib.sha1(raw).digest()
    meta = TorrentMeta.from_info_bytes(ih, raw)
    assert [f.text for f in meta.files] == ["a/b.txt", "c.txt"]
    assert meta.total_size == 3
    with pytest.raises(HashMismatch):
        TorrentMeta.from_info_bytes(bytes(20), raw)
    bad = bencode.encode({b"name": b"x", b"files": [{b"length": -1, b"path": [b"a"]}]})
    with pytest.raises(MalformedInfo):
        TorrentMeta.from_info_bytes(hashlib.sha1(bad).digest(), bad)


def test_invalid_utf8_path_kept_with_hex_display():
    raw = make_info("x", [(b"caf\xe9.txt", 5), ("ok.txt", 1)])
    meta = TorrentMeta.from_info_bytes(hashlib.sha1(raw).digest(), raw)
    bad, good = meta.files
    assert bad.encoding_failed and bad.text is None
    assert bad.display == b"caf\xe9.txt".hex()
    assert not good.encoding_failed and good.display == "ok.txt"
