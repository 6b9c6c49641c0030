"""Torrent metadata: info-dictionary decoding and peer-wire metadata exchange.

The exchange follows the extension protocol: a 68-byte handshake with
reserved bit 0x10 in byte 5, an extended handshake advertising
``ut_metadata`` and ``metadata_size``, then 16 KiB piece requests.
:class:`MetadataClient` and :class:`MetadataSeeder` are asyncio-style
protocols, so they run over a real socket or the simulator unchanged.
"""

from __future__ import annotations

import hashlib
import logging
import math
import struct
from dataclasses import dataclass
from typing import Callable

from . import bencode

log = logging.getLogger(__name__)

PSTR = b"BitTorrent protocol"
HANDSHAKE_LEN = 68
PIECE_SIZE = 16384
MSG_EXTENDED = 20
EXT_HANDSHAKE = 0
UT_METADATA = b"ut_metadata"
LOCAL_UT_METADATA_ID = 3
REQUEST, DATA, REJECT = 0, 1, 2
MAX_METADATA_SIZE = 8 * 1024 * 1024
MAX_MESSAGE = PIECE_SIZE + 4096


class FetchError(Exception):
    """Base for metadata retrieval failures."""


class HandshakeRefused(FetchError):
    pass


class ExtensionUnsupported(FetchError):
    pass


class PieceTimeout(FetchError):
    pass


class MetadataRejected(FetchError):
    pass


class HashMismatch(FetchError):
    pass


class MalformedInfo(FetchError):
    pass


@dataclass(frozen=True)
class FileEntry:
    path: tuple  # raw byte components
    size: int
    text: str | None  # '/'-joined UTF-8 decoding, None when it failed

    @property
    def encoding_failed(self) -> bool:
        return self.text is None

    @property
    def display(self) -> str:
        """Text path, or the hex of the raw path when decoding failed."""
        if self.text is not None:
            return self.text
        return "/".join(c.hex() for c in self.path)


@dataclass(frozen=True)
class TorrentMeta:
    infohash: bytes
    name: bytes
    files: tuple
    piece_length: int
    raw_info: bytes

    @property
    def total_size(self) -> int:
        return sum(f.size for f in self.files)

    @property
    def name_text(self) -> str:
        try:
            return self.name.decode("utf-8")
        except UnicodeDecodeError:
            return self.name.hex()

    @classmethod
    def from_info_bytes(cls, infohash: bytes, raw: bytes) -> "TorrentMeta":
        """Validate ``raw`` against ``infohash`` and decode it."""
        if hashlib.sha1(raw).digest() != infohash:
            raise HashMismatch("metadata digest does not match infohash")
        try:
            info = bencode.loads(raw)
        except bencode.BencodeError as exc:
            raise MalformedInfo(f"info is not valid bencode: {exc}") from exc
        if not isinstance(info, dict):
            raise MalformedInfo("info is not a dictionary")
        files = decode_file_entries(info)
        plen = info.get(b"piece length", 0)
        if not isinstance(plen, int) or plen < 0:
            raise MalformedInfo("bad piece length")
        return cls(infohash, info[b"name"], tuple(files), plen, bytes(raw))


def _text(parts) -> str | None:
    try:
        return "/".join(p.decode("utf-8") for p in parts)
    except UnicodeDecodeError:
        return None


def decode_file_entries(info: dict) -> list[FileEntry]:
    """Normalized file list of an info dictionary.

    Single-file torrents become one entry named after the torrent.
    """
    name = info.get(b"name")
    if not isinstance(name, bytes):
        raise MalformedInfo("missing name")
    if b"files" in info:
        files = info[b"files"]
        if not isinstance(files, list):
            raise MalformedInfo("files is not a list")
        out = []
        for f in files:
            if not isinstance(f, dict):
                raise MalformedInfo("file entry is not a dictionary")
            path = f.get(b"path")
            size = f.get(b"length")
            if (not isinstance(path, list) or not path
                    or not all(isinstance(p, bytes) for p in path)):
                raise MalformedInfo("bad file path")
            if not isinstance(size, int) or size < 0:
                raise MalformedInfo("bad file length")
            out.append(FileEntry(tuple(path), size, _text(path)))
        return out
    size = info.get(b"length")
    if not isinstance(size, int) or size < 0:
        raise MalformedInfo("single-file torrent without valid length")
    return [FileEntry((name,), size, _text([name]))]


def make_info(name: str | bytes, files, piece_length: int = 262144) -> bytes:
    """Build the bencoded info dict for ``files`` = [(path, size)] (path may contain '/').

    A single file whose path equals ``name`` yields a single-file torrent.
    """
    bname = name.encode() if isinstance(name, str) else name
    pieces_len = 20 * max(1, math.ceil(sum(s for _, s in files) / piece_length))
    info: dict = {b"name": bname, b"piece length": piece_length}
    norm = [((p.encode() if isinstance(p, str) else p), s) for p, s in files]
    if len(norm) == 1 and norm[0][0] == bname:
        info[b"length"] = norm[0][1]
    else:
        info[b"files"] = [{b"length": s, b"path": p.split(b"/")} for p, s in norm]
    # placeholder piece hashes: content is never exchanged
    info[b"pieces"] = hashlib.sha1(bname).digest() * (pieces_len // 20)
    return bencode.encode(info)


# ------------------------------------------------------------------ wire helpers

def handshake(infohash: bytes, peer_id: bytes, extensions: bool = True) -> bytes:
    reserved = bytearray(8)
    if extensions:
        reserved[5] |= 0x10
    return bytes([len(PSTR)]) + PSTR + bytes(reserved) + infohash + peer_id


def ext_message(ext_id: int, payload: dict, tail: bytes = b"") -> bytes:
    body = bytes([MSG_EXTENDED, ext_id]) + bencode.encode(payload) + tail
    return struct.pack("!I", len(body)) + body


class _Framer:
    """Splits a peer-wire byte stream into the handshake and length-prefixed messages."""

    def __init__(self):
        self.buf = bytearray()
        self.shook = False

    def feed(self, data: bytes):
        self.buf += data
        out = []
        if not self.shook:
            if len(self.buf) < HANDSHAKE_LEN:
                return out
            out.append(("handshake", bytes(self.buf[:HANDSHAKE_LEN])))
            del self.buf[:HANDSHAKE_LEN]
            self.shook = True
        while len(self.buf) >= 4:
            (n,) = struct.unpack("!I", self.buf[:4])
            if n > MAX_MESSAGE:
                raise FetchError(f"peer message of {n} bytes exceeds limit")
            if len(self.buf) < 4 + n:
                break
            body = bytes(self.buf[4:4 + n])
            del self.buf[:4 + n]
            if n:
                out.append(("message", body))
        return out


def _parse_handshake(raw: bytes):
    if raw[0] != len(PSTR) or raw[1:20] != PSTR:
        raise HandshakeRefused("not a BitTorrent handshake")
    return raw[20:28], raw[28:48], raw[48:68]


# ------------------------------------------------------------------ client

class MetadataClient:
    """Fetch one info dictionary from one peer.

    ``on_done(meta, exc)`` fires exactly once; the transport is closed
    before it does.
    """

    def __init__(self, runtime, infohash: bytes, peer_id: bytes, on_done: Callable, *,
                 total_timeout: float = 30.0, piece_timeout: float = 5.0):
        self.rt = runtime
        self.infohash = infohash
        self.peer_id = peer_id
        self.on_done = on_done
        self.total_timeout = total_timeout
        self.piece_timeout = piece_timeout
        self.transport = None
        self.framer = _Framer()
        self.remote_ext_id: int | None = None
        self.size: int | None = None
        self.pieces: dict[int, bytes] = {}
        self.finished = False
        self._timers: list = []
        self._piece_timer = None

    # asyncio protocol surface
    def connection_made(self, transport) -> None:
        self.transport = transport
        self._timers.append(self.rt.call_later(self.total_timeout, self._fail,
                                               PieceTimeout("metadata fetch exceeded total timeout")))
        self._arm_piece_timer("handshake")
        transport.write(handshake(self.infohash, self.peer_id))
        transport.write(ext_message(EXT_HANDSHAKE, {b"m": {UT_METADATA: LOCAL_UT_METADATA_ID}}))

    def data_received(self, data: bytes) -> None:
        if self.finished:
            return
        try:
            for kind, body in self.framer.feed(data):
                self._handle(kind, body)
                if self.finished:
                    return
        except FetchError as exc:
            self._fail(exc)
        except (bencode.BencodeError, ValueError, KeyError) as exc:
            self._fail(FetchError(f"protocol violation: {exc}"))

    def connection_lost(self, exc) -> None:
        if self.finished:
            return
        if not self.framer.shook:
            self._fail(HandshakeRefused(f"connection failed before handshake: {exc}"))
        elif self.remote_ext_id is None:
            self._fail(ExtensionUnsupported("peer closed without extended handshake"))
        else:
            self._fail(FetchError(f"connection lost: {exc}"))

    def eof_received(self):
        return False

    # internals
    def _arm_piece_timer(self, what: str) -> None:
        if self._piece_timer is not None:
            self._piece_timer.cancel()
        self._piece_timer = self.rt.call_later(self.piece_timeout, self._fail,
                                               PieceTimeout(f"timed out waiting for {what}"))

    def _handle(self, kind: str, body: bytes) -> None:
        if kind == "handshake":
            reserved, ih, _ = _parse_handshake(body)
            if ih != self.infohash:
                raise HandshakeRefused("peer answered for a different infohash")
            if not reserved[5] & 0x10:
                raise ExtensionUnsupported("peer does not support the extension protocol")
            self._arm_piece_timer("extended handshake")
            return
        if body[0] != MSG_EXTENDED or len(body) < 2:
            return  # bitfield, have, unchoke ... are irrelevant here
        ext_id = body[1]
        if ext_id == EXT_HANDSHAKE:
            payload, _ = bencode.decode(body[2:])
            m = payload.get(b"m") if isinstance(payload, dict) else None
            remote = m.get(UT_METADATA) if isinstance(m, dict) else None
            size = payload.get(b"metadata_size") if isinstance(payload, dict) else None
            if not isinstance(remote, int) or remote <= 0:
                raise ExtensionUnsupported("peer does not offer ut_metadata")
            if not isinstance(size, int) or not 0 < size <= MAX_METADATA_SIZE:
                raise ExtensionUnsupported("peer did not advertise a usable metadata_size")
            self.remote_ext_id = remote
            self.size = size
            for i in range(math.ceil(size / PIECE_SIZE)):
                self.transport.write(ext_message(remote, {b"msg_type": REQUEST, b"piece": i}))
            self._arm_piece_timer("piece")
            return
        if ext_id != LOCAL_UT_METADATA_ID or self.size is None:
            return
        payload, used = bencode.decode(body[2:])
        mtype = payload.get(b"msg_type")
        piece = payload.get(b"piece")
        n_pieces = math.ceil(self.size / PIECE_SIZE)
        if not isinstance(piece, int) or not 0 <= piece < n_pieces:
            raise FetchError("piece index out of range")
        if mtype == REJECT:
            raise MetadataRejected(f"peer rejected piece {piece}")
        if mtype != DATA:
            return
        chunk = body[2 + used:]
        expected = min(PIECE_SIZE, self.size - piece * PIECE_SIZE)
        if len(chunk) != expected:
            raise FetchError(f"piece {piece} has {len(chunk)} bytes, expected {expected}")
        self.pieces[piece] = chunk
        self._arm_piece_timer("piece")
        if len(self.pieces) == n_pieces:
            raw = b"".join(self.pieces[i] for i in range(n_pieces))
            meta = TorrentMeta.from_info_bytes(self.infohash, raw)
            self._succeed(meta)

    def _close(self) -> None:
        self.finished = True
        for t in self._timers:
            t.cancel()
        if self._piece_timer is not None:
            self._piece_timer.cancel()
        if self.transport is not None:
            self.transport.close()

    def _succeed(self, meta: TorrentMeta) -> None:
        self._close()
        self.on_done(meta, None)

    def _fail(self, exc: Exception) -> None:
        if self.finished:
            return
        self._close()
        self.on_done(None, exc)


def fetch_metadata(runtime, infohash: bytes, peer: tuple, on_done: Callable, *,
                   peer_id: bytes = b"-SC0001-000000000000", timeout: float = 30.0,
                   piece_timeout: float = 5.0) -> MetadataClient:
    """Open a connection to ``peer`` and fetch ``infohash``'s metadata."""
    client = MetadataClient(runtime, infohash, peer_id, on_done, total_timeout=timeout,
                            piece_timeout=piece_timeout)
    runtime.connect(tuple(peer), client)
    return client


async def fetch_metadata_async(infohash: bytes, peer: tuple, timeout: float = 30.0,
                               piece_timeout: float = 5.0) -> TorrentMeta:
    """Coroutine form over a real TCP connection."""
    import asyncio

    from .runtime import LiveRuntime

    loop = asyncio.get_running_loop()
    fut = loop.create_future()

    def done(meta, exc):
        if not fut.done():
            fut.set_exception(exc) if exc is not None else fut.set_result(meta)

    fetch_metadata(LiveRuntime(loop), infohash, peer, done, timeout=timeout,
                   piece_timeout=piece_timeout)
    return await fut


# ------------------------------------------------------------------ serving side

class MetadataSeeder:
    """Serve a single info dictionary over the metadata extension.

    ``mode`` selects behavior for testing and simulation: ``"ok"``,
    ``"no-extension"`` (handshake without the extension bit), ``"corrupt"``
    (flip one byte of piece 0), ``"reject"`` or ``"silent"``.
    """

    def __init__(self, library: dict, peer_id: bytes = b"-SCSEED-000000000000", mode: str = "ok"):
        self.library = library  # infohash -> raw info bytes
        self.peer_id = peer_id
        self.mode = mode
        self.framer = _Framer()
        self.transport = None
        self.raw: bytes | None = None
        self.remote_ext_id: int | None = None

    def connection_made(self, transport) -> None:
        self.transport = transport

    def data_received(self, data: bytes) -> None:
        if self.mode == "silent":
            return
        try:
            msgs = self.framer.feed(data)
        except FetchError:
            self.transport.close()
            return
        for kind, body in msgs:
            if kind == "handshake":
                try:
                    _, ih, _ = _parse_handshake(body)
                except HandshakeRefused:
                    self.transport.close()
                    return
                self.raw = self.library.get(ih)
                if self.raw is None:
                    self.transport.close()
                    return
                ext = self.mode != "no-extension"
                self.transport.write(handshake(ih, self.peer_id, extensions=ext))
                if ext:
                    self.transport.write(ext_message(EXT_HANDSHAKE, {
                        b"m": {UT_METADATA: 1}, b"metadata_size": len(self.raw)}))
                continue
            if self.mode == "no-extension" or body[0] != MSG_EXTENDED:
                continue
            try:
                payload, _ = bencode.decode(body[2:])
            except bencode.BencodeError:
                continue
            if body[1] == EXT_HANDSHAKE:
                m = payload.get(b"m", {}) if isinstance(payload, dict) else {}
                self.remote_ext_id = m.get(UT_METADATA) if isinstance(m, dict) else None
                continue
            if body[1] != 1 or not isinstance(payload, dict) or payload.get(b"msg_type") != REQUEST:
                continue
            piece = payload.get(b"piece")
            reply_id = self.remote_ext_id or LOCAL_UT_METADATA_ID
            if self.mode == "reject" or not isinstance(piece, int):
                self.transport.write(ext_message(reply_id, {b"msg_type": REJECT, b"piece": piece or 0}))
                continue
            chunk = self.raw[piece * PIECE_SIZE:(piece + 1) * PIECE_SIZE]
            if self.mode == "corrupt" and piece == 0 and chunk:
                chunk = bytes([chunk[0] ^ 0x01]) + chunk[1:]
            self.transport.write(ext_message(reply_id, {
                b"msg_type": DATA, b"piece": piece, b"total_size": len(self.raw)}, chunk))

    def connection_lost(self, exc) -> None:
        self.transport = None

    def eof_received(self):
        return False
