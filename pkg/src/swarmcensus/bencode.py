"""Bencode codec.

Values map onto plain Python types: ``int``, ``bytes``, ``list`` and ``dict``
with ``bytes`` keys. Encoding always emits dictionary keys in ascending raw
byte order. Decoding accepts dictionaries whose keys arrive out of order
(torrent files in the wild do this), keeps the received order, and reports
the value as non-canonical instead of rejecting it. Duplicate keys are
always an error.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Union

BValue = Union[int, bytes, list, dict]

MAX_DEPTH = 64
INT64_MIN = -(2**63)
INT64_MAX = 2**63 - 1

_DIGITS = frozenset(b"0123456789")


class BencodeError(ValueError):
    """Malformed bencoded input."""


class DepthLimitError(BencodeError):
    """Nesting deeper than the configured cap."""


@dataclass(frozen=True)
class Decoded:
    value: Any
    consumed: int
    canonical: bool
    # (start, end) offsets of every top-level dict value, keyed by dict key
    spans: dict


class _Decoder:
    __slots__ = ("data", "max_depth", "canonical", "spans")

    def __init__(self, data: bytes, max_depth: int):
        self.data = data
        self.max_depth = max_depth
        self.canonical = True
        self.spans: dict = {}

    def decode(self, pos: int, depth: int) -> tuple[Any, int]:
        data = self.data
        if pos >= len(data):
            raise BencodeError(f"truncated input at offset {pos}")
        c = data[pos]
        if c == 0x69:  # i
            return self._int(pos)
        if c in _DIGITS:
            return self._bytes(pos)
        if c == 0x6C or c == 0x64:  # l, d
            if depth >= self.max_depth:
                raise DepthLimitError(f"nesting exceeds {self.max_depth}")
            if c == 0x6C:
                return self._list(pos, depth)
            return self._dict(pos, depth)
        raise BencodeError(f"unexpected byte {bytes([c])!r} at offset {pos}")

    def _int(self, pos: int) -> tuple[int, int]:
        data = self.data
        end = data.find(b"e", pos + 1)
        if end < 0:
            raise BencodeError("unterminated integer")
        lit = data[pos + 1:end]
        digits = lit[1:] if lit[:1] == b"-" else lit
        if not digits or not all(b in _DIGITS for b in digits):
            raise BencodeError(f"bad integer literal {lit!r}")
        if digits[0] == 0x30 and (len(digits) > 1 or lit[:1] == b"-"):
            raise BencodeError(f"non-canonical integer literal {lit!r}")
        # bound the literal length before int() so huge inputs stay cheap
        if len(digits) > 19:
            raise BencodeError(f"integer out of 64-bit range: {lit[:24]!r}")
        value = int(lit)
        if not INT64_MIN <= value <= INT64_MAX:
            raise BencodeError(f"integer out of 64-bit range: {lit!r}")
        return value, end + 1

    def _bytes(self, pos: int) -> tuple[bytes, int]:
        data = self.data
        colon = data.find(b":", pos)
        if colon < 0:
            raise BencodeError("byte string missing ':'")
        lit = data[pos:colon]
        if not lit or not all(b in _DIGITS for b in lit):
            raise BencodeError(f"bad string length {lit[:24]!r}")
        if lit[0] == 0x30 and len(lit) > 1:
            raise BencodeError(f"non-canonical string length {lit!r}")
        n = int(lit)
        start = colon + 1
        if start + n > len(data):
            raise BencodeError("truncated byte string")
        return bytes(data[start:start + n]), start + n

    def _list(self, pos: int, depth: int) -> tuple[list, int]:
        out = []
        pos += 1
        data = self.data
        while True:
            if pos >= len(data):
                raise BencodeError("unterminated list")
            if data[pos] == 0x65:
                return out, pos + 1
            item, pos = self.decode(pos, depth + 1)
            out.append(item)

    def _dict(self, pos: int, depth: int) -> tuple[dict, int]:
        out: dict = {}
        pos += 1
        data = self.data
        prev = None
        while True:
            if pos >= len(data):
                raise BencodeError("unterminated dictionary")
            if data[pos] == 0x65:
                return out, pos + 1
            if data[pos] not in _DIGITS:
                raise BencodeError("dictionary key is not a byte string")
            key, pos = self._bytes(pos)
            if key in out:
                raise BencodeError(f"duplicate dictionary key {key!r}")
            if prev is not None and key < prev:
                self.canonical = False
            prev = key
            start = pos
            out[key], pos = self.decode(pos, depth + 1)
            if depth == 0:
                self.spans[key] = (start, pos)


def decode_ex(data: bytes, max_depth: int = MAX_DEPTH) -> Decoded:
    """Decode the first value in ``data`` and report canonicity and spans.

    ``spans`` maps each key of a top-level dictionary to the offsets of its
    value, so callers can hash the exact bytes a peer sent (the ``info``
    dictionary of a torrent file, for instance).
    """
    data = bytes(data)
    if not data:
        raise BencodeError("empty input")
    dec = _Decoder(data, max_depth)
    value, end = dec.decode(0, 0)
    return Decoded(value, end, dec.canonical, dec.spans)


def decode(data: bytes, max_depth: int = MAX_DEPTH) -> tuple[Any, int]:
    """Return ``(value, consumed)`` for the first value in ``data``.

    Trailing bytes are left for the caller to judge.
    """
    d = decode_ex(data, max_depth)
    return d.value, d.consumed


def loads(data: bytes, max_depth: int = MAX_DEPTH) -> Any:
    """Decode ``data`` and require that it holds exactly one value."""
    value, n = decode(data, max_depth)
    if n != len(data):
        raise BencodeError(f"{len(data) - n} trailing bytes")
    return value


def _encode(value: Any, out: list) -> None:
    if isinstance(value, bool):
        raise TypeError("bool is not a bencode type")
    if isinstance(value, int):
        if not INT64_MIN <= value <= INT64_MAX:
            raise ValueError(f"integer out of 64-bit range: {value}")
        out.append(b"i%de" % value)
    elif isinstance(value, (bytes, bytearray, memoryview)):
        value = bytes(value)
        out.append(b"%d:" % len(value))
        out.append(value)
    elif isinstance(value, str):
        _encode(value.encode("utf-8"), out)
    elif isinstance(value, (list, tuple)):
        out.append(b"l")
        for item in value:
            _encode(item, out)
        out.append(b"e")
    elif isinstance(value, dict):
        out.append(b"d")
        keys = [(_key(k), k) for k in value]
        keys.sort(key=lambda kv: kv[0])
        for i in range(1, len(keys)):
            if keys[i][0] == keys[i - 1][0]:
                raise ValueError(f"duplicate key {keys[i][0]!r}")
        for raw, k in keys:
            out.append(b"%d:" % len(raw))
            out.append(raw)
            _encode(value[k], out)
        out.append(b"e")
    else:
        raise TypeError(f"cannot bencode {type(value).__name__}")


def _key(k: Any) -> bytes:
    if isinstance(k, str):
        return k.encode("utf-8")
    if isinstance(k, (bytes, bytearray, memoryview)):
        return bytes(k)
    raise TypeError(f"dictionary keys must be bytes or str, not {type(k).__name__}")


def encode(value: Any) -> bytes:
    """Canonical encoding. ``str`` is accepted as UTF-8 shorthand for bytes."""
    out: list = []
    _encode(value, out)
    return b"".join(out)


dumps = encode
