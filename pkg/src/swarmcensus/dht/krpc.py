"""KRPC message model on top of bencode, plus announce tokens."""

from __future__ import annotations

import hashlib
import hmac
from dataclasses import dataclass, field

from .. import bencode

QUERY, RESPONSE, ERROR = "q", "r", "e"
METHODS = ("ping", "find_node", "get_peers", "announce_peer", "sample_infohashes")

GENERIC_ERROR = 201
SERVER_ERROR = 202
PROTOCOL_ERROR = 203
METHOD_UNKNOWN = 204


class KrpcError(ValueError):
    """A datagram that is not a well-formed KRPC message."""


@dataclass
class KrpcMessage:
    tid: bytes
    kind: str
    method: str | None = None
    args: dict = field(default_factory=dict)
    error: tuple | None = None  # (code, text)
    addr: tuple | None = None
    version: bytes | None = None

    @classmethod
    def query(cls, tid: bytes, method: str, args: dict) -> "KrpcMessage":
        return cls(tid, QUERY, method, args)

    @classmethod
    def response(cls, tid: bytes, values: dict) -> "KrpcMessage":
        return cls(tid, RESPONSE, args=values)

    @classmethod
    def fail(cls, tid: bytes, code: int, text: str) -> "KrpcMessage":
        return cls(tid, ERROR, error=(code, text))

    def to_bytes(self) -> bytes:
        msg: dict = {b"t": self.tid, b"y": self.kind.encode()}
        if self.kind == QUERY:
            msg[b"q"] = self.method.encode()
            msg[b"a"] = self.args
        elif self.kind == RESPONSE:
            msg[b"r"] = self.args
        else:
            code, text = self.error
            msg[b"e"] = [code, text.encode()]
        if self.version is not None:
            msg[b"v"] = self.version
        return bencode.encode(msg)

    @classmethod
    def from_bytes(cls, data: bytes, addr: tuple | None = None) -> "KrpcMessage":
        try:
            msg = bencode.loads(data)
        except bencode.BencodeError as exc:
            raise KrpcError(str(exc)) from exc
        if not isinstance(msg, dict):
            raise KrpcError("message is not a dictionary")
        tid = msg.get(b"t")
        kind = msg.get(b"y")
        if not isinstance(tid, bytes) or kind not in (b"q", b"r", b"e"):
            raise KrpcError("missing transaction id or message type")
        version = msg.get(b"v") if isinstance(msg.get(b"v"), bytes) else None
        if kind == b"q":
            method = msg.get(b"q")
            args = msg.get(b"a")
            if not isinstance(method, bytes) or not isinstance(args, dict):
                raise KrpcError("query without method or arguments")
            return cls(tid, QUERY, method.decode("latin-1"), args, addr=addr, version=version)
        if kind == b"r":
            values = msg.get(b"r")
            if not isinstance(values, dict):
                raise KrpcError("response without values")
            return cls(tid, RESPONSE, args=values, addr=addr, version=version)
        err = msg.get(b"e")
        if (not isinstance(err, list) or len(err) < 2 or not isinstance(err[0], int)
                or not isinstance(err[1], bytes)):
            raise KrpcError("malformed error payload")
        return cls(tid, ERROR, error=(err[0], err[1].decode("utf-8", "replace")), addr=addr, version=version)


class TokenManager:
    """HMAC tokens bound to the requester IP, rotated every ``period`` seconds.

    A token from the previous period is still honored.
    """

    def __init__(self, secret: bytes, period: float = 300.0):
        self.secret = secret
        self.period = period

    def _token(self, ip: str, epoch: int) -> bytes:
        msg = ip.encode() + epoch.to_bytes(8, "big", signed=True)
        return hmac.new(self.secret, msg, hashlib.sha1).digest()[:8]

    def issue(self, ip: str, now: float) -> bytes:
        return self._token(ip, int(now // self.period))

    def check(self, token: bytes, ip: str, now: float) -> bool:
        epoch = int(now // self.period)
        return any(hmac.compare_digest(token, self._token(ip, e)) for e in (epoch, epoch - 1))
