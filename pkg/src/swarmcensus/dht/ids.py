"""160-bit identifiers, the XOR metric, and compact address encodings."""

from __future__ import annotations

import ipaddress
import random
import socket
import struct
from typing import Iterable, NamedTuple

ID_LEN = 20
ID_BITS = 160
COMPACT_NODE_LEN = 26
COMPACT_PEER_LEN = 6

Address = tuple  # (ipv4 text, port)


class Contact(NamedTuple):
    node_id: bytes
    addr: Address


def check_id(value: bytes) -> bytes:
    if not isinstance(value, (bytes, bytearray)) or len(value) != ID_LEN:
        raise ValueError(f"identifier must be {ID_LEN} bytes")
    return bytes(value)


def xor_distance(a: bytes, b: bytes) -> int:
    """XOR of two ids read as an unsigned big-endian integer."""
    return int.from_bytes(check_id(a), "big") ^ int.from_bytes(check_id(b), "big")


def shared_prefix_len(a: bytes, b: bytes) -> int:
    """Number of leading bits ``a`` and ``b`` have in common (160 when equal)."""
    d = xor_distance(a, b)
    return ID_BITS - d.bit_length()


def random_id(rng: random.Random | None = None) -> bytes:
    rng = rng or random.SystemRandom()
    return rng.getrandbits(ID_BITS).to_bytes(ID_LEN, "big")


def id_in_bucket(own: bytes, prefix: int, rng: random.Random) -> bytes:
    """A random id sharing exactly ``prefix`` leading bits with ``own``."""
    base = int.from_bytes(own, "big")
    flip = 1 << (ID_BITS - 1 - prefix)
    low = rng.getrandbits(ID_BITS - 1 - prefix) if prefix < ID_BITS - 1 else 0
    keep = base & ~((flip << 1) - 1) & ((1 << ID_BITS) - 1)
    return (keep | ((base & flip) ^ flip) | low).to_bytes(ID_LEN, "big")


def pack_addr(addr: Address) -> bytes:
    ip, port = addr
    return socket.inet_aton(ip) + struct.pack("!H", port)


def unpack_addr(raw: bytes) -> Address:
    if len(raw) != COMPACT_PEER_LEN:
        raise ValueError("compact peer must be 6 bytes")
    return socket.inet_ntoa(raw[:4]), struct.unpack("!H", raw[4:])[0]


def pack_nodes(contacts: Iterable[Contact]) -> bytes:
    return b"".join(c.node_id + pack_addr(c.addr) for c in contacts)


def unpack_nodes(raw: bytes) -> list[Contact]:
    if len(raw) % COMPACT_NODE_LEN:
        raise ValueError("compact node info length not a multiple of 26")
    out = []
    for i in range(0, len(raw), COMPACT_NODE_LEN):
        chunk = raw[i:i + COMPACT_NODE_LEN]
        out.append(Contact(chunk[:20], unpack_addr(chunk[20:])))
    return out


def valid_addr(addr) -> bool:
    try:
        ip, port = addr
        ipaddress.IPv4Address(ip)
    except (TypeError, ValueError):
        return False
    return 0 < port < 65536
