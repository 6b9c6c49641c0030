"""Kademlia routing table with one k-bucket per shared-prefix length."""

from __future__ import annotations

import enum
from dataclasses import dataclass

from .ids import ID_BITS, Contact, check_id, shared_prefix_len, xor_distance

K = 8
QUESTIONABLE_AFTER = 15 * 60.0
BAD_AFTER_FAILURES = 2


class Liveness(enum.Enum):
    GOOD = "good"
    QUESTIONABLE = "questionable"
    BAD = "bad"


class InsertOutcome(enum.Enum):
    ADDED = "added"
    UPDATED = "updated"
    REPLACED_BAD = "replaced-bad"
    BUCKET_FULL_DROPPED = "bucket-full-dropped"


@dataclass
class Entry:
    node_id: bytes
    addr: tuple
    last_seen: float
    failures: int = 0

    def liveness(self, now: float) -> Liveness:
        if self.failures >= BAD_AFTER_FAILURES:
            return Liveness.BAD
        if now - self.last_seen > QUESTIONABLE_AFTER:
            return Liveness.QUESTIONABLE
        return Liveness.GOOD

    @property
    def contact(self) -> Contact:
        return Contact(self.node_id, self.addr)


class RoutingTable:
    def __init__(self, own_id: bytes, k: int = K):
        if k < 1:
            raise ValueError("k must be positive")
        self.own_id = check_id(own_id)
        self.k = k
        self.buckets: list[list[Entry]] = [[] for _ in range(ID_BITS)]
        self._index: dict[bytes, Entry] = {}

    def __len__(self) -> int:
        return len(self._index)

    def __contains__(self, node_id: bytes) -> bool:
        return node_id in self._index

    def bucket_index(self, node_id: bytes) -> int:
        return shared_prefix_len(self.own_id, node_id)

    def get(self, node_id: bytes) -> Entry | None:
        return self._index.get(node_id)

    def insert(self, contact: Contact, now: float = 0.0) -> InsertOutcome:
        node_id = check_id(contact.node_id)
        if node_id == self.own_id:
            raise ValueError("cannot insert own id into routing table")
        entry = self._index.get(node_id)
        if entry is not None:
            entry.addr = contact.addr
            entry.last_seen = max(entry.last_seen, now)
            entry.failures = 0
            return InsertOutcome.UPDATED
        bucket = self.buckets[self.bucket_index(node_id)]
        new = Entry(node_id, contact.addr, now)
        if len(bucket) < self.k:
            bucket.append(new)
            self._index[node_id] = new
            return InsertOutcome.ADDED
        bad = [e for e in bucket if e.liveness(now) is Liveness.BAD]
        if not bad:
            return InsertOutcome.BUCKET_FULL_DROPPED
        victim = min(bad, key=lambda e: (e.last_seen, e.node_id))
        bucket[bucket.index(victim)] = new
        del self._index[victim.node_id]
        self._index[node_id] = new
        return InsertOutcome.REPLACED_BAD

    def mark_seen(self, node_id: bytes, now: float) -> None:
        entry = self._index.get(node_id)
        if entry is not None:
            entry.last_seen = max(entry.last_seen, now)
            entry.failures = 0

    def mark_failed(self, node_id: bytes) -> None:
        entry = self._index.get(node_id)
        if entry is not None:
            entry.failures += 1

    def remove(self, node_id: bytes) -> bool:
        entry = self._index.pop(node_id, None)
        if entry is None:
            return False
        self.buckets[self.bucket_index(node_id)].remove(entry)
        return True

    def entries(self):
        for bucket in self.buckets:
            yield from bucket

    def closest(self, target: bytes, count: int | None = None, now: float | None = None) -> list[Contact]:
        """Known contacts ordered by XOR distance to ``target``; bad entries skipped when ``now`` given."""
        count = self.k if count is None else count
        pool = self._index.values()
        if now is not None:
            pool = [e for e in pool if e.liveness(now) is not Liveness.BAD]
        ranked = sorted(pool, key=lambda e: xor_distance(e.node_id, target))
        return [e.contact for e in ranked[:count]]

    def check_invariants(self) -> None:
        seen = set()
        for i, bucket in enumerate(self.buckets):
            assert len(bucket) <= self.k, f"bucket {i} over capacity"
            for e in bucket:
                assert self.bucket_index(e.node_id) == i, "contact in wrong bucket"
                assert e.node_id not in seen, "duplicate node id"
                seen.add(e.node_id)
        assert seen == set(self._index)
