"""Routing table: 256 XOR-prefix buckets ordered least-recently-seen first."""

from __future__ import annotations

import heapq
from dataclasses import dataclass

from ..multiformats import Multiaddr, Multihash

DEFAULT_K = 20


def node_int(node_id: Multihash) -> int:
    """256-bit key for a node: digest bytes padded/truncated to 32 bytes."""
    digest = node_id.digest[:32].ljust(32, b"\x00")
    return int.from_bytes(digest, "big")


def shared_prefix_bits(a: int, b: int) -> int:
    xor = a ^ b
    if xor == 0:
        return 256
    return 256 - xor.bit_length()


@dataclass
class TableEntry:
    node_id: Multihash
    addr: Multiaddr
    last_seen: float


class RoutingTable:
    """Bucket i holds peers sharing exactly i leading bits with the owner."""

    def __init__(self, owner: Multihash, k: int = DEFAULT_K):
        self.owner = owner
        self.owner_int = node_int(owner)
        self.k = k
        self.buckets: list[list[TableEntry]] = [[] for _ in range(256)]
        self._index: dict[bytes, tuple[int, TableEntry]] = {}

    def __len__(self) -> int:
        return len(self._index)

    def __contains__(self, node_id: Multihash) -> bool:
        return node_id.encode() in self._index

    def addr_of(self, node_id: Multihash):
        found = self._index.get(node_id.encode())
        return found[1].addr if found else None

    def update(self, node_id: Multihash, addr: Multiaddr, now: float) -> bool:
        """Refresh or insert a peer; full buckets keep their older residents."""
        if node_id == self.owner:
            return False
        raw = node_id.encode()
        found = self._index.get(raw)
        if found is not None:
            bucket_idx, entry = found
            bucket = self.buckets[bucket_idx]
            bucket.remove(entry)
            entry.addr = addr
            entry.last_seen = now
            bucket.append(entry)  # most recently seen last
            return True
        bucket_idx = shared_prefix_bits(self.owner_int, node_int(node_id))
        bucket = self.buckets[bucket_idx]
        if len(bucket) >= self.k:
            return False  # prefer long-lived entries
        entry = TableEntry(node_id, addr, now)
        bucket.append(entry)
        self._index[raw] = (bucket_idx, entry)
        return True

    def remove(self, node_id: Multihash) -> None:
        found = self._index.pop(node_id.encode(), None)
        if found is not None:
            bucket_idx, entry = found
            self.buckets[bucket_idx].remove(entry)

    def entries(self) -> list[TableEntry]:
        out = []
        for bucket in self.buckets:
            out.extend(bucket)
        return out

    def closest(self, target_int: int, n: int) -> list[TableEntry]:
        """The n entries nearest the target by XOR distance."""
        return heapq.nsmallest(
            n,
            self.entries(),
            key=lambda e: (node_int(e.node_id) ^ target_int, e.node_id.encode()),
        )

    def audit(self) -> list[str]:
        """Bucket-invariant walk; returns violations (empty when healthy)."""
        problems = []
        seen: set[bytes] = set()
        for idx, bucket in enumerate(self.buckets):
            if len(bucket) > self.k:
                problems.append(f"bucket {idx} over capacity")
            for entry in bucket:
                raw = entry.node_id.encode()
                if raw in seen:
                    problems.append(f"duplicate entry {entry.node_id}")
                seen.add(raw)
                actual = shared_prefix_bits(self.owner_int, node_int(entry.node_id))
                if actual != idx:
                    problems.append(
                        f"entry {entry.node_id} shares {actual} bits but sits in bucket {idx}"
                    )
            for earlier, later in zip(bucket, bucket[1:]):
                if earlier.last_seen > later.last_seen:
                    problems.append(f"bucket {idx} not in least-recently-seen order")
        return problems
