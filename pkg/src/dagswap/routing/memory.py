"""Trivial routing backend: one shared in-process table.

Implements the same surface as the DHT, minus the network: useful for a
single local node (the batch CLI) and as ground truth in tests.  Records go
through the same validation as DHT storers, so the two backends agree on
what is admissible.
"""

from __future__ import annotations

from typing import Callable, Optional

from .. import identity as identity_mod
from ..errors import ValueTooLarge
from ..multiformats import Multiaddr, Multihash
from .records import (
    PROVIDER_EXPIRY_MS,
    ProviderRecord,
    ProviderStore,
    SmallValueRecord,
    ValueStore,
    make_value_record,
)


class MemoryRoutingHub:
    """Shared state behind every MemoryRouting handle."""

    def __init__(self, clock: Optional[Callable[[], float]] = None):
        self.clock = clock or (lambda: 0.0)
        self.peers: dict[bytes, tuple[Multihash, Multiaddr]] = {}
        self.values = ValueStore()
        self.providers = ProviderStore()

    def register(self, node_id: Multihash, addr: Multiaddr) -> None:
        self.peers[node_id.encode()] = (node_id, addr)


class MemoryRouting:
    """Pre-node handle bound to an identity; the swappable routing interface."""

    def __init__(self, hub: MemoryRoutingHub, ident: identity_mod.NodeIdentity,
                 addr: Multiaddr):
        self.hub = hub
        self.identity = ident
        self.addr = addr
        self._sequences: dict[bytes, int] = {}
        hub.register(ident.node_id, addr)

    # -- peers ------------------------------------------------------------

    def find_peer(self, target: Multihash) -> Optional[Multiaddr]:
        if target == self.identity.node_id:
            return self.addr
        found = self.hub.peers.get(target.encode())
        return found[1] if found else None

    # -- small values ---------------------------------------------------------

    def set_value(self, key: bytes, value: bytes,
                  ident: Optional[identity_mod.NodeIdentity] = None,
                  sequence: Optional[int] = None) -> bool:
        ident = ident or self.identity
        if sequence is None:
            sequence = self._sequences.get(bytes(key), 0) + 1
        self._sequences[bytes(key)] = sequence
        record = make_value_record(key, value, ident, sequence)
        return self.hub.values.consider(record)

    def get_value(self, key: bytes) -> Optional[bytes]:
        record = self.hub.values.get(key)
        return record.value if record else None

    def get_value_records(self, key: bytes) -> list[SmallValueRecord]:
        record = self.hub.values.get(key)
        return [record] if record else []

    # -- providers -------------------------------------------------------------

    def provide(self, key: Multihash,
                ident: Optional[identity_mod.NodeIdentity] = None) -> None:
        ident = ident or self.identity
        now = self.hub.clock()
        record = ProviderRecord(key, ident.node_id, self.addr, now + PROVIDER_EXPIRY_MS)
        self.hub.providers.consider(record, now)

    def find_value_peers(self, key: Multihash, min_count: int = 1
                         ) -> tuple[list[tuple[Multihash, Multiaddr]], bool]:
        """Providers for a key; the flag reports a shortfall below min_count."""
        now = self.hub.clock()
        found = [(rec.provider, rec.addr) for rec in self.hub.providers.get(key, now)]
        return found, len(found) < min_count
