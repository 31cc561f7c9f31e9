"""Peer and content routing: a shared-table backend and a Kademlia-style DHT."""

from .records import (
    KEY_MAX_BYTES,
    PROVIDER_CAP_PER_KEY,
    PROVIDER_EXPIRY_MS,
    REPUBLISH_MS,
    VALUE_MAX_BYTES,
    ProviderRecord,
    ProviderStore,
    SmallValueRecord,
    ValueStore,
    key_to_int,
)
from .table import RoutingTable, TableEntry
from .memory import MemoryRouting, MemoryRoutingHub
from .dht import DhtNode, LookupStats

__all__ = [
    "DhtNode",
    "KEY_MAX_BYTES",
    "LookupStats",
    "MemoryRouting",
    "MemoryRoutingHub",
    "PROVIDER_CAP_PER_KEY",
    "PROVIDER_EXPIRY_MS",
    "ProviderRecord",
    "ProviderStore",
    "REPUBLISH_MS",
    "RoutingTable",
    "SmallValueRecord",
    "TableEntry",
    "VALUE_MAX_BYTES",
    "ValueStore",
    "key_to_int",
]
