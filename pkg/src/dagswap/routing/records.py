"""Signed records stored on the routing layer.

Small values (at most 1 KB) are stored directly at the nodes nearest the
key; larger content is located through provider records that point at the
peers able to serve it.  Both record kinds are validated at the storing node,
so forged entries die on arrival rather than at read time.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

from .. import identity as identity_mod
from ..errors import ValueTooLarge
from ..multiformats import (
    Multiaddr,
    Multihash,
    encode_uvarint,
    hash_bytes,
    multihash_decode,
    read_uvarint,
)
from ..wire import Reader, Writer

VALUE_MAX_BYTES = 1024  # the small-value rule: bigger content goes by provider
KEY_MAX_BYTES = 64
PROVIDER_CAP_PER_KEY = 16  # hot-spot guard: spill outward past this
PROVIDER_EXPIRY_MS = 24 * 3600 * 1000.0
REPUBLISH_MS = 12 * 3600 * 1000.0


def key_to_int(key: bytes) -> int:
    """Map a record key into the 256-bit XOR keyspace.

    Multihash keys use their raw digest (header stripped); anything else is
    zero-padded or truncated to 32 bytes.
    """
    try:
        digest = multihash_decode(key).digest
    except Exception:
        digest = bytes(key)
    digest = digest[:32].ljust(32, b"\x00")
    return int.from_bytes(digest, "big")


@dataclass(frozen=True)
class SmallValueRecord:
    key: bytes
    value: bytes
    publisher: Multihash
    sequence: int
    public_key: bytes
    signature: bytes

    def signing_payload(self) -> bytes:
        return _value_payload(self.key, self.value, self.publisher, self.sequence)

    def encode(self) -> bytes:
        return (Writer(0x00)
                .blob(self.key)
                .blob(self.value)
                .multihash(self.publisher)
                .uint(self.sequence)
                .blob(self.public_key)
                .blob(self.signature)
                .bytes())[1:]  # record bodies travel inside tagged frames

    @classmethod
    def decode(cls, raw: bytes) -> "SmallValueRecord":
        reader = Reader(b"\x00" + raw)
        return cls(
            key=reader.blob(),
            value=reader.blob(),
            publisher=reader.multihash(),
            sequence=reader.uint(),
            public_key=reader.blob(),
            signature=reader.blob(),
        )

    def valid(self) -> bool:
        """Structural and cryptographic checks applied by storing nodes."""
        if len(self.value) > VALUE_MAX_BYTES or len(self.key) > KEY_MAX_BYTES:
            return False
        if identity_mod.derive_node_id(self.public_key) != self.publisher:
            return False
        # a key that *is* a node id may only be written by that node
        try:
            key_mh = multihash_decode(self.key)
        except Exception:
            key_mh = None
        if key_mh is not None and key_mh != self.publisher:
            return False
        try:
            return identity_mod.verify_raw(self.public_key, self.signing_payload(),
                                           self.signature)
        except Exception:
            return False


def _value_payload(key: bytes, value: bytes, publisher: Multihash, sequence: int) -> bytes:
    out = bytearray(b"dht-value:")
    out += encode_uvarint(len(key)) + key
    out += encode_uvarint(len(value)) + value
    out += publisher.encode()
    out += encode_uvarint(sequence, 10)
    return bytes(out)


def make_value_record(key: bytes, value: bytes, ident: identity_mod.NodeIdentity,
                      sequence: int) -> SmallValueRecord:
    if len(value) > VALUE_MAX_BYTES:
        raise ValueTooLarge(f"{len(value)} bytes exceeds the {VALUE_MAX_BYTES}-byte rule")
    if len(key) > KEY_MAX_BYTES:
        raise ValueTooLarge(f"key of {len(key)} bytes exceeds cap {KEY_MAX_BYTES}")
    sig = identity_mod.sign_raw(ident, _value_payload(key, value, ident.node_id, sequence))
    return SmallValueRecord(bytes(key), bytes(value), ident.node_id, sequence,
                            ident.public_key, sig)


def better_record(a: Optional[SmallValueRecord], b: SmallValueRecord) -> SmallValueRecord:
    """Highest sequence wins; ties break toward the larger value hash."""
    if a is None:
        return b
    if b.sequence != a.sequence:
        return b if b.sequence > a.sequence else a
    if hash_bytes(b.value).digest > hash_bytes(a.value).digest:
        return b
    return a


class ValueStore:
    """Per-node store keeping the single best record per key."""

    def __init__(self):
        self._records: dict[bytes, SmallValueRecord] = {}

    def consider(self, record: SmallValueRecord) -> bool:
        """Validate and keep if it beats the current record; True if kept."""
        if not record.valid():
            return False
        best = better_record(self._records.get(record.key), record)
        self._records[record.key] = best
        return best is record

    def get(self, key: bytes) -> Optional[SmallValueRecord]:
        return self._records.get(bytes(key))

    def keys(self) -> list[bytes]:
        return sorted(self._records)


@dataclass(frozen=True)
class ProviderRecord:
    key: Multihash
    provider: Multihash
    addr: Multiaddr
    expiry: float  # virtual ms

    def encode(self) -> bytes:
        return (Writer(0x00)
                .multihash(self.key)
                .multihash(self.provider)
                .blob(self.addr.to_bytes())
                .uint(int(self.expiry))
                .bytes())[1:]

    @classmethod
    def decode(cls, raw: bytes) -> "ProviderRecord":
        reader = Reader(b"\x00" + raw)
        return cls(
            key=reader.multihash(),
            provider=reader.multihash(),
            addr=Multiaddr.from_bytes(reader.blob()),
            expiry=float(reader.uint()),
        )


class ProviderStore:
    """Bounded per-key provider sets; expired entries are never returned."""

    def __init__(self, cap: int = PROVIDER_CAP_PER_KEY):
        self.cap = cap
        self._providers: dict[bytes, dict[bytes, ProviderRecord]] = {}

    def consider(self, record: ProviderRecord, now: float) -> bool:
        if record.expiry <= now:
            return False
        slot = self._providers.setdefault(record.key.encode(), {})
        raw = record.provider.encode()
        if raw in slot:
            slot[raw] = record  # refresh
            return True
        self._expire(slot, now)
        if len(slot) >= self.cap:
            return False  # saturated: the publisher spills outward
        slot[raw] = record
        return True

    def get(self, key: Multihash, now: float) -> list[ProviderRecord]:
        slot = self._providers.get(key.encode(), {})
        self._expire(slot, now)
        return [slot[raw] for raw in sorted(slot)]

    def count(self, key: Multihash, now: float) -> int:
        return len(self.get(key, now))

    @staticmethod
    def _expire(slot: dict[bytes, ProviderRecord], now: float) -> None:
        for raw in [raw for raw, rec in slot.items() if rec.expiry <= now]:
            del slot[raw]
