"""Mutable, self-certified naming over the routing layer.

A name is the hash of a node's public key.  The owner signs small records
binding the name to an object hash; records travel through the routing
layer's small-value store, and resolvers accept only records whose signature
verifies under a key hashing to the name itself, taking the highest sequence
among the candidates they can reach.

Also here: the path grammar (immutable and mutable namespaces), pointer
objects that let one namespace link another, TXT-record indirection through
an injectable resolver, and pronounceable proquint identifiers.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Callable, Optional

from . import files, identity as identity_mod, merkledag
from .errors import (
    AlphabetError,
    InvalidNameError,
    LengthError,
    NameAuthError,
    NameNotFound,
    RecursionLimit,
    ValueTooLarge,
)
from .multiformats import (
    Multihash,
    base_display,
    base_parse,
    encode_uvarint,
    multihash_decode,
)
from .wire import Reader, Writer

RECORD_VALIDITY_MS = 24 * 3600 * 1000.0  # republish at half-life
RECORD_MAX_BYTES = 1024  # must satisfy the routing small-value rule
DEFAULT_DEPTH = 32

IMMUTABLE_NS = "ipfs"
MUTABLE_NS = "ipns"


# ---------------------------------------------------------------------------
# Records
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class NameRecord:
    publisher: Multihash
    value: Multihash
    sequence: int
    validity: float  # virtual-ms expiry
    signature: bytes

    def signing_payload(self) -> bytes:
        return _record_payload(self.publisher, self.value, self.sequence, self.validity)

    def encode(self) -> bytes:
        raw = (Writer(0x00)
               .multihash(self.publisher)
               .multihash(self.value)
               .uint(self.sequence)
               .uint(int(self.validity))
               .blob(self.signature)
               .bytes())[1:]
        if len(raw) > RECORD_MAX_BYTES:
            raise ValueTooLarge(f"name record of {len(raw)} bytes breaks the 1KB rule")
        return raw

    @classmethod
    def decode(cls, raw: bytes) -> "NameRecord":
        reader = Reader(b"\x00" + raw)
        return cls(
            publisher=reader.multihash(),
            value=reader.multihash(),
            sequence=reader.uint(),
            validity=float(reader.uint()),
            signature=reader.blob(),
        )


def _record_payload(publisher: Multihash, value: Multihash, sequence: int,
                    validity: float) -> bytes:
    out = bytearray(b"name-record:")
    out += publisher.encode()
    out += value.encode()
    out += encode_uvarint(sequence, 10)
    out += encode_uvarint(int(validity), 10)
    return bytes(out)


def make_name_record(ident: identity_mod.NodeIdentity, value: Multihash,
                     sequence: int, validity: float) -> NameRecord:
    sig = identity_mod.sign_raw(
        ident, _record_payload(ident.node_id, value, sequence, validity))
    return NameRecord(ident.node_id, value, sequence, validity, sig)


def best_record(candidates, node_id: Multihash, now: float) -> Optional[NameRecord]:
    """Filter candidate routing records down to the authentic freshest one.

    ``candidates`` are routing small-value records (they carry the public
    key); a candidate survives only if its key hashes to ``node_id``, the
    inner record is signed by that key for that publisher, and it has not
    expired.  Highest sequence wins, ties break toward the larger value hash.
    """
    best: Optional[NameRecord] = None
    for envelope in candidates:
        if identity_mod.derive_node_id(envelope.public_key) != node_id:
            continue
        try:
            record = NameRecord.decode(envelope.value)
        except Exception:
            continue
        if record.publisher != node_id or record.validity <= now:
            continue
        try:
            ok = identity_mod.verify_raw(envelope.public_key,
                                         record.signing_payload(), record.signature)
        except Exception:
            continue
        if not ok:
            continue
        if best is None or record.sequence > best.sequence or (
                record.sequence == best.sequence
                and record.value.encode() > best.value.encode()):
            best = record
    return best


def publish_name(ident: identity_mod.NodeIdentity, value: Multihash, routing,
                 now: float, sequence: int,
                 validity_ms: float = RECORD_VALIDITY_MS) -> NameRecord:
    """Bind this identity's name to ``value`` through the routing layer."""
    record = make_name_record(ident, value, sequence, now + validity_ms)
    routing.set_value(ident.node_id.encode(), record.encode(), ident, sequence=sequence)
    return record


# ---------------------------------------------------------------------------
# Paths
# ---------------------------------------------------------------------------

_PROQUINT_WORD = re.compile(r"^[bdfghjklmnprstvz][aiou][bdfghjklmnprstvz][aiou][bdfghjklmnprstvz]$")


@dataclass(frozen=True)
class NamePath:
    namespace: str  # "ipfs" | "ipns"
    head: str
    rest: tuple[str, ...] = ()

    def __str__(self) -> str:
        tail = "/" + "/".join(self.rest) if self.rest else ""
        return f"/{self.namespace}/{self.head}{tail}"

    @classmethod
    def parse(cls, text: str) -> "NamePath":
        if not text.startswith("/"):
            raise NameNotFound(f"path {text!r} must start with '/'")
        parts = [p for p in text.split("/") if p]
        if len(parts) < 2 or parts[0] not in (IMMUTABLE_NS, MUTABLE_NS):
            raise NameNotFound(f"path {text!r} is not /{IMMUTABLE_NS}/... or /{MUTABLE_NS}/...")
        return cls(parts[0], parts[1], tuple(parts[2:]))


def is_proquint(text: str) -> bool:
    return all(_PROQUINT_WORD.match(word) for word in text.split("-")) and text != ""


def _classify_head(head: str) -> str:
    if is_proquint(head):
        return "proquint"
    try:
        multihash_decode(base_parse(head))
        return "hash"
    except Exception:
        pass
    if "." in head:
        return "domain"
    return "unknown"


# ---------------------------------------------------------------------------
# Resolution
# ---------------------------------------------------------------------------

def resolve(path, fetch: merkledag.Fetch, routing,
            dns: Optional["DnsFixture"] = None, now: float = 0.0,
            depth: int = DEFAULT_DEPTH, keychain=None) -> Multihash:
    """Resolve a name path to an object hash.

    Mutable heads are looked up as signed records; domain heads go through
    the injected TXT resolver; proquint heads decode to a node id; pointer
    objects met along the way re-enter resolution under the linked name.
    """
    if isinstance(path, str):
        path = NamePath.parse(path)
    components = list(path.rest)
    namespace, head = path.namespace, path.head

    while True:
        if depth <= 0:
            raise RecursionLimit(f"name resolution exceeded {DEFAULT_DEPTH} hops")
        depth -= 1

        if namespace == IMMUTABLE_NS:
            key = multihash_decode(base_parse(head))
            outcome, payload, remaining = _walk(key, components, fetch, keychain)
            if outcome == "done":
                return payload
            # a pointer object re-enters the mutable namespace
            namespace = MUTABLE_NS
            head = base_display(payload.encode())
            components = remaining
            continue

        kind = _classify_head(head)
        if kind == "proquint":
            digest = proquint_decode(head)
            if len(digest) != 32:
                raise LengthError(
                    f"proquint decodes to {len(digest)} bytes, not a 32-byte node id")
            from .multiformats import SHA256
            head = base_display(Multihash(SHA256, digest).encode())
            continue
        if kind == "domain":
            if dns is None:
                raise NameNotFound(f"no TXT resolver for domain {head!r}")
            txt = dns.txt(head)
            if txt is None:
                raise NameNotFound(f"domain {head!r} has no TXT name entry")
            value = txt[5:] if txt.startswith("ipfs=") else txt
            if value.startswith("/"):
                target = NamePath.parse(value)
                namespace, head = target.namespace, target.head
                components = list(target.rest) + components
            else:
                namespace, head = MUTABLE_NS, value  # symlink into the mutable space
            continue
        if kind != "hash":
            raise NameNotFound(f"unresolvable name head {head!r}")

        node_id = multihash_decode(base_parse(head))
        candidates = routing.get_value_records(node_id.encode())
        if not candidates:
            raise NameNotFound(f"no record published for {head}")
        record = best_record(candidates, node_id, now)
        if record is None:
            raise NameAuthError(f"no authentic unexpired record for {head}")
        namespace = IMMUTABLE_NS
        head = base_display(record.value.encode())


def _decode_for_walk(key: Multihash, fetch: merkledag.Fetch, keychain):
    return merkledag._fetch_object(key, fetch, keychain)


def _nameref_target(obj) -> Optional[Multihash]:
    try:
        node = files.decode_file(obj)
    except Exception:
        return None
    return node.nameref if node.kind == "nameref" else None


def _walk(key: Multihash, components: list[str], fetch, keychain):
    """Walk path components from ``key`` through link-name lookups.

    Returns ("done", final_key, []) when the path lands on a plain object, or
    ("reenter", target_node_id, remaining) when a pointer object redirects
    into the mutable namespace with the rest of the path still to resolve.
    """
    from .errors import FetchError, PathNotFound

    current = key
    index = 0
    while True:
        exhausted = index >= len(components)
        try:
            obj = _decode_for_walk(current, fetch, keychain)
        except FetchError:
            if exhausted:
                return "done", current, []  # bare hash; nothing left to inspect
            raise
        target = _nameref_target(obj)
        if target is not None:
            return "reenter", target, components[index:]
        if exhausted:
            return "done", current, []
        link = obj.link_named(components[index])
        if link is None:
            raise PathNotFound(components[index], index)
        current = link.hash
        index += 1


# ---------------------------------------------------------------------------
# Peer links
# ---------------------------------------------------------------------------

def peer_link(ident: identity_mod.NodeIdentity, store, routing, now: float,
              name: str, target: Multihash, sequence: int) -> Multihash:
    """Link another node's namespace into ours under ``name``; returns and
    publishes the new namespace root."""
    current = None
    candidates = routing.get_value_records(ident.node_id.encode())
    record = best_record(candidates, ident.node_id, now)
    entries: dict[str, tuple[Multihash, str, int]] = {}
    if record is not None:
        raw = store.get(record.value)
        if raw is not None:
            node = files.decode_file(merkledag.decode_object(raw))
            if node.kind == "tree":
                for kind, link in zip(node.child_kinds, node.obj.links):
                    entries[link.name] = (link.hash, kind, link.size)
    if name in entries:
        raise InvalidNameError(f"namespace already links {name!r}")
    pointer = files.make_nameref(target)
    pointer_key = store.put(merkledag.encode_object(pointer))
    entries[name] = (pointer_key, "nameref", merkledag.cumulative_size(pointer))
    root = files.make_tree(entries)
    root_key = store.put(merkledag.encode_object(root))
    publish_name(ident, root_key, routing, now, sequence)
    return root_key


# ---------------------------------------------------------------------------
# DNS fixture
# ---------------------------------------------------------------------------

class DnsFixture:
    """Injectable TXT lookup backed by fixture records; no live queries.

    Fixture file format: one record per line, ``domain<TAB>ipfs=<value>``.
    """

    def __init__(self, records: Optional[dict[str, str]] = None):
        self.records = dict(records or {})

    @classmethod
    def from_file(cls, path: str) -> "DnsFixture":
        records = {}
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                line = line.rstrip("\n")
                if not line or line.startswith("#"):
                    continue
                domain, _, value = line.partition("\t")
                records[domain.strip()] = value.strip()
        return cls(records)

    def txt(self, domain: str) -> Optional[str]:
        return self.records.get(domain)


# ---------------------------------------------------------------------------
# Proquint identifiers
# ---------------------------------------------------------------------------

_CONSONANTS = "bdfghjklmnprstvz"
_VOWELS = "aiou"
_CONS_INDEX = {c: i for i, c in enumerate(_CONSONANTS)}
_VOWEL_INDEX = {v: i for i, v in enumerate(_VOWELS)}


def proquint_encode(data: bytes) -> str:
    """Render bytes as dash-joined pronounceable words, 16 bits per word."""
    if len(data) % 2 != 0:
        raise LengthError("proquint input must have even length")
    words = []
    for i in range(0, len(data), 2):
        word = (data[i] << 8) | data[i + 1]
        words.append(
            _CONSONANTS[(word >> 12) & 0xF]
            + _VOWELS[(word >> 10) & 0x3]
            + _CONSONANTS[(word >> 6) & 0xF]
            + _VOWELS[(word >> 4) & 0x3]
            + _CONSONANTS[word & 0xF]
        )
    return "-".join(words)


def proquint_decode(text: str) -> bytes:
    out = bytearray()
    if text == "":
        return bytes(out)
    for word in text.split("-"):
        if len(word) != 5:
            raise AlphabetError(f"proquint word {word!r} is not 5 letters")
        try:
            value = (
                (_CONS_INDEX[word[0]] << 12)
                | (_VOWEL_INDEX[word[1]] << 10)
                | (_CONS_INDEX[word[2]] << 6)
                | (_VOWEL_INDEX[word[3]] << 4)
                | _CONS_INDEX[word[4]]
            )
        except KeyError as exc:
            raise AlphabetError(f"letter {exc.args[0]!r} is not proquint") from exc
        out += value.to_bytes(2, "big")
    return bytes(out)
