"""Content-addressed objects: canonical encoding, links, paths, crypto frames.

An object is an ordered link table plus opaque data.  Its key is the hash of
its canonical encoding, so equal objects <=> equal bytes <=> equal keys, and
any mutation of the bytes changes the key or breaks decoding.

Canonical layout (all integers minimal varints):

    varint(link_count)
    per link:  varint(len(name)) name
               varint(len(multihash)) multihash
               varint(size)
    varint(len(data)) data

Signed and encrypted objects live in a separate framing domain that starts
with four 0xFF bytes -- an illegal varint under the 4-byte cap -- so a frame
can never parse as a plain object and vice versa.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass
from typing import Callable, Iterable, Optional

from cryptography.hazmat.primitives.ciphers.aead import ChaCha20Poly1305

from .errors import (
    DecodeError,
    DecryptError,
    FetchError,
    KeyNotFound,
    LengthMismatch,
    NoKey,
    PathNotFound,
    PublishError,
    RegistryError,
    SignatureError,
    TruncatedError,
    PayloadError,
)
from . import identity as identity_mod
from .multiformats import (
    Multihash,
    base_display,
    base_parse,
    encode_uvarint,
    hash_bytes,
    multihash_decode,
    read_multihash,
    read_uvarint,
)

Fetch = Callable[[Multihash], Optional[bytes]]

_FRAME_MAGIC = b"\xff\xff\xff\xff"
_FRAME_SIGNED = 0x01
_FRAME_ENCRYPTED = 0x02
_NONCE_LEN = 12


@dataclass(frozen=True)
class DagLink:
    name: str
    hash: Multihash
    size: int


@dataclass(frozen=True)
class DagObject:
    links: tuple[DagLink, ...] = ()
    data: bytes = b""

    def link_named(self, name: str) -> Optional[DagLink]:
        """First link carrying ``name``; names need not be unique here."""
        for link in self.links:
            if link.name == name:
                return link
        return None


@dataclass(frozen=True)
class SignedObject:
    object_bytes: bytes
    signature: bytes
    public_key: Multihash  # hash identifying the signing key


@dataclass(frozen=True)
class EncryptedObject:
    object_bytes: bytes  # nonce + ciphertext of a canonical encoding
    tag: bytes  # keychain group tag


# ---------------------------------------------------------------------------
# Canonical encoding
# ---------------------------------------------------------------------------

def encode_object(obj: DagObject) -> bytes:
    out = bytearray(encode_uvarint(len(obj.links)))
    for link in obj.links:
        name = link.name.encode("utf-8")
        mh = link.hash.encode()
        out += encode_uvarint(len(name)) + name
        out += encode_uvarint(len(mh)) + mh
        out += encode_uvarint(link.size)
    out += encode_uvarint(len(obj.data)) + obj.data
    return bytes(out)


def decode_object(raw: bytes) -> DagObject:
    try:
        count, off = read_uvarint(raw, 0)
        links = []
        for _ in range(count):
            name_len, off = read_uvarint(raw, off)
            if off + name_len > len(raw):
                raise TruncatedError("link name runs past end")
            name = bytes(raw[off:off + name_len]).decode("utf-8")
            off += name_len
            mh_len, off = read_uvarint(raw, off)
            if off + mh_len > len(raw):
                raise TruncatedError("link hash runs past end")
            mh = multihash_decode(raw[off:off + mh_len])
            off += mh_len
            size, off = read_uvarint(raw, off)
            links.append(DagLink(name, mh, size))
        data_len, off = read_uvarint(raw, off)
        if off + data_len > len(raw):
            raise TruncatedError("data runs past end")
        data = bytes(raw[off:off + data_len])
        off += data_len
    except (TruncatedError, PayloadError, LengthMismatch, RegistryError,
            UnicodeDecodeError) as exc:
        raise DecodeError(str(exc), offset=locals().get("off")) from exc
    if off != len(raw):
        raise DecodeError("trailing bytes after object", offset=off)
    return DagObject(tuple(links), data)


def object_key(obj: DagObject) -> Multihash:
    return hash_bytes(encode_object(obj))


def decode_any(raw: bytes):
    """Decode either a plain object or a signed/encrypted frame."""
    if raw[:4] == _FRAME_MAGIC:
        return _decode_frame(raw)
    return decode_object(raw)


def cumulative_size(obj: DagObject) -> int:
    """Byte size of the subgraph rooted at ``obj`` per stored link sizes."""
    return len(encode_object(obj)) + sum(link.size for link in obj.links)


def link_to(name: str, target: DagObject) -> DagLink:
    """Build a link to a locally available target with the aggregate size."""
    return DagLink(name, object_key(target), cumulative_size(target))


def verify_link_sizes(obj: DagObject, fetch: Fetch) -> list[DagLink]:
    """Audit link sizes against fetchable targets; returns the violating links.

    Targets that cannot be fetched are skipped: links to remote objects are
    taken on trust until the object arrives.
    """
    bad = []
    for link in obj.links:
        raw = fetch(link.hash)
        if raw is None:
            continue
        target = decode_any(raw)
        if isinstance(target, DagObject) and cumulative_size(target) != link.size:
            bad.append(link)
    return bad


# ---------------------------------------------------------------------------
# Traversal
# ---------------------------------------------------------------------------

def _fetch_object(key: Multihash, fetch: Fetch, keychain=None) -> DagObject:
    raw = fetch(key)
    if raw is None:
        raise FetchError(key)
    node = decode_any(raw)
    if isinstance(node, SignedObject):
        # signatures are checked transparently during traversal
        return verify_object(node, fetch)
    if isinstance(node, EncryptedObject):
        if keychain is not None:
            return decrypt_object(node, keychain)
        raise NoKey(f"object {key} is encrypted; traversal needs a key")
    return node


def resolve_path(root: Multihash, path: Iterable[str], fetch: Fetch,
                 keychain=None) -> Multihash:
    """Fold path components through link-name lookups; empty path -> root."""
    current = root
    components = list(path)
    for index, component in enumerate(components):
        obj = _fetch_object(current, fetch, keychain)
        link = obj.link_named(component)
        if link is None:
            raise PathNotFound(component, index)
        current = link.hash
    return current


def list_links(key: Multihash, fetch: Fetch) -> list[tuple[Multihash, int, str]]:
    """The link table, row per link: (hash, size, name)."""
    obj = _fetch_object(key, fetch)
    return [(link.hash, link.size, link.name) for link in obj.links]


def refs_recursive(key: Multihash, fetch: Fetch) -> list[Multihash]:
    """Every key reachable from ``key``, preorder, each exactly once.

    On a missing object the error carries the refs gathered so far in
    ``exc.partial``.
    """
    seen: set[bytes] = set()
    out: list[Multihash] = []

    def walk(k: Multihash) -> None:
        raw = fetch(k)
        if raw is None:
            err = FetchError(k)
            err.partial = list(out)
            raise err
        node = decode_any(raw)
        if not isinstance(node, DagObject):
            return  # crypto frames hide their links
        for link in node.links:
            if link.hash.encode() in seen:
                continue
            seen.add(link.hash.encode())
            out.append(link.hash)
            walk(link.hash)

    walk(key)
    return out


def publish(key: Multihash, identity: identity_mod.NodeIdentity, routing, store) -> Multihash:
    """Announce a stored object to the routing layer; idempotent."""
    if store.get(key) is None:
        raise PublishError(f"object {key} is not in local storage")
    try:
        routing.provide(key, identity)
    except Exception as exc:
        raise PublishError(f"routing announce failed: {exc}") from exc
    return key


# ---------------------------------------------------------------------------
# Signed / encrypted frames
# ---------------------------------------------------------------------------

def _decode_frame(raw: bytes):
    kind = raw[4] if len(raw) > 4 else None
    off = 5
    try:
        if kind == _FRAME_SIGNED:
            obj_len, off = read_uvarint(raw, off)
            obj = bytes(raw[off:off + obj_len])
            off += obj_len
            sig_len, off = read_uvarint(raw, off)
            sig = bytes(raw[off:off + sig_len])
            off += sig_len
            pk, off = read_multihash(raw, off)
            if off != len(raw) or len(obj) != obj_len or len(sig) != sig_len:
                raise DecodeError("malformed signed frame", offset=off)
            return SignedObject(obj, sig, pk)
        if kind == _FRAME_ENCRYPTED:
            tag_len, off = read_uvarint(raw, off)
            tag = bytes(raw[off:off + tag_len])
            off += tag_len
            blob_len, off = read_uvarint(raw, off)
            blob = bytes(raw[off:off + blob_len])
            off += blob_len
            if off != len(raw) or len(tag) != tag_len or len(blob) != blob_len:
                raise DecodeError("malformed encrypted frame", offset=off)
            return EncryptedObject(blob, tag)
    except (TruncatedError, PayloadError) as exc:
        raise DecodeError(str(exc)) from exc
    raise DecodeError(f"unknown frame kind {kind}", offset=4)


def encode_signed(signed: SignedObject) -> bytes:
    out = bytearray(_FRAME_MAGIC)
    out.append(_FRAME_SIGNED)
    out += encode_uvarint(len(signed.object_bytes)) + signed.object_bytes
    out += encode_uvarint(len(signed.signature)) + signed.signature
    out += signed.public_key.encode()
    return bytes(out)


def encode_encrypted(enc: EncryptedObject) -> bytes:
    out = bytearray(_FRAME_MAGIC)
    out.append(_FRAME_ENCRYPTED)
    out += encode_uvarint(len(enc.tag)) + enc.tag
    out += encode_uvarint(len(enc.object_bytes)) + enc.object_bytes
    return bytes(out)


def sign_object(obj: DagObject, identity: identity_mod.NodeIdentity) -> SignedObject:
    """Wrap an object with a signature frame.

    The frame names the key by hash; store the raw public key bytes as a
    block so verifiers can resolve it.
    """
    obj_bytes = encode_object(obj)
    sig = identity_mod.sign_raw(identity, obj_bytes)
    return SignedObject(obj_bytes, sig, hash_bytes(identity.public_key))


def verify_object(signed: SignedObject, fetch: Fetch) -> DagObject:
    pk_bytes = fetch(signed.public_key)
    if pk_bytes is None:
        raise KeyNotFound(f"public key {signed.public_key} not resolvable")
    try:
        ok = identity_mod.verify_raw(pk_bytes, signed.object_bytes, signed.signature)
    except Exception as exc:
        raise SignatureError(str(exc)) from exc
    if not ok:
        raise SignatureError("object signature does not verify")
    return decode_object(signed.object_bytes)


def encrypt_object(obj: DagObject, key: bytes, tag: bytes = b"",
                   nonce: Optional[bytes] = None) -> EncryptedObject:
    """Encrypt the whole canonical encoding, links included."""
    if nonce is None:
        nonce = os.urandom(_NONCE_LEN)
    ct = ChaCha20Poly1305(key).encrypt(nonce, encode_object(obj), bytes(tag))
    return EncryptedObject(nonce + ct, bytes(tag))


def decrypt_object(enc: EncryptedObject, keychain: dict[bytes, bytes]) -> DagObject:
    key = keychain.get(enc.tag)
    if key is None:
        raise NoKey(f"no keychain entry for tag {enc.tag!r}")
    nonce, ct = enc.object_bytes[:_NONCE_LEN], enc.object_bytes[_NONCE_LEN:]
    try:
        plain = ChaCha20Poly1305(key).decrypt(nonce, ct, enc.tag)
    except Exception as exc:
        raise DecryptError("authentication failed") from exc
    return decode_object(plain)


# ---------------------------------------------------------------------------
# Text import/export
# ---------------------------------------------------------------------------

def _data_to_text(data: bytes) -> str:
    try:
        text = data.decode("utf-8")
        if text.isprintable() and not text.startswith("hex:"):
            return text
    except UnicodeDecodeError:
        pass
    return "hex:" + data.hex()


def _data_from_text(text: str) -> bytes:
    if text.startswith("hex:"):
        return bytes.fromhex(text[4:])
    return text.encode("utf-8")


def to_text(obj: DagObject) -> str:
    """Human-readable view: {"data": ..., "links": [{hash, name, size}]}."""
    doc = {
        "data": _data_to_text(obj.data),
        "links": [
            {"hash": base_display(link.hash.encode()), "name": link.name, "size": link.size}
            for link in obj.links
        ],
    }
    return json.dumps(doc, indent=2)


def from_text(text: str) -> DagObject:
    doc = json.loads(text)
    links = tuple(
        DagLink(
            row.get("name", ""),
            multihash_decode(base_parse(row["hash"])),
            int(row.get("size", 0)),
        )
        for row in doc.get("links", [])
    )
    return DagObject(links, _data_from_text(doc.get("data", "")))
