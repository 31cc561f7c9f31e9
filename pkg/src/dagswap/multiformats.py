"""Self-describing binary formats: hash digests, network addresses, display base.

Everything here is a value type with a bit-exact encoding.  The layouts are
frozen by golden vectors under ``tests/vectors/``; any change to a varint,
registry code or alphabet is a format break.
"""

from __future__ import annotations

import hashlib
import ipaddress
from dataclasses import dataclass
from typing import Callable, Optional

from .errors import (
    AlphabetError,
    LengthMismatch,
    PayloadError,
    RegistryError,
    TruncatedError,
)

# ---------------------------------------------------------------------------
# Unsigned varints (LEB128, minimal encoding, at most 4 bytes)
# ---------------------------------------------------------------------------

# the self-describing formats accept at most 4 varint bytes; general wire
# fields (timestamps, byte counters) get a wider allowance
VARINT_MAX_BYTES = 4
WIRE_VARINT_MAX_BYTES = 10
VARINT_MAX_VALUE = (1 << (7 * VARINT_MAX_BYTES)) - 1


def encode_uvarint(value: int, max_bytes: int = VARINT_MAX_BYTES) -> bytes:
    """Encode a non-negative integer as a minimal LEB128 varint."""
    if value < 0:
        raise ValueError("varints are unsigned")
    if value > (1 << (7 * max_bytes)) - 1:
        raise ValueError(f"value {value} exceeds {max_bytes}-byte varint cap")
    out = bytearray()
    while True:
        byte = value & 0x7F
        value >>= 7
        if value:
            out.append(byte | 0x80)
        else:
            out.append(byte)
            return bytes(out)


def read_uvarint(buf: bytes, offset: int = 0,
                 max_bytes: int = VARINT_MAX_BYTES) -> tuple[int, int]:
    """Read a varint from ``buf`` at ``offset``; return (value, next offset).

    Rejects truncated input, encodings longer than the cap, and non-minimal
    encodings (trailing 0x80 0x00 padding would break prefix-freeness).
    """
    value = 0
    shift = 0
    for i in range(max_bytes):
        if offset + i >= len(buf):
            raise TruncatedError("varint runs past end of input")
        byte = buf[offset + i]
        value |= (byte & 0x7F) << shift
        shift += 7
        if not byte & 0x80:
            if i > 0 and byte == 0:
                raise PayloadError("non-minimal varint encoding")
            return value, offset + i + 1
    raise PayloadError(f"varint longer than {max_bytes} bytes")


# ---------------------------------------------------------------------------
# Multihash
# ---------------------------------------------------------------------------

IDENTITY = 0x00
SHA1 = 0x11
SHA256 = 0x12
SHA512 = 0x13


@dataclass(frozen=True)
class HashFunction:
    code: int
    name: str
    digest_len: Optional[int]  # None = unconstrained (identity)
    hasher: Optional[Callable[[bytes], bytes]]  # None = decode-only


HASH_REGISTRY: dict[int, HashFunction] = {
    IDENTITY: HashFunction(IDENTITY, "identity", None, lambda b: b),
    SHA1: HashFunction(SHA1, "sha1", 20, None),  # decode-only
    SHA256: HashFunction(SHA256, "sha2-256", 32, lambda b: hashlib.sha256(b).digest()),
    SHA512: HashFunction(SHA512, "sha2-512", 64, lambda b: hashlib.sha512(b).digest()),
}

DEFAULT_HASH = SHA256


@dataclass(frozen=True, order=True)
class Multihash:
    """A hash digest prefixed by its function code and length.

    Wire layout: ``varint(code) ++ varint(len(digest)) ++ digest``.
    Unknown codes are representable as values but refuse to encode or decode.
    """

    code: int
    digest: bytes

    @property
    def length(self) -> int:
        return len(self.digest)

    def encode(self) -> bytes:
        return multihash_encode(self.code, self.digest)

    def display(self) -> str:
        """Render the encoded form in the project display base."""
        return base_display(self.encode())

    def __str__(self) -> str:
        return self.display()

    def __repr__(self) -> str:
        return f"Multihash(0x{self.code:02x}, {self.display()})"


def multihash_encode(code: int, digest: bytes) -> bytes:
    """Encode ``digest`` under registry ``code``; layout above."""
    func = HASH_REGISTRY.get(code)
    if func is None:
        raise RegistryError(f"unknown hash function code 0x{code:x}")
    if func.digest_len is not None and len(digest) > func.digest_len:
        raise LengthMismatch(
            f"{func.name} digest of {len(digest)} bytes exceeds defined {func.digest_len}"
        )
    return encode_uvarint(code) + encode_uvarint(len(digest)) + bytes(digest)


def multihash_decode(raw: bytes) -> Multihash:
    """Inverse of :func:`multihash_encode`; validates length against payload."""
    if len(raw) < 2:
        raise TruncatedError("multihash needs at least 2 bytes")
    code, off = read_uvarint(raw, 0)
    if code not in HASH_REGISTRY:
        raise RegistryError(f"unknown hash function code 0x{code:x}")
    declared, off = read_uvarint(raw, off)
    digest = raw[off:]
    if len(digest) < declared:
        raise LengthMismatch(f"declared {declared} digest bytes, got {len(digest)}")
    if len(digest) > declared:
        raise LengthMismatch(f"{len(digest) - declared} trailing bytes after digest")
    func = HASH_REGISTRY[code]
    if func.digest_len is not None and declared > func.digest_len:
        raise LengthMismatch(
            f"{func.name} digest of {declared} bytes exceeds defined {func.digest_len}"
        )
    return Multihash(code, bytes(digest))


def read_multihash(buf: bytes, offset: int = 0) -> tuple[Multihash, int]:
    """Read one multihash embedded in a larger frame."""
    code, off = read_uvarint(buf, offset)
    declared, off = read_uvarint(buf, off)
    if off + declared > len(buf):
        raise TruncatedError("multihash digest runs past end of input")
    if code not in HASH_REGISTRY:
        raise RegistryError(f"unknown hash function code 0x{code:x}")
    return Multihash(code, bytes(buf[off:off + declared])), off + declared


def hash_bytes(data: bytes, code: int = DEFAULT_HASH) -> Multihash:
    """Hash ``data`` with a registry function and wrap it as a Multihash."""
    func = HASH_REGISTRY.get(code)
    if func is None:
        raise RegistryError(f"unknown hash function code 0x{code:x}")
    if func.hasher is None:
        raise RegistryError(f"{func.name} is registered decode-only")
    return Multihash(code, func.hasher(bytes(data)))


# ---------------------------------------------------------------------------
# Display base: base58 (Bitcoin alphabet), lowercase hex accepted on input
# ---------------------------------------------------------------------------

BASE58_ALPHABET = "123456789ABCDEFGHJKLMNPQRSTUVWXYZabcdefghijkmnopqrstuvwxyz"
_BASE58_INDEX = {c: i for i, c in enumerate(BASE58_ALPHABET)}


def base_display(raw: bytes) -> str:
    """Encode bytes in base58.  Output never contains a path separator."""
    if not raw:
        return ""
    zeros = len(raw) - len(raw.lstrip(b"\x00"))
    num = int.from_bytes(raw, "big")
    chars = []
    while num:
        num, rem = divmod(num, 58)
        chars.append(BASE58_ALPHABET[rem])
    return BASE58_ALPHABET[0] * zeros + "".join(reversed(chars))


def _base58_parse(text: str) -> bytes:
    num = 0
    for ch in text:
        idx = _BASE58_INDEX.get(ch)
        if idx is None:
            raise AlphabetError(f"character {ch!r} not in base58 alphabet")
        num = num * 58 + idx
    zeros = len(text) - len(text.lstrip(BASE58_ALPHABET[0]))
    body = num.to_bytes((num.bit_length() + 7) // 8, "big") if num else b""
    return b"\x00" * zeros + body


def base_parse(text: str) -> bytes:
    """Inverse of :func:`base_display`.

    Base58 is tried first; pure lowercase-hex strings of even length are
    accepted as a fallback for hand-typed keys.
    """
    if text == "":
        return b""
    try:
        return _base58_parse(text)
    except AlphabetError:
        if len(text) % 2 == 0 and all(c in "0123456789abcdef" for c in text):
            return bytes.fromhex(text)
        raise


# ---------------------------------------------------------------------------
# Multiaddr
# ---------------------------------------------------------------------------

# payload kinds: fixed-width bytes, 16-bit port, or varint scalar
_ADDR4 = "addr4"
_ADDR16 = "addr16"
_PORT = "port"
_VARINT = "varint"


@dataclass(frozen=True)
class AddrProtocol:
    code: int
    name: str
    kind: str


ADDR_PROTOCOLS: dict[str, AddrProtocol] = {
    p.name: p
    for p in (
        AddrProtocol(0x04, "ip4", _ADDR4),
        AddrProtocol(0x06, "tcp", _PORT),
        AddrProtocol(0x11, "udp", _PORT),
        AddrProtocol(0x29, "ip6", _ADDR16),
        AddrProtocol(0x84, "sctp", _PORT),
        AddrProtocol(0x1C9, "sim", _VARINT),  # simulated transport node number
    )
}
_ADDR_BY_CODE = {p.code: p for p in ADDR_PROTOCOLS.values()}


def _payload_from_text(proto: AddrProtocol, text: str) -> bytes:
    try:
        if proto.kind == _ADDR4:
            return ipaddress.IPv4Address(text).packed
        if proto.kind == _ADDR16:
            return ipaddress.IPv6Address(text).packed
        if proto.kind == _PORT:
            port = int(text)
            if not 0 <= port <= 65535:
                raise PayloadError(f"port {port} out of range")
            return port.to_bytes(2, "big")
        if proto.kind == _VARINT:
            value = int(text)
            if value < 0:
                raise PayloadError("negative scalar in address")
            return encode_uvarint(value)
    except (ipaddress.AddressValueError, ValueError) as exc:
        raise PayloadError(f"bad {proto.name} payload {text!r}: {exc}") from exc
    raise PayloadError(f"unhandled payload kind {proto.kind}")


def _payload_to_text(proto: AddrProtocol, payload: bytes) -> str:
    if proto.kind == _ADDR4:
        return str(ipaddress.IPv4Address(payload))
    if proto.kind == _ADDR16:
        return str(ipaddress.IPv6Address(payload))
    if proto.kind == _PORT:
        return str(int.from_bytes(payload, "big"))
    value, _ = read_uvarint(payload, 0)
    return str(value)


@dataclass(frozen=True)
class Multiaddr:
    """An ordered stack of (protocol, payload) pairs, outermost first."""

    components: tuple[tuple[str, bytes], ...]

    def __str__(self) -> str:
        parts = []
        for name, payload in self.components:
            parts.append(name)
            parts.append(_payload_to_text(ADDR_PROTOCOLS[name], payload))
        return "/" + "/".join(parts)

    def to_bytes(self) -> bytes:
        out = bytearray()
        for name, payload in self.components:
            out += encode_uvarint(ADDR_PROTOCOLS[name].code)
            out += payload
        return bytes(out)

    @classmethod
    def from_bytes(cls, raw: bytes) -> "Multiaddr":
        comps = []
        off = 0
        while off < len(raw):
            code, off = read_uvarint(raw, off)
            proto = _ADDR_BY_CODE.get(code)
            if proto is None:
                raise RegistryError(f"unknown address protocol code 0x{code:x}")
            if proto.kind == _ADDR4:
                width = 4
            elif proto.kind == _ADDR16:
                width = 16
            elif proto.kind == _PORT:
                width = 2
            else:
                _, end = read_uvarint(raw, off)
                width = end - off
            if off + width > len(raw):
                raise TruncatedError("address payload runs past end of input")
            comps.append((proto.name, bytes(raw[off:off + width])))
            off += width
        return cls(tuple(comps))

    @classmethod
    def sim(cls, node: int) -> "Multiaddr":
        """Shorthand for a simulated-transport address ``/sim/<node>``."""
        return cls((("sim", encode_uvarint(node)),))

    def sim_node(self) -> Optional[int]:
        """Node number if this is a simulated address, else None."""
        if len(self.components) == 1 and self.components[0][0] == "sim":
            value, _ = read_uvarint(self.components[0][1], 0)
            return value
        return None


def multiaddr_parse(text: str) -> Multiaddr:
    """Parse the textual form, e.g. ``/ip4/10.20.30.40/sctp/1234/``."""
    if not text.startswith("/"):
        raise PayloadError("address text must begin with '/'")
    parts = [p for p in text.split("/") if p != ""]
    comps = []
    i = 0
    while i < len(parts):
        proto = ADDR_PROTOCOLS.get(parts[i])
        if proto is None:
            raise RegistryError(f"unknown address protocol {parts[i]!r}")
        if i + 1 >= len(parts):
            raise PayloadError(f"protocol {proto.name} is missing its payload")
        comps.append((proto.name, _payload_from_text(proto, parts[i + 1])))
        i += 2
    return Multiaddr(tuple(comps))
