"""Node identities: keypairs, proof-of-work node ids, message signatures.

A node id is the double hash of the node's public key, and generation loops
until the digest carries the configured count of leading zero bits, making
cheap mass-production of identities expensive.  Signatures use Ed25519
(deterministic, 32-byte keys) so seeded simulations replay exactly.
"""

from __future__ import annotations

import os
import random
from dataclasses import dataclass
from typing import Optional

from cryptography.exceptions import InvalidSignature
from cryptography.hazmat.primitives.asymmetric.ed25519 import (
    Ed25519PrivateKey,
    Ed25519PublicKey,
)
from cryptography.hazmat.primitives.ciphers.aead import ChaCha20Poly1305
from cryptography.hazmat.primitives.kdf.scrypt import Scrypt

from .errors import DifficultyTooHigh, KeyFormatError, TruncatedError
from .multiformats import (
    Multihash,
    encode_uvarint,
    hash_bytes,
    read_multihash,
    read_uvarint,
)

MAX_DIFFICULTY = 24  # desk-scale guard: expected work 2^24 keypairs
KEY_SIZE = 32

NodeId = Multihash


@dataclass(frozen=True)
class NodeIdentity:
    node_id: NodeId
    public_key: bytes
    private_key: bytes


@dataclass(frozen=True)
class Signature:
    signer: NodeId
    payload_hash: Multihash
    sig_bytes: bytes


def derive_node_id(public_key: bytes) -> NodeId:
    """Double hash of the public key, the outer one wrapped as the node id."""
    inner = hash_bytes(public_key)
    return hash_bytes(inner.encode())


def leading_zero_bits(data: bytes) -> int:
    count = 0
    for byte in data:
        if byte == 0:
            count += 8
            continue
        for bit in range(7, -1, -1):
            if byte & (1 << bit):
                return count
            count += 1
    return count


def puzzle_ok(node_id: NodeId, difficulty: int) -> bool:
    """Leading-zero check over the digest only; the header bytes are constant."""
    return leading_zero_bits(node_id.digest) >= difficulty


def generate_identity(difficulty: int = 0, rng: Optional[random.Random] = None) -> NodeIdentity:
    """Generate keypairs until the node-id puzzle passes at ``difficulty``.

    With a seeded ``rng`` the result is fully deterministic; without one,
    key material comes from the OS.
    """
    if difficulty < 0:
        raise ValueError("difficulty must be non-negative")
    if difficulty > MAX_DIFFICULTY:
        raise DifficultyTooHigh(f"difficulty {difficulty} exceeds guard {MAX_DIFFICULTY}")
    while True:
        seed = rng.randbytes(KEY_SIZE) if rng is not None else os.urandom(KEY_SIZE)
        private = Ed25519PrivateKey.from_private_bytes(seed)
        public = private.public_key().public_bytes_raw()
        node_id = derive_node_id(public)
        if puzzle_ok(node_id, difficulty):
            return NodeIdentity(node_id, public, seed)


def verify_peer(claimed_id: NodeId, presented_pubkey: bytes, difficulty: int = 0) -> bool:
    """Accept iff the presented key re-derives the claimed id and the puzzle holds.

    A reject means the caller must drop the connection.
    """
    derived = derive_node_id(presented_pubkey)
    return derived == claimed_id and puzzle_ok(derived, difficulty)


def sign(identity: NodeIdentity, payload: bytes) -> Signature:
    try:
        private = Ed25519PrivateKey.from_private_bytes(identity.private_key)
    except (ValueError, TypeError) as exc:
        raise KeyFormatError(str(exc)) from exc
    return Signature(
        signer=identity.node_id,
        payload_hash=hash_bytes(payload),
        sig_bytes=private.sign(bytes(payload)),
    )


def verify_sig(public_key: bytes, payload: bytes, signature: Signature) -> bool:
    if signature.payload_hash != hash_bytes(payload):
        return False
    return verify_raw(public_key, payload, signature.sig_bytes)


def verify_raw(public_key: bytes, payload: bytes, sig_bytes: bytes) -> bool:
    """Bare signature check used by wire formats that carry raw sig bytes."""
    try:
        pub = Ed25519PublicKey.from_public_bytes(public_key)
    except (ValueError, TypeError) as exc:
        raise KeyFormatError(str(exc)) from exc
    try:
        pub.verify(sig_bytes, bytes(payload))
        return True
    except InvalidSignature:
        return False


def sign_raw(identity: NodeIdentity, payload: bytes) -> bytes:
    return sign(identity, payload).sig_bytes


# ---------------------------------------------------------------------------
# Identity file: versioned header, node id, public key, encrypted private key
# ---------------------------------------------------------------------------

_FILE_VERSION = 1
_SCRYPT_N = 2 ** 14
_SALT_LEN = 16
_NONCE_LEN = 12


def _key_from_passphrase(passphrase: bytes, salt: bytes) -> bytes:
    kdf = Scrypt(salt=salt, length=32, n=_SCRYPT_N, r=8, p=1)
    return kdf.derive(passphrase)


def save_identity(path: str, identity: NodeIdentity, passphrase: bytes = b"") -> None:
    """Write the identity file; the private key is encrypted at rest.

    In-memory simulations pass the empty (null) passphrase.
    """
    salt = os.urandom(_SALT_LEN)
    nonce = os.urandom(_NONCE_LEN)
    sealed = ChaCha20Poly1305(_key_from_passphrase(passphrase, salt)).encrypt(
        nonce, identity.private_key, b""
    )
    blob = salt + nonce + sealed
    node_id = identity.node_id.encode()
    out = bytes([_FILE_VERSION]) + node_id
    out += encode_uvarint(len(identity.public_key)) + identity.public_key
    out += encode_uvarint(len(blob)) + blob
    tmp = path + ".tmp"
    with open(tmp, "wb") as fh:
        fh.write(out)
    os.replace(tmp, path)


def load_identity(path: str, passphrase: bytes = b"") -> NodeIdentity:
    with open(path, "rb") as fh:
        raw = fh.read()
    if not raw or raw[0] != _FILE_VERSION:
        raise KeyFormatError("unsupported identity file version")
    node_id, off = read_multihash(raw, 1)
    pk_len, off = read_uvarint(raw, off)
    public_key = raw[off:off + pk_len]
    off += pk_len
    blob_len, off = read_uvarint(raw, off)
    blob = raw[off:off + blob_len]
    if len(public_key) != pk_len or len(blob) != blob_len:
        raise TruncatedError("identity file truncated")
    salt, nonce, sealed = blob[:_SALT_LEN], blob[_SALT_LEN:_SALT_LEN + _NONCE_LEN], blob[_SALT_LEN + _NONCE_LEN:]
    try:
        private = ChaCha20Poly1305(_key_from_passphrase(passphrase, salt)).decrypt(nonce, sealed, b"")
    except Exception as exc:
        raise KeyFormatError(f"cannot unseal private key: {exc}") from exc
    loaded = NodeIdentity(node_id, bytes(public_key), private)
    if derive_node_id(loaded.public_key) != node_id:
        raise KeyFormatError("identity file node id does not match public key")
    return loaded
