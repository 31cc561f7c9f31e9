import hashlib
import random

import pytest

from dagswap.errors import DifficultyTooHigh, KeyFormatError
from dagswap.identity import (
    derive_node_id,
    generate_identity,
    leading_zero_bits,
    load_identity,
    puzzle_ok,
    save_identity,
    sign,
    verify_peer,
    verify_sig,
)


def independent_node_id_digest(public_key: bytes) -> bytes:
    """Recompute the double hash without going through the package helpers."""
    inner = b"\x12\x20" + hashlib.sha256(public_key).digest()
    return hashlib.sha256(inner).digest()


def test_node_id_is_double_hash_of_pubkey(ident):
    assert ident.node_id.digest == independent_node_id_digest(ident.public_key)


def test_generation_is_deterministic_under_seed():
    a = generate_identity(4, random.Random(99))
    b = generate_identity(4, random.Random(99))
    assert a == b


def test_zero_difficulty_accepts_first_keypair():
    rng = random.Random(3)
    ident = generate_identity(0, rng)
    # exactly one keypair drawn: regenerate from the same seed and compare
    assert ident.private_key == random.Random(3).randbytes(32)


def test_difficulty_eight_leading_zero_bits():
    ident = generate_identity(8, random.Random(11))
    digest = independent_node_id_digest(ident.public_key)
    count = 0
    for byte in digest:
        if byte == 0:
            count += 8
            continue
        count += 8 - byte.bit_length()
        break
    assert count >= 8
    assert ident.node_id.digest[0] == 0


def test_difficulty_guard():
    with pytest.raises(DifficultyTooHigh):
        generate_identity(30)


def test_puzzle_monotonic():
    ident = generate_identity(8, random.Random(12))
    for lower in range(9):
        assert puzzle_ok(ident.node_id, lower)


def test_verify_peer_accepts_own_key(ident):
    assert verify_peer(ident.node_id, ident.public_key)


def test_verify_peer_rejects_foreign_key(ident, other_ident):
    assert not verify_peer(ident.node_id, other_ident.public_key)


def test_verify_peer_enforces_difficulty():
    rng = random.Random(5)
    # find an identity that fails the puzzle at difficulty 8
    while True:
        ident = generate_identity(0, rng)
        if leading_zero_bits(ident.node_id.digest) < 8:
            break
    assert verify_peer(ident.node_id, ident.public_key, difficulty=0)
    assert not verify_peer(ident.node_id, ident.public_key, difficulty=8)


def test_sign_verify_round_trip(ident):
    sig = sign(ident, b"payload")
    assert verify_sig(ident.public_key, b"payload", sig)


def test_bit_flip_rejected(ident):
    sig = sign(ident, b"payload")
    assert not verify_sig(ident.public_key, b"paxload", sig)


def test_wrong_key_rejected(ident, other_ident):
    sig = sign(ident, b"payload")
    assert not verify_sig(other_ident.public_key, b"payload", sig)


def test_signature_soundness_sampled(ident):
    # no false accepts across 1000 random payload/bit-flip trials
    rng = random.Random(77)
    for _ in range(1000):
        payload = rng.randbytes(rng.randrange(1, 64))
        sig = sign(ident, payload)
        mutated = bytearray(payload)
        mutated[rng.randrange(len(mutated))] ^= 1 << rng.randrange(8)
        assert not verify_sig(ident.public_key, bytes(mutated), sig)
    # and flipped signature bytes are also rejected
    payload = b"stable payload"
    sig = sign(ident, payload)
    for _ in range(100):
        bad = bytearray(sig.sig_bytes)
        bad[rng.randrange(len(bad))] ^= 1 << rng.randrange(8)
        flipped = type(sig)(sig.signer, sig.payload_hash, bytes(bad))
        assert not verify_sig(ident.public_key, payload, flipped)


def test_malformed_key_bytes(ident):
    with pytest.raises(KeyFormatError):
        verify_sig(b"short", b"payload", sign(ident, b"payload"))


def test_identity_file_round_trip(tmp_path, ident):
    path = str(tmp_path / "identity.key")
    save_identity(path, ident, b"hunter2")
    loaded = load_identity(path, b"hunter2")
    assert loaded == ident


def test_identity_file_null_passphrase(tmp_path, ident):
    path = str(tmp_path / "identity.key")
    save_identity(path, ident)
    assert load_identity(path) == ident


def test_identity_file_wrong_passphrase(tmp_path, ident):
    path = str(tmp_path / "identity.key")
    save_identity(path, ident, b"right")
    with pytest.raises(KeyFormatError):
        load_identity(path, b"wrong")


def test_derive_matches_generate(ident):
    assert derive_node_id(ident.public_key) == ident.node_id
