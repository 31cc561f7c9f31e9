import json
import random

import pytest
from hypothesis import given, strategies as st

from dagswap.blockstore import MemoryBlockStore
from dagswap.errors import (
    DecodeError,
    FetchError,
    KeyNotFound,
    NoKey,
    DecryptError,
    PathNotFound,
    PublishError,
    SignatureError,
)
from dagswap.identity import generate_identity
from dagswap.merkledag import (
    DagLink,
    DagObject,
    EncryptedObject,
    cumulative_size,
    decode_any,
    decode_object,
    decrypt_object,
    encode_encrypted,
    encode_object,
    encode_signed,
    encrypt_object,
    from_text,
    link_to,
    list_links,
    object_key,
    publish,
    refs_recursive,
    resolve_path,
    sign_object,
    to_text,
    verify_link_sizes,
    verify_object,
)
from dagswap.multiformats import Multiaddr, hash_bytes
from dagswap.routing import MemoryRouting, MemoryRoutingHub
from conftest import load_vectors


@pytest.fixture
def store():
    return MemoryBlockStore()


def put(store, obj):
    return store.put(encode_object(obj))


def chain_store(store):
    """foo -> bar -> baz via named links; returns (foo, bar, baz) keys."""
    baz = DagObject((), b"baz content")
    baz_key = put(store, baz)
    bar = DagObject((link_to("baz", baz),), b"bar content")
    bar_key = put(store, bar)
    foo = DagObject((link_to("bar", bar),), b"foo content")
    foo_key = put(store, foo)
    return foo_key, bar_key, baz_key


class TestEncoding:
    def test_empty_object_is_two_bytes(self):
        raw = encode_object(DagObject())
        assert raw == b"\x00\x00"
        assert decode_object(raw) == DagObject()
        assert object_key(DagObject()) == object_key(DagObject())

    def test_link_order_is_semantic(self):
        a = DagLink("a", hash_bytes(b"a"), 1)
        b = DagLink("b", hash_bytes(b"b"), 2)
        assert object_key(DagObject((a, b))) != object_key(DagObject((b, a)))

    def test_golden_vectors(self):
        # expected bytes were assembled by hand from the canonical grammar
        for text, binary in load_vectors("dag_objects.txt"):
            obj = from_text(text.decode("utf-8"))
            assert encode_object(obj) == binary
            assert decode_object(binary) == obj

    def test_trailing_bytes_rejected(self):
        with pytest.raises(DecodeError):
            decode_object(b"\x00\x00\x00")

    def test_truncation_rejected_with_offset(self):
        raw = encode_object(DagObject((link_to("x", DagObject()),), b"data"))
        with pytest.raises(DecodeError):
            decode_object(raw[:-3])

    @given(st.lists(st.tuples(st.text(max_size=8), st.binary(max_size=32),
                              st.integers(0, 1 << 20)), max_size=4),
           st.binary(max_size=128))
    def test_round_trip(self, raw_links, data):
        links = tuple(DagLink(name, hash_bytes(digest), size)
                      for name, digest, size in raw_links)
        obj = DagObject(links, data)
        assert decode_object(encode_object(obj)) == obj
        assert object_key(obj) == hash_bytes(encode_object(obj))

    def test_tamper_evidence_sampled(self, rng):
        obj = DagObject((link_to("x", DagObject((), b"t")),), b"payload")
        raw = encode_object(obj)
        key = object_key(obj)
        for _ in range(200):
            mutated = bytearray(raw)
            mutated[rng.randrange(len(raw))] ^= 1 << rng.randrange(8)
            if bytes(mutated) == raw:
                continue
            try:
                decoded = decode_object(bytes(mutated))
            except DecodeError:
                continue
            assert hash_bytes(encode_object(decoded)) != key


class TestTraversal:
    def test_empty_path_is_root(self, store):
        foo, _, _ = chain_store(store)
        assert resolve_path(foo, [], store.get) == foo

    def test_chain_equivalence(self, store):
        foo, bar, baz = chain_store(store)
        assert resolve_path(foo, ["bar", "baz"], store.get) == baz
        assert resolve_path(bar, ["baz"], store.get) == baz

    def test_path_not_found_carries_component_index(self, store):
        foo, _, _ = chain_store(store)
        with pytest.raises(PathNotFound) as err:
            resolve_path(foo, ["nonexistent"], store.get)
        assert err.value.index == 0

    def test_first_matching_link_wins(self, store):
        one = DagObject((), b"one")
        two = DagObject((), b"two")
        parent = DagObject((link_to("dup", one), link_to("dup", two)), b"")
        for obj in (one, two, parent):
            put(store, obj)
        assert resolve_path(object_key(parent), ["dup"], store.get) == object_key(one)

    def test_list_links_rows(self, store):
        foo, bar, _ = chain_store(store)
        rows = list_links(foo, store.get)
        assert rows == [(bar, rows[0][1], "bar")]

    def test_refs_of_leaf_is_empty(self, store):
        leaf_key = put(store, DagObject((), b"leaf"))
        assert refs_recursive(leaf_key, store.get) == []

    def test_refs_diamond_deduplicates(self, store):
        c = DagObject((), b"c")
        a = DagObject((link_to("c", c),), b"a")
        b = DagObject((link_to("c", c),), b"b")
        root = DagObject((link_to("a", a), link_to("b", b)), b"root")
        for obj in (c, a, b, root):
            put(store, obj)
        refs = refs_recursive(object_key(root), store.get)
        assert refs.count(object_key(c)) == 1
        assert len(refs) == 3

    def test_refs_preorder_matches_brute_force(self, store):
        # three-level balanced tree of 7 nodes
        leaves = [DagObject((), bytes([i])) for i in range(4)]
        mids = [DagObject((link_to("l", leaves[2 * i]), link_to("r", leaves[2 * i + 1])), b"m%d" % i)
                for i in range(2)]
        root = DagObject((link_to("l", mids[0]), link_to("r", mids[1])), b"root")
        for obj in leaves + mids + [root]:
            put(store, obj)

        def brute_force(key, seen):
            out = []
            for link in decode_object(store.get(key)).links:
                if link.hash in seen:
                    continue
                seen.add(link.hash)
                out.append(link.hash)
                out.extend(brute_force(link.hash, seen))
            return out

        expected = brute_force(object_key(root), set())
        assert refs_recursive(object_key(root), store.get) == expected
        assert len(expected) == 6

    def test_refs_missing_object_reports_partial(self, store):
        foo, bar, baz = chain_store(store)
        store._remove(baz.encode())
        with pytest.raises(FetchError) as err:
            refs_recursive(foo, store.get)
        assert bar in err.value.partial

    def test_acyclic_visit_bound(self, store, rng):
        # randomized DAGs never revisit: visited count <= node count
        keys = []
        for i in range(20):
            links = tuple(
                DagLink(f"l{j}", keys[rng.randrange(len(keys))], 0)
                for j in range(min(len(keys), rng.randrange(3)))
            )
            obj = DagObject(links, bytes([i]))
            keys.append(put(store, obj))
        refs = refs_recursive(keys[-1], store.get)
        assert len(refs) == len(set(r.encode() for r in refs)) <= 20


class TestDedup:
    def test_storing_graph_twice_adds_no_blocks(self, store):
        foo, _, _ = chain_store(store)
        before = len(store)
        chain_store(store)
        assert len(store) == before


class TestSizes:
    def test_cumulative_size_definition(self, store):
        leaf = DagObject((), b"leaf bytes")
        mid = DagObject((link_to("leaf", leaf),), b"mid")
        assert cumulative_size(leaf) == len(encode_object(leaf))
        assert (cumulative_size(mid)
                == len(encode_object(mid)) + cumulative_size(leaf))

    def test_verify_link_sizes_flags_bad_links(self, store):
        leaf = DagObject((), b"leaf")
        put(store, leaf)
        good = DagObject((link_to("leaf", leaf),), b"")
        assert verify_link_sizes(good, store.get) == []
        bad = DagObject((DagLink("leaf", object_key(leaf), 1),), b"")
        assert len(verify_link_sizes(bad, store.get)) == 1


class TestPublish:
    def test_publish_then_lookup(self, store, ident):
        hub = MemoryRoutingHub()
        routing = MemoryRouting(hub, ident, Multiaddr.sim(0))
        key = put(store, DagObject((), b"published"))
        assert publish(key, ident, routing, store) == key
        providers, shortfall = routing.find_value_peers(key, 1)
        assert not shortfall
        assert providers[0][0] == ident.node_id

    def test_publish_is_idempotent(self, store, ident):
        hub = MemoryRoutingHub()
        routing = MemoryRouting(hub, ident, Multiaddr.sim(0))
        key = put(store, DagObject((), b"published"))
        publish(key, ident, routing, store)
        publish(key, ident, routing, store)
        providers, _ = routing.find_value_peers(key, 1)
        assert len(providers) == 1

    def test_modified_object_is_a_new_object(self, store, ident):
        hub = MemoryRoutingHub()
        routing = MemoryRouting(hub, ident, Multiaddr.sim(0))
        key = put(store, DagObject((), b"version 1"))
        publish(key, ident, routing, store)
        key2 = put(store, DagObject((), b"version 2"))
        assert key2 != key
        assert store.get(key) == encode_object(DagObject((), b"version 1"))

    def test_unstored_object_refuses_publish(self, store, ident):
        hub = MemoryRoutingHub()
        routing = MemoryRouting(hub, ident, Multiaddr.sim(0))
        with pytest.raises(PublishError):
            publish(hash_bytes(b"never stored"), ident, routing, store)


class TestSignedObjects:
    def test_round_trip(self, store, ident):
        obj = DagObject((), b"signed payload")
        signed = sign_object(obj, ident)
        store.put(ident.public_key)
        assert verify_object(signed, store.get) == obj

    def test_flipped_byte_rejected(self, store, ident):
        obj = DagObject((), b"signed payload")
        signed = sign_object(obj, ident)
        store.put(ident.public_key)
        tampered = type(signed)(
            signed.object_bytes[:-1] + bytes([signed.object_bytes[-1] ^ 1]),
            signed.signature, signed.public_key)
        with pytest.raises(SignatureError):
            verify_object(tampered, store.get)

    def test_unresolvable_key(self, store, ident):
        signed = sign_object(DagObject((), b"x"), ident)
        with pytest.raises(KeyNotFound):
            verify_object(signed, store.get)

    def test_frame_encoding_round_trip(self, ident):
        signed = sign_object(DagObject((), b"x"), ident)
        assert decode_any(encode_signed(signed)) == signed

    def test_traversal_verifies_transparently(self, store, ident):
        inner = DagObject((), b"inner")
        inner_key = put(store, inner)
        signed = sign_object(DagObject((link_to("inner", inner),), b""), ident)
        store.put(ident.public_key)
        signed_key = store.put(encode_signed(signed))
        assert resolve_path(signed_key, ["inner"], store.get) == inner_key


class TestEncryptedObjects:
    KEY1 = bytes(range(32))
    KEY2 = bytes(range(32, 64))

    def test_round_trip(self):
        obj = DagObject((), b"secret")
        enc = encrypt_object(obj, self.KEY1, tag=b"grp")
        assert decrypt_object(enc, {b"grp": self.KEY1}) == obj

    def test_no_keychain_entry(self):
        enc = encrypt_object(DagObject(), self.KEY1, tag=b"grp")
        with pytest.raises(NoKey):
            decrypt_object(enc, {b"other": self.KEY1})

    def test_tamper_detected(self):
        enc = encrypt_object(DagObject(), self.KEY1, tag=b"grp")
        bad = EncryptedObject(
            enc.object_bytes[:-1] + bytes([enc.object_bytes[-1] ^ 1]), enc.tag)
        with pytest.raises(DecryptError):
            decrypt_object(bad, {b"grp": self.KEY1})

    def test_traversal_blocked_without_key(self, store):
        inner = DagObject((), b"inner")
        put(store, inner)
        enc = encrypt_object(DagObject((link_to("inner", inner),), b""), self.KEY1)
        enc_key = store.put(encode_encrypted(enc))
        with pytest.raises(NoKey):
            resolve_path(enc_key, ["inner"], store.get)

    def test_traversal_with_keychain(self, store):
        inner = DagObject((), b"inner")
        inner_key = put(store, inner)
        enc = encrypt_object(DagObject((link_to("inner", inner),), b""), self.KEY1, tag=b"a")
        enc_key = store.put(encode_encrypted(enc))
        assert resolve_path(enc_key, ["inner"], store.get,
                            keychain={b"a": self.KEY1}) == inner_key

    def test_parent_and_child_under_different_keys(self, store):
        child = DagObject((), b"child secret")
        child_enc = encrypt_object(child, self.KEY2, tag=b"child")
        child_key = store.put(encode_encrypted(child_enc))
        parent = DagObject((DagLink("child", child_key, 0),), b"parent")
        parent_enc = encrypt_object(parent, self.KEY1, tag=b"parent")
        parent_key = store.put(encode_encrypted(parent_enc))
        keychain = {b"parent": self.KEY1}
        # the parent opens, the child's frame does not
        opened = decrypt_object(decode_any(store.get(parent_key)), keychain)
        assert opened == parent
        with pytest.raises(NoKey):
            resolve_path(parent_key, ["child", "x"], store.get, keychain=keychain)


class TestTextForm:
    def test_round_trip(self):
        obj = DagObject((link_to("child", DagObject((), b"c")),), b"printable data")
        assert from_text(to_text(obj)) == obj

    def test_shape_matches_printed_examples(self):
        obj = DagObject((link_to("less", DagObject((), b"x")),), b"some data here")
        doc = json.loads(to_text(obj))
        assert set(doc) == {"data", "links"}
        assert set(doc["links"][0]) == {"hash", "name", "size"}
        assert doc["data"] == "some data here"

    def test_binary_data_round_trips(self):
        obj = DagObject((), bytes(range(16)))
        assert from_text(to_text(obj)) == obj
