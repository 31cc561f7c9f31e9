import random

import pytest

from dagswap.errors import ValueTooLarge
from dagswap.identity import generate_identity
from dagswap.multiformats import Multiaddr, hash_bytes
from dagswap.netsim import SimNet, spawn
from dagswap.routing import (
    MemoryRouting,
    MemoryRoutingHub,
    PROVIDER_CAP_PER_KEY,
    PROVIDER_EXPIRY_MS,
    ProviderRecord,
    RoutingTable,
    SmallValueRecord,
    ValueStore,
)
from dagswap.routing.dht import LookupStats
from dagswap.routing.records import make_value_record
from dagswap.routing.table import node_int, shared_prefix_bits


class TestRoutingTable:
    def make_idents(self, count, seed=0):
        rng = random.Random(seed)
        return [generate_identity(0, rng) for _ in range(count)]

    def test_prefix_invariant_after_updates(self):
        owner, *others = self.make_idents(40)
        table = RoutingTable(owner.node_id, k=4)
        for i, ident in enumerate(others):
            table.update(ident.node_id, Multiaddr.sim(i), now=float(i))
        assert table.audit() == []

    def test_owner_never_stored(self):
        owner = self.make_idents(1)[0]
        table = RoutingTable(owner.node_id)
        assert not table.update(owner.node_id, Multiaddr.sim(0), 0.0)
        assert len(table) == 0

    def test_lru_order_and_refresh(self):
        owner, a, b = self.make_idents(3, seed=2)
        table = RoutingTable(owner.node_id)
        table.update(a.node_id, Multiaddr.sim(1), 1.0)
        table.update(b.node_id, Multiaddr.sim(2), 2.0)
        table.update(a.node_id, Multiaddr.sim(1), 3.0)  # refresh moves to tail
        assert table.audit() == []
        entry = table._index[a.node_id.encode()][1]
        assert entry.last_seen == 3.0

    def test_full_bucket_keeps_older_entries(self):
        idents = self.make_idents(200, seed=3)
        owner = idents[0]
        table = RoutingTable(owner.node_id, k=2)
        for i, ident in enumerate(idents[1:]):
            table.update(ident.node_id, Multiaddr.sim(i), float(i))
        for bucket in table.buckets:
            assert len(bucket) <= 2
        assert table.audit() == []

    def test_closest_is_sorted_by_xor(self):
        idents = self.make_idents(30, seed=4)
        owner, rest = idents[0], idents[1:]
        table = RoutingTable(owner.node_id)
        for i, ident in enumerate(rest):
            table.update(ident.node_id, Multiaddr.sim(i), float(i))
        target = node_int(hash_bytes(b"target"))
        got = [node_int(e.node_id) ^ target for e in table.closest(target, 10)]
        assert got == sorted(got)

    def test_shared_prefix_bits(self):
        assert shared_prefix_bits(0, 0) == 256
        assert shared_prefix_bits(0, 1) == 255
        assert shared_prefix_bits(0, 1 << 255) == 0


class TestRecords:
    def test_value_record_round_trip(self, ident):
        record = make_value_record(b"key", b"value", ident, 3)
        assert SmallValueRecord.decode(record.encode()) == record
        assert record.valid()

    def test_value_size_rule(self, ident):
        make_value_record(b"key", bytes(1024), ident, 1)  # boundary holds
        with pytest.raises(ValueTooLarge):
            make_value_record(b"key", bytes(1025), ident, 1)

    def test_forged_signature_invalid(self, ident, other_ident):
        record = make_value_record(b"key", b"value", ident, 1)
        forged = SmallValueRecord(record.key, b"other value", record.publisher,
                                  record.sequence, record.public_key,
                                  record.signature)
        assert not forged.valid()

    def test_publisher_key_binding(self, ident, other_ident):
        record = make_value_record(b"key", b"value", ident, 1)
        wrong = SmallValueRecord(record.key, record.value, other_ident.node_id,
                                 record.sequence, record.public_key, record.signature)
        assert not wrong.valid()

    def test_node_id_keys_are_owner_only(self, ident, other_ident):
        # a record keyed by a node id is only writable by that node
        mine = make_value_record(ident.node_id.encode(), b"v", ident, 1)
        assert mine.valid()
        stolen = make_value_record(ident.node_id.encode(), b"v", other_ident, 9)
        assert not stolen.valid()

    def test_store_keeps_highest_sequence(self, ident):
        store = ValueStore()
        assert store.consider(make_value_record(b"k", b"v1", ident, 1))
        assert store.consider(make_value_record(b"k", b"v2", ident, 2))
        assert not store.consider(make_value_record(b"k", b"v0", ident, 1))
        assert store.get(b"k").value == b"v2"

    def test_provider_record_round_trip(self, ident):
        record = ProviderRecord(hash_bytes(b"content"), ident.node_id,
                                Multiaddr.sim(4), 1000.0)
        assert ProviderRecord.decode(record.encode()) == record


class TestMemoryRouting:
    def make(self, ident, addr=0, clock=lambda: 0.0):
        hub = MemoryRoutingHub(clock)
        return hub, MemoryRouting(hub, ident, Multiaddr.sim(addr))

    def test_set_get(self, ident):
        _, routing = self.make(ident)
        routing.set_value(b"k", b"v")
        assert routing.get_value(b"k") == b"v"

    def test_value_too_large(self, ident):
        _, routing = self.make(ident)
        with pytest.raises(ValueTooLarge):
            routing.set_value(b"k", bytes(1025))

    def test_sequence_resolution(self, ident):
        _, routing = self.make(ident)
        routing.set_value(b"k", b"first", sequence=1)
        routing.set_value(b"k", b"second", sequence=2)
        assert routing.get_value(b"k") == b"second"

    def test_find_peer(self, ident, other_ident):
        hub, routing = self.make(ident)
        other = MemoryRouting(hub, other_ident, Multiaddr.sim(9))
        assert routing.find_peer(other_ident.node_id) == Multiaddr.sim(9)
        assert routing.find_peer(ident.node_id) == Multiaddr.sim(0)

    def test_providers(self, ident):
        _, routing = self.make(ident)
        key = hash_bytes(b"content")
        routing.provide(key)
        providers, shortfall = routing.find_value_peers(key, 1)
        assert providers == [(ident.node_id, Multiaddr.sim(0))]
        assert not shortfall
        _, shortfall = routing.find_value_peers(key, 2)
        assert shortfall


def run_lookup(net, fn, *args, **kwargs):
    box = {}
    fn(*args, on_done=lambda *r: box.__setitem__("r", r if len(r) > 1 else r[0]),
       **kwargs)
    net.run_until_quiescent()
    return box.get("r")


class TestDhtBasics:
    def test_find_peer_self(self):
        net = SimNet(seed=0)
        peer = spawn(net, 1)[0]
        assert run_lookup(net, peer.dht.find_peer, peer.node_id) == peer.multiaddr

    def test_two_node_lookup(self):
        net = SimNet(seed=0)
        a, b = spawn(net, 2, bootstrap_r=1)
        assert run_lookup(net, a.dht.find_peer, b.node_id) == b.multiaddr

    def test_unbootstrapped_node_finds_nothing(self):
        net = SimNet(seed=0)
        lonely, target = spawn(net, 2, bootstrap_r=0, refresh=False)
        assert len(lonely.dht.table) == 0
        assert run_lookup(net, lonely.dht.find_peer, target.node_id) is None

    def test_single_node_set_get(self):
        net = SimNet(seed=0)
        peer = spawn(net, 1)[0]
        peer.dht.set_value(b"k", b"v")
        net.run_until_quiescent()
        assert run_lookup(net, peer.dht.get_value, b"k") == b"v"

    def test_sequence_wins_across_network(self):
        net = SimNet(seed=2)
        peers = spawn(net, 24, bootstrap_r=3)
        pub = peers[3]
        pub.dht.set_value(b"name", b"old")
        net.run_until_quiescent()
        pub.dht.set_value(b"name", b"new")
        net.run_until_quiescent()
        values = {run_lookup(net, p.dht.get_value, b"name") for p in peers[10:16]}
        assert values == {b"new"}

    def test_get_value_ignores_forged_records(self, other_ident):
        net = SimNet(seed=4)
        peers = spawn(net, 12, bootstrap_r=2)
        pub = peers[0]
        pub.dht.set_value(b"safe", b"genuine")
        net.run_until_quiescent()
        # poison one node's store with a forged record under the same key
        victim = peers[5]
        good = victim.dht.values.get(b"safe")
        forged = SmallValueRecord(b"safe", b"evil", other_ident.node_id, 99,
                                  other_ident.public_key, b"\x00" * 64)
        victim.dht.values._records[b"safe"] = forged
        assert run_lookup(net, peers[9].dht.get_value, b"safe") == b"genuine"


class TestProviders:
    def test_provide_and_find(self):
        net = SimNet(seed=5)
        peers = spawn(net, 16, bootstrap_r=3)
        key = hash_bytes(b"big content")
        for p in peers[2:5]:
            p.dht.provide(key)
        net.run_until_quiescent()
        providers, shortfall = run_lookup(net, peers[10].dht.find_value_peers, key, 2)
        assert len(providers) >= 2 and not shortfall
        ids = {p for p, _ in providers}
        assert ids <= {p.node_id for p in peers[2:5]}

    def test_shortfall_indicator(self):
        net = SimNet(seed=6)
        peers = spawn(net, 8, bootstrap_r=2)
        key = hash_bytes(b"rare content")
        peers[1].dht.provide(key)
        net.run_until_quiescent()
        providers, shortfall = run_lookup(net, peers[4].dht.find_value_peers, key, 3)
        assert len(providers) == 1 and shortfall

    def test_saturation_spills_without_hotspots(self):
        net = SimNet(seed=7)
        peers = spawn(net, 64, bootstrap_r=3)
        key = hash_bytes(b"very popular content")
        for p in peers[:32]:
            p.dht.provide(key)
            net.run_until_quiescent()
        for p in peers:
            stored = p.dht.providers.get(key, net.now)
            own = [r for r in stored if r.provider == p.node_id]
            assert len(stored) - len(own) <= PROVIDER_CAP_PER_KEY
        # the records spread across many nodes rather than one neighborhood
        holders = sum(1 for p in peers if p.dht.providers.get(key, net.now))
        assert holders > 16

    def test_expiry_excludes_stale_records(self):
        net = SimNet(seed=8)
        peers = spawn(net, 8, bootstrap_r=2)
        key = hash_bytes(b"fleeting content")
        peers[0].dht.provide(key)
        net.run_until_quiescent()
        providers, _ = run_lookup(net, peers[3].dht.find_value_peers, key, 1)
        assert providers
        net.run_until(net.now + PROVIDER_EXPIRY_MS + 1)
        providers, shortfall = run_lookup(net, peers[3].dht.find_value_peers, key, 1)
        assert providers == [] and shortfall


class TestDisjointLookups:
    def test_single_path_equals_find_peer(self):
        net = SimNet(seed=9)
        peers = spawn(net, 24, bootstrap_r=3)
        src, dst = peers[1], peers[20]
        a = run_lookup(net, src.dht.disjoint_lookup, dst.node_id, 1)
        b = run_lookup(net, src.dht.find_peer, dst.node_id)
        assert a == b == dst.multiaddr

    def test_degenerate_fallback_with_one_neighbor(self):
        net = SimNet(seed=10)
        a, b = spawn(net, 2, bootstrap_r=1)
        assert run_lookup(net, a.dht.disjoint_lookup, b.node_id, 2) == b.multiaddr

    def test_paths_are_pairwise_disjoint(self):
        net = SimNet(seed=11)
        peers = spawn(net, 64, bootstrap_r=4)
        src = peers[0]
        # force a real multi-path lookup toward an unknown-but-present target
        target = peers[63]
        src.dht.table.remove(target.node_id)
        paths: list = []
        box = {}
        src.dht.disjoint_lookup(target.node_id, 4,
                                lambda a: box.__setitem__("a", a),
                                debug_paths=paths)
        net.run_until_quiescent()
        assert len(paths) > 1
        seen = {}
        for lookup in paths:
            for raw in lookup.queried:
                assert raw not in seen or seen[raw] == lookup.path_id
                seen[raw] = lookup.path_id


class TestLookupStats:
    def test_contacted_counts_are_recorded(self):
        net = SimNet(seed=12)
        peers = spawn(net, 48, bootstrap_r=3)
        src, dst = peers[0], peers[40]
        src.dht.table.remove(dst.node_id)
        stats = LookupStats()
        box = {}
        src.dht.find_peer(dst.node_id, lambda a: box.__setitem__("a", a), stats=stats)
        net.run_until_quiescent()
        assert box["a"] == dst.multiaddr
        assert stats.contacted >= 1
        assert stats.rpcs >= stats.contacted
