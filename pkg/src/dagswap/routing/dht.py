"""Kademlia-style DSHT node with provider records and disjoint-path lookups.

Lookups iterate toward the target by XOR distance with a bounded number of
in-flight queries; every responder lands in the routing table, every silent
node is routed around after a timeout.  Values are replicated to the k
closest nodes; providers additionally spill outward when a storing node hits
its per-key cap, which keeps popular keys from overloading their immediate
neighborhood.

The node is one logical actor: frames and timers arrive serialized, state is
touched only from those callbacks.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field
from typing import Callable, Optional

from .. import identity as identity_mod
from ..errors import DagswapError
from ..multiformats import Multiaddr, Multihash, multihash_decode
from .. import wire
from .records import (
    PROVIDER_EXPIRY_MS,
    ProviderRecord,
    ProviderStore,
    SmallValueRecord,
    ValueStore,
    better_record,
    key_to_int,
    make_value_record,
)
from .table import DEFAULT_K, RoutingTable, node_int

DEFAULT_ALPHA = 3
RPC_TIMEOUT_MS = 500.0


@dataclass
class LookupStats:
    contacted: int = 0  # distinct nodes queried
    rpcs: int = 0
    timeouts: int = 0


@dataclass
class _Candidate:
    node_id: Multihash
    addr: Multiaddr
    dist: int


class _Lookup:
    """One iterative lookup; ``kind`` is node, value or providers."""

    def __init__(self, node: "DhtNode", kind: str, target_mh: Multihash,
                 on_done: Callable, key: Optional[bytes] = None,
                 want: int = 0, claimed: Optional[dict] = None, path_id: int = 0,
                 stats: Optional[LookupStats] = None):
        self.node = node
        self.kind = kind
        self.target_mh = target_mh
        self.target_int = key_to_int(key) if kind == "value" else node_int(target_mh)
        self.key = key
        self.want = want
        self.on_done = on_done
        self.claimed = claimed
        self.path_id = path_id
        self.stats = stats if stats is not None else LookupStats()
        self.shortlist: dict[bytes, _Candidate] = {}
        self.queried: set[bytes] = set()
        self.responded: dict[bytes, int] = {}
        self.inflight = 0
        self.done = False
        self.stopped = False
        self.values: list[SmallValueRecord] = []
        self.providers: dict[bytes, tuple[Multihash, Multiaddr]] = {}
        self.found_addr: Optional[Multiaddr] = None

    def add_candidate(self, node_id: Multihash, addr: Multiaddr) -> None:
        raw = node_id.encode()
        if node_id == self.node.identity.node_id or raw in self.shortlist:
            return
        self.shortlist[raw] = _Candidate(node_id, addr, node_int(node_id) ^ self.target_int)
        if self.kind == "node" and node_int(node_id) == self.target_int:
            self.found_addr = addr

    def start(self, seeds) -> None:
        for entry in seeds:
            self.add_candidate(entry.node_id, entry.addr)
            if self.claimed is not None:
                self.claimed.setdefault(entry.node_id.encode(), self.path_id)
        self.step()

    # -- progress ----------------------------------------------------------

    def _eligible(self) -> list[_Candidate]:
        out = []
        for raw, cand in self.shortlist.items():
            if raw in self.queried:
                continue
            if self.claimed is not None:
                owner = self.claimed.get(raw)
                if owner is not None and owner != self.path_id:
                    continue  # another disjoint path got there first
            out.append(cand)
        out.sort(key=lambda c: (c.dist, c.node_id.encode()))
        return out

    def _kth_responded(self) -> Optional[int]:
        if len(self.responded) < self.node.k:
            return None
        return sorted(self.responded.values())[self.node.k - 1]

    def step(self) -> None:
        if self.done or self.stopped:
            return
        if self.kind == "node" and self.found_addr is not None:
            self._finish()
            return
        if self.kind == "providers" and self.want and len(self.providers) >= self.want:
            self._finish()
            return
        kth = self._kth_responded()
        eligible = self._eligible()
        for cand in eligible:
            if self.inflight >= self.node.alpha:
                return
            if kth is not None and cand.dist >= kth:
                continue  # no closer than the k best answers already in hand
            self._query(cand)
        if self.inflight == 0:
            self._finish()

    _TAGS = {"node": wire.FIND_NODE, "value": wire.FIND_VALUE, "providers": wire.GET_PROVIDERS}

    def _query(self, cand: _Candidate) -> None:
        raw = cand.node_id.encode()
        self.queried.add(raw)
        if self.claimed is not None:
            self.claimed.setdefault(raw, self.path_id)
        self.stats.contacted += 1
        self.stats.rpcs += 1
        self.inflight += 1
        req_id, writer = self.node._request(self._TAGS[self.kind])
        if self.kind == "value":
            writer.blob(self.key)
        elif self.kind == "providers":
            writer.multihash(self.target_mh).uint(self.want)
        else:
            writer.multihash(self.target_mh)
        self.node._send_rpc(cand.addr, req_id, writer.bytes(),
                            lambda reader, c=cand: self._on_reply(c, reader))

    def _on_reply(self, cand: _Candidate, reader: Optional[wire.Reader]) -> None:
        self.inflight -= 1
        if self.done or self.stopped:
            return
        raw = cand.node_id.encode()
        if reader is None:
            self.stats.timeouts += 1
            self.step()
            return
        self.responded[raw] = cand.dist
        try:
            self._parse_reply(reader)
        except DagswapError:
            pass
        self.step()

    def _parse_reply(self, reader: wire.Reader) -> None:
        tag = reader.tag
        if tag == wire.VALUE and self.kind == "value":
            if reader.uint():
                record = SmallValueRecord.decode(reader.blob())
                if record.valid():
                    self.values.append(record)
        elif tag == wire.PROVIDERS and self.kind == "providers":
            for _ in range(reader.uint()):
                rec = ProviderRecord.decode(reader.blob())
                if rec.expiry > self.node.now():
                    self.providers.setdefault(rec.provider.encode(), (rec.provider, rec.addr))
        elif tag != wire.NODES:
            return
        for _ in range(reader.uint()):
            node_id = reader.multihash()
            addr = Multiaddr.from_bytes(reader.blob())
            self.add_candidate(node_id, addr)

    def _finish(self) -> None:
        if self.done:
            return
        self.done = True
        self.on_done(self)

    def responded_closest(self) -> list[_Candidate]:
        cands = [self.shortlist[raw] for raw in self.responded]
        cands.sort(key=lambda c: (c.dist, c.node_id.encode()))
        return cands


def _synthetic_target(key: bytes) -> Multihash:
    """A multihash landing on the key's point in the XOR keyspace."""
    from ..multiformats import SHA256
    return Multihash(SHA256, key_to_int(key).to_bytes(32, "big"))


class DhtNode:
    """The routing actor; speaks the RPC frames over an injected transport.

    ``transport`` must provide:
        send(dst_addr: Multiaddr, frame: bytes)
        schedule(delay_ms, fn) -> cancelable handle
        now() -> float
    """

    def __init__(self, ident: identity_mod.NodeIdentity, addr: Multiaddr, transport,
                 rng: Optional[random.Random] = None, k: int = DEFAULT_K,
                 alpha: int = DEFAULT_ALPHA, rpc_timeout_ms: float = RPC_TIMEOUT_MS):
        self.identity = ident
        self.addr = addr
        self.transport = transport
        self.rng = rng or random.Random(0)
        self.k = k
        self.alpha = alpha
        self.rpc_timeout_ms = rpc_timeout_ms
        self.table = RoutingTable(ident.node_id, k)
        self.values = ValueStore()
        self.providers = ProviderStore()
        self.provided_keys: dict[bytes, Multihash] = {}  # ours, for republish
        self._sequences: dict[bytes, int] = {}
        self._pending: dict[int, tuple] = {}
        self._req_counter = 0

    def now(self) -> float:
        return self.transport.now()

    # -- rpc plumbing -------------------------------------------------------

    def _request(self, tag: int) -> tuple[int, wire.Writer]:
        self._req_counter += 1
        req_id = self._req_counter
        writer = wire.Writer(tag).uint(req_id).multihash(self.identity.node_id)
        return req_id, writer

    def _send_rpc(self, dst: Multiaddr, req_id: int, frame: bytes,
                  on_reply: Callable[[Optional[wire.Reader]], None]) -> None:
        def timeout() -> None:
            if self._pending.pop(req_id, None) is not None:
                on_reply(None)

        timer = self.transport.schedule(self.rpc_timeout_ms, timeout)
        self._pending[req_id] = (timer, on_reply)
        self.transport.send(dst, frame)

    def _reply(self, dst: Multiaddr, tag: int, req_id: int) -> wire.Writer:
        return wire.Writer(tag).uint(req_id).multihash(self.identity.node_id)

    def _closest_entries(self, target_int: int) -> list:
        return self.table.closest(target_int, self.k)

    @staticmethod
    def _write_entries(writer: wire.Writer, entries) -> None:
        writer.uint(len(entries))
        for entry in entries:
            writer.multihash(entry.node_id).blob(entry.addr.to_bytes())

    # -- frame handling -------------------------------------------------------

    def handle_frame(self, src_addr: Multiaddr, frame: bytes) -> None:
        if not frame:
            return
        reader = wire.Reader(frame)
        tag = reader.tag
        try:
            req_id = reader.uint()
            sender = reader.multihash()
        except DagswapError:
            return
        self.table.update(sender, src_addr, self.now())

        try:
            if tag == wire.PING:
                self.transport.send(src_addr, self._reply(src_addr, wire.PONG, req_id).bytes())
            elif tag == wire.FIND_NODE:
                target = reader.multihash()
                writer = self._reply(src_addr, wire.NODES, req_id)
                self._write_entries(writer, self._closest_entries(node_int(target)))
                self.transport.send(src_addr, writer.bytes())
            elif tag == wire.FIND_VALUE:
                key = reader.blob()
                writer = self._reply(src_addr, wire.VALUE, req_id)
                record = self.values.get(key)
                if record is not None:
                    writer.uint(1).blob(record.encode())
                else:
                    writer.uint(0)
                self._write_entries(writer, self._closest_entries(key_to_int(key)))
                self.transport.send(src_addr, writer.bytes())
            elif tag == wire.STORE_VALUE:
                record = SmallValueRecord.decode(reader.blob())
                ok = self.values.consider(record)
                self.transport.send(
                    src_addr,
                    self._reply(src_addr, wire.STORE_ACK, req_id).uint(1 if ok else 0).bytes(),
                )
            elif tag == wire.ADD_PROVIDER:
                record = ProviderRecord.decode(reader.blob())
                accepted = self.providers.consider(record, self.now())
                self.transport.send(
                    src_addr,
                    self._reply(src_addr, wire.PROVIDER_ACK, req_id)
                    .uint(1 if accepted else 0).bytes(),
                )
            elif tag == wire.GET_PROVIDERS:
                key = reader.multihash()
                want = reader.uint()
                records = self.providers.get(key, self.now())
                if want:
                    records = records[:want]
                writer = self._reply(src_addr, wire.PROVIDERS, req_id)
                writer.uint(len(records))
                for rec in records:
                    writer.blob(rec.encode())
                self._write_entries(writer, self._closest_entries(node_int(key)))
                self.transport.send(src_addr, writer.bytes())
            else:
                # a response: match it to the waiting continuation
                pending = self._pending.pop(req_id, None)
                if pending is not None:
                    timer, on_reply = pending
                    timer.cancel()
                    on_reply(reader)
        except DagswapError:
            return

    # -- public operations --------------------------------------------------

    def bootstrap(self, addrs: list[Multiaddr]) -> None:
        """Ping seed addresses; responders populate the table."""
        for addr in addrs:
            req_id, writer = self._request(wire.PING)
            self._send_rpc(addr, req_id, writer.bytes(), lambda reader: None)

    def refresh(self, on_done: Optional[Callable] = None) -> None:
        """Self-lookup: walks toward our own id to fill nearby buckets."""
        self.find_peer(self.identity.node_id, lambda addr: on_done and on_done(),
                       allow_self=False)

    def find_peer(self, target: Multihash, on_done: Callable[[Optional[Multiaddr]], None],
                  stats: Optional[LookupStats] = None, allow_self: bool = True) -> None:
        if allow_self and target == self.identity.node_id:
            on_done(self.addr)
            return
        known = self.table.addr_of(target)
        if known is not None:
            on_done(known)
            return
        lookup = _Lookup(self, "node", target,
                         lambda lk: on_done(lk.found_addr), stats=stats)
        lookup.start(self.table.closest(node_int(target), self.k))

    def disjoint_lookup(self, target: Multihash, d: int,
                        on_done: Callable[[Optional[Multiaddr]], None],
                        stats: Optional[LookupStats] = None,
                        debug_paths: Optional[list] = None) -> None:
        """d lookups over pairwise-disjoint node sets; first success wins.

        ``debug_paths`` collects the per-path lookup objects so simulations
        can assert the disjointness invariant directly.
        """
        if d < 1:
            raise ValueError("need at least one path")
        if target == self.identity.node_id:
            on_done(self.addr)
            return
        known = self.table.addr_of(target)
        if known is not None:
            on_done(known)
            return
        target_int = node_int(target)
        seeds = self.table.closest(target_int, max(self.k, d))
        paths = min(d, len(seeds)) or 1
        claimed: dict[bytes, int] = {}
        state = {"finished": 0, "done": False}
        lookups: list[_Lookup] = []

        def path_done(lk: _Lookup) -> None:
            state["finished"] += 1
            if state["done"]:
                return
            if lk.found_addr is not None:
                state["done"] = True
                for other in lookups:
                    other.stopped = True
                on_done(lk.found_addr)
            elif state["finished"] == len(lookups):
                state["done"] = True
                on_done(None)

        shared_stats = stats if stats is not None else LookupStats()
        for path_id in range(paths):
            lookups.append(_Lookup(self, "node", target, path_done,
                                   claimed=claimed, path_id=path_id, stats=shared_stats))
        if debug_paths is not None:
            debug_paths.extend(lookups)
        for path_id, lookup in enumerate(lookups):
            lookup.start(seeds[path_id::paths])

    def set_value(self, key: bytes, value: bytes,
                  ident: Optional[identity_mod.NodeIdentity] = None,
                  sequence: Optional[int] = None,
                  on_done: Optional[Callable[[int], None]] = None) -> None:
        """Sign and replicate a small value to the k closest nodes."""
        ident = ident or self.identity
        if sequence is None:
            sequence = self._sequences.get(bytes(key), 0) + 1
        self._sequences[bytes(key)] = sequence
        record = make_value_record(key, value, ident, sequence)
        self.values.consider(record)  # publisher keeps its own latest record
        target_int = key_to_int(key)

        def stored(lk: _Lookup) -> None:
            targets = lk.responded_closest()[:self.k]
            state = {"acks": 0, "waiting": len(targets)}
            if not targets:
                if on_done:
                    on_done(0)
                return
            for cand in targets:
                req_id, writer = self._request(wire.STORE_VALUE)
                writer.blob(record.encode())

                def acked(reader, _state=state):
                    _state["waiting"] -= 1
                    if reader is not None and reader.uint():
                        _state["acks"] += 1
                    if _state["waiting"] == 0 and on_done:
                        on_done(_state["acks"])

                self._send_rpc(cand.addr, req_id, writer.bytes(), acked)

        lookup = _Lookup(self, "node", _synthetic_target(key), stored)
        lookup.start(self.table.closest(target_int, self.k))

    def get_value(self, key: bytes, on_done: Callable[[Optional[bytes]], None]) -> None:
        def collected(records: list[SmallValueRecord]) -> None:
            best = None
            for record in records:
                best = better_record(best, record)
            on_done(best.value if best else None)

        self.get_value_records(key, collected)

    def get_value_records(self, key: bytes,
                          on_done: Callable[[list[SmallValueRecord]], None]) -> None:
        """All valid record candidates reachable for a key (local one included)."""
        local = self.values.get(key)

        def finished(lk: _Lookup) -> None:
            records = list(lk.values)
            if local is not None:
                records.append(local)
            on_done(records)

        lookup = _Lookup(self, "value", _synthetic_target(key), finished, key=bytes(key))
        lookup.start(self.table.closest(key_to_int(key), self.k))

    def provide(self, key: Multihash,
                ident: Optional[identity_mod.NodeIdentity] = None,
                on_done: Optional[Callable[[int], None]] = None) -> None:
        """Announce ourselves as a provider at the nodes nearest the key.

        Saturated nodes reject the record and the announcement spills outward
        to the next-closest candidates.
        """
        ident = ident or self.identity
        record = ProviderRecord(key, ident.node_id, self.addr,
                                self.now() + PROVIDER_EXPIRY_MS)
        self.providers.consider(record, self.now())
        self.provided_keys[key.encode()] = key
        target_int = node_int(key)

        def announce(lk: _Lookup) -> None:
            queue = lk.responded_closest()
            state = {"accepted": 0, "inflight": 0}

            def pump() -> None:
                while queue and state["inflight"] < self.alpha \
                        and state["accepted"] + state["inflight"] < self.k:
                    cand = queue.pop(0)
                    req_id, writer = self._request(wire.ADD_PROVIDER)
                    writer.blob(record.encode())
                    state["inflight"] += 1

                    def acked(reader) -> None:
                        state["inflight"] -= 1
                        if reader is not None and reader.uint():
                            state["accepted"] += 1
                        pump()

                    self._send_rpc(cand.addr, req_id, writer.bytes(), acked)
                if not queue and state["inflight"] == 0 and on_done:
                    on_done(state["accepted"])

            pump()

        lookup = _Lookup(self, "node", key, announce)
        lookup.start(self.table.closest(target_int, self.k))

    def find_value_peers(self, key: Multihash, min_count: int,
                         on_done: Callable[[list[tuple[Multihash, Multiaddr]], bool], None]
                         ) -> None:
        """At least ``min_count`` distinct unexpired providers when they exist."""
        found: dict[bytes, tuple[Multihash, Multiaddr]] = {}
        for rec in self.providers.get(key, self.now()):
            found.setdefault(rec.provider.encode(), (rec.provider, rec.addr))

        def finished(lk: _Lookup) -> None:
            for raw, pair in lk.providers.items():
                found.setdefault(raw, pair)
            providers = [found[raw] for raw in sorted(found)]
            on_done(providers, len(providers) < min_count)

        lookup = _Lookup(self, "providers", key, finished, want=min_count)
        lookup.start(self.table.closest(node_int(key), self.k))

    def republish_providers(self) -> None:
        """Publisher-side refresh of our provider records."""
        for key in list(self.provided_keys.values()):
            self.provide(key)
