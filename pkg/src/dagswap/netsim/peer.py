"""A full node on the simulated network.

Each peer composes an identity, an in-memory block store, the DHT routing
actor and the block-exchange engine, and wires them to the event loop.  The
fetch orchestration walks a remote DAG: resolve providers for the root, open
exchange sessions, then want each newly discovered link until the closure is
local.

Adversarial behaviors are applied here, at the node boundary: dropping
inbound traffic, corrupting forwarded block payloads, or wiping exchange
ledgers on every open.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field
from typing import Callable, Optional

from .. import naming
from ..blockstore import MemoryBlockStore
from ..errors import DagswapError
from ..exchange import ExchangeConfig, ExchangeEngine, SigmoidStrategy
from ..identity import NodeIdentity, generate_identity
from ..merkledag import DagObject, decode_any, encode_object
from ..multiformats import Multiaddr, Multihash, multihash_decode
from ..routing import REPUBLISH_MS, DhtNode
from .. import wire
from .sim import AdversarySpec, SimNet

_ROUTING_REQUESTS = {wire.PING, wire.FIND_NODE, wire.FIND_VALUE,
                     wire.STORE_VALUE, wire.ADD_PROVIDER, wire.GET_PROVIDERS}
_ROUTING_TAGS = _ROUTING_REQUESTS | {wire.PONG, wire.NODES, wire.VALUE,
                                     wire.STORE_ACK, wire.PROVIDER_ACK, wire.PROVIDERS}
_EXCHANGE_TAGS = {wire.OPEN, wire.WANT_LIST, wire.BLOCK, wire.BLOCK_ACK, wire.CLOSE}


@dataclass
class _FetchJob:
    root: Multihash
    on_done: Callable[[bool], None]
    pending: set[bytes] = field(default_factory=set)
    done: bool = False


class _DhtTransport:
    """Adapter: the routing actor addresses peers by multiaddr."""

    def __init__(self, peer: "SimPeer"):
        self.peer = peer

    def send(self, dst: Multiaddr, frame: bytes) -> None:
        node = dst.sim_node()
        if node is None:
            return
        try:
            self.peer.net.send(self.peer.addr, node, frame)
        except DagswapError:
            pass

    def schedule(self, delay: float, fn: Callable[[], None]):
        return self.peer.net.schedule(delay, fn)

    def now(self) -> float:
        return self.peer.net.now


class _ExchangeTransport:
    """Adapter: the exchange engine addresses peers by node id."""

    def __init__(self, peer: "SimPeer"):
        self.peer = peer

    def send(self, peer_id: Multihash, frame: bytes) -> bool:
        addr = self.peer.addr_for(peer_id)
        if addr is None:
            return False
        if (self.peer.adversary_active() and self.peer.adversary == "corrupt_blocks"
                and frame and frame[0] == wire.BLOCK and len(frame) > 40):
            frame = frame[:-1] + bytes([frame[-1] ^ 0x01])  # flip one payload byte
        try:
            self.peer.net.send(self.peer.addr, addr, frame)
            return True
        except DagswapError:
            return False

    def schedule(self, delay: float, fn: Callable[[], None]):
        return self.peer.net.schedule(delay, fn)

    def now(self) -> float:
        return self.peer.net.now


class SimPeer:
    def __init__(self, net: SimNet, addr: int, ident: NodeIdentity,
                 rng: Optional[random.Random] = None,
                 k: int = 20, alpha: int = 3, rpc_timeout_ms: float = 500.0,
                 exchange_config: Optional[ExchangeConfig] = None,
                 strategy: Optional[SigmoidStrategy] = None,
                 adversary: str = "none", adversary_start_ms: float = 0.0,
                 horizon_ms: float = float("inf"),
                 exchange_timers: bool = False):
        self.net = net
        self.addr = addr
        self.identity = ident
        self.node_id = ident.node_id
        self.rng = rng or random.Random(addr)
        self.adversary = adversary
        self.adversary_start_ms = adversary_start_ms
        self.horizon_ms = horizon_ms
        self.multiaddr = Multiaddr.sim(addr)
        self.store = MemoryBlockStore(resolver=self._resolve_links)
        self.dht = DhtNode(ident, self.multiaddr, _DhtTransport(self),
                           rng=self.rng, k=k, alpha=alpha, rpc_timeout_ms=rpc_timeout_ms)
        self.engine = ExchangeEngine(
            self.node_id, self.store, _ExchangeTransport(self),
            config=exchange_config, strategy=strategy, rng=self.rng,
            rarity=self._rarity, on_block=self._on_block_stored,
            on_close=self._on_session_close,
            amnesiac=(adversary == "ledger_amnesia"),
        )
        self._addr_by_id: dict[bytes, int] = {}
        self._id_by_addr: dict[int, Multihash] = {}
        self._jobs: list[_FetchJob] = []
        net.register(addr, self._on_frame)
        if exchange_timers:
            self.engine.start_timers(horizon_ms)
        # periodic work needs a finite horizon or the net never quiesces
        if REPUBLISH_MS < horizon_ms < float("inf"):
            self._arm_republish()

    # -- identity / address maps ---------------------------------------------

    def learn_peer(self, node_id: Multihash, addr) -> None:
        sim = addr.sim_node() if isinstance(addr, Multiaddr) else addr
        if sim is None:
            return
        self._addr_by_id[node_id.encode()] = sim
        self._id_by_addr[sim] = node_id

    def addr_for(self, node_id: Multihash) -> Optional[int]:
        found = self._addr_by_id.get(node_id.encode())
        if found is not None:
            return found
        table_addr = self.dht.table.addr_of(node_id)
        if table_addr is not None:
            return table_addr.sim_node()
        return None

    def adversary_active(self) -> bool:
        return self.adversary != "none" and self.net.now >= self.adversary_start_ms

    # -- frame demux --------------------------------------------------------

    def _on_frame(self, src: int, frame: bytes) -> None:
        if not frame:
            return
        tag = frame[0]
        if self.adversary_active():
            if self.adversary == "drop_all":
                return
            if self.adversary == "drop_queries" and tag in _ROUTING_REQUESTS:
                return
        if tag in _ROUTING_TAGS:
            self.dht.handle_frame(Multiaddr.sim(src), frame)
            return
        if tag in _EXCHANGE_TAGS:
            peer_id = self._id_by_addr.get(src)
            if tag == wire.OPEN:
                try:
                    reader = wire.Reader(frame)
                    reader.uint()  # reply flag
                    peer_id = reader.multihash()
                    self.learn_peer(peer_id, src)
                except DagswapError:
                    return
            if peer_id is None:
                return  # cannot attribute the frame to a peer
            self.engine.handle_frame(peer_id, frame)

    def _resolve_links(self, key: Multihash) -> Optional[list[Multihash]]:
        raw = self.store.get(key)
        if raw is None:
            return None
        try:
            node = decode_any(raw)
        except DagswapError:
            return []
        if isinstance(node, DagObject):
            return [link.hash for link in node.links]
        return []

    def _rarity(self, key: Multihash) -> int:
        return self.dht.providers.count(key, self.net.now)

    # -- content ---------------------------------------------------------------

    def add_bytes(self, data: bytes, chunker=None, provide: bool = True) -> Multihash:
        from ..files import add_file

        key = add_file(self.store, data, chunker)
        if provide:
            self.dht.provide(key)
        return key

    def add_object(self, obj: DagObject, provide: bool = False) -> Multihash:
        key = self.store.put(encode_object(obj))
        if provide:
            self.dht.provide(key)
        return key

    def fetch(self, root: Multihash, on_done: Callable[[bool], None],
              max_providers: int = 3) -> None:
        """Pull the full DAG under ``root`` from whoever provides it."""
        job = _FetchJob(root, on_done)
        if self.store.has(root):
            self._expand_job(job, root)
            if not job.pending:
                job.done = True
                on_done(True)
                return
        else:
            job.pending.add(root.encode())
        self._jobs.append(job)

        def got_providers(providers, shortfall) -> None:
            if not providers:
                self._finish_job(job, False)
                return
            for provider, addr in providers[:max_providers]:
                if provider == self.node_id:
                    continue
                self.learn_peer(provider, addr)
                self.engine.connect(provider)
            self.engine.want([multihash_decode(raw) for raw in sorted(job.pending)])

        self.dht.find_value_peers(root, 1, got_providers)

    def _on_session_close(self, peer_id: Multihash, final: bool) -> None:
        """Keep begging: reopen non-final closes while a fetch still pends."""
        if final or not self._jobs:
            return
        if self.net.now >= self.horizon_ms:
            return

        def retry() -> None:
            if self._jobs and self.net.now < self.horizon_ms:
                self.engine.connect(peer_id)

        self.net.schedule(2_000.0, retry)

    def _on_block_stored(self, key: Multihash, data: bytes) -> None:
        raw = key.encode()
        for job in list(self._jobs):
            if raw in job.pending:
                job.pending.discard(raw)
                self._expand_job(job, key)
                if not job.pending:
                    self._finish_job(job, True)
        # serve-and-seek: idle nodes fetch what their peers still want
        if not self.engine.need:
            tasks = self.engine.work_for_peers()
            if tasks:
                self.engine.want(tasks)

    def _expand_job(self, job: _FetchJob, key: Multihash) -> None:
        children = self._resolve_links(key) or []
        new = []
        for child in children:
            if self.store.has(child) :
                self._expand_job(job, child)
            elif child.encode() not in job.pending:
                job.pending.add(child.encode())
                new.append(child)
        if new:
            self.engine.want(new)

    def _finish_job(self, job: _FetchJob, ok: bool) -> None:
        if job.done:
            return
        job.done = True
        if job in self._jobs:
            self._jobs.remove(job)
        if ok:
            self.dht.provide(job.root)  # downloaded content is re-served
        job.on_done(ok)

    # -- naming ------------------------------------------------------------

    def publish_name(self, value: Multihash,
                     on_done: Optional[Callable[[int], None]] = None) -> naming.NameRecord:
        record = naming.make_name_record(self.identity, value,
                                         self.dht._sequences.get(self.node_id.encode(), 0) + 1,
                                         self.net.now + naming.RECORD_VALIDITY_MS)
        self.dht.set_value(self.node_id.encode(), record.encode(),
                           sequence=record.sequence, on_done=on_done)
        return record

    def resolve_name(self, node_id: Multihash,
                     on_done: Callable[[Optional[Multihash]], None]) -> None:
        def collected(records) -> None:
            best = naming.best_record(records, node_id, self.net.now)
            on_done(best.value if best else None)

        self.dht.get_value_records(node_id.encode(), collected)

    # -- periodic work ----------------------------------------------------

    def _arm_republish(self) -> None:
        def republish() -> None:
            if self.net.now >= self.horizon_ms:
                return
            self.dht.republish_providers()
            self.net.schedule(REPUBLISH_MS, republish)

        self.net.schedule(REPUBLISH_MS, republish)

    def shutdown(self) -> None:
        self.engine.close_all()
        self.net.unregister(self.addr)


def spawn(net: SimNet, count: int, difficulty: int = 0, bootstrap_r: int = 2,
          k: int = 20, alpha: int = 3, rpc_timeout_ms: float = 500.0,
          refresh: bool = True, exchange_config: Optional[ExchangeConfig] = None,
          horizon_ms: float = float("inf"), exchange_timers: bool = False,
          adversary: Optional[AdversarySpec] = None,
          settle: bool = True) -> list[SimPeer]:
    """Create ``count`` live peers, each bootstrapped by pinging ``bootstrap_r``
    random existing nodes (plus a self-lookup when ``refresh``).

    Identities derive from the net's seeded generator, so the same seed
    always yields the same node id set.
    """
    if count < 1:
        raise ValueError("need at least one node")
    adversarial: set[int] = set()
    if adversary is not None and adversary.behavior != "none":
        how_many = int(round(adversary.fraction * count))
        adversarial = set(net.rng.sample(range(count), how_many))
    peers: list[SimPeer] = []
    for i in range(count):
        ident = generate_identity(difficulty, random.Random(net.rng.getrandbits(64)))
        peer = SimPeer(
            net, i, ident,
            rng=random.Random(net.rng.getrandbits(64)),
            k=k, alpha=alpha, rpc_timeout_ms=rpc_timeout_ms,
            exchange_config=exchange_config,
            adversary=(adversary.behavior if i in adversarial else "none"),
            adversary_start_ms=(adversary.start_ms if adversary else 0.0),
            horizon_ms=horizon_ms,
        )
        if peers:
            targets = net.rng.sample(peers, min(bootstrap_r, len(peers)))
            peer.dht.bootstrap([t.multiaddr for t in targets])
            if settle:
                net.run_until_quiescent()
            if refresh:
                peer.dht.refresh()
                if settle:
                    net.run_until_quiescent()
        peers.append(peer)
    if settle:
        net.run_until_quiescent()
    if exchange_timers:
        # armed only after the joins settle so the quiescent runs above do
        # not fast-forward the clock through the periodic-timer horizon
        for peer in peers:
            peer.engine.start_timers(horizon_ms)
    return peers
