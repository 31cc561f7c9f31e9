"""Incentive-weighted block exchange.

Peers barter blocks under per-partner byte ledgers.  A sender serves a
partner with probability that falls off sharply once the partner's debt
ratio passes twice the established credit:

    r = bytes_sent / (bytes_recv + 1)
    P(send | r) = 1 - 1 / (1 + exp(6 - 3 r))

A refused draw puts the partner on a cooldown during which no further draws
happen for it, so a partner cannot farm re-rolls.  Ledger counters move only
on checksum-verified blocks: the receiver credits on verification, the
sender on the verified acknowledgement.

Sessions walk open -> sending -> close, with the ignored state bolted on for
cooldowns; silent partners are closed non-finally after ``silence_wait``.
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass, field
from typing import Callable, Iterable, Optional

from .errors import DagswapError
from .multiformats import Multihash, hash_bytes, multihash_decode
from . import wire

IGNORE_COOLDOWN_MS = 10_000.0  # default cooldown after a refused draw
SILENCE_WAIT_MS = 30_000.0  # default silent-session close threshold


@dataclass
class Ledger:
    """Byte accounting with one partner, from the owner's point of view."""

    owner: Multihash
    partner: Multihash
    bytes_sent: int = 0
    bytes_recv: int = 0
    timestamp: float = 0.0

    def zeroed(self) -> "Ledger":
        return Ledger(self.owner, self.partner)

    def is_zero(self) -> bool:
        return self.bytes_sent == 0 and self.bytes_recv == 0


def debt_ratio(ledger: Ledger) -> float:
    """How far the partner is in this node's debt, in verified bytes."""
    return ledger.bytes_sent / (ledger.bytes_recv + 1)


def send_probability(r: float) -> float:
    """Sigmoid send gate; exactly 0.5 at r == 2, strictly decreasing."""
    x = 6.0 - 3.0 * r
    if x > 700.0:  # exp overflow guard; probability saturates at 1
        return 1.0
    return 1.0 - 1.0 / (1.0 + math.exp(x))


def mirror_match(mine: Ledger, theirs: Ledger) -> bool:
    """Two ledgers agree when each side's sent equals the other's received."""
    return (mine.bytes_sent == theirs.bytes_recv
            and mine.bytes_recv == theirs.bytes_sent)


class SigmoidStrategy:
    """The shipped trade strategy: Bernoulli draws on the debt-ratio sigmoid."""

    def should_send(self, ledger: Ledger, rng: random.Random) -> bool:
        return rng.random() < send_probability(debt_ratio(ledger))

    def accept_open(self, ledger: Ledger, rng: random.Random) -> bool:
        # same knob for refusing untrusted openers
        return rng.random() < send_probability(debt_ratio(ledger))


class NeverSendStrategy(SigmoidStrategy):
    """Freeloader behavior for experiments: takes, never gives."""

    def should_send(self, ledger: Ledger, rng: random.Random) -> bool:
        return False

    def accept_open(self, ledger: Ledger, rng: random.Random) -> bool:
        return True


OPENING = "opening"
OPEN = "open"
IGNORED = "ignored"
CLOSED = "closed"


@dataclass
class PeerSession:
    node_id: Multihash
    ledger: Ledger
    state: str = OPENING
    created_at: float = 0.0
    last_seen: float = 0.0
    want_list: dict[bytes, int] = field(default_factory=dict)  # key -> depth
    ignored_until: float = 0.0
    ignored_since: float = 0.0
    ignored_total_ms: float = 0.0
    resume_state: str = OPEN  # state to restore once a cooldown ends
    draw_count: int = 0
    sent_open: bool = False
    pending_acks: dict[bytes, int] = field(default_factory=dict)
    flagged: bool = False  # failed a checksum; candidate for refusal

    def ignored_time(self, now: float) -> float:
        total = self.ignored_total_ms
        if self.state == IGNORED:
            total += now - self.ignored_since
        return total


@dataclass
class ExchangeConfig:
    ignore_cooldown_ms: float = IGNORE_COOLDOWN_MS
    silence_wait_ms: float = SILENCE_WAIT_MS
    readvert_min_ms: float = 25_000.0
    readvert_max_ms: float = 35_000.0
    sweep_interval_ms: float = 5_000.0
    amnesia_policy: str = "reset"  # "reset" | "refuse": reaction to wiped ledgers
    refuse_bad_blocks: bool = True


class ExchangeEngine:
    """Per-node protocol engine; one logical actor, driven by frames and timers.

    ``transport`` must provide:
        send(peer_id, frame) -> bool      deliver a frame (False: unreachable)
        schedule(delay_ms, fn) -> handle  virtual-time timer
        now() -> float                    virtual clock, ms
    """

    def __init__(self, node_id: Multihash, store, transport,
                 config: Optional[ExchangeConfig] = None,
                 strategy: Optional[SigmoidStrategy] = None,
                 rng: Optional[random.Random] = None,
                 rarity: Optional[Callable[[Multihash], int]] = None,
                 on_block: Optional[Callable[[Multihash, bytes], None]] = None,
                 on_close: Optional[Callable[[Multihash, bool], None]] = None,
                 amnesiac: bool = False):
        self.node_id = node_id
        self.store = store
        self.transport = transport
        self.config = config or ExchangeConfig()
        self.strategy = strategy or SigmoidStrategy()
        self.rng = rng or random.Random(0)
        self.rarity = rarity or (lambda key: 0)
        self.on_block = on_block
        self.on_close = on_close
        self.amnesiac = amnesiac  # adversary: always presents a wiped ledger
        self.ledgers: dict[bytes, Ledger] = {}
        self.sessions: dict[bytes, PeerSession] = {}
        self.need: dict[bytes, Multihash] = {}
        self.refused: set[bytes] = set()
        self.ignored_history_ms: dict[bytes, float] = {}
        self._horizon = float("inf")
        self._sweep_timer = None
        self._readvert_timer = None

    # -- helpers --------------------------------------------------------------

    def now(self) -> float:
        return self.transport.now()

    def ledger_for(self, peer: Multihash) -> Ledger:
        raw = peer.encode()
        if raw not in self.ledgers:
            self.ledgers[raw] = Ledger(self.node_id, peer)
        return self.ledgers[raw]

    def session_for(self, peer: Multihash) -> Optional[PeerSession]:
        return self.sessions.get(peer.encode())

    def need_list(self) -> set[Multihash]:
        return set(self.need.values())

    def have(self, key: Multihash) -> bool:
        return self.store.has(key)

    def open_peers(self) -> list[Multihash]:
        return [s.node_id for s in self.sessions.values() if s.state in (OPEN, IGNORED)]

    # -- public surface ---------------------------------------------------

    def start_timers(self, horizon_ms: float) -> None:
        """Arm the periodic silence sweep and randomized want re-advertisement.

        The horizon must be finite: periodic timers stop rescheduling past it
        so a simulation can quiesce.
        """
        if not math.isfinite(horizon_ms):
            raise ValueError("periodic timers need a finite horizon")
        self._horizon = horizon_ms
        self._arm_sweep()
        self._arm_readvert()

    def connect(self, peer: Multihash) -> None:
        """Open (or reopen) a session; sends our ledger, stored or zeroed."""
        if peer.encode() in self.refused:
            return
        session = self.session_for(peer)
        if session is not None and session.state in (OPEN, OPENING, IGNORED):
            return
        ledger = self.ledger_for(peer)
        if self.amnesiac:
            ledger = ledger.zeroed()
            self.ledgers[peer.encode()] = ledger
        session = PeerSession(peer, ledger, state=OPENING,
                              created_at=self.now(), last_seen=self.now())
        self.sessions[peer.encode()] = session
        self._send_open(session, reply=False)

    def want(self, keys: Iterable[Multihash]) -> None:
        """Add to the need list and advertise the change (trigger c)."""
        added = []
        for key in keys:
            raw = key.encode()
            if raw in self.need or self.store.has(key):
                continue
            self.need[raw] = key
            added.append(key)
        if added:
            self._advertise_delta(adds=added, removes=[])

    def unwant(self, keys: Iterable[Multihash]) -> None:
        removed = [key for key in keys if self.need.pop(key.encode(), None) is not None]
        if removed:
            self._advertise_delta(adds=[], removes=removed)

    def ignored_ms(self, peer: Multihash, now: float) -> float:
        """Cumulative cooldown time toward ``peer`` across session epochs."""
        total = self.ignored_history_ms.get(peer.encode(), 0.0)
        session = self.session_for(peer)
        if session is not None:
            total += session.ignored_time(now)
        return total

    def _retire_session(self, session: PeerSession) -> None:
        """Fold a dying session's cooldown time into the per-peer history."""
        self._finish_ignore(session)
        raw = session.node_id.encode()
        self.ignored_history_ms[raw] = (
            self.ignored_history_ms.get(raw, 0.0) + session.ignored_total_ms)
        session.ignored_total_ms = 0.0
        session.state = CLOSED
        session.pending_acks.clear()

    def close_all(self) -> None:
        """Node shutdown: final close to every live session."""
        for session in list(self.sessions.values()):
            if session.state != CLOSED:
                self._send(session.node_id, _close_frame(final=True))
                self._retire_session(session)

    def work_for_peers(self) -> list[Multihash]:
        """Blocks peers want that we lack; to be fetched at low priority."""
        tasks: dict[bytes, Multihash] = {}
        for session in self.sessions.values():
            if session.state not in (OPEN, IGNORED):
                continue
            for raw in session.want_list:
                if raw in self.need or raw in tasks:
                    continue
                key = multihash_decode(raw)
                if not self.store.has(key):
                    tasks[raw] = key
        return [tasks[raw] for raw in sorted(tasks)]

    def decide_send(self, session: PeerSession, key: Multihash) -> bool:
        """One strategy draw for one block; a refusal starts the cooldown."""
        session.draw_count += 1
        if self.strategy.should_send(session.ledger, self.rng):
            return True
        self._start_ignore(session)
        return False

    # -- frame handling ---------------------------------------------------

    def handle_frame(self, peer: Multihash, frame: bytes) -> None:
        if not frame:
            return
        if peer.encode() in self.refused:
            return
        reader = wire.Reader(frame)
        tag = reader.tag
        session = self.session_for(peer)
        now = self.now()

        try:
            if session is not None and session.state == IGNORED:
                session.last_seen = now  # liveness only
                # The cooldown suppresses dice-rolls and want processing so a
                # refused partner cannot farm re-rolls.  Block traffic still
                # flows: a debtor must be able to repay through the cooldown
                # (or a choked relationship could never improve) and dropped
                # acknowledgements would desynchronize the pair's ledgers.
                if tag == wire.BLOCK_ACK:
                    self._handle_block_ack(session, reader)
                    return
                if tag == wire.BLOCK:
                    self._handle_block(session, reader)
                    return
                if tag == wire.OPEN and now >= session.ignored_until:
                    self._finish_ignore(session)
                else:
                    return  # wants and closes are not accepted

            if tag == wire.OPEN:
                self._handle_open(peer, reader)
                return

            if session is None or session.state == CLOSED:
                # out-of-order traffic on an inactive connection
                if tag == wire.BLOCK:
                    self._absorb_inactive_block(reader)
                self._send(peer, _close_frame(final=False))
                return

            session.last_seen = now
            if tag == wire.WANT_LIST:
                self._handle_want_list(session, reader)
            elif tag == wire.BLOCK:
                self._handle_block(session, reader)
            elif tag == wire.BLOCK_ACK:
                self._handle_block_ack(session, reader)
            elif tag == wire.CLOSE:
                self._handle_close(session, reader)
        except DagswapError:
            return  # malformed frame: drop

    # -- open handshake -----------------------------------------------------

    def _send_open(self, session: PeerSession, reply: bool) -> None:
        ledger = session.ledger
        frame = (wire.Writer(wire.OPEN)
                 .uint(1 if reply else 0)
                 .multihash(ledger.owner)
                 .multihash(ledger.partner)
                 .uint(ledger.bytes_sent)
                 .uint(ledger.bytes_recv)
                 .uint(int(ledger.timestamp))
                 .bytes())
        session.sent_open = True
        self._send(session.node_id, frame)

    def _handle_open(self, peer: Multihash, reader: wire.Reader) -> None:
        try:
            is_reply = bool(reader.uint())
            owner = reader.multihash()
            partner = reader.multihash()
            sent = reader.uint()
            recv = reader.uint()
            ts = reader.uint()
        except DagswapError:
            self._send(peer, _close_frame(final=False))  # malformed ledger: refuse
            return
        theirs = Ledger(owner, partner, sent, recv, float(ts))
        existing = self.session_for(peer)
        solicited = existing is not None and existing.state in (OPENING, OPEN)
        mine = self.ledger_for(peer)
        if self.amnesiac:
            mine = mine.zeroed()
            self.ledgers[peer.encode()] = mine
        matched = mirror_match(mine, theirs)

        if not solicited and not matched:
            if (self.config.amnesia_policy == "refuse" and theirs.is_zero()
                    and mine.bytes_sent > mine.bytes_recv):
                # partner "lost" a ledger while owing us: refuse to trade
                if existing is not None:
                    self._retire_session(existing)
                self.refused.add(peer.encode())
                self._send(peer, _close_frame(final=True))
                return

        session = existing
        if session is None or session.state == CLOSED:
            session = PeerSession(peer, mine, state=OPENING,
                                  created_at=self.now(), last_seen=self.now())
            self.sessions[peer.encode()] = session
        session.ledger = mine
        session.last_seen = self.now()

        # trust gate on unsolicited requests: a partner deep in our debt is
        # ignored probabilistically, with the usual cooldown
        if not solicited and not self.strategy.accept_open(mine, self.rng):
            self._start_ignore(session)
            return

        transitioned = False
        if matched:
            transitioned = session.state != OPEN
        else:
            mine = mine.zeroed()
            self.ledgers[peer.encode()] = mine
            session.ledger = mine
            if theirs.is_zero():
                transitioned = session.state != OPEN
            else:
                session.state = OPENING
                self._send_open(session, reply=True)
                return

        if transitioned:
            session.state = OPEN
            self._send_open(session, reply=True)
            self._advertise_full(session)
            self._serve(session)
        elif not is_reply:
            self._send_open(session, reply=True)
            self._serve(session)

    # -- want lists --------------------------------------------------------

    def _want_entries(self) -> list[tuple[Multihash, int]]:
        """Own needs plus (one hop) what our peers want and we lack."""
        entries = [(self.need[raw], 0) for raw in sorted(self.need)]
        seen = set(self.need)
        proxied: dict[bytes, Multihash] = {}
        for session in self.sessions.values():
            if session.state not in (OPEN, IGNORED):
                continue
            for raw, depth in session.want_list.items():
                if depth > 0 or raw in seen or raw in proxied:
                    continue  # proxy entries are not propagated further
                key = multihash_decode(raw)
                if not self.store.has(key):
                    proxied[raw] = key
        entries.extend((proxied[raw], 1) for raw in sorted(proxied))
        return entries

    def _advertise_full(self, session: PeerSession) -> None:
        entries = self._want_entries()
        writer = wire.Writer(wire.WANT_LIST).uint(1).uint(len(entries))
        for key, depth in entries:
            writer.multihash(key).uint(depth)
        self._send(session.node_id, writer.bytes())

    def _advertise_delta(self, adds: list[Multihash], removes: list[Multihash]) -> None:
        if not adds and not removes:
            return
        writer = wire.Writer(wire.WANT_LIST).uint(0).uint(len(adds) + len(removes))
        for key in adds:
            writer.multihash(key).uint(0)
        for key in removes:
            writer.multihash(key).uint(2)  # bit1: remove
        frame = writer.bytes()
        for session in self.sessions.values():
            if session.state in (OPEN, IGNORED):
                self._send(session.node_id, frame)

    def _handle_want_list(self, session: PeerSession, reader: wire.Reader) -> None:
        full = bool(reader.uint())
        count = reader.uint()
        entries = []
        for _ in range(count):
            key = reader.multihash()
            flags = reader.uint()
            entries.append((key, flags))
        if full:
            session.want_list = {}
        for key, flags in entries:
            if flags & 2:
                session.want_list.pop(key.encode(), None)
            else:
                session.want_list[key.encode()] = flags & 1
        self._serve(session)

    # -- serving ------------------------------------------------------------

    def _servable(self, session: PeerSession) -> list[Multihash]:
        held = []
        for raw in session.want_list:
            key = multihash_decode(raw)
            if self.store.has(key):
                held.append(key)
        held.sort(key=lambda k: (self.rarity(k), k.encode()))  # rarest first
        return held

    def _serve(self, session: PeerSession) -> None:
        """One serving round: per-block draws until a refusal or nothing left."""
        if session.state != OPEN:
            return
        for key in self._servable(session):
            data = self.store.get(key)
            if data is None:
                continue
            if not self.decide_send(session, key):
                break
            session.want_list.pop(key.encode(), None)
            session.pending_acks[key.encode()] = len(data)
            frame = wire.Writer(wire.BLOCK).multihash(key).blob(data).bytes()
            self._send(session.node_id, frame)

    def _start_ignore(self, session: PeerSession) -> None:
        session.resume_state = session.state if session.state != IGNORED else OPEN
        session.state = IGNORED
        session.ignored_since = self.now()
        session.ignored_until = self.now() + self.config.ignore_cooldown_ms
        peer_raw = session.node_id.encode()

        def expire() -> None:
            current = self.sessions.get(peer_raw)
            if current is session and session.state == IGNORED:
                self._finish_ignore(session)
                if session.state == OPEN:
                    self._advertise_full(session)
                    self._serve(session)

        self.transport.schedule(self.config.ignore_cooldown_ms, expire)

    def _finish_ignore(self, session: PeerSession) -> None:
        if session.state == IGNORED:
            session.ignored_total_ms += self.now() - session.ignored_since
            session.state = session.resume_state

    # -- blocks ---------------------------------------------------------------

    def _is_wanted(self, key: Multihash) -> bool:
        """On our advertised want set: own needs plus proxied peer wants."""
        raw = key.encode()
        if raw in self.need:
            return True
        if self.store.has(key):
            return False
        return any(
            s.state in (OPEN, IGNORED) and s.want_list.get(raw) == 0
            for s in self.sessions.values()
        )

    def _handle_block(self, session: PeerSession, reader: wire.Reader) -> None:
        key = reader.multihash()
        data = reader.blob()
        if hash_bytes(data, key.code) != key:
            # corrupt or forged: no credit, flag the sender
            session.flagged = True
            self._send(session.node_id,
                       wire.Writer(wire.BLOCK_ACK).multihash(key).uint(0).bytes())
            if self.config.refuse_bad_blocks:
                self.refused.add(session.node_id.encode())
                self._retire_session(session)
                self._send(session.node_id, _close_frame(final=True))
            return
        raw = key.encode()
        if not self._is_wanted(key):
            # duplicate or unsolicited: no credit either side
            self._send(session.node_id,
                       wire.Writer(wire.BLOCK_ACK).multihash(key).uint(0).bytes())
            return
        self.store.put(data, key.code)
        self.need.pop(raw, None)
        session.ledger.bytes_recv += len(data)
        session.ledger.timestamp = self.now()
        self._send(session.node_id,
                   wire.Writer(wire.BLOCK_ACK).multihash(key).uint(1).bytes())
        self._advertise_delta(adds=[], removes=[key])  # trigger (d)
        self._serve_block_to_wanters(key)
        if self.on_block is not None:
            self.on_block(key, data)

    def _serve_block_to_wanters(self, key: Multihash) -> None:
        raw = key.encode()
        for session in self.sessions.values():
            if session.state == OPEN and raw in session.want_list:
                self._serve(session)

    def _handle_block_ack(self, session: PeerSession, reader: wire.Reader) -> None:
        key = reader.multihash()
        ok = bool(reader.uint())
        size = session.pending_acks.pop(key.encode(), None)
        if ok and size is not None:
            session.ledger.bytes_sent += size
            session.ledger.timestamp = self.now()

    def _absorb_inactive_block(self, reader: wire.Reader) -> None:
        try:
            key = reader.multihash()
            data = reader.blob()
        except DagswapError:
            return
        if key.encode() in self.need and hash_bytes(data, key.code) == key:
            self.store.put(data, key.code)
            self.need.pop(key.encode(), None)
            if self.on_block is not None:
                self.on_block(key, data)

    # -- close / timers ----------------------------------------------------

    def _handle_close(self, session: PeerSession, reader: wire.Reader) -> None:
        try:
            final = bool(reader.uint())
        except DagswapError:
            final = False
        self._retire_session(session)
        if self.on_close is not None:
            self.on_close(session.node_id, final)

    def _arm_sweep(self) -> None:
        if self.now() >= self._horizon:
            return

        def sweep() -> None:
            now = self.now()
            for session in self.sessions.values():
                if session.state in (OPEN, OPENING, IGNORED):
                    if now - session.last_seen > self.config.silence_wait_ms:
                        self._send(session.node_id, _close_frame(final=False))
                        self._retire_session(session)
            self._arm_sweep()

        self._sweep_timer = self.transport.schedule(self.config.sweep_interval_ms, sweep)

    def _arm_readvert(self) -> None:
        if self.now() >= self._horizon:
            return
        delay = self.rng.uniform(self.config.readvert_min_ms, self.config.readvert_max_ms)

        def readvert() -> None:
            for session in self.sessions.values():
                if session.state in (OPEN, IGNORED):
                    self._advertise_full(session)
            self._arm_readvert()

        self._readvert_timer = self.transport.schedule(delay, readvert)

    def _send(self, peer: Multihash, frame: bytes) -> None:
        self.transport.send(peer, frame)


def _close_frame(final: bool) -> bytes:
    return wire.Writer(wire.CLOSE).uint(1 if final else 0).bytes()
