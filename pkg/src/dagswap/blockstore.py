"""Local block storage keyed by content hash, with pinning and gc.

Two stores implement one contract: an in-memory store for simulations and a
filesystem store (one file per block, sharded by display-name prefix, with a
write-then-rename discipline and an append-only pin journal).

Every read re-verifies the content hash, so on-disk tampering surfaces as an
IntegrityError and the offending file is quarantined rather than served.
"""

from __future__ import annotations

import os
import threading
from dataclasses import dataclass, field
from typing import Callable, Iterable, Optional

from .errors import BlockTooLarge, IntegrityError, PartialPinError, StoreError
from .multiformats import DEFAULT_HASH, Multihash, base_display, base_parse, hash_bytes, multihash_decode

MAX_BLOCK_SIZE = 1 << 20  # 1 MiB

# resolver: enumerate child keys of a block, or None if the block is missing
LinkResolver = Callable[[Multihash], Optional[list[Multihash]]]


@dataclass
class PinSet:
    direct: set[Multihash] = field(default_factory=set)
    recursive: set[Multihash] = field(default_factory=set)


class MemoryBlockStore:
    """Content-addressed block set held in RAM."""

    def __init__(self, max_block_size: int = MAX_BLOCK_SIZE, low_water: int = 0,
                 resolver: Optional[LinkResolver] = None):
        self.max_block_size = max_block_size
        self.low_water = low_water
        self._resolver = resolver
        self._blocks: dict[bytes, bytes] = {}
        self._access: dict[bytes, int] = {}
        self._tick = 0
        self._pins = PinSet()
        self._closures: dict[Multihash, frozenset[bytes]] = {}
        self._lock = threading.Lock()
        self._maintenance = threading.Lock()  # pin and gc exclude each other

    # -- raw block access ---------------------------------------------------

    def put(self, data: bytes, code: int = DEFAULT_HASH) -> Multihash:
        if len(data) > self.max_block_size:
            raise BlockTooLarge(f"{len(data)} bytes exceeds max {self.max_block_size}")
        key = hash_bytes(data, code)
        with self._lock:
            self._blocks.setdefault(key.encode(), bytes(data))
            self._touch(key)
        return key

    def get(self, key: Multihash) -> Optional[bytes]:
        with self._lock:
            data = self._blocks.get(key.encode())
            if data is None:
                return None
            if hash_bytes(data, key.code) != key:
                del self._blocks[key.encode()]
                raise IntegrityError(f"block {key} failed hash verification")
            self._touch(key)
            return data

    def has(self, key: Multihash) -> bool:
        return key.encode() in self._blocks

    def keys(self) -> list[Multihash]:
        return [multihash_decode(k) for k in self._blocks]

    def __len__(self) -> int:
        return len(self._blocks)

    def total_bytes(self) -> int:
        return sum(len(v) for v in self._blocks.values())

    def _touch(self, key: Multihash) -> None:
        self._tick += 1
        self._access[key.encode()] = self._tick

    def _remove(self, raw_key: bytes) -> None:
        self._blocks.pop(raw_key, None)
        self._access.pop(raw_key, None)

    # -- pinning --------------------------------------------------------

    def pins(self) -> PinSet:
        return PinSet(set(self._pins.direct), set(self._pins.recursive))

    def pin(self, key: Multihash, recursive: bool = False,
            resolver: Optional[LinkResolver] = None) -> set[Multihash]:
        """Pin ``key`` (and its link closure when recursive); returns the set.

        Every member must be present locally; otherwise PartialPinError names
        the missing keys and nothing is pinned.
        """
        with self._maintenance:
            closure = self._closure(key, recursive, resolver)
            if recursive:
                self._pins.recursive.add(key)
                self._closures[key] = frozenset(k.encode() for k in closure)
            else:
                self._pins.direct.add(key)
            self._record_pin("P", "r" if recursive else "d", key)
            return closure

    def unpin(self, key: Multihash, recursive: bool = False) -> None:
        with self._maintenance:
            if recursive:
                self._pins.recursive.discard(key)
                self._closures.pop(key, None)
            else:
                self._pins.direct.discard(key)
            self._record_pin("U", "r" if recursive else "d", key)

    def _closure(self, key: Multihash, recursive: bool,
                 resolver: Optional[LinkResolver]) -> set[Multihash]:
        if not self.has(key):
            raise PartialPinError([key])
        if not recursive:
            return {key}
        resolver = resolver or self._resolver
        if resolver is None:
            raise StoreError("recursive pin needs a link resolver")
        closure: set[Multihash] = set()
        missing: list[Multihash] = []
        stack = [key]
        while stack:
            current = stack.pop()
            if current in closure:
                continue
            children = resolver(current)
            if children is None or not self.has(current):
                missing.append(current)
                continue
            closure.add(current)
            stack.extend(children)
        if missing:
            raise PartialPinError(missing)
        return closure

    def pin_closure_raw(self) -> set[bytes]:
        """Encoded keys protected from gc."""
        protected = {k.encode() for k in self._pins.direct}
        protected |= {k.encode() for k in self._pins.recursive}
        for closure in self._closures.values():
            protected |= closure
        return protected

    def _record_pin(self, op: str, kind: str, key: Multihash) -> None:
        pass  # journal only exists for the filesystem store

    # -- garbage collection ----------------------------------------------

    def gc(self, low_water: Optional[int] = None) -> set[Multihash]:
        """Drop unpinned blocks, oldest access first, until count <= low water."""
        target = self.low_water if low_water is None else low_water
        with self._maintenance, self._lock:
            protected = self.pin_closure_raw()
            victims = [k for k in self._blocks if k not in protected]
            victims.sort(key=lambda k: (self._access.get(k, 0), k))
            removed = set()
            for raw in victims:
                if len(self._blocks) <= target:
                    break
                self._remove(raw)
                removed.add(multihash_decode(raw))
            return removed


class FsBlockStore(MemoryBlockStore):
    """Filesystem-backed store: one file per block, atomic rename on write.

    Layout under ``root``::

        blocks/<2-char shard>/<display name>   block payload
        quarantine/<display name>              blocks that failed verification
        pins.journal                           one line per pin op: P|U d|r key
    """

    def __init__(self, root: str, max_block_size: int = MAX_BLOCK_SIZE,
                 low_water: int = 0, resolver: Optional[LinkResolver] = None):
        super().__init__(max_block_size, low_water, resolver)
        self.root = root
        self._blocks_dir = os.path.join(root, "blocks")
        self._quarantine_dir = os.path.join(root, "quarantine")
        self._journal_path = os.path.join(root, "pins.journal")
        os.makedirs(self._blocks_dir, exist_ok=True)
        self._replay_journal()

    def _path(self, key: Multihash) -> str:
        name = base_display(key.encode())
        return os.path.join(self._blocks_dir, name[:2], name)

    def put(self, data: bytes, code: int = DEFAULT_HASH) -> Multihash:
        if len(data) > self.max_block_size:
            raise BlockTooLarge(f"{len(data)} bytes exceeds max {self.max_block_size}")
        key = hash_bytes(data, code)
        path = self._path(key)
        if not os.path.exists(path):
            os.makedirs(os.path.dirname(path), exist_ok=True)
            tmp = path + ".tmp"
            try:
                with open(tmp, "wb") as fh:
                    fh.write(data)
                os.replace(tmp, path)
            except OSError as exc:
                raise StoreError(f"cannot write block: {exc}") from exc
        with self._lock:
            self._touch(key)
        return key

    def get(self, key: Multihash) -> Optional[bytes]:
        path = self._path(key)
        try:
            with open(path, "rb") as fh:
                data = fh.read()
        except FileNotFoundError:
            return None
        except OSError as exc:
            raise StoreError(f"cannot read block: {exc}") from exc
        if hash_bytes(data, key.code) != key:
            self._quarantine(key, path)
            raise IntegrityError(f"block {key} failed hash verification")
        with self._lock:
            self._touch(key)
        return data

    def has(self, key: Multihash) -> bool:
        return os.path.exists(self._path(key))

    def keys(self) -> list[Multihash]:
        found = []
        for shard in sorted(os.listdir(self._blocks_dir)):
            shard_dir = os.path.join(self._blocks_dir, shard)
            if not os.path.isdir(shard_dir):
                continue
            for name in sorted(os.listdir(shard_dir)):
                if name.endswith(".tmp"):
                    continue  # interrupted write, never acknowledged
                found.append(multihash_decode(base_parse(name)))
        return found

    def __len__(self) -> int:
        return len(list(self.keys()))

    def total_bytes(self) -> int:
        total = 0
        for key in self.keys():
            total += os.path.getsize(self._path(key))
        return total

    def _quarantine(self, key: Multihash, path: str) -> None:
        os.makedirs(self._quarantine_dir, exist_ok=True)
        try:
            os.replace(path, os.path.join(self._quarantine_dir, base_display(key.encode())))
        except OSError:
            pass

    def _record_pin(self, op: str, kind: str, key: Multihash) -> None:
        with open(self._journal_path, "a", encoding="ascii") as fh:
            fh.write(f"{op} {kind} {base_display(key.encode())}\n")

    def _replay_journal(self) -> None:
        if not os.path.exists(self._journal_path):
            return
        with open(self._journal_path, encoding="ascii") as fh:
            for line in fh:
                parts = line.split()
                if len(parts) != 3:
                    continue
                op, kind, name = parts
                key = multihash_decode(base_parse(name))
                target = self._pins.recursive if kind == "r" else self._pins.direct
                if op == "P":
                    target.add(key)
                elif op == "U":
                    target.discard(key)
        # closures for surviving recursive pins are rebuilt lazily at gc time

    def gc(self, low_water: Optional[int] = None) -> set[Multihash]:
        target = self.low_water if low_water is None else low_water
        with self._maintenance:
            self._rebuild_closures()
            protected = self.pin_closure_raw()
            with self._lock:
                victims = [k.encode() for k in self.keys() if k.encode() not in protected]
                victims.sort(key=lambda k: (self._access.get(k, 0), k))
                removed = set()
                remaining = len(victims) + len({k.encode() for k in self.keys()} & protected)
                for raw in victims:
                    if remaining <= target:
                        break
                    key = multihash_decode(raw)
                    try:
                        os.remove(self._path(key))
                    except FileNotFoundError:
                        pass
                    self._access.pop(raw, None)
                    removed.add(key)
                    remaining -= 1
                return removed

    def _rebuild_closures(self) -> None:
        if self._resolver is None:
            return
        for key in self._pins.recursive:
            if key in self._closures:
                continue
            closure: set[bytes] = set()
            stack = [key]
            while stack:
                current = stack.pop()
                if current.encode() in closure:
                    continue
                children = self._resolver(current)
                if children is None:
                    continue
                closure.add(current.encode())
                stack.extend(children)
            self._closures[key] = frozenset(closure)
