"""Batch command line operating a single local repository.

The repository directory holds a ``config`` (key = value lines), the node's
identity file, the block store, the pin journal, and the locally published
name records.  Every flag can also come from a ``DAGSWAP_``-prefixed
environment variable.  Output hashes print in the display base by default,
or hex under ``--hex``.
"""

from __future__ import annotations

import argparse
import datetime
import json
import os
import sys
from dataclasses import dataclass, fields

from . import files, merkledag, naming
from .blockstore import FsBlockStore
from .errors import (
    AlphabetError,
    BlockTooLarge,
    DagswapError,
    DecodeError,
    DecryptError,
    DifficultyTooHigh,
    FetchError,
    IntegrityError,
    InvalidNameError,
    KeyFormatError,
    KeyNotFound,
    KindError,
    LengthError,
    LengthMismatch,
    NameAuthError,
    NameNotFound,
    NoKey,
    ParamError,
    PathNotFound,
    PayloadError,
    RecursionLimit,
    RegistryError,
    SignatureError,
    TruncatedError,
    ValueTooLarge,
)
from .identity import generate_identity, load_identity, save_identity
from .multiformats import Multihash, base_display, base_parse, multihash_decode
from .naming import DnsFixture, NamePath
from .routing import MemoryRouting, MemoryRoutingHub, SmallValueRecord

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_UNINITIALIZED = 2
EXIT_RESOLUTION = 3
EXIT_INTEGRITY = 4
EXIT_BAD_INPUT = 5

_RESOLUTION_ERRORS = (PathNotFound, NameNotFound, NameAuthError, FetchError,
                      RecursionLimit, KeyNotFound, NoKey)
_INTEGRITY_ERRORS = (IntegrityError, SignatureError, DecryptError)
_INPUT_ERRORS = (ParamError, InvalidNameError, ValueTooLarge, BlockTooLarge,
                 AlphabetError, LengthError, PayloadError, RegistryError,
                 LengthMismatch, TruncatedError, DecodeError, KindError,
                 KeyFormatError, DifficultyTooHigh)

ENV_PREFIX = "DAGSWAP_"


@dataclass
class NodeConfig:
    difficulty: int = 0
    chunker: str = "rabin"
    fixed_size: int = 262144
    rabin_min: int = 2048
    rabin_avg: int = 8192
    rabin_max: int = 65536
    routing: str = "memory"
    listen: str = "/sim/0"
    gc_low_water: int = 0

    def to_text(self) -> str:
        return "".join(f"{f.name} = {getattr(self, f.name)}\n" for f in fields(self))

    @classmethod
    def parse(cls, text: str) -> "NodeConfig":
        cfg = cls()
        kinds = {f.name: f.type for f in fields(cls)}
        for line in text.splitlines():
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            key, _, value = line.partition("=")
            key, value = key.strip(), value.strip()
            if key in kinds:
                current = getattr(cfg, key)
                setattr(cfg, key, type(current)(value))
        return cfg

    def with_env(self) -> "NodeConfig":
        for f in fields(self):
            raw = os.environ.get(ENV_PREFIX + f.name.upper())
            if raw is not None:
                setattr(self, f.name, type(getattr(self, f.name))(raw))
        return self


class Repo:
    """On-disk node state: config, identity, blocks, pins, name records."""

    def __init__(self, root: str):
        self.root = root
        self.config = NodeConfig.parse(self._read("config")).with_env()
        self.identity = load_identity(os.path.join(root, "identity.key"),
                                      self._passphrase())
        self.store = FsBlockStore(os.path.join(root, "store"),
                                  low_water=self.config.gc_low_water,
                                  resolver=self._resolve_links)
        self.hub = MemoryRoutingHub()
        self._load_records()
        from .multiformats import multiaddr_parse
        self.routing = MemoryRouting(self.hub, self.identity,
                                     multiaddr_parse(self.config.listen))
        dns_path = os.path.join(root, "dns.txt")
        self.dns = DnsFixture.from_file(dns_path) if os.path.exists(dns_path) else DnsFixture()

    @staticmethod
    def init(root: str, difficulty: int) -> "Repo":
        if os.path.exists(os.path.join(root, "config")):
            raise ParamError(f"repository already initialized at {root}")
        os.makedirs(root, exist_ok=True)
        cfg = NodeConfig(difficulty=difficulty).with_env()
        with open(os.path.join(root, "config"), "w", encoding="utf-8") as fh:
            fh.write(cfg.to_text())
        ident = generate_identity(cfg.difficulty)
        save_identity(os.path.join(root, "identity.key"), ident,
                      Repo._passphrase())
        return Repo(root)

    @staticmethod
    def _passphrase() -> bytes:
        return os.environ.get(ENV_PREFIX + "PASSPHRASE", "").encode("utf-8")

    def _read(self, name: str) -> str:
        path = os.path.join(self.root, name)
        if not os.path.exists(path):
            raise FileNotFoundError(path)
        with open(path, encoding="utf-8") as fh:
            return fh.read()

    def _resolve_links(self, key):
        raw = self.store.get(key)
        if raw is None:
            return None
        try:
            node = merkledag.decode_any(raw)
        except DagswapError:
            return []
        if isinstance(node, merkledag.DagObject):
            return [link.hash for link in node.links]
        return []

    # -- published records persist across invocations -------------------------

    def _records_path(self) -> str:
        return os.path.join(self.root, "names.db")

    def _load_records(self) -> None:
        path = self._records_path()
        if not os.path.exists(path):
            return
        with open(path, encoding="ascii") as fh:
            for line in fh:
                line = line.strip()
                if line:
                    self.hub.values.consider(SmallValueRecord.decode(bytes.fromhex(line)))

    def save_records(self) -> None:
        with open(self._records_path(), "w", encoding="ascii") as fh:
            for key in self.hub.values.keys():
                fh.write(self.hub.values.get(key).encode().hex() + "\n")

    def fetch(self, key):
        return self.store.get(key)

    def chunker(self, name: str | None = None):
        choice = name or self.config.chunker
        if choice == "fixed":
            return files.FixedChunker(self.config.fixed_size)
        if choice == "rabin":
            return files.RabinChunker(min_size=self.config.rabin_min,
                                      avg_size=self.config.rabin_avg,
                                      max_size=self.config.rabin_max)
        raise ParamError(f"unknown chunker {choice!r}")


def _display(key: Multihash, hex_out: bool) -> str:
    return key.encode().hex() if hex_out else base_display(key.encode())


def _parse_key(text: str) -> Multihash:
    return multihash_decode(base_parse(text))


def _resolve_to_key(repo: Repo, text: str) -> Multihash:
    """Accept /ipfs and /ipns paths, bare keys, and key/sub/path forms."""
    if not text.startswith("/"):
        head, _, rest = text.partition("/")
        _parse_key(head)  # validate early for a clean error
        text = f"/{naming.IMMUTABLE_NS}/{head}" + (f"/{rest}" if rest else "")
    return naming.resolve(text, repo.fetch, repo.routing, dns=repo.dns,
                          now=0.0, depth=naming.DEFAULT_DEPTH)


def _open_repo(args) -> Repo:
    root = args.repo
    if not os.path.exists(os.path.join(root, "config")):
        print(f"repository {root} is not initialized (run init)", file=sys.stderr)
        raise SystemExit(EXIT_UNINITIALIZED)
    return Repo(root)


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_init(args) -> int:
    repo = Repo.init(args.repo, args.difficulty)
    print(_display(repo.identity.node_id, args.hex))
    return EXIT_OK


def _add_path(repo: Repo, path: str, chunker) -> tuple[Multihash, str]:
    if os.path.isdir(path):
        entries = {}
        for name in sorted(os.listdir(path)):
            child_key, child_kind = _add_path(repo, os.path.join(path, name), chunker)
            entries[name] = (child_key, child_kind, files.store_size(repo.store, child_key))
        tree = files.make_tree(entries)
        return repo.store.put(merkledag.encode_object(tree)), "tree"
    with open(path, "rb") as fh:
        data = fh.read()
    key = files.add_file(repo.store, data, chunker)
    kind = files.file_kind(merkledag.decode_object(repo.store.get(key)))
    return key, kind


def cmd_add(args) -> int:
    repo = _open_repo(args)
    key, _ = _add_path(repo, args.path, repo.chunker(args.chunker))
    print(_display(key, args.hex))
    return EXIT_OK


def cmd_cat(args) -> int:
    repo = _open_repo(args)
    key = _resolve_to_key(repo, args.path)
    sys.stdout.buffer.write(files.cat(key, repo.fetch))
    sys.stdout.buffer.flush()
    return EXIT_OK


def cmd_ls(args) -> int:
    repo = _open_repo(args)
    key = _resolve_to_key(repo, args.path)
    for link_hash, size, name in merkledag.list_links(key, repo.fetch):
        print(f"{_display(link_hash, args.hex)} {size} {name}")
    return EXIT_OK


def cmd_refs(args) -> int:
    repo = _open_repo(args)
    key = _resolve_to_key(repo, args.path)
    if args.recursive:
        for ref in merkledag.refs_recursive(key, repo.fetch):
            print(_display(ref, args.hex))
    else:
        for link_hash, _, _ in merkledag.list_links(key, repo.fetch):
            print(_display(link_hash, args.hex))
    return EXIT_OK


def cmd_pin(args) -> int:
    repo = _open_repo(args)
    key = _parse_key(args.key)
    if args.action == "add":
        pinned = repo.store.pin(key, recursive=args.recursive)
        print(f"pinned {len(pinned)} block(s)")
    else:
        repo.store.unpin(key, recursive=args.recursive)
        print("unpinned")
    return EXIT_OK


def cmd_gc(args) -> int:
    repo = _open_repo(args)
    removed = repo.store.gc()
    for key in sorted(removed, key=lambda k: k.encode()):
        print(_display(key, args.hex))
    print(f"removed {len(removed)} block(s)", file=sys.stderr)
    return EXIT_OK


def _commit_date() -> str:
    fixed = os.environ.get(ENV_PREFIX + "DATE")
    if fixed:
        return fixed
    return datetime.datetime.now(datetime.timezone.utc).strftime("%Y-%m-%d %H:%M:%SZ")


def cmd_publish(args) -> int:
    repo = _open_repo(args)
    key = _parse_key(args.key)
    if repo.store.get(key) is None:
        raise FetchError(key)
    value = key
    previous = naming.best_record(
        repo.routing.get_value_records(repo.identity.node_id.encode()),
        repo.identity.node_id, 0.0)
    if args.with_history:
        target_kind = files.file_kind(merkledag.decode_object(repo.store.get(key)))
        parents = []
        if previous is not None:
            prev_raw = repo.store.get(previous.value)
            if prev_raw is not None:
                try:
                    if files.file_kind(merkledag.decode_object(prev_raw)) == "commit":
                        parents.append(
                            (previous.value, merkledag.cumulative_size(
                                merkledag.decode_object(prev_raw))))
                except DagswapError:
                    pass
        commit = files.make_commit(
            key, target_kind, _commit_date(), "publish",
            parents=parents, target_size=files.store_size(repo.store, key))
        value = repo.store.put(merkledag.encode_object(commit))
    sequence = (previous.sequence + 1) if previous is not None else 1
    naming.publish_name(repo.identity, value, repo.routing, now=0.0, sequence=sequence)
    merkledag.publish(value, repo.identity, repo.routing, repo.store)
    repo.save_records()
    print(f"/{naming.MUTABLE_NS}/{_display(repo.identity.node_id, args.hex)}"
          f" -> {_display(value, args.hex)}")
    return EXIT_OK


def cmd_resolve(args) -> int:
    repo = _open_repo(args)
    key = naming.resolve(args.path, repo.fetch, repo.routing, dns=repo.dns, now=0.0)
    print(_display(key, args.hex))
    return EXIT_OK


def cmd_file_cat(args) -> int:
    repo = _open_repo(args)
    key = _resolve_to_key(repo, args.key)
    doc = files.file_json(key, repo.fetch)
    if args.hex:
        for row in doc["links"]:
            row["hash"] = _parse_key(row["hash"]).encode().hex()
    print(json.dumps(doc, indent=2))
    return EXIT_OK


def cmd_daemon(args) -> int:
    from .netsim import SimNet, parse_scenario, spawn

    repo = _open_repo(args)
    with open(args.sim, encoding="utf-8") as fh:
        cfg = parse_scenario(fh.read())
    net = SimNet(seed=cfg.seed, latency_ms=float(cfg.latency_ms)
                 if not str(cfg.latency_ms).startswith("uniform") else 10.0,
                 drop_rate=cfg.drop_rate, bytes_per_ms=cfg.bytes_per_ms,
                 latency_spec=str(cfg.latency_ms))
    peers = spawn(net, cfg.nodes, difficulty=cfg.difficulty,
                  bootstrap_r=cfg.bootstrap_r, horizon_ms=cfg.horizon_ms,
                  exchange_timers=True, adversary=cfg.adversary_spec())
    # the local repository joins the swarm as one more participant
    from .netsim.peer import SimPeer
    local = SimPeer(net, len(peers), repo.identity, exchange_timers=True,
                    horizon_ms=cfg.horizon_ms)
    local.store = repo.store
    local.engine.store = repo.store
    seeds = net.rng.sample(peers, min(cfg.bootstrap_r, len(peers)))
    local.dht.bootstrap([p.multiaddr for p in seeds])
    net.run_until_quiescent()
    for key in repo.store.keys():
        local.dht.provide(key)
    net.run_until_quiescent()

    summary = {"fetched": None}
    if "fetch" in cfg.extras:
        target = _parse_key(cfg.extras["fetch"])
        picker = peers[0]
        picker.fetch(target, lambda ok: summary.__setitem__("fetched", ok))
    net.run_until(cfg.horizon_ms)
    print(f"simulated {net.now:.0f} ms, {len(net.trace)} deliveries")
    print(f"trace digest {net.trace_digest()}")
    if summary["fetched"] is not None:
        print(f"fetch complete: {summary['fetched']}")
    if args.trace:
        with open(args.trace, "w", encoding="ascii") as fh:
            fh.write("\n".join(net.trace_lines()) + "\n")
    return EXIT_OK


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dagswap",
                                     description="content-addressed file network, desk scale")
    parser.add_argument("--repo", default=os.environ.get(ENV_PREFIX + "REPO", ".dagswap"),
                        help="repository directory")
    parser.add_argument("--hex", action="store_true",
                        help="print hashes as lowercase hex (for golden files)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("init", help="create a repository and node identity")
    p.add_argument("--difficulty", type=int, default=0)
    p.set_defaults(fn=cmd_init)

    p = sub.add_parser("add", help="add a file or directory")
    p.add_argument("path")
    p.add_argument("--chunker", choices=["fixed", "rabin"], default=None)
    p.set_defaults(fn=cmd_add)

    p = sub.add_parser("cat", help="print file bytes at a path")
    p.add_argument("path")
    p.set_defaults(fn=cmd_cat)

    p = sub.add_parser("ls", help="list an object's links: hash, size, name")
    p.add_argument("path")
    p.set_defaults(fn=cmd_ls)

    p = sub.add_parser("refs", help="list referenced objects")
    p.add_argument("path")
    p.add_argument("--recursive", action="store_true")
    p.set_defaults(fn=cmd_refs)

    p = sub.add_parser("pin", help="protect objects from gc")
    p.add_argument("action", choices=["add", "rm"])
    p.add_argument("key")
    p.add_argument("-r", "--recursive", action="store_true")
    p.set_defaults(fn=cmd_pin)

    p = sub.add_parser("gc", help="collect unpinned blocks down to the low-water mark")
    p.set_defaults(fn=cmd_gc)

    p = sub.add_parser("publish", help="bind this node's mutable name to an object")
    p.add_argument("key")
    p.add_argument("--with-history", action="store_true")
    p.set_defaults(fn=cmd_publish)

    p = sub.add_parser("resolve", help="resolve a name path to an object hash")
    p.add_argument("path")
    p.set_defaults(fn=cmd_resolve)

    p = sub.add_parser("file-cat", help="print an object in the text form")
    p.add_argument("key")
    p.add_argument("--json", action="store_true", default=True)
    p.set_defaults(fn=cmd_file_cat)

    p = sub.add_parser("daemon", help="run a simulated swarm with this node attached")
    p.add_argument("--sim", required=True, help="scenario file")
    p.add_argument("--trace", default=None, help="write the event trace here")
    p.set_defaults(fn=cmd_daemon)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_ERROR
    except _RESOLUTION_ERRORS as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RESOLUTION
    except _INTEGRITY_ERRORS as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTEGRITY
    except _INPUT_ERRORS as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_BAD_INPUT
    except FileNotFoundError as exc:
        print(f"FileNotFoundError: {exc}", file=sys.stderr)
        return EXIT_BAD_INPUT
    except DagswapError as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
