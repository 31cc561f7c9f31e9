"""Versioned file model over the object layer: blobs, lists, trees, commits.

File nodes are plain DAG objects whose data field starts with a kind tag:

    0x01 blob    tag + raw file bytes
    0x02 list    tag + one kind byte per (unnamed) link
    0x03 tree    tag + one kind byte per (named, name-sorted) link
    0x04 commit  tag + target kind byte + varint-framed date and message
    0x05 nameref tag + node id multihash (mutable-namespace pointer)

Large files are split by a pluggable chunker and rooted at a list whose link
sizes are the byte spans covered, so they sum to the file length.  Tree links
carry aggregate subgraph sizes instead (fast directory size lookups).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Iterable, Optional

from .errors import (
    FetchError,
    InvalidNameError,
    KindError,
    ParamError,
)
from .merkledag import (
    DagLink,
    DagObject,
    Fetch,
    cumulative_size,
    decode_object,
    encode_object,
    object_key,
)
from .multiformats import Multihash, encode_uvarint, read_multihash, read_uvarint

KIND_BLOB = 0x01
KIND_LIST = 0x02
KIND_TREE = 0x03
KIND_COMMIT = 0x04
KIND_NAMEREF = 0x05

KIND_NAMES = {
    KIND_BLOB: "blob",
    KIND_LIST: "list",
    KIND_TREE: "tree",
    KIND_COMMIT: "commit",
    KIND_NAMEREF: "nameref",
}
KIND_CODES = {v: k for k, v in KIND_NAMES.items()}


@dataclass(frozen=True)
class FileNode:
    """A typed view over a DagObject."""

    kind: str
    obj: DagObject
    content: bytes = b""  # blob payload
    child_kinds: tuple[str, ...] = ()  # list/tree: aligned with links
    target_kind: str = ""  # commit
    date: str = ""  # commit
    message: str = ""  # commit
    nameref: Optional[Multihash] = None  # nameref target node id


def decode_file(obj: DagObject) -> FileNode:
    """Parse the kind tag and per-kind payload; KindError when not a file node."""
    if not obj.data:
        raise KindError("object data is empty, no file kind tag")
    tag = obj.data[0]
    kind = KIND_NAMES.get(tag)
    if kind is None:
        raise KindError(f"unknown file kind tag 0x{tag:02x}")
    if kind == "blob":
        if obj.links:
            raise KindError("blobs have no links")
        return FileNode(kind, obj, content=obj.data[1:])
    if kind in ("list", "tree"):
        kinds = tuple(KIND_NAMES.get(b, "?") for b in obj.data[1:])
        if len(kinds) != len(obj.links):
            raise KindError(f"{kind} kind array does not align with links")
        if kind == "list" and any(k not in ("blob", "list") for k in kinds):
            raise KindError("list children must be blobs or lists")
        return FileNode(kind, obj, child_kinds=kinds)
    if kind == "commit":
        body = obj.data[1:]
        if not body:
            raise KindError("commit is missing its target kind")
        target_kind = KIND_NAMES.get(body[0], "?")
        date_len, off = read_uvarint(body, 1)
        date = body[off:off + date_len].decode("utf-8")
        off += date_len
        msg_len, off = read_uvarint(body, off)
        message = body[off:off + msg_len].decode("utf-8")
        return FileNode(kind, obj, target_kind=target_kind, date=date, message=message)
    node_id, _ = read_multihash(obj.data, 1)
    return FileNode(kind, obj, nameref=node_id)


def file_kind(obj: DagObject) -> str:
    return decode_file(obj).kind


# ---------------------------------------------------------------------------
# Constructors
# ---------------------------------------------------------------------------

def make_blob(content: bytes) -> DagObject:
    return DagObject((), bytes([KIND_BLOB]) + bytes(content))


def make_list(children: Iterable[tuple[Multihash, str, int]]) -> DagObject:
    """children: (key, kind, covered byte length); links stay unnamed."""
    entries = list(children)
    kinds = bytearray([KIND_LIST])
    links = []
    for key, kind, size in entries:
        if kind not in ("blob", "list"):
            raise KindError(f"list child cannot be a {kind}")
        kinds.append(KIND_CODES[kind])
        links.append(DagLink("", key, size))
    return DagObject(tuple(links), bytes(kinds))


def make_tree(entries: dict[str, tuple[Multihash, str, int]]) -> DagObject:
    """entries: name -> (key, kind, aggregate size); names sorted for identity."""
    seen = set()
    for name in entries:
        if not name or "/" in name:
            raise InvalidNameError(f"bad tree entry name {name!r}")
        if name in seen:
            raise InvalidNameError(f"duplicate tree entry {name!r}")
        seen.add(name)
    kinds = bytearray([KIND_TREE])
    links = []
    for name in sorted(entries, key=lambda n: n.encode("utf-8")):
        key, kind, size = entries[name]
        if kind not in KIND_CODES:
            raise KindError(f"unknown child kind {kind!r}")
        kinds.append(KIND_CODES[kind])
        links.append(DagLink(name, key, size))
    return DagObject(tuple(links), bytes(kinds))


def make_commit(target: Multihash, target_kind: str, date: str, message: str,
                parents: Iterable[tuple[Multihash, int]] = (),
                author: Optional[tuple[Multihash, int]] = None,
                target_size: int = 0) -> DagObject:
    """Snapshot object: parent links first, then the target, then the author."""
    if target_kind not in KIND_CODES:
        raise KindError(f"unknown target kind {target_kind!r}")
    body = bytearray([KIND_COMMIT, KIND_CODES[target_kind]])
    date_b = date.encode("utf-8")
    msg_b = message.encode("utf-8")
    body += encode_uvarint(len(date_b)) + date_b
    body += encode_uvarint(len(msg_b)) + msg_b
    links = [DagLink("parent", key, size) for key, size in parents]
    links.append(DagLink("object", target, target_size))
    if author is not None:
        links.append(DagLink("author", author[0], author[1]))
    return DagObject(tuple(links), bytes(body))


def make_nameref(node_id: Multihash) -> DagObject:
    """Pointer into a mutable namespace; resolvers re-enter name resolution."""
    return DagObject((), bytes([KIND_NAMEREF]) + node_id.encode())


# ---------------------------------------------------------------------------
# Chunkers
# ---------------------------------------------------------------------------

# Degree-53 irreducible polynomial over GF(2); bit 53 is the leading term.
_RABIN_POLY = 0x3DA3358B4DC173
_RABIN_DEGREE = 53
_FP_MASK = (1 << _RABIN_DEGREE) - 1


def _poly_mod(value: int) -> int:
    while value.bit_length() > _RABIN_DEGREE:
        value ^= _RABIN_POLY << (value.bit_length() - 1 - _RABIN_DEGREE)
    return value


def _rabin_tables(window: int) -> tuple[list[int], list[int]]:
    # shift_table reduces the byte shifted above the polynomial degree;
    # out_table removes the window's oldest byte (coefficient x^(8*(window-1))).
    shift_table = [_poly_mod(b << _RABIN_DEGREE) for b in range(256)]
    out_exp = 8 * (window - 1)
    out_table = [_poly_mod(b << out_exp) for b in range(256)]
    return shift_table, out_table


_TABLE_CACHE: dict[int, tuple[list[int], list[int]]] = {}


@dataclass(frozen=True)
class FixedChunker:
    """Split at fixed byte offsets."""

    size: int = 256 * 1024

    def __post_init__(self):
        if self.size <= 0:
            raise ParamError("fixed chunk size must be positive")

    def boundaries(self, data: bytes) -> list[int]:
        return list(range(self.size, len(data), self.size)) + ([len(data)] if data else [])

    def split(self, data: bytes) -> list[bytes]:
        return _split_at(data, self.boundaries(data))


@dataclass(frozen=True)
class RabinChunker:
    """Content-defined splitting on a rolling polynomial fingerprint.

    A boundary is declared where the windowed fingerprint matches the mask,
    clamped to [min_size, max_size].  Identical content produces identical
    boundaries, so a local edit disturbs only nearby chunks.
    """

    window: int = 48
    min_size: int = 2048
    avg_size: int = 8192
    max_size: int = 65536
    mask: Optional[int] = None

    def __post_init__(self):
        if not (0 < self.min_size < self.avg_size < self.max_size):
            raise ParamError("need 0 < min < avg < max")
        if self.window < 1 or self.window > self.min_size:
            raise ParamError("window must fit inside the minimum chunk")
        if self.mask is None and self.avg_size & (self.avg_size - 1):
            raise ParamError("avg size must be a power of two unless mask is given")

    def boundaries(self, data: bytes) -> list[int]:
        if not data:
            return []
        mask = self.mask if self.mask is not None else self.avg_size - 1
        if self.window not in _TABLE_CACHE:
            _TABLE_CACHE[self.window] = _rabin_tables(self.window)
        shift_table, out_table = _TABLE_CACHE[self.window]
        window, min_size, max_size = self.window, self.min_size, self.max_size
        fp_mask, degree = _FP_MASK, _RABIN_DEGREE
        n = len(data)
        cuts: list[int] = []
        start = 0
        while n - start > min_size:
            end = min(start + max_size, n)
            cut = end
            # offsets below start+min_size can never cut, so priming starts
            # one window before the first candidate offset
            first = start + min_size
            fp = 0
            for i in range(first - window, first):
                fp = (fp << 8) | data[i]
                fp = (fp & fp_mask) ^ shift_table[fp >> degree]
            if fp & mask == mask:
                cut = first
            else:
                i = first
                while i < end:
                    fp ^= out_table[data[i - window]]
                    fp = (fp << 8) | data[i]
                    fp = (fp & fp_mask) ^ shift_table[fp >> degree]
                    i += 1
                    if fp & mask == mask:
                        cut = i
                        break
            cuts.append(cut)
            start = cut
        if not cuts or cuts[-1] != n:
            cuts.append(n)
        return cuts

    def split(self, data: bytes) -> list[bytes]:
        return _split_at(data, self.boundaries(data))


def _split_at(data: bytes, boundaries: list[int]) -> list[bytes]:
    if not data:
        return [b""]
    chunks = []
    prev = 0
    for cut in boundaries:
        chunks.append(data[prev:cut])
        prev = cut
    if prev != len(data):
        chunks.append(data[prev:])
    return chunks


def chunk_rabin(data: bytes, params: Optional[RabinChunker] = None) -> list[int]:
    """Boundary offsets for ``data`` under rabin parameters."""
    return (params or RabinChunker()).boundaries(data)


# ---------------------------------------------------------------------------
# File operations
# ---------------------------------------------------------------------------

MAX_LINKS_PER_LIST = 2048


def add_file(store, data: bytes, chunker=None) -> Multihash:
    """Store ``data`` as a blob (single chunk) or a list of blobs."""
    chunker = chunker or FixedChunker()
    chunks = chunker.split(data)
    if len(chunks) == 1:
        return store.put(encode_object(make_blob(chunks[0])))
    entries = []
    for chunk in chunks:
        key = store.put(encode_object(make_blob(chunk)))
        entries.append((key, "blob", len(chunk)))
    while len(entries) > MAX_LINKS_PER_LIST:
        grouped = []
        for i in range(0, len(entries), MAX_LINKS_PER_LIST):
            group = entries[i:i + MAX_LINKS_PER_LIST]
            node = make_list(group)
            key = store.put(encode_object(node))
            grouped.append((key, "list", sum(size for _, _, size in group)))
        entries = grouped
    root = make_list(entries)
    return store.put(encode_object(root))


def cat(key: Multihash, fetch: Fetch) -> bytes:
    """Concatenate leaf blobs depth-first, left to right."""
    out = bytearray()
    _cat_into(key, fetch, out, 0)
    return bytes(out)


def _cat_into(key: Multihash, fetch: Fetch, out: bytearray, base: int) -> int:
    raw = fetch(key)
    if raw is None:
        raise FetchError(key, byte_range=(base, base))
    node = decode_file(decode_object(raw))
    if node.kind == "blob":
        out += node.content
        return base + len(node.content)
    if node.kind != "list":
        raise KindError(f"cannot cat a {node.kind}")
    offset = base
    for link in node.obj.links:
        raw_child = fetch(link.hash)
        if raw_child is None:
            raise FetchError(link.hash, byte_range=(offset, offset + link.size))
        offset = _cat_into(link.hash, fetch, out, offset)
    return offset


def file_length(key: Multihash, fetch: Fetch) -> int:
    """Byte length of a blob or list file without materializing it."""
    raw = fetch(key)
    if raw is None:
        raise FetchError(key)
    node = decode_file(decode_object(raw))
    if node.kind == "blob":
        return len(node.content)
    if node.kind != "list":
        raise KindError(f"{node.kind} has no byte length")
    return sum(link.size for link in node.obj.links)


def flatten_tree(root: Multihash, fetch: Fetch) -> DagObject:
    """Single object listing every object reachable through named links.

    Row names are slash-joined paths from the root, so each row resolves via
    the path resolver to the row's own hash.
    """
    rows: list[tuple[str, DagLink, int]] = []

    def walk(key: Multihash, prefix: str) -> None:
        raw = fetch(key)
        if raw is None:
            raise FetchError(key)
        obj = decode_object(raw)
        for link in obj.links:
            if not link.name:
                continue  # unnamed links are unaddressable by path
            path = f"{prefix}/{link.name}" if prefix else link.name
            child_raw = fetch(link.hash)
            if child_raw is None:
                raise FetchError(link.hash)
            child = decode_object(child_raw)
            try:
                kind_code = KIND_CODES[decode_file(child).kind]
            except KindError:
                kind_code = 0
            rows.append((path, DagLink(path, link.hash, link.size), kind_code))
            walk(link.hash, path)

    walk(root, "")
    data = bytearray([KIND_TREE])
    data += bytes(code for _, _, code in rows)
    return DagObject(tuple(link for _, link, _ in rows), bytes(data))


def diff_commits(a: Multihash, b: Multihash, fetch: Fetch) -> list[tuple[str, str, Optional[Multihash], Optional[Multihash]]]:
    """Rows of (path, added|removed|modified, old key, new key).

    Identical subtree keys are pruned without fetching (hash short-circuit).
    """
    rows: list[tuple[str, str, Optional[Multihash], Optional[Multihash]]] = []

    def commit_target(key: Multihash) -> Multihash:
        raw = fetch(key)
        if raw is None:
            raise FetchError(key)
        node = decode_file(decode_object(raw))
        if node.kind != "commit":
            raise KindError(f"expected a commit, got {node.kind}")
        link = node.obj.link_named("object")
        if link is None:
            raise KindError("commit has no object link")
        return link.hash

    def tree_entries(key: Multihash) -> dict[str, Multihash]:
        raw = fetch(key)
        if raw is None:
            raise FetchError(key)
        obj = decode_object(raw)
        return {link.name: link.hash for link in obj.links}

    def is_tree(key: Multihash) -> bool:
        raw = fetch(key)
        if raw is None:
            raise FetchError(key)
        try:
            return decode_file(decode_object(raw)).kind == "tree"
        except KindError:
            return False

    def walk(path: str, old: Optional[Multihash], new: Optional[Multihash]) -> None:
        if old == new:
            return
        if old is None:
            rows.append((path, "added", None, new))
            return
        if new is None:
            rows.append((path, "removed", old, None))
            return
        if is_tree(old) and is_tree(new):
            old_entries = tree_entries(old)
            new_entries = tree_entries(new)
            for name in sorted(set(old_entries) | set(new_entries)):
                child_path = f"{path}/{name}" if path else name
                walk(child_path, old_entries.get(name), new_entries.get(name))
            return
        rows.append((path, "modified", old, new))

    walk("", commit_target(a), commit_target(b))
    return rows


def log(head: Multihash, fetch: Fetch) -> tuple[list[Multihash], list[Multihash]]:
    """Ancestor chain newest-first (breadth-first over parents, deduplicated).

    Returns (chain, missing): parents that could not be fetched truncate the
    walk and are reported in ``missing``.
    """
    chain: list[Multihash] = []
    missing: list[Multihash] = []
    seen: set[bytes] = set()
    queue = [head]
    while queue:
        key = queue.pop(0)
        if key.encode() in seen:
            continue
        seen.add(key.encode())
        raw = fetch(key)
        if raw is None:
            missing.append(key)
            continue
        node = decode_file(decode_object(raw))
        if node.kind != "commit":
            raise KindError(f"log expects commits, got {node.kind}")
        chain.append(key)
        for link in node.obj.links:
            if link.name == "parent":
                queue.append(link.hash)
    return chain, missing


def make_author(store, name: str, node_id: Multihash) -> Multihash:
    """Minimal author object: a tree holding a name blob and the node id."""
    name_blob = make_blob(name.encode("utf-8"))
    id_blob = make_blob(node_id.encode())
    name_key = store.put(encode_object(name_blob))
    id_key = store.put(encode_object(id_blob))
    tree = make_tree({
        "name": (name_key, "blob", cumulative_size(name_blob)),
        "id": (id_key, "blob", cumulative_size(id_blob)),
    })
    return store.put(encode_object(tree))


def store_size(store, key: Multihash) -> int:
    """Aggregate subgraph size for a locally stored object."""
    raw = store.get(key)
    if raw is None:
        raise FetchError(key)
    return cumulative_size(decode_object(raw))


def file_json(key: Multihash, fetch: Fetch) -> dict:
    """The printable object form: kind-aware data plus the link table."""
    raw = fetch(key)
    if raw is None:
        raise FetchError(key)
    obj = decode_object(raw)
    node = decode_file(obj)
    if node.kind == "blob":
        try:
            data = node.content.decode("utf-8")
            if not data.isprintable():
                raise UnicodeDecodeError("utf-8", node.content, 0, 1, "unprintable")
        except UnicodeDecodeError:
            data = "hex:" + node.content.hex()
    elif node.kind in ("list", "tree"):
        data = list(node.child_kinds)
    elif node.kind == "commit":
        data = {"type": node.target_kind, "date": node.date, "message": node.message}
    else:
        data = {"nameref": str(node.nameref)}
    links = [
        {"hash": str(link.hash), "name": link.name, "size": link.size}
        for link in obj.links
    ]
    return {"data": data, "links": links}
