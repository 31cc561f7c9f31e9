"""dagswap: a desk-scale content-addressed file network.

Content lives in a Merkle DAG of hash-linked objects; blocks move between
peers through an incentive-weighted exchange protocol over a swappable
routing layer (an XOR-metric DHT or a plain shared table); mutable names are
signed records keyed by the hash of the owner's public key.  Everything runs
on a deterministic in-process network simulator and a batch CLI.
"""

__version__ = "0.1.0"

from .multiformats import Multiaddr, Multihash, base_display, base_parse, hash_bytes
from .merkledag import DagLink, DagObject, decode_object, encode_object, object_key

__all__ = [
    "DagLink",
    "DagObject",
    "Multiaddr",
    "Multihash",
    "base_display",
    "base_parse",
    "decode_object",
    "encode_object",
    "hash_bytes",
    "object_key",
]
