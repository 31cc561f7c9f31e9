"""Tagged binary frames for the simulated network protocols.

Every frame is one tag byte followed by fields encoded with the varint and
multihash primitives: integers are minimal varints, byte strings and
multihashes are length-prefixed.  Request/response RPCs additionally carry a
varint request id right after the tag.
"""

from __future__ import annotations

from .errors import TruncatedError
from .multiformats import (
    WIRE_VARINT_MAX_BYTES,
    Multihash,
    encode_uvarint,
    read_multihash,
    read_uvarint,
)

# routing RPCs
PING = 0x01
PONG = 0x02
FIND_NODE = 0x03
NODES = 0x04
FIND_VALUE = 0x05
VALUE = 0x06
STORE_VALUE = 0x07
STORE_ACK = 0x08
ADD_PROVIDER = 0x09
PROVIDER_ACK = 0x0A
GET_PROVIDERS = 0x0B
PROVIDERS = 0x0C

# block exchange
OPEN = 0x10
WANT_LIST = 0x11
BLOCK = 0x12
BLOCK_ACK = 0x13
CLOSE = 0x14

TAG_NAMES = {
    PING: "PING",
    PONG: "PONG",
    FIND_NODE: "FIND_NODE",
    NODES: "NODES",
    FIND_VALUE: "FIND_VALUE",
    VALUE: "VALUE",
    STORE_VALUE: "STORE_VALUE",
    STORE_ACK: "STORE_ACK",
    ADD_PROVIDER: "ADD_PROVIDER",
    PROVIDER_ACK: "PROVIDER_ACK",
    GET_PROVIDERS: "GET_PROVIDERS",
    PROVIDERS: "PROVIDERS",
    OPEN: "OPEN",
    WANT_LIST: "WANT_LIST",
    BLOCK: "BLOCK",
    BLOCK_ACK: "BLOCK_ACK",
    CLOSE: "CLOSE",
}


def frame_name(frame: bytes) -> str:
    if not frame:
        return "EMPTY"
    return TAG_NAMES.get(frame[0], f"0x{frame[0]:02x}")


class Writer:
    """Append-only frame builder."""

    def __init__(self, tag: int):
        self._buf = bytearray([tag])

    def uint(self, value: int) -> "Writer":
        self._buf += encode_uvarint(value, WIRE_VARINT_MAX_BYTES)
        return self

    def blob(self, data: bytes) -> "Writer":
        self._buf += encode_uvarint(len(data), WIRE_VARINT_MAX_BYTES) + data
        return self

    def multihash(self, mh: Multihash) -> "Writer":
        return self.blob(mh.encode())

    def raw(self, data: bytes) -> "Writer":
        self._buf += data
        return self

    def bytes(self) -> bytes:
        return bytes(self._buf)


class Reader:
    """Cursor over a received frame; raises TruncatedError on short input."""

    def __init__(self, frame: bytes, skip_tag: bool = True):
        self.frame = frame
        self.pos = 1 if skip_tag else 0

    @property
    def tag(self) -> int:
        return self.frame[0]

    def uint(self) -> int:
        value, self.pos = read_uvarint(self.frame, self.pos, WIRE_VARINT_MAX_BYTES)
        return value

    def blob(self) -> bytes:
        length, pos = read_uvarint(self.frame, self.pos, WIRE_VARINT_MAX_BYTES)
        if pos + length > len(self.frame):
            raise TruncatedError("frame field runs past end")
        self.pos = pos + length
        return bytes(self.frame[pos:pos + length])

    def multihash(self) -> Multihash:
        raw = self.blob()
        mh, used = read_multihash(raw, 0)
        if used != len(raw):
            raise TruncatedError("trailing bytes in multihash field")
        return mh

    def done(self) -> bool:
        return self.pos >= len(self.frame)
