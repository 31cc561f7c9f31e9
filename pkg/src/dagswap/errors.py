"""Exception hierarchy shared by all subsystems."""


class DagswapError(Exception):
    """Base class for every error raised by this package."""


# --- binary formats ---------------------------------------------------------

class RegistryError(DagswapError):
    """Unknown or unusable code in a format registry."""


class LengthMismatch(DagswapError):
    """Declared length disagrees with the actual payload."""


class TruncatedError(DagswapError):
    """Input ended before a complete value could be read."""


class PayloadError(DagswapError):
    """Component payload is structurally invalid (bad address, port, ...)."""


class AlphabetError(DagswapError):
    """Text contains characters outside the expected alphabet."""


class LengthError(DagswapError):
    """Input has a length the encoding cannot represent."""


# --- identity ---------------------------------------------------------------

class DifficultyTooHigh(DagswapError):
    """Requested identity puzzle difficulty exceeds the desk-scale guard."""


class KeyFormatError(DagswapError):
    """Key bytes are malformed for the configured signature scheme."""


# --- block storage ----------------------------------------------------------

class BlockTooLarge(DagswapError):
    """Block exceeds the configured maximum size."""


class StoreError(DagswapError):
    """Underlying storage failed."""


class IntegrityError(DagswapError):
    """Stored or received bytes do not match their content hash."""


class PartialPinError(DagswapError):
    """Recursive pin could not cover the full closure.

    ``missing`` lists the unreachable descendant keys.
    """

    def __init__(self, missing):
        self.missing = list(missing)
        super().__init__(f"{len(self.missing)} descendant block(s) not available")


# --- routing ----------------------------------------------------------------

class ValueTooLarge(DagswapError):
    """Value exceeds the small-value size rule for direct DHT storage."""


class UnknownNode(DagswapError):
    """Simulated frame addressed to a node that does not exist."""


# --- object layer -----------------------------------------------------------

class DecodeError(DagswapError):
    """Byte stream is not a valid canonical object encoding.

    ``offset`` is the byte position where decoding failed.
    """

    def __init__(self, message, offset=None):
        self.offset = offset
        super().__init__(message if offset is None else f"{message} (at byte {offset})")


class PathNotFound(DagswapError):
    """A path component did not match any link name.

    ``index`` is the position of the failing component.
    """

    def __init__(self, component, index):
        self.component = component
        self.index = index
        super().__init__(f"no link named {component!r} (component {index})")


class FetchError(DagswapError):
    """A referenced object could not be fetched.

    ``byte_range`` optionally carries the (start, end) span of file bytes
    the missing object was expected to cover.
    """

    def __init__(self, key, byte_range=None):
        self.key = key
        self.byte_range = byte_range
        detail = f"object {key} not available"
        if byte_range is not None:
            detail += f" (covers bytes {byte_range[0]}..{byte_range[1]})"
        super().__init__(detail)


class SignatureError(DagswapError):
    """Signature verification failed."""


class KeyNotFound(DagswapError):
    """Referenced public key could not be resolved."""


class NoKey(DagswapError):
    """Keychain holds no entry for the requested tag."""


class DecryptError(DagswapError):
    """Authenticated decryption failed."""


class PublishError(DagswapError):
    """Routing rejected or failed a publish; the object remains stored."""


# --- files ------------------------------------------------------------------

class KindError(DagswapError):
    """Object is not of the file kind the operation requires."""


class ParamError(DagswapError):
    """Degenerate or contradictory parameters."""


class InvalidNameError(DagswapError):
    """Entry name is duplicated, empty, or contains a path separator."""


# --- naming -----------------------------------------------------------------

class NameAuthError(DagswapError):
    """Name record failed signature or publisher-binding checks."""


class RecursionLimit(DagswapError):
    """Name resolution exceeded the configured indirection depth."""


class NameNotFound(DagswapError):
    """No record, link or TXT entry exists for the requested name."""
