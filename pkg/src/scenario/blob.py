"""Function blobs: the stand-in for executable code."""
import struct

from ..custom_exceptions import CallFault

BLOB_MAGIC = b"\x7fFNB"
# magic, 4 reserved bytes, signed 64-bit return value
_BLOB = struct.Struct("<4s4xq")
BLOB_SIZE = _BLOB.size


def encode_blob(return_value: int) -> bytes:
    """Pack a function that returns return_value."""
    return _BLOB.pack(BLOB_MAGIC, return_value)


def decode_blob(data: bytes, va: int = 0) -> int:
    """
    Unpack the return value of a function blob.

    Args:
        data (bytes): At least BLOB_SIZE bytes fetched from the call target.
        va (int): Call target, for the fault message.

    Raises:
        CallFault: if data does not start with a valid blob.
    """
    if len(data) < BLOB_SIZE:
        raise CallFault(va)
    magic, value = _BLOB.unpack_from(data)
    if magic != BLOB_MAGIC:
        raise CallFault(va)
    return value
