"""64-bit FNV-1a over the packed 13-byte flow id.

Packing is big-endian network order: src_ip(4) dst_ip(4) src_port(2)
dst_port(2) proto(1). Used for flow-table bucketing and ECMP selection.
"""

from functools import lru_cache
import struct

FNV64_OFFSET = 0xCBF29CE484222325
FNV64_PRIME = 0x100000001B3
_MASK64 = (1 << 64) - 1

_FID = struct.Struct("!IIHHB")


def fnv1a64(data: bytes) -> int:
    h = FNV64_OFFSET
    for b in data:
        h ^= b
        h = (h * FNV64_PRIME) & _MASK64
    return h


def pack_fid(fid) -> bytes:
    return _FID.pack(fid.src_ip, fid.dst_ip, fid.src_port, fid.dst_port, fid.proto)


@lru_cache(maxsize=1 << 17)
def fid_digest(fid) -> int:
    """Full 64-bit digest of a five-tuple."""
    return fnv1a64(_FID.pack(fid.src_ip, fid.dst_ip, fid.src_port, fid.dst_port, fid.proto))


def bucket_index(fid, M: int) -> int:
    if M <= 0:
        raise ValueError("table size must be positive")
    return fid_digest(fid) % M
