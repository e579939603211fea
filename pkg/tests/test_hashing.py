import struct

from aquarius.hashing import FNV64_OFFSET, bucket_index, fid_digest, fnv1a64, pack_fid
from aquarius.traffic import FiveTuple


def test_fnv1a64_published_vectors():
    assert fnv1a64(b"") == FNV64_OFFSET == 0xCBF29CE484222325
    assert fnv1a64(b"a") == 0xAF63DC4C8601EC8C
    assert fnv1a64(b"foobar") == 0x85944171F73967E8


def test_fid_packing_is_13_network_order_bytes():
    fid = FiveTuple(0xC0A80001, 0x0A000001, 40000, 80, 6)
    raw = pack_fid(fid)
    assert raw == bytes.fromhex("c0a80001" "0a000001" "9c40" "0050" "06")
    assert len(raw) == 13


def test_fid_digest_golden():
    fid = FiveTuple(0xC0A80001, 0x0A000001, 40000, 80, 6)
    # independent byte loop over the same packing
    h = 0xCBF29CE484222325
    for b in struct.pack(">IIHHB", *fid):
        h = ((h ^ b) * 0x100000001B3) % (1 << 64)
    assert fid_digest(fid) == h
    assert bucket_index(fid, 65536) == h % 65536


def test_bucket_index_rejects_empty_table():
    import pytest
    with pytest.raises(ValueError):
        bucket_index(FiveTuple(1, 2, 3, 4, 6), 0)
