"""Deterministic sub-seed derivation.

Every randomized component draws from its own stream, derived from the
master seed and a purpose tag: sub = master XOR FNV-1a-64(tag). Streams
for distinct tags are independent and reproducible, which is what makes
paired experiment runs differ only where intended.
"""

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3
_MASK64 = 0xFFFFFFFFFFFFFFFF


def fnv1a64(data: bytes) -> int:
    h = _FNV_OFFSET
    for byte in data:
        h ^= byte
        h = (h * _FNV_PRIME) & _MASK64
    return h


def derive_seed(master: int, tag: str) -> int:
    """Sub-seed for `tag`, as an unsigned 64-bit integer."""
    return (master & _MASK64) ^ fnv1a64(tag.encode("utf-8"))
