"""Deterministic seed derivation.

Every randomized stage draws from its own ``numpy`` generator seeded through
``derive_seed``, a splitmix64-style mixer.  Child streams are independent of
each other and stable across runs and platforms, which is what makes the
pipeline outputs bit-reproducible and per-sample work safe to parallelize.
"""

import zlib

_MASK = (1 << 64) - 1


def _mix(z: int) -> int:
    z = (z + 0x9E3779B97F4A7C15) & _MASK
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
    return (z ^ (z >> 31)) & _MASK


def derive_seed(master: int, *parts: int | str) -> int:
    """Derive a child seed from a master seed and a label path.

    Labels may be ints or strings; strings are folded in via CRC32 so the
    derivation never depends on Python's per-process hash randomization.
    """
    state = _mix(master & _MASK)
    for part in parts:
        if isinstance(part, str):
            value = zlib.crc32(part.encode("utf-8"))
        else:
            value = int(part) & _MASK
        state = _mix(state ^ _mix(value))
    return state
