"""Deterministic seed derivation for replications.

Seeds must not depend on ``hash()`` (salted per process) nor on thread
scheduling, so every replication's generator is derived from the master
seed and a tuple of labels with a splitmix64 avalanche and 64-bit FNV-1a.
"""

from __future__ import annotations

_FNV_OFFSET64 = 0xCBF29CE484222325
_FNV_PRIME64 = 0x100000001B3
_MASK64 = 0xFFFFFFFFFFFFFFFF

SeedPart = int | str | bytes


def _to_bytes(part: SeedPart) -> bytes:
    if isinstance(part, bytes):
        return part
    if isinstance(part, bool):
        part = int(part)
    if isinstance(part, int):
        return int(part & _MASK64).to_bytes(8, "little", signed=False)
    return str(part).encode("utf-8")


def _fnv1a64(data: bytes, start: int = _FNV_OFFSET64) -> int:
    h = start
    for byte in data:
        h ^= byte
        h = (h * _FNV_PRIME64) & _MASK64
    return h


def splitmix64(value: int) -> int:
    z = (value + 0x9E3779B97F4A7C15) & _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


def derive_seed(master_seed: int, *parts: SeedPart) -> int:
    """Mix ``master_seed`` with ``parts`` into a 64-bit seed; same on every platform."""
    h = splitmix64(int(master_seed) & _MASK64)
    for part in parts:
        # length prefix keeps ("ab", "c") and ("a", "bc") apart
        data = _to_bytes(part)
        h = _fnv1a64(len(data).to_bytes(4, "little") + data, h)
    return splitmix64(h)
