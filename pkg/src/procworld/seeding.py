"""Seed hierarchy and integer hashing shared by every generator."""

from __future__ import annotations

import hashlib

import numpy as np

MASK64 = (1 << 64) - 1


def substream(seed: int, *names: object) -> int:
    """Derive a 64-bit child seed from ``seed`` and a path of names.

    Keyed with blake2b so sibling streams are independent and stable across
    platforms and Python versions.
    """
    h = hashlib.blake2b(digest_size=8, key=b"procworld")
    h.update(str(int(seed) & MASK64).encode())
    for name in names:
        h.update(b"/")
        h.update(str(name).encode())
    return int.from_bytes(h.digest(), "little")


def rng(seed: int, *names: object) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(substream(seed, *names)))


def _mix(h: np.ndarray) -> np.ndarray:
    # splitmix64 finalizer; uint64 arithmetic wraps (0-d inputs would warn).
    with np.errstate(over="ignore"):
        h = (h ^ (h >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
        h = (h ^ (h >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return h ^ (h >> np.uint64(31))


def hash_cells(seed: int, *coords: np.ndarray) -> np.ndarray:
    """Hash integer lattice coordinates into uniform uint64 values."""
    h = np.full(np.shape(coords[0]), np.uint64(int(seed) & MASK64), dtype=np.uint64)
    h = _mix(h + np.uint64(0x9E3779B97F4A7C15))
    for c in coords:
        c = np.asarray(c).astype(np.int64).astype(np.uint64)
        h = _mix(h ^ (c + np.uint64(0x9E3779B97F4A7C15)))
    return h


def hash_unit(seed: int, *coords: np.ndarray) -> np.ndarray:
    """Hash lattice coordinates to floats in [0, 1)."""
    return (hash_cells(seed, *coords) >> np.uint64(11)).astype(np.float64) * (1.0 / (1 << 53))
