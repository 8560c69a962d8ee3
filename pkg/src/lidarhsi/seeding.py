"""Seed derivation shared by every stochastic stage.

Two derivations are used:

* ``stage_seed`` hashes ``(stage name, run index, master seed)`` with SHA-256 and
  keeps the first eight bytes (little-endian).  Pipeline stages use it so that a
  replay in any language only needs the stage names.
* ``splitmix64`` / ``child_seeds`` derive per-unit seeds (forest trees, SVM class
  pairs) from one parent seed.
"""

from __future__ import annotations

import hashlib

import numpy as np

_MASK64 = (1 << 64) - 1


def splitmix64(state: int) -> tuple[int, int]:
    """Advance a splitmix64 state; return ``(new_state, output)``."""
    state = (state + 0x9E3779B97F4A7C15) & _MASK64
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return state, z ^ (z >> 31)


def child_seeds(seed: int, count: int) -> list[int]:
    """``count`` 64-bit seeds from consecutive splitmix64 outputs of ``seed``."""
    state = int(seed) & _MASK64
    out = []
    for _ in range(count):
        state, value = splitmix64(state)
        out.append(value)
    return out


def stage_seed(stage: str, run: int, master: int) -> int:
    digest = hashlib.sha256(f"{stage}:{int(run)}:{int(master)}".encode()).digest()
    return int.from_bytes(digest[:8], "little")


def rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(int(seed) & _MASK64))
