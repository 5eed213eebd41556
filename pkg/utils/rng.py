"""
Named random substreams.

Every stochastic component (task generation, world-model sampling, rollouts, optimizer
bookkeeping) draws from its own generator derived from one master seed and a tag, so that
adding draws in one component never shifts another.
"""

import zlib

import numpy as np

_MASK_32 = 0xFFFFFFFF


def derive_seed(master_seed: int, tag: str) -> int:
    # crc32, not hash(): seeds must match across processes.
    crc = zlib.crc32(tag.encode("utf-8")) & _MASK_32
    return ((int(master_seed) & 0xFFFFFFFFFFFFFFFF) << 32) | crc


def make_rng(master_seed: int, tag: str) -> np.random.Generator:
    return np.random.default_rng(derive_seed(master_seed, tag))


def spawn_seeds(rng: np.random.Generator, count: int) -> list[int]:
    """Draw independent child seeds up front so workers can run in any order."""
    return [int(value) for value in rng.integers(0, 2**63 - 1, size=count)]
