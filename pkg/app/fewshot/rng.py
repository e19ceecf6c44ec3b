"""
Seed derivation and generators.

Every episode owns a generator seeded from (global_seed, run_index):

    seed_run = splitmix64((global_seed + run_index * 0x9E3779B97F4A7C15) mod 2**64)

and draws from numpy's PCG64, so an episode never depends on which worker
produced it or on the episodes sampled before it.
"""
import numpy as np

_MASK = (1 << 64) - 1
GOLDEN_GAMMA = 0x9E3779B97F4A7C15


def splitmix64(x: int) -> int:
    z = (x + GOLDEN_GAMMA) & _MASK
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
    return z ^ (z >> 31)


def derive_seed(global_seed: int, index: int) -> int:
    return splitmix64((global_seed + index * GOLDEN_GAMMA) & _MASK)


def generator(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(seed & _MASK))
