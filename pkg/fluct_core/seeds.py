"""
Seed streams for reproducible parallel Monte Carlo.

Every random draw in the lab comes from numpy's counter-based Philox
generator keyed by a 64-bit seed. Seeds for replicates are derived, never
drawn, so adding replicates never perturbs existing ones:

    path_simulator replicates:  seed_i      = base XOR i
    experiment work items:      seed_(n, i) = base XOR hash64(n, i)
    hash64(n, i)                            = splitmix64(splitmix64(n) XOR i)
    named sub-streams:          substream(seed, tag) = splitmix64(seed XOR tag)
    Fristedt walks:             substream(seed_(n, r), FRISTEDT_STREAM)
"""
import numpy as np

from .exceptions import UsageError

MASK64 = (1 << 64) - 1
GOLDEN_GAMMA = 0x9E3779B97F4A7C15

# Sub-stream tags
CLOCK_STREAM = 0x636C6F636B5F7374    # local time weights
BOOTSTRAP_STREAM = 0x626F6F7473747270  # bootstrap resampling
WALK_STREAM = 0x77616C6B5F737472     # random walk Poisson clocks
FRISTEDT_STREAM = 0x6672697374656474  # walks of the Fristedt estimate


def splitmix64(x: int) -> int:
    """SplitMix64 finaliser: a bijective 64-bit mix."""
    z = (int(x) + GOLDEN_GAMMA) & MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def hash64(n: int, i: int) -> int:
    return splitmix64(splitmix64(n) ^ (int(i) & MASK64))


def validate_seed(seed: int) -> int:
    seed = int(seed)
    if not 0 <= seed <= MASK64:
        raise UsageError(f"seed must be an unsigned 64-bit integer, got {seed}")
    return seed


def replicate_seed(base: int, i: int) -> int:
    return (validate_seed(base) ^ int(i)) & MASK64


def experiment_seed(base: int, n: int, i: int) -> int:
    return (validate_seed(base) ^ hash64(n, i)) & MASK64


def substream(seed: int, tag: int) -> int:
    return splitmix64(validate_seed(seed) ^ tag)


def make_generator(seed: int) -> np.random.Generator:
    """Generator over Philox4x64 keyed directly by the 64-bit seed."""
    return np.random.Generator(np.random.Philox(key=validate_seed(seed)))


def trace_id(n: int, i: int) -> str:
    """Log correlation id for work item (n, i), e.g. n016-r00042."""
    return f"n{n:03d}-r{i:05d}"
