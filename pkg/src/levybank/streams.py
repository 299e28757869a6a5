"""Reproducible random-number streams derived from a single base seed.

Every stochastic object in the engine draws from its own numpy Generator whose
SeedSequence entropy is the tuple (base_seed, domain, index).  Domains separate
the independent families (subordinator-only paths, record clocks, record
Gaussians, benchmark paths, ...); the index enumerates objects within a family.
The derivation is injective because SeedSequence hashes the entropy tuple
componentwise, so path i of a bank can be regenerated in isolation and distinct
objects never share a stream.

For persistence each stream also gets a compact 64-bit key (domain << 56) |
index, injective for index < 2^56 and domain < 256.
"""

from __future__ import annotations

import numpy as np

# Stream families.  Values are part of the bank file contract: changing them
# changes every generated path.
DOMAIN_SUB_PATH = 1       # subordinator-only paths (the omega_0.. draws)
DOMAIN_RECORD_CLOCK = 2   # the clock L of a convolution record
DOMAIN_RECORD_GAUSS = 3   # the Gaussian increments of a convolution record
DOMAIN_BENCHMARK = 4      # Euler-Maruyama benchmark paths
DOMAIN_VALIDATE = 5       # sampler validation draws
DOMAIN_SELECTION = 6      # estimator subsample/pairing permutations

_MAX_INDEX = 1 << 56


def stream_key(domain: int, index: int) -> int:
    """Compact injective 64-bit identifier for a (domain, index) stream."""
    if not 0 <= domain < 256:
        raise ValueError(f"domain out of range: {domain}")
    if not 0 <= index < _MAX_INDEX:
        raise ValueError(f"index out of range: {index}")
    return (domain << 56) | index


def seed_sequence(base_seed: int, domain: int, index: int) -> np.random.SeedSequence:
    """SeedSequence for stream (base_seed, domain, index)."""
    if base_seed < 0:
        raise ValueError(f"base seed must be nonnegative, got {base_seed}")
    stream_key(domain, index)  # range validation
    return np.random.SeedSequence(entropy=(base_seed, domain, index))


def make_rng(base_seed: int, domain: int, index: int) -> np.random.Generator:
    """Fresh PCG64 generator for stream (base_seed, domain, index)."""
    return np.random.Generator(np.random.PCG64(seed_sequence(base_seed, domain, index)))
