"""Named random sub-streams derived from a single master seed.

Every phase of a run (belief updates, backups, data generation, evaluation,
...) draws from its own stream. A stream is identified by a name plus optional
integer indices and is derived as::

    SeedSequence(entropy=master_seed, spawn_key=(crc32(name), *indices))

so adding draws to one phase never shifts the numbers seen by another, and
the derivation does not depend on call order.
"""

from __future__ import annotations

import zlib

import numpy as np

BELIEF = "belief-update"
BACKUP = "backup"
GENDATA = "gendata"
TRAIN = "train"
EVALUATION = "evaluation"
DOMAIN = "domain"


def stream_key(name: str) -> int:
    return zlib.crc32(name.encode("utf-8"))


def substream(seed: int, name: str, *indices: int) -> np.random.Generator:
    """Return the generator for stream ``name`` (and ``indices``) under ``seed``."""
    if seed < 0:
        raise ValueError(f"seed must be non-negative, got {seed}")
    key = (stream_key(name),) + tuple(int(i) for i in indices)
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(seed), spawn_key=key)))


def child_seed(rng: np.random.Generator) -> int:
    """Draw a 63-bit seed from ``rng`` for a nested sub-computation."""
    return int(rng.integers(0, 2**63 - 1))


def as_generator(rng) -> np.random.Generator:
    if isinstance(rng, np.random.Generator):
        return rng
    if rng is None or isinstance(rng, (int, np.integer)):
        return np.random.default_rng(rng)
    raise TypeError(f"cannot build a Generator from {type(rng).__name__}")
