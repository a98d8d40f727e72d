"""Seed splitting.

Every random stream is ``numpy.random.default_rng([seed, stream])`` where
``stream`` is one of the integer codes below. Two streams derived from the
same replicate seed never share state, and adding a stream does not perturb
the existing ones.
"""

from __future__ import annotations

import numpy as np

GRAPH = 0
WEIGHTS = 1
STATES = 2
TARGETS = 3
ARMS = 4
ASG_ORDER = 5
BLAG_POLICY = 10
BLAG_NOISE = 11
CUCB_POLICY = 12
CUCB_NOISE = 13
ORACLE = 20
DIFFUSION = 30
LABELS = 31


def stream(seed: int, code: int, *extra: int) -> np.random.Generator:
    return np.random.default_rng([int(seed), int(code), *map(int, extra)])


def child_seed(seed: int, code: int) -> int:
    """A 63-bit integer seed for APIs that take a plain int."""
    return int(stream(seed, code).integers(0, 2**63 - 1))
