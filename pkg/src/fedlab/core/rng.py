"""Deterministic named randomness.

A single experiment seed fans out into independent substreams keyed by
(purpose, round, client). Two Rng objects with the same seed yield
bit-identical draws for the same key, and different keys never share a
stream, so sampling order in one part of a run can change without
perturbing any other part.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from ..errors import ParameterError

_MAX_SEED = 2**63 - 1


def check_seed(seed) -> int:
    s = int(seed)
    if s < 0 or s > _MAX_SEED:
        raise ParameterError(f"seed must lie in [0, 2**63), got {seed!r}")
    return s


def _purpose_tag(purpose: str) -> int:
    digest = hashlib.sha256(purpose.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big")


@dataclass(frozen=True)
class Rng:
    """Root of all randomness for one experiment."""

    seed: int

    def __post_init__(self):
        object.__setattr__(self, "seed", check_seed(self.seed))

    def stream(self, purpose: str, round_index: int = 0, client: int = 0) -> np.random.Generator:
        """Generator for one (purpose, round, client) cell.

        The purpose string is hashed so adding a new purpose never shifts
        existing streams.
        """
        if not purpose:
            raise ParameterError("purpose must be a nonempty string")
        if round_index < 0 or client < 0:
            raise ParameterError("round_index and client must be nonnegative")
        seq = np.random.SeedSequence(
            [self.seed, _purpose_tag(purpose), int(round_index), int(client)]
        )
        return np.random.default_rng(seq)
