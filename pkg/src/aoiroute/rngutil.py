"""Deterministic RNG substreams.

Every stochastic routine in the package takes an explicit integer seed and
derives independent generators through :func:`substream`, so replications,
edges, vehicles etc. can be evaluated in any order (or in parallel) while
producing bit-identical results.
"""

from __future__ import annotations

import numpy as np

# Stable label -> integer mapping so substream paths may use short strings.
_LABELS = {
    "replication": 1,
    "edge": 2,
    "baseline": 3,
    "trace": 4,
    "init": 5,
    "train": 6,
    "fleet": 7,
    "cluster": 8,
}


def _as_entropy(part) -> int:
    if isinstance(part, str):
        try:
            return _LABELS[part]
        except KeyError:
            raise ValueError(f"unknown substream label: {part!r}") from None
    return int(part)


def substream(seed: int, *path) -> np.random.Generator:
    """Generator for the substream identified by (seed, *path).

    Same (seed, path) always yields the same stream; distinct paths are
    statistically independent (SeedSequence entropy mixing).
    """
    entropy = [int(seed)] + [_as_entropy(p) for p in path]
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy)))
