"""Deterministic random-stream layout.

Every stochastic component draws from a counter-based Philox generator
keyed by (root seed, stream tag, lane, index). Paths therefore own
independent streams no matter how work is scheduled: ensembles are
reproducible under any thread count, and drawing noise in blocks yields
the same values as one long draw.
"""

from __future__ import annotations

import numpy as np

# Stream tags; lanes separate repeated uses of one tag (training steps,
# paired ensembles in model comparison).
STREAM_SIM = 0  # transition-path ensembles
STREAM_FLUX = 1  # reactive-flux boundary draws
STREAM_EQ = 2  # equilibrium Langevin runs
STREAM_PROBE = 3  # training-time probe ensembles
STREAM_INIT = 4  # parameter initialization

__all__ = [
    "STREAM_SIM",
    "STREAM_FLUX",
    "STREAM_EQ",
    "STREAM_PROBE",
    "STREAM_INIT",
    "path_generator",
]


def path_generator(root_seed: int, stream: int, index: int, lane: int = 0) -> np.random.Generator:
    """Independent generator for one logical consumer of randomness."""
    ss = np.random.SeedSequence(int(root_seed), spawn_key=(int(stream), int(lane), int(index)))
    return np.random.Generator(np.random.Philox(ss))
