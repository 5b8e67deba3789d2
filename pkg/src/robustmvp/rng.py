"""Random streams.

Every stream is a Philox-4x64 counter-based generator keyed through
``numpy.random.SeedSequence`` from a tuple of nonnegative integers, e.g.
``(seed, STREAM_SAMPLE, replication, STREAM_ERRORS)``.  Distinct tuples give
statistically independent streams, so a replication's draws never depend on
how many other replications ran or in which order.  Normal variates come
from ``Generator.standard_normal`` (numpy's ziggurat) everywhere.
"""

from __future__ import annotations

import numpy as np

STREAM_TRUTH = 0
STREAM_SAMPLE = 1
STREAM_CV = 2

SUB_FACTORS = 0
SUB_ERRORS = 1
SUB_HETERO_SHOCKS = 2


def make_rng(*keys: int) -> np.random.Generator:
    if not keys or any(int(k) != k or k < 0 for k in keys):
        raise ValueError(f"stream keys must be nonnegative integers, got {keys}")
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(k) for k in keys])))
