"""Deterministic derivation of independent random streams from one master seed.

Every source of randomness in a run is a named stream identified by
(master seed, domain, index). Streams never share state, so clients can be
stepped in any order (or in parallel) without changing the numbers drawn.
"""

from __future__ import annotations

import numpy as np

# Stream domains. Keep the values stable: they are part of the
# reproducibility contract for archived runs.
DOMAIN_TASK = 0    # task parameters (true weights, class means, sigma draws)
DOMAIN_DATA = 1    # client dataset sampling
DOMAIN_INIT = 2    # client weight initialization
DOMAIN_BATCH = 3   # per-step mini-batch index draws
DOMAIN_TEST = 4    # held-out evaluation data


def stream(seed: int, domain: int, index: int = 0) -> np.random.Generator:
    """Return the generator for stream (seed, domain, index)."""
    return np.random.default_rng(np.random.SeedSequence([seed, domain, index]))
