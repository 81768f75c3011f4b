"""Named random streams.

Every stream is a PCG64 generator keyed by ``(seed, purpose)`` through numpy's
``SeedSequence`` spawn keys, so the observation noise, ensemble perturbations
and parameter initialisation never share draws even under a common seed.
"""
import numpy as np

PURPOSES = {"observation": 1, "ensemble": 2, "params": 3}


def stream(seed: int, purpose: str) -> np.random.Generator:
    try:
        key = PURPOSES[purpose]
    except KeyError:
        raise ValueError(f"unknown stream purpose {purpose!r}") from None
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(seed), spawn_key=(key,))))
