import numpy as np

from src.config import SEED


def make_rng(seed: int | None = None, index: int | None = None) -> np.random.Generator:
    """
    Build a numpy Generator from a base seed and an optional stream index.

    The index (e.g. a frame number) is mixed in through a SeedSequence so that
    every frame gets an independent, reproducible stream.
    """
    base = SEED if seed is None else seed
    if index is None:
        return np.random.default_rng(base)
    return np.random.default_rng(np.random.SeedSequence([base, index]))
