"""Stratified (latin hypercube) sampling helpers shared by training and MC."""

from __future__ import annotations

import numpy as np


def latin_hypercube(rng: np.random.Generator, count: int, dim: int,
                    batches: int = 1) -> np.ndarray:
    """Stratified uniform samples on [0, 1)^dim.

    Each of the ``batches`` independent sample sets gets ``count`` points
    whose projection onto every axis hits each of the ``count`` strata
    exactly once.  Returns shape (batches, count, dim).
    """
    strata = np.argsort(rng.random((batches, count, dim)), axis=1)
    jitter = rng.random((batches, count, dim))
    return (strata + jitter) / count


def scale_to_box(u: np.ndarray, lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
    """Map unit-cube samples into the box [lo, hi] (per trailing axis)."""
    return lo + u * (hi - lo)
