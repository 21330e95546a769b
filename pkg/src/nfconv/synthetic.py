"""Deterministic synthetic signals for demos, benchmarks, and tests.

Images mix smooth blobs, sharp rectangles, and gradients so that both
low-frequency content and edges are represented; depth maps pair with them
for spatially-varying filtering experiments.
"""

from __future__ import annotations

import numpy as np

from .fields import GridField

__all__ = [
    "make_test_image",
    "make_depth_ramp",
    "make_paths",
    "make_tone",
]


def make_test_image(resolution: int, channels: int = 3, seed: int = 0) -> GridField:
    """Photo-like test image on [0, 1]^2 with values in (0, 1)."""
    rng = np.random.default_rng(seed)
    ys, xs = np.meshgrid((np.arange(resolution) + 0.5) / resolution,
                         (np.arange(resolution) + 0.5) / resolution,
                         indexing="ij")
    img = np.zeros((resolution, resolution, channels))
    for c in range(channels):
        v = 0.35 + 0.35 * (xs + ys) / 2.0 + 0.08 * np.sin(2 * np.pi * (3 * xs + c))
        for _ in range(6):
            cx, cy = rng.uniform(0.1, 0.9, 2)
            s = rng.uniform(0.04, 0.18)
            amp = rng.uniform(-0.7, 0.8)
            v = v + amp * np.exp(-((xs - cx) ** 2 + (ys - cy) ** 2) / (2 * s * s))
        for _ in range(3):
            x0, y0 = rng.uniform(0.05, 0.7, 2)
            w, h = rng.uniform(0.08, 0.3, 2)
            amp = rng.uniform(-0.5, 0.55)
            v = v + amp * ((xs > x0) & (xs < x0 + w) & (ys > y0) & (ys < y0 + h))
        img[:, :, c] = v
    return GridField(np.clip(img, 0.02, 0.98))


def make_depth_ramp(resolution: int, axis: int = 1) -> GridField:
    """Depth buffer increasing along one axis, range [0, 1]."""
    t = (np.arange(resolution) + 0.5) / resolution
    if axis == 0:
        depth = np.broadcast_to(t[:, None], (resolution, resolution))
    else:
        depth = np.broadcast_to(t[None, :], (resolution, resolution))
    return GridField(depth[:, :, None].copy())


def make_paths(samples: int, channels: int = 69, seed: int = 0) -> GridField:
    """Smooth multichannel paths with additive noise (motion-capture style)."""
    rng = np.random.default_rng(seed)
    t = np.linspace(0.0, 1.0, samples)[:, None]
    freqs = rng.uniform(0.5, 4.0, size=(1, channels))
    phases = rng.uniform(0, 2 * np.pi, size=(1, channels))
    amps = rng.uniform(0.2, 1.0, size=(1, channels))
    clean = amps * np.sin(2 * np.pi * freqs * t + phases)
    noisy = clean + rng.normal(0, 0.05, size=(samples, channels))
    return GridField(noisy)


def make_tone(samples: int, cycles: float = 40.0, amplitude: float = 0.8) -> GridField:
    """Mono sine sweep over the unit interval."""
    t = np.linspace(0.0, 1.0, samples)
    wave = amplitude * np.sin(2 * np.pi * cycles * t * (1 + 0.5 * t))
    return GridField(wave[:, None])
