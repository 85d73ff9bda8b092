"""Deterministic synthetic image generators (desk-scale data stand-in)."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..training import derive_seed

GRADIENT = "gradient"
CHECKER = "checker"
GAUSSIAN_BLOBS = "gaussian_blobs"
NOISE = "noise"
KINDS = (GRADIENT, CHECKER, GAUSSIAN_BLOBS, NOISE)


@dataclass(frozen=True)
class SynthImageSpec:
    kind: str = GAUSSIAN_BLOBS
    size: int = 32
    channels: int = 3
    seed: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown generator kind {self.kind!r}")


def _gradient(rng, size, channels):
    r = np.arange(size, dtype=np.float64)
    ramp = (r[:, None] + r[None, :]) / (2.0 * (size - 1))
    flips = rng.integers(0, 2, size=2)
    if flips[0]:
        ramp = ramp[::-1]
    if flips[1]:
        ramp = ramp[:, ::-1]
    return np.broadcast_to(ramp, (channels, size, size)).copy()


def _checker(rng, size, channels):
    cell = int(rng.choice([2, 4]))
    off_r, off_c = rng.integers(0, cell, size=2)
    r = (np.arange(size) + off_r) // cell
    c = (np.arange(size) + off_c) // cell
    board = ((r[:, None] + c[None, :]) % 2).astype(np.float64)
    tones = rng.uniform(0.0, 1.0, size=(channels, 2))
    return tones[:, 0, None, None] * board + tones[:, 1, None, None] * (1.0 - board)


def _blobs(rng, size, channels):
    n_blobs = int(rng.integers(2, 5))
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    img = np.zeros((channels, size, size))
    for _ in range(n_blobs):
        cy, cx = rng.uniform(0, size, size=2)
        sigma = rng.uniform(size / 10.0, size / 3.0)
        amp = rng.uniform(0.3, 1.0, size=channels)
        blob = np.exp(-(((yy - cy) ** 2 + (xx - cx) ** 2) / (2.0 * sigma * sigma)))
        img += amp[:, None, None] * blob
    peak = img.max()
    if peak > 0:
        img /= peak
    return img


def synth_image(spec, index=0):
    """One deterministic image in [0, 1], keyed by (spec.seed, index)."""
    rng = np.random.Generator(np.random.PCG64(derive_seed(spec.seed, index)))
    if spec.kind == GRADIENT:
        return _gradient(rng, spec.size, spec.channels)
    if spec.kind == CHECKER:
        return _checker(rng, spec.size, spec.channels)
    if spec.kind == GAUSSIAN_BLOBS:
        return _blobs(rng, spec.size, spec.channels)
    return rng.uniform(0.0, 1.0, size=(spec.channels, spec.size, spec.size))


def synth_batch(spec, batch_size, batch_index=0):
    """A deterministic batch; item i uses key (seed, batch_index, i)."""
    return [
        synth_image(SynthImageSpec(spec.kind, spec.size, spec.channels,
                                   derive_seed(spec.seed, batch_index)), i)
        for i in range(batch_size)
    ]
