"""Shared fixtures: piecewise-constant phantoms and plain bundles."""

from __future__ import annotations

import numpy as np

from adaspi import CaptureConfig, Image
from adaspi.measurement import (
    MeasurementBundle,
    forward,
    initial_weight,
    pattern_stream,
    synthesize_pattern,
)


def piecewise_phantom(side: int, seed: int, box: tuple[int, int, int, int] | None = None) -> Image:
    """Random piecewise-constant scene; if `box` is given, fill it with a few
    constant sub-rectangles so the protected region carries real structure."""
    rng = np.random.default_rng(seed)
    img = np.full((side, side), rng.uniform(0.2, 0.8))
    for _ in range(6):
        x0, y0 = rng.integers(0, side - side // 4, 2)
        w, h = rng.integers(side // 4, side // 2 + 1, 2)
        img[y0 : y0 + h, x0 : x0 + w] = rng.uniform(0, 1)
    if box is not None:
        x0, y0, x1, y1 = box
        img[y0:y1, x0:x1] = rng.uniform(0, 1)
        for _ in range(3):
            sx = int(rng.integers(x0, x1 - 6))
            sy = int(rng.integers(y0, y1 - 6))
            sw, sh = (int(v) for v in rng.integers(5, (x1 - x0) // 2 + 1, 2))
            img[sy : min(sy + sh, y1), sx : min(sx + sw, x1)] = rng.uniform(0, 1)
    return Image(np.clip(img, 0, 1))


def plain_bundle(image: Image, config: CaptureConfig) -> MeasurementBundle:
    """Non-adaptive bundle: all-ones weight, no feedback events."""
    grid = config.grid
    weight = initial_weight(config.side)
    measurements = np.zeros((config.m_prime, config.num_blocks, config.channels))
    for i in range(1, config.m_prime + 1):
        pattern = synthesize_pattern(
            weight,
            pattern_stream(config, i),
            grid,
            mode=config.pattern_mode,
            threshold=config.binary_threshold,
        )
        measurements[i - 1] = forward(pattern, image, grid)
    return MeasurementBundle(config=config, feedback_events=[], measurements=measurements)
