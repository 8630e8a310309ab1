"""The adaptive capture loop, attack replays, and replay verification."""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .domain import BoundingBox, CaptureConfig, Image, RngStream
from .maskgen import make_mask_generator
from .measurement import (
    MeasurementBundle,
    SamplingWeight,
    forward,
    initial_weight,
    pattern_stream,
    replay_measurements,
    synthesize_pattern,
)
from .reconstruct import AdmmTvParams, ReconstructionResult, reconstruct_admm_tv


@dataclass
class FeedbackSnapshot:
    acquisition: int
    provisional: Image
    weight: SamplingWeight
    converged: bool


@dataclass
class CaptureTrace:
    bundle: MeasurementBundle
    snapshots: list[FeedbackSnapshot]
    final: ReconstructionResult
    timings: dict[str, float] = field(default_factory=dict)

    @property
    def final_image(self) -> Image:
        return self.final.image


def capture(
    image: Image,
    boxes: Sequence[BoundingBox] = (),
    config: CaptureConfig = CaptureConfig(),
) -> CaptureTrace:
    """Run the full adaptive acquisition loop and final reconstruction.

    Acquisition i measures every block through pattern i; at scheduled
    indices a provisional reconstruction feeds the mask generator, whose
    weight map shapes every later pattern.  All randomness is derived from
    the config seed, so identical inputs give identical traces.
    """
    if image.side != config.side:
        raise ValueError(
            f"image side {image.side} does not match config side {config.side}"
        )
    if image.channels != config.channels:
        raise ValueError(
            f"image has {image.channels} channels but config channel mode "
            f"{config.channel_mode!r} expects {config.channels}"
        )
    for box in boxes:
        box.check_within(config.side)

    grid = config.grid
    schedule = set(config.schedule())
    generator = make_mask_generator(config, boxes)
    m_prime = config.m_prime

    bundle = MeasurementBundle(
        config=config,
        feedback_events=[],
        measurements=np.zeros((m_prime, config.num_blocks, config.channels)),
    )
    snapshots: list[FeedbackSnapshot] = []
    timings = {"acquire": 0.0, "reconstruct_provisional": 0.0, "maskgen": 0.0,
               "reconstruct_final": 0.0}

    provisional_params = AdmmTvParams.from_config(config, provisional=True)
    weight = initial_weight(config.side)
    pattern = synthesize_pattern(
        weight, pattern_stream(config, 1), grid,
        mode=config.pattern_mode, threshold=config.binary_threshold,
    )

    for i in range(1, m_prime + 1):
        t0 = time.perf_counter()
        noise_stream = RngStream(config.seed, acquisition=i, purpose="noise")
        bundle.measurements[i - 1] = forward(
            pattern, image, grid, noise_stream, config.noise_std
        )
        timings["acquire"] += time.perf_counter() - t0

        if i in schedule:
            t0 = time.perf_counter()
            provisional = reconstruct_admm_tv(bundle, i, provisional_params)
            timings["reconstruct_provisional"] += time.perf_counter() - t0

            t0 = time.perf_counter()
            weight = generator(
                provisional.image,
                i,
                RngStream(config.seed, acquisition=i, purpose="jitter"),
            )
            timings["maskgen"] += time.perf_counter() - t0

            bundle.feedback_events.append((i, weight.values.copy()))
            snapshots.append(
                FeedbackSnapshot(
                    acquisition=i,
                    provisional=provisional.image,
                    weight=weight,
                    converged=provisional.converged,
                )
            )

        if i < m_prime:
            pattern = synthesize_pattern(
                weight, pattern_stream(config, i + 1), grid,
                mode=config.pattern_mode, threshold=config.binary_threshold,
            )

    t0 = time.perf_counter()
    final = reconstruct_admm_tv(bundle, m_prime, AdmmTvParams.from_config(config))
    timings["reconstruct_final"] += time.perf_counter() - t0

    return CaptureTrace(bundle=bundle, snapshots=snapshots, final=final, timings=timings)


def replay_attack(
    bundle: MeasurementBundle, params: AdmmTvParams | None = None
) -> ReconstructionResult:
    """Adversary's reconstruction from leaked data alone (no source image)."""
    return reconstruct_admm_tv(bundle, bundle.measurements.shape[0], params)


def verify_bundle(bundle: MeasurementBundle, image: Image) -> float:
    """Replay check: regenerate every pattern and re-measure the source image.

    Returns the maximum absolute deviation between recorded and replayed
    measurements; 0.0 means the bundle's control-flow record is exact.
    """
    replayed = replay_measurements(bundle, image)
    return float(np.abs(replayed - bundle.measurements).max())
