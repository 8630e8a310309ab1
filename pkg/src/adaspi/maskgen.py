"""Sampling-weight generators that steer acquisition away from protected regions.

Three implementations of one interface: a passthrough (plain non-adaptive
capture), an oracle driven by ground-truth bounding boxes, and a heuristic
that detects candidate regions from block statistics of the provisional
reconstruction.  All of them are pure: identical inputs, including the random
stream, give identical weight maps.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Protocol, Sequence

import numpy as np
from scipy import ndimage

from .domain import BoundingBox, CaptureConfig, Image, RngStream, draw_normal
from .measurement import SamplingWeight, initial_weight


class MaskGenerator(Protocol):
    def __call__(
        self, provisional: Image, acquisition: int, stream: RngStream
    ) -> SamplingWeight: ...


def passthrough_mask(provisional: Image, acquisition: int) -> SamplingWeight:
    """All-ones weight: conventional non-adaptive single-pixel capture."""
    return initial_weight(provisional.side)


@dataclass(frozen=True)
class OracleMaskParams:
    """Ground-truth-driven mask.

    ``jitter_std`` perturbs box corners to emulate an imperfect detector whose
    localization improves with acquisition index; it may be a constant or a
    non-increasing function of the acquisition index.
    """

    boxes: tuple[BoundingBox, ...]
    dilation: float = 0.0
    softness: float = 0.0
    jitter_std: float | Callable[[int], float] = 0.0

    def __post_init__(self):
        if self.dilation < 0 or self.softness < 0:
            raise ValueError("dilation and softness must be >= 0")
        object.__setattr__(self, "boxes", tuple(self.boxes))

    def jitter_at(self, acquisition: int) -> float:
        if callable(self.jitter_std):
            return max(0.0, float(self.jitter_std(acquisition)))
        return float(self.jitter_std)


def log_decay_jitter(std0: float, base: float) -> Callable[[int], float]:
    """Jitter schedule std(i) = max(0, std0 - log_base(i)); decreasing in i."""
    return lambda i: max(0.0, std0 - math.log(max(i, 1)) / math.log(base))


def _rect_outside_distance(side: int, box: BoundingBox) -> np.ndarray:
    """Chebyshev distance from each pixel to the box; 0 inside."""
    coords = np.arange(side)
    dx = np.maximum(np.maximum(box.x0 - coords, coords - (box.x1 - 1)), 0)
    dy = np.maximum(np.maximum(box.y0 - coords, coords - (box.y1 - 1)), 0)
    return np.maximum.outer(dy, dx).astype(np.float64)


def _ramp(distance: np.ndarray, dilation: float, softness: float) -> np.ndarray:
    """0 within `dilation` of the region, linear ramp to 1 across `softness`."""
    if softness > 0:
        return np.clip((distance - dilation) / softness, 0.0, 1.0)
    return (distance > dilation).astype(np.float64)


def _jittered_box(box: BoundingBox, std: float, offsets: np.ndarray, side: int) -> BoundingBox:
    x0 = int(round(box.x0 + std * offsets[0]))
    y0 = int(round(box.y0 + std * offsets[1]))
    x1 = int(round(box.x1 + std * offsets[2]))
    y1 = int(round(box.y1 + std * offsets[3]))
    x0 = min(max(x0, 0), side - 1)
    y0 = min(max(y0, 0), side - 1)
    x1 = min(max(x1, x0 + 1), side)
    y1 = min(max(y1, y0 + 1), side)
    return BoundingBox(x0, y0, x1, y1, box.label)


def oracle_mask(
    provisional: Image,
    acquisition: int,
    params: OracleMaskParams,
    stream: RngStream,
) -> SamplingWeight:
    """Zero weight over each (jittered, dilated) box, ramping to 1 outside."""
    side = provisional.side
    for box in params.boxes:
        box.check_within(side)
    if not params.boxes:
        return initial_weight(side)
    std = params.jitter_at(acquisition)
    if std > 0:
        offsets = draw_normal(stream, 4 * len(params.boxes)).reshape(-1, 4)
    else:
        offsets = np.zeros((len(params.boxes), 4))
    w = np.ones((side, side))
    for box, offs in zip(params.boxes, offsets):
        jbox = _jittered_box(box, std, offs, side)
        d = _rect_outside_distance(side, jbox)
        w = np.minimum(w, _ramp(d, params.dilation, params.softness))
    return SamplingWeight(w, provenance=f"oracle at i={acquisition}")


@dataclass(frozen=True)
class SilhouetteMaskParams:
    """Block-statistics detector: tiles whose mean lies inside a configured
    intensity band (and whose variance stays below a cap) are masked out."""

    tile: int = 8
    mean_lo: float = 0.75
    mean_hi: float = 1.0
    var_max: float = 0.02
    dilation: float = 0.0
    softness: float = 0.0

    def __post_init__(self):
        if self.tile < 1:
            raise ValueError(f"tile must be >= 1, got {self.tile}")
        if self.dilation < 0 or self.softness < 0:
            raise ValueError("dilation and softness must be >= 0")


def silhouette_mask(
    provisional: Image, acquisition: int, params: SilhouetteMaskParams
) -> SamplingWeight:
    """Detect candidate target regions from tile statistics and zero them out."""
    side = provisional.side
    t = params.tile
    if side % t != 0:
        raise ValueError(f"tile {t} does not divide image side {side}")
    gray = provisional.data.mean(axis=2)
    g = side // t
    tiles = gray.reshape(g, t, g, t).transpose(0, 2, 1, 3).reshape(g, g, t * t)
    means = tiles.mean(axis=2)
    variances = tiles.var(axis=2)
    hit = (
        (means >= params.mean_lo)
        & (means <= params.mean_hi)
        & (variances <= params.var_max)
    )
    if not hit.any():
        return SamplingWeight(
            np.ones((side, side)), provenance=f"silhouette at i={acquisition} (no detections)"
        )
    region = np.kron(hit, np.ones((t, t), dtype=bool))
    # Chessboard metric keeps the zero set a plain pixel dilation of the region.
    distance = ndimage.distance_transform_cdt(~region, metric="chessboard").astype(
        np.float64
    )
    w = _ramp(distance, params.dilation, params.softness)
    return SamplingWeight(w, provenance=f"silhouette at i={acquisition}")


# ---------------------------------------------------------------------------
# Box files: one box per line, ``label x0 y0 x1 y1``
# ---------------------------------------------------------------------------


def parse_boxes(text: str) -> list[BoundingBox]:
    boxes = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 5:
            raise ValueError(
                f"line {lineno}: expected 'label x0 y0 x1 y1', got {raw!r}"
            )
        label = parts[0]
        try:
            x0, y0, x1, y1 = (int(p) for p in parts[1:])
        except ValueError as exc:
            raise ValueError(f"line {lineno}: non-integer coordinate in {raw!r}") from exc
        boxes.append(BoundingBox(x0, y0, x1, y1, label))
    return boxes


def load_boxes(path) -> list[BoundingBox]:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_boxes(fh.read())


def make_mask_generator(
    config: CaptureConfig, boxes: Sequence[BoundingBox] = ()
) -> MaskGenerator:
    """Build the generator named by the config, with its configured parameters."""
    if config.mask_generator == "passthrough":
        return lambda provisional, acquisition, stream: passthrough_mask(
            provisional, acquisition
        )
    if config.mask_generator == "oracle":
        jitter: float | Callable[[int], float] = 0.0
        if config.mask_jitter_std > 0:
            jitter = log_decay_jitter(config.mask_jitter_std, config.feedback_base)
        params = OracleMaskParams(
            boxes=tuple(boxes),
            dilation=config.mask_dilation,
            softness=config.mask_softness,
            jitter_std=jitter,
        )
        return lambda provisional, acquisition, stream: oracle_mask(
            provisional, acquisition, params, stream
        )
    params_s = SilhouetteMaskParams(
        tile=config.silhouette_tile,
        mean_lo=config.silhouette_mean_lo,
        mean_hi=config.silhouette_mean_hi,
        var_max=config.silhouette_var_max,
        dilation=config.mask_dilation,
        softness=config.mask_softness,
    )
    return lambda provisional, acquisition, stream: silhouette_mask(
        provisional, acquisition, params_s
    )
