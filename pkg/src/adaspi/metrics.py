"""Quantitative evaluation: masked PSNR, in-region MSE, the anonymity
adjustment function, and the defocus-lens comparison baseline."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import ndimage

from .domain import BoundingBox, Image


class MetricsError(ValueError):
    """Raised when a metric's inputs make it undefined."""


def _box_mask(side: int, boxes: Sequence[BoundingBox]) -> np.ndarray:
    mask = np.zeros((side, side), dtype=bool)
    for box in boxes:
        box.check_within(side)
        mask[box.y0 : box.y1, box.x0 : box.x1] = True
    return mask


def _check_shapes(reference: Image, estimate: Image) -> None:
    if reference.data.shape != estimate.data.shape:
        raise MetricsError(
            f"shape mismatch: reference {reference.data.shape} vs "
            f"estimate {estimate.data.shape}"
        )


def mse(reference: Image, estimate: Image) -> float:
    _check_shapes(reference, estimate)
    return float(((reference.data - estimate.data) ** 2).mean())


def psnr_masked(
    reference: Image, estimate: Image, exclude: Sequence[BoundingBox] = ()
) -> float:
    """PSNR over pixels outside the excluded boxes, peak = 1.0.

    Returns ``math.inf`` when the compared pixels are identical.
    """
    _check_shapes(reference, estimate)
    keep = ~_box_mask(reference.side, exclude)
    if not keep.any():
        raise MetricsError("exclusion boxes cover every pixel")
    diff = reference.data[keep] - estimate.data[keep]
    err = float((diff**2).mean())
    if err == 0.0:
        return math.inf
    return 10.0 * math.log10(1.0 / err)


def region_mse(
    reference: Image, estimate: Image, boxes: Sequence[BoundingBox]
) -> float:
    """Mean squared difference over the union of the box pixels."""
    _check_shapes(reference, estimate)
    if not boxes:
        raise MetricsError("region_mse requires at least one box")
    inside = _box_mask(reference.side, boxes)
    diff = reference.data[inside] - estimate.data[inside]
    return float((diff**2).mean())


def anonymity_adjustment(distance: float) -> float:
    """Piecewise-linear score of a feature distance, zero at 1.1.

    Steep negative slope below the 1.1 same-identity threshold, shallow
    (factor 0.01) above it.
    """
    if distance < 1.1:
        return -(distance - 1.1)
    return -0.01 * (distance - 1.1)


_KERNEL_SIZE = 31
_KERNEL_SIGMA = 16.0


def defocus_kernel() -> np.ndarray:
    """Normalized 31 x 31 Gaussian kernel with sigma 16; sums to 1."""
    half = _KERNEL_SIZE // 2
    coords = np.arange(-half, half + 1, dtype=np.float64)
    g = np.exp(-(coords**2) / (2.0 * _KERNEL_SIGMA**2))
    kernel = np.outer(g, g)
    return kernel / kernel.sum()


def defocus_baseline(image: Image) -> Image:
    """Whole-image Gaussian blur standing in for a defocus lens.

    Reflect padding at the borders; preserves constant images.
    """
    if image.side < _KERNEL_SIZE:
        raise MetricsError(
            f"image side {image.side} is smaller than the {_KERNEL_SIZE}-tap kernel"
        )
    kernel = defocus_kernel()
    out = np.empty_like(image.data)
    for c in range(image.channels):
        out[:, :, c] = ndimage.convolve(image.data[:, :, c], kernel, mode="reflect")
    return Image(np.clip(out, 0.0, 1.0))


@dataclass(frozen=True)
class MethodScore:
    name: str
    psnr_outside: float
    mse_inside: float
    mse_overall: float
    combined: float

    @property
    def psnr_is_infinite(self) -> bool:
        return math.isinf(self.psnr_outside)


@dataclass(frozen=True)
class EvalReport:
    alpha: float
    rows: tuple[MethodScore, ...]

    def to_text(self) -> str:
        lines = [f"alpha = {self.alpha}"]
        header = f"{'method':<24} {'psnr_out_dB':>12} {'mse_in':>12} {'mse_all':>12} {'combined':>12}"
        lines.append(header)
        for row in self.rows:
            psnr = "inf" if row.psnr_is_infinite else f"{row.psnr_outside:.4f}"
            lines.append(
                f"{row.name:<24} {psnr:>12} {row.mse_inside:>12.6g} "
                f"{row.mse_overall:>12.6g} {row.combined:>12.6g}"
            )
        return "\n".join(lines) + "\n"

    def to_table(self, sep: str = ",") -> str:
        lines = [sep.join(["method", "psnr_out_dB", "mse_in", "mse_all", "combined"])]
        for row in self.rows:
            lines.append(
                sep.join(
                    [
                        row.name,
                        repr(row.psnr_outside),
                        repr(row.mse_inside),
                        repr(row.mse_overall),
                        repr(row.combined),
                    ]
                )
            )
        return "\n".join(lines) + "\n"


def evaluate(
    original: Image,
    candidates: Sequence[tuple[str, Image]],
    boxes: Sequence[BoundingBox],
    alpha: float = 0.999,
) -> EvalReport:
    """Score each candidate against the original.

    The combined score weighs overall fidelity against in-region anonymity:
    alpha * mse_overall + (1 - alpha) * (-mse_inside); lower is better on the
    fidelity side, and larger in-region error (more anonymity) lowers it too.
    """
    rows = []
    for name, candidate in candidates:
        psnr = psnr_masked(original, candidate, boxes)
        inside = region_mse(original, candidate, boxes) if boxes else 0.0
        overall = mse(original, candidate)
        combined = alpha * overall + (1.0 - alpha) * (-inside)
        rows.append(
            MethodScore(
                name=name,
                psnr_outside=psnr,
                mse_inside=inside,
                mse_overall=overall,
                combined=combined,
            )
        )
    return EvalReport(alpha=alpha, rows=tuple(rows))
