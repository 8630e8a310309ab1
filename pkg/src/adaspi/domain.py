"""Core value types, block geometry, deterministic randomness, capture configuration."""

from __future__ import annotations

import math
import typing
from dataclasses import dataclass, fields

import numpy as np


class ConfigError(ValueError):
    """A configuration value violates its contract."""


# ---------------------------------------------------------------------------
# Deterministic randomness
# ---------------------------------------------------------------------------

# Purpose tags keep streams for different uses disjoint even at the same
# (seed, acquisition, block) coordinate.
_PURPOSE_TAGS = {"pattern": 1, "bits": 2, "jitter": 3, "noise": 4}


@dataclass(frozen=True)
class RngStream:
    """Counter-based random stream keyed by (seed, acquisition, block, purpose).

    Identical keys always produce identical sequences, across runs and
    platforms; distinct keys produce independent sequences.  Backed by the
    Philox counter-based generator, so no generator state is ever stored.
    """

    seed: int
    acquisition: int = 0
    block: int = 0
    purpose: str = "pattern"

    def generator(self) -> np.random.Generator:
        tag = _PURPOSE_TAGS.get(self.purpose)
        if tag is None:
            raise ConfigError(
                f"unknown stream purpose {self.purpose!r}; "
                f"expected one of {sorted(_PURPOSE_TAGS)}"
            )
        if not (0 <= self.acquisition < 2**32 and 0 <= self.block < 2**28):
            raise ConfigError(
                f"stream coordinates out of range: acquisition={self.acquisition}, "
                f"block={self.block}"
            )
        # Philox takes a 128-bit key: seed in one word, the stream id packed
        # into the other.
        word = (self.acquisition << 32) | (self.block << 4) | tag
        key = np.array([self.seed, word], dtype=np.uint64)
        return np.random.Generator(np.random.Philox(key=key))


def draw_normal(stream: RngStream, count: int) -> np.ndarray:
    """Standard-normal variates, bit-reproducible given the stream key."""
    if count < 1:
        raise ValueError(f"count must be >= 1, got {count}")
    return stream.generator().standard_normal(count)


def draw_bits(stream: RngStream, count: int) -> np.ndarray:
    """Fair random bits in {0.0, 1.0}, bit-reproducible given the stream key."""
    if count < 1:
        raise ValueError(f"count must be >= 1, got {count}")
    return stream.generator().integers(0, 2, size=count).astype(np.float64)


# ---------------------------------------------------------------------------
# Images and geometry
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Image:
    """Square raster with 1 or 3 channels, values in [0, 1].

    ``data`` has shape (L, L, channels), float64, row major.
    """

    data: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.data, dtype=np.float64)
        if arr.ndim == 2:
            arr = arr[:, :, np.newaxis]
        if arr.ndim != 3:
            raise ValueError(f"image data must be 2-D or 3-D, got shape {arr.shape}")
        if arr.shape[0] != arr.shape[1]:
            raise ValueError(f"image must be square, got shape {arr.shape}")
        if arr.shape[2] not in (1, 3):
            raise ValueError(f"channels must be 1 or 3, got {arr.shape[2]}")
        if not np.all(np.isfinite(arr)):
            raise ValueError("image contains non-finite samples")
        if arr.min() < 0.0 or arr.max() > 1.0:
            raise ValueError(
                f"image samples must lie in [0, 1], got range "
                f"[{arr.min():.6g}, {arr.max():.6g}]"
            )
        object.__setattr__(self, "data", arr)

    @property
    def side(self) -> int:
        return self.data.shape[0]

    @property
    def channels(self) -> int:
        return self.data.shape[2]


@dataclass(frozen=True)
class BoundingBox:
    """Axis-aligned pixel box, inclusive-exclusive coordinates."""

    x0: int
    y0: int
    x1: int
    y1: int
    label: str = ""

    def __post_init__(self):
        if not (0 <= self.x0 < self.x1 and 0 <= self.y0 < self.y1):
            raise ValueError(
                f"invalid box ({self.x0}, {self.y0}, {self.x1}, {self.y1}): "
                "need 0 <= x0 < x1 and 0 <= y0 < y1"
            )

    def check_within(self, side: int) -> None:
        if self.x1 > side or self.y1 > side:
            raise ValueError(
                f"box ({self.x0}, {self.y0}, {self.x1}, {self.y1}) exceeds "
                f"image side {side}"
            )

    @property
    def width(self) -> int:
        return self.x1 - self.x0

    @property
    def height(self) -> int:
        return self.y1 - self.y0


@dataclass(frozen=True)
class BlockGrid:
    """Partition of an L x L image into non-overlapping B x B blocks.

    Blocks are numbered in raster order; within a block, pixels are numbered
    in raster order too.  The mapping pixel <-> (block, offset) is a bijection.
    """

    side: int
    block: int

    @property
    def n(self) -> int:
        """Pixels per block."""
        return self.block * self.block

    @property
    def num_blocks(self) -> int:
        return (self.side // self.block) ** 2

    @property
    def blocks_per_side(self) -> int:
        return self.side // self.block

    def to_blocks(self, arr: np.ndarray) -> np.ndarray:
        """(L, L[, C]) array -> (num_blocks, n[, C]) block-major array."""
        g, b = self.blocks_per_side, self.block
        if arr.shape[:2] != (self.side, self.side):
            raise ValueError(
                f"array shape {arr.shape} does not match grid side {self.side}"
            )
        if arr.ndim == 2:
            return (
                arr.reshape(g, b, g, b).transpose(0, 2, 1, 3).reshape(self.num_blocks, self.n)
            )
        c = arr.shape[2]
        return (
            arr.reshape(g, b, g, b, c)
            .transpose(0, 2, 1, 3, 4)
            .reshape(self.num_blocks, self.n, c)
        )

    def from_blocks(self, blocks: np.ndarray) -> np.ndarray:
        """Inverse of :meth:`to_blocks`."""
        g, b = self.blocks_per_side, self.block
        if blocks.ndim == 2:
            return (
                blocks.reshape(g, g, b, b).transpose(0, 2, 1, 3).reshape(self.side, self.side)
            )
        c = blocks.shape[2]
        return (
            blocks.reshape(g, g, b, b, c)
            .transpose(0, 2, 1, 3, 4)
            .reshape(self.side, self.side, c)
        )

    def block_of_pixel(self, row: int, col: int) -> tuple[int, int]:
        """Pixel coordinate -> (block index, offset within block)."""
        g, b = self.blocks_per_side, self.block
        j = (row // b) * g + (col // b)
        offset = (row % b) * b + (col % b)
        return j, offset

    def pixel_of(self, j: int, offset: int) -> tuple[int, int]:
        """(block index, offset within block) -> pixel coordinate."""
        g, b = self.blocks_per_side, self.block
        row = (j // g) * b + offset // b
        col = (j % g) * b + offset % b
        return row, col


def build_block_grid(side: int, block: int) -> BlockGrid:
    if side < 1 or block < 1:
        raise ConfigError(f"side and block must be positive, got L={side}, B={block}")
    if side % block != 0:
        raise ConfigError(
            f"block side B={block} does not divide image side L={side}"
        )
    return BlockGrid(side=side, block=block)


# ---------------------------------------------------------------------------
# Feedback schedule
# ---------------------------------------------------------------------------


def feedback_schedule(base: float, m_prime: int) -> tuple[int, ...]:
    """Acquisition indices { floor(base**t) : t = 0, 1, ... } within [1, m_prime].

    Deduplicated and ascending.  ``base`` must exceed 1 so the schedule
    terminates.
    """
    if base <= 1:
        raise ConfigError(f"feedback base K must exceed 1, got {base}")
    if m_prime < 1:
        raise ConfigError(f"M' must be >= 1, got {m_prime}")
    out: list[int] = []
    t = 0
    while True:
        v = math.floor(base**t)
        if v > m_prime:
            break
        if v >= 1 and (not out or v != out[-1]):
            out.append(v)
        t += 1
    return tuple(out)


def feedback_count(base: float, m_prime: int) -> int:
    """Number of scheduled exponents strictly before the final acquisition.

    Counts t with floor(base**t) < m_prime, duplicates from floor collisions
    included.  This is the feedback count reported in run manifests (the
    feedback computed at i = m_prime has no later acquisition to steer).
    """
    if base <= 1:
        raise ConfigError(f"feedback base K must exceed 1, got {base}")
    count = 0
    t = 0
    while math.floor(base**t) < m_prime:
        count += 1
        t += 1
    return count


# ---------------------------------------------------------------------------
# Capture configuration
# ---------------------------------------------------------------------------

_PATTERN_MODES = ("gaussian", "binary")
_CHANNEL_MODES = ("mono", "rgb")
_MASK_GENERATORS = ("passthrough", "oracle", "silhouette")
_TV_FLAVORS = ("anisotropic", "isotropic")


@dataclass(frozen=True)
class CaptureConfig:
    """Everything a capture run needs; immutable once built."""

    side: int = 64
    block: int = 8
    rate: float = 0.5
    feedback_base: float = 4.0
    pattern_mode: str = "gaussian"
    binary_threshold: float = 0.5
    channel_mode: str = "mono"
    mask_generator: str = "passthrough"
    mask_dilation: float = 0.0
    mask_softness: float = 2.0
    mask_jitter_std: float = 0.0
    silhouette_tile: int = 8
    silhouette_mean_lo: float = 0.75
    silhouette_mean_hi: float = 1.0
    silhouette_var_max: float = 0.02
    tv_weight: float = 0.05
    rho: float = 1.0
    max_iterations: int = 200
    tolerance: float = 1e-4
    tv_flavor: str = "anisotropic"
    provisional_iterations: int = 50
    noise_std: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.side < 1 or self.block < 1:
            raise ConfigError(
                f"side and block must be positive, got L={self.side}, B={self.block}"
            )
        if self.side % self.block != 0:
            raise ConfigError(
                f"block side B={self.block} does not divide image side L={self.side}"
            )
        if not (0.0 < self.rate <= 1.0):
            raise ConfigError(f"sampling rate must lie in (0, 1], got {self.rate}")
        if self.feedback_base <= 1:
            raise ConfigError(
                f"feedback base K must exceed 1, got {self.feedback_base}"
            )
        if self.pattern_mode not in _PATTERN_MODES:
            raise ConfigError(
                f"pattern_mode must be one of {_PATTERN_MODES}, got {self.pattern_mode!r}"
            )
        if not (0.0 <= self.binary_threshold <= 1.0):
            raise ConfigError(
                f"binary_threshold must lie in [0, 1], got {self.binary_threshold}"
            )
        if self.channel_mode not in _CHANNEL_MODES:
            raise ConfigError(
                f"channel_mode must be one of {_CHANNEL_MODES}, got {self.channel_mode!r}"
            )
        if self.mask_generator not in _MASK_GENERATORS:
            raise ConfigError(
                f"mask_generator must be one of {_MASK_GENERATORS}, "
                f"got {self.mask_generator!r}"
            )
        if self.mask_dilation < 0 or self.mask_softness < 0 or self.mask_jitter_std < 0:
            raise ConfigError("mask dilation/softness/jitter must be >= 0")
        if self.silhouette_tile < 1:
            raise ConfigError(f"silhouette_tile must be >= 1, got {self.silhouette_tile}")
        if self.tv_weight < 0:
            raise ConfigError(f"tv_weight must be >= 0, got {self.tv_weight}")
        if self.rho <= 0:
            raise ConfigError(f"rho must be > 0, got {self.rho}")
        if self.max_iterations < 1 or self.provisional_iterations < 1:
            raise ConfigError("iteration caps must be >= 1")
        if self.tolerance <= 0:
            raise ConfigError(f"tolerance must be > 0, got {self.tolerance}")
        if self.tv_flavor not in _TV_FLAVORS:
            raise ConfigError(
                f"tv_flavor must be one of {_TV_FLAVORS}, got {self.tv_flavor!r}"
            )
        if self.noise_std < 0:
            raise ConfigError(f"noise_std must be >= 0, got {self.noise_std}")
        if self.m_prime < 1:
            raise ConfigError(
                f"rate {self.rate} with block {self.block} gives zero "
                "acquisitions per block"
            )

    # Derived quantities -----------------------------------------------------

    @property
    def grid(self) -> BlockGrid:
        return BlockGrid(side=self.side, block=self.block)

    @property
    def n(self) -> int:
        """Pixels per block."""
        return self.block * self.block

    @property
    def num_blocks(self) -> int:
        return (self.side // self.block) ** 2

    @property
    def m_prime(self) -> int:
        """Acquisitions per block."""
        return int(round(self.rate * self.n))

    @property
    def m_total(self) -> int:
        """Total scalar measurements per channel."""
        return self.m_prime * self.num_blocks

    @property
    def channels(self) -> int:
        return 1 if self.channel_mode == "mono" else 3

    def schedule(self) -> tuple[int, ...]:
        return feedback_schedule(self.feedback_base, self.m_prime)


def format_config(config: CaptureConfig) -> str:
    """Serialize as flat ``key = value`` lines, one per field, fixed order."""
    lines = []
    for f in fields(config):
        lines.append(f"{f.name} = {getattr(config, f.name)!r}")
    return "\n".join(lines) + "\n"


def parse_config(text: str) -> CaptureConfig:
    """Parse the flat key-value config format.  Unknown keys are an error."""
    hints = typing.get_type_hints(CaptureConfig)
    known = {f.name: hints[f.name] for f in fields(CaptureConfig)}
    values: dict[str, object] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, _, value = line.partition("=")
        key = key.strip()
        value = value.strip()
        if key not in known:
            raise ConfigError(f"line {lineno}: unknown config key {key!r}")
        if key in values:
            raise ConfigError(f"line {lineno}: duplicate config key {key!r}")
        typ = known[key]
        try:
            if typ is int:
                values[key] = int(value)
            elif typ is float:
                values[key] = float(value)
            else:
                values[key] = value.strip("'\"")
        except ValueError as exc:
            raise ConfigError(f"line {lineno}: bad value for {key!r}: {value!r}") from exc
    return CaptureConfig(**values)


def load_config(path) -> CaptureConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_config(fh.read())
