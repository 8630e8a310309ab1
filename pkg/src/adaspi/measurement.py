"""Aperture pattern synthesis, the optical forward model, and measurement bundles."""

from __future__ import annotations

import io
import struct
import zlib
from dataclasses import dataclass, field

import numpy as np

from .domain import (
    BlockGrid,
    CaptureConfig,
    ConfigError,
    Image,
    RngStream,
    draw_bits,
    draw_normal,
    format_config,
    parse_config,
)

BUNDLE_MAGIC = b"SPIB"
BUNDLE_VERSION = 1


class BundleError(Exception):
    """Base class for measurement-bundle I/O failures."""


class BundleFormatError(BundleError):
    """Bad magic bytes or unsupported format version."""


class BundleTruncatedError(BundleError):
    """File ends before the declared payload is complete."""


class BundleChecksumError(BundleError):
    """Payload bytes do not match the trailing checksum."""


@dataclass(frozen=True)
class SamplingWeight:
    """Per-pixel attenuation map w in [0, 1]^(L x L)."""

    values: np.ndarray
    provenance: str = "initial all-ones"

    def __post_init__(self):
        arr = np.asarray(self.values, dtype=np.float64)
        if arr.ndim != 2 or arr.shape[0] != arr.shape[1]:
            raise ValueError(f"weight map must be square 2-D, got shape {arr.shape}")
        if arr.min() < 0.0 or arr.max() > 1.0:
            raise ValueError(
                f"weight values must lie in [0, 1], got range "
                f"[{arr.min():.6g}, {arr.max():.6g}]"
            )
        object.__setattr__(self, "values", arr)

    @property
    def side(self) -> int:
        return self.values.shape[0]


def initial_weight(side: int) -> SamplingWeight:
    return SamplingWeight(np.ones((side, side)), provenance="initial all-ones")


@dataclass(frozen=True)
class AperturePattern:
    """One acquisition's modulation, materialized per block: (num_blocks, n)."""

    acquisition: int
    blocks: np.ndarray

    @property
    def num_blocks(self) -> int:
        return self.blocks.shape[0]

    @property
    def n(self) -> int:
        return self.blocks.shape[1]


def synthesize_pattern(
    weight: SamplingWeight,
    stream: RngStream,
    grid: BlockGrid,
    mode: str = "gaussian",
    threshold: float = 0.5,
) -> AperturePattern:
    """Next aperture pattern: the weight map modulating a fresh random draw.

    Gaussian mode multiplies w elementwise with standard normals; binary mode
    hard-thresholds w (w >= threshold -> 1) and multiplies with fair bits.
    Pixels with zero weight are exactly zero in the pattern.
    """
    if weight.side != grid.side:
        raise ValueError(
            f"weight side {weight.side} does not match grid side {grid.side}"
        )
    count = grid.side * grid.side
    if mode == "gaussian":
        base = draw_normal(stream, count).reshape(grid.side, grid.side)
        phi = weight.values * base
    elif mode == "binary":
        bits = draw_bits(stream, count).reshape(grid.side, grid.side)
        phi = np.where(weight.values >= threshold, 1.0, 0.0) * bits
    else:
        raise ConfigError(f"unknown pattern mode {mode!r}")
    return AperturePattern(acquisition=stream.acquisition, blocks=grid.to_blocks(phi))


def forward(
    pattern: AperturePattern,
    image: Image,
    grid: BlockGrid,
    noise_stream: RngStream | None = None,
    noise_std: float = 0.0,
) -> np.ndarray:
    """Per-block dot products y[j, c] = phi_j . x_{j,c}; shape (num_blocks, channels)."""
    if image.side != grid.side:
        raise ValueError(
            f"image side {image.side} does not match grid side {grid.side}"
        )
    if pattern.blocks.shape != (grid.num_blocks, grid.n):
        raise ValueError(
            f"pattern shape {pattern.blocks.shape} does not match grid "
            f"({grid.num_blocks}, {grid.n})"
        )
    xb = grid.to_blocks(image.data)
    y = np.einsum("jn,jnc->jc", pattern.blocks, xb)
    if noise_std > 0.0:
        if noise_stream is None:
            raise ValueError("noise_std > 0 requires a noise stream")
        y = y + noise_std * draw_normal(noise_stream, y.size).reshape(y.shape)
    return y


@dataclass
class MeasurementBundle:
    """Seed-compressed record of a full capture, sufficient to replay attacks.

    The measurement matrix is never stored; every pattern is regenerated from
    (seed, acquisition index) and the recorded feedback weight snapshots.
    """

    config: CaptureConfig
    feedback_events: list[tuple[int, np.ndarray]] = field(default_factory=list)
    measurements: np.ndarray = field(default_factory=lambda: np.zeros((0, 0, 0)))
    version: int = BUNDLE_VERSION

    def __eq__(self, other) -> bool:
        if not isinstance(other, MeasurementBundle):
            return NotImplemented
        return (
            self.config == other.config
            and self.version == other.version
            and len(self.feedback_events) == len(other.feedback_events)
            and all(
                a == b and np.array_equal(wa, wb)
                for (a, wa), (b, wb) in zip(self.feedback_events, other.feedback_events)
            )
            and np.array_equal(self.measurements, other.measurements)
        )

    def active_weight(self, acquisition: int) -> np.ndarray:
        """Weight map in force at a given acquisition (events at i steer i+1 on)."""
        active = None
        for idx, w in self.feedback_events:
            if idx < acquisition:
                active = w
            else:
                break
        if active is None:
            return np.ones((self.config.side, self.config.side))
        return active

    def pattern_at(self, acquisition: int, grid: BlockGrid | None = None) -> AperturePattern:
        """Regenerate the aperture pattern used at an acquisition index."""
        if grid is None:
            grid = self.config.grid
        weight = SamplingWeight(self.active_weight(acquisition), provenance="replay")
        return synthesize_pattern(
            weight,
            pattern_stream(self.config, acquisition),
            grid,
            mode=self.config.pattern_mode,
            threshold=self.config.binary_threshold,
        )


def pattern_stream(config: CaptureConfig, acquisition: int) -> RngStream:
    """The stream that feeds pattern synthesis at a given acquisition index."""
    purpose = "bits" if config.pattern_mode == "binary" else "pattern"
    return RngStream(config.seed, acquisition=acquisition, purpose=purpose)


def replay_measurements(bundle: MeasurementBundle, image: Image) -> np.ndarray:
    """Recompute every measurement from regenerated patterns and a known image."""
    cfg = bundle.config
    grid = cfg.grid
    out = np.zeros_like(bundle.measurements)
    for i in range(1, bundle.measurements.shape[0] + 1):
        pattern = bundle.pattern_at(i, grid)
        noise_stream = RngStream(cfg.seed, acquisition=i, purpose="noise")
        out[i - 1] = forward(pattern, image, grid, noise_stream, cfg.noise_std)
    return out


# ---------------------------------------------------------------------------
# Bundle file format
#
#   magic           4 bytes  b"SPIB"
#   version         u16 LE
#   config length   u32 LE, then that many UTF-8 bytes (flat key = value text)
#   event count     u32 LE
#   per event:      u32 LE acquisition index, then L*L f64 LE weight samples
#   m_prime         u32 LE
#   num_blocks      u32 LE
#   channels        u32 LE
#   measurements    m_prime * num_blocks * channels f64 LE, C order
#   checksum        u32 LE, CRC-32 of every byte after the magic
# ---------------------------------------------------------------------------


def write_bundle(bundle: MeasurementBundle, sink) -> None:
    """Serialize a bundle to a binary file path or writable binary stream."""
    body = io.BytesIO()
    body.write(struct.pack("<H", bundle.version))
    config_bytes = format_config(bundle.config).encode("utf-8")
    body.write(struct.pack("<I", len(config_bytes)))
    body.write(config_bytes)
    body.write(struct.pack("<I", len(bundle.feedback_events)))
    for idx, w in bundle.feedback_events:
        body.write(struct.pack("<I", idx))
        body.write(np.ascontiguousarray(w, dtype="<f8").tobytes())
    m_prime, num_blocks, channels = bundle.measurements.shape
    body.write(struct.pack("<III", m_prime, num_blocks, channels))
    body.write(np.ascontiguousarray(bundle.measurements, dtype="<f8").tobytes())
    payload = body.getvalue()
    blob = BUNDLE_MAGIC + payload + struct.pack("<I", zlib.crc32(payload))
    if hasattr(sink, "write"):
        sink.write(blob)
    else:
        with open(sink, "wb") as fh:
            fh.write(blob)


class _Cursor:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, count: int) -> bytes:
        if self.pos + count > len(self.data):
            raise BundleTruncatedError(
                f"bundle ends at byte {len(self.data)} but {self.pos + count} "
                "bytes are required"
            )
        chunk = self.data[self.pos : self.pos + count]
        self.pos += count
        return chunk

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def read_bundle(source) -> MeasurementBundle:
    """Deserialize a bundle; the inverse of :func:`write_bundle`."""
    if hasattr(source, "read"):
        data = source.read()
    else:
        with open(source, "rb") as fh:
            data = fh.read()
    cur = _Cursor(data)
    magic = cur.take(4)
    if magic != BUNDLE_MAGIC:
        raise BundleFormatError(f"bad magic bytes {magic!r}")
    (version,) = cur.unpack("<H")
    if version != BUNDLE_VERSION:
        raise BundleFormatError(
            f"unsupported bundle version {version}, expected {BUNDLE_VERSION}"
        )
    (config_len,) = cur.unpack("<I")
    config_text = cur.take(config_len).decode("utf-8")
    try:
        config = parse_config(config_text)
    except ConfigError as exc:
        raise BundleFormatError(f"embedded config is invalid: {exc}") from exc
    side = config.side
    (event_count,) = cur.unpack("<I")
    events: list[tuple[int, np.ndarray]] = []
    for _ in range(event_count):
        (idx,) = cur.unpack("<I")
        w = np.frombuffer(cur.take(side * side * 8), dtype="<f8").reshape(side, side)
        events.append((idx, w.copy()))
    m_prime, num_blocks, channels = cur.unpack("<III")
    count = m_prime * num_blocks * channels
    measurements = (
        np.frombuffer(cur.take(count * 8), dtype="<f8")
        .reshape(m_prime, num_blocks, channels)
        .copy()
    )
    (stored_crc,) = cur.unpack("<I")
    if cur.pos != len(data):
        raise BundleFormatError(
            f"{len(data) - cur.pos} trailing bytes after checksum"
        )
    actual_crc = zlib.crc32(data[4:-4])
    if actual_crc != stored_crc:
        raise BundleChecksumError(
            f"checksum mismatch: stored {stored_crc:#010x}, computed {actual_crc:#010x}"
        )
    return MeasurementBundle(
        config=config,
        feedback_events=events,
        measurements=measurements,
        version=version,
    )
