"""Adaptive single-pixel imaging simulator with pre-capture region anonymization."""

__version__ = "0.1.0"

from .domain import (
    BlockGrid,
    BoundingBox,
    CaptureConfig,
    ConfigError,
    Image,
    RngStream,
    build_block_grid,
    draw_normal,
    feedback_count,
    feedback_schedule,
    load_config,
    parse_config,
)
from .measurement import (
    AperturePattern,
    MeasurementBundle,
    SamplingWeight,
    forward,
    read_bundle,
    synthesize_pattern,
    write_bundle,
)
from .maskgen import (
    OracleMaskParams,
    SilhouetteMaskParams,
    load_boxes,
    make_mask_generator,
    oracle_mask,
    passthrough_mask,
    silhouette_mask,
)
from .reconstruct import (
    AdmmTvParams,
    ReconstructionResult,
    reconstruct_admm_tv,
    reconstruct_block_lsq,
    tv,
)
from .capture import CaptureTrace, capture, replay_attack, verify_bundle
from .metrics import (
    EvalReport,
    anonymity_adjustment,
    defocus_baseline,
    evaluate,
    psnr_masked,
    region_mse,
)
