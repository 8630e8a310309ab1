"""Command-line harness: capture runs, attack replays, baselines, sweeps."""

from __future__ import annotations

import argparse
import dataclasses
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from PIL import Image as PilImage

from . import __version__
from .capture import CaptureTrace, capture, replay_attack
from .domain import (
    BoundingBox,
    CaptureConfig,
    ConfigError,
    Image,
    feedback_count,
    feedback_schedule,
    format_config,
    load_config,
)
from .maskgen import load_boxes
from .measurement import write_bundle
from .metrics import EvalReport, MethodScore, defocus_baseline, evaluate

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_SOLVER = 4

WORKERS_ENV = "ADASPI_WORKERS"

METHODS = ("original", "defocus", "ours-passthrough", "ours-oracle", "ours-silhouette")

# Desk scale finishes capture + attack in seconds; paper scale matches the
# reference setup (L=256, B=32) and can take tens of minutes per capture.
SCALES = {"desk": (64, 8), "paper": (256, 32)}


# ---------------------------------------------------------------------------
# Image I/O
# ---------------------------------------------------------------------------


def load_image(path, channel_mode: str = "mono", side: int | None = None) -> Image:
    """Load a raster image, map to [0, 1], optionally resize to `side`.

    Mono mode averages the color channels with equal weights.
    """
    with PilImage.open(path) as pil:
        pil = pil.convert("RGB")
        if side is not None and pil.size != (side, side):
            pil = pil.resize((side, side), PilImage.BILINEAR)
        arr = np.asarray(pil, dtype=np.float64) / 255.0
    if channel_mode == "mono":
        arr = arr.mean(axis=2, keepdims=True)
    return Image(np.clip(arr, 0.0, 1.0))


def save_image(image: Image, path) -> None:
    arr = np.clip(np.round(image.data * 255.0), 0, 255).astype(np.uint8)
    if image.channels == 1:
        pil = PilImage.fromarray(arr[:, :, 0], mode="L")
    else:
        pil = PilImage.fromarray(arr, mode="RGB")
    pil.save(path)


def _save_gray(values: np.ndarray, path) -> None:
    arr = np.clip(np.round(values * 255.0), 0, 255).astype(np.uint8)
    PilImage.fromarray(arr, mode="L").save(path)


# ---------------------------------------------------------------------------
# Experiment spec and execution
# ---------------------------------------------------------------------------


@dataclass
class ExperimentSpec:
    image_paths: list[str]
    boxes_path: str | None
    config: CaptureConfig
    methods: list[str]
    out_dir: Path
    sweep_k: list[float] | None = None
    strict: bool = False
    workers: int = 1

    def __post_init__(self):
        if not self.methods:
            raise ConfigError("at least one method must be selected")
        for m in self.methods:
            if m not in METHODS:
                raise ConfigError(f"unknown method {m!r}; expected one of {METHODS}")
        if self.sweep_k is not None:
            for k in self.sweep_k:
                if k <= 1:
                    raise ConfigError(f"sweep K values must exceed 1, got {k}")


def _boxes_for(image_path: Path, spec: ExperimentSpec) -> list[BoundingBox]:
    if spec.boxes_path is not None:
        return load_boxes(spec.boxes_path)
    candidate = image_path.with_suffix(".boxes")
    if candidate.exists():
        return load_boxes(candidate)
    return []


def _cell_config(spec: ExperimentSpec, method: str, k: float) -> CaptureConfig:
    return dataclasses.replace(
        spec.config,
        mask_generator=method.removeprefix("ours-"),
        feedback_base=k,
    )


def _run_capture_cell(args) -> tuple[str, np.ndarray, np.ndarray, dict]:
    """One capture + attack replay; returns (name, final, attack, diagnostics).

    Module-level so it can run in a worker process.
    """
    name, image_data, boxes, config, cell_dir = args
    image = Image(image_data)
    t0 = time.perf_counter()
    trace = capture(image, boxes, config)
    attack = replay_attack(trace.bundle)
    elapsed = time.perf_counter() - t0

    cell_dir.mkdir(parents=True, exist_ok=True)
    write_bundle(trace.bundle, cell_dir / "bundle.spib")
    save_image(trace.final_image, cell_dir / "final.png")
    save_image(attack.image, cell_dir / "attack.png")
    snap_dir = cell_dir / "snapshots"
    snap_dir.mkdir(exist_ok=True)
    for snap in trace.snapshots:
        save_image(snap.provisional, snap_dir / f"provisional_i{snap.acquisition:04d}.png")
        _save_gray(snap.weight.values, snap_dir / f"weight_i{snap.acquisition:04d}.png")

    diagnostics = {
        "final_iterations": trace.final.iterations,
        "final_primal_residual": trace.final.primal_residual,
        "final_dual_residual": trace.final.dual_residual,
        "final_converged": trace.final.converged,
        "attack_converged": attack.converged,
        "timings": dict(trace.timings),
        "wall_time_s": elapsed,
    }
    schedule = config.schedule()
    n_f = feedback_count(config.feedback_base, config.m_prime)
    manifest = [
        f"adaspi version = {__version__}",
        f"cell = {name}",
        f"schedule = {list(schedule)}",
        f"feedback_count = {n_f}",
        f"diagnostics = {diagnostics}",
        "",
        "# config",
        format_config(config),
    ]
    (cell_dir / "manifest.txt").write_text("\n".join(manifest), encoding="utf-8")
    return name, trace.final_image.data, attack.image.data, diagnostics


def run_experiment(spec: ExperimentSpec) -> int:
    """Run every (image, method, sweep point) cell and write consolidated reports."""
    spec.out_dir.mkdir(parents=True, exist_ok=True)
    sweep = spec.sweep_k if spec.sweep_k else [spec.config.feedback_base]

    # Experiment-level manifest, including the planned schedule per sweep point.
    lines = [
        f"adaspi version = {__version__}",
        f"images = {list(spec.image_paths)}",
        f"methods = {list(spec.methods)}",
        f"sweep_k = {spec.sweep_k}",
        "",
        "# schedule per sweep point (M' = %d)" % spec.config.m_prime,
    ]
    for k in sweep:
        schedule = feedback_schedule(k, spec.config.m_prime)
        n_f = feedback_count(k, spec.config.m_prime)
        lines.append(f"K = {k}: N_f = {n_f}, schedule = {list(schedule)}")
    lines += ["", "# base config", format_config(spec.config)]
    (spec.out_dir / "manifest.txt").write_text("\n".join(lines), encoding="utf-8")

    nonconverged = False
    report_blocks: list[str] = []
    table_blocks: list[str] = []

    for image_path in spec.image_paths:
        image_path = Path(image_path)
        original = load_image(image_path, spec.config.channel_mode, spec.config.side)
        boxes = _boxes_for(image_path, spec)
        image_dir = spec.out_dir / image_path.stem
        image_dir.mkdir(parents=True, exist_ok=True)
        save_image(original, image_dir / "original.png")

        candidates: list[tuple[str, Image]] = []
        jobs = []
        for method in spec.methods:
            if method == "original":
                candidates.append(("original", original))
                continue
            if method == "defocus":
                blurred = defocus_baseline(original)
                save_image(blurred, image_dir / "defocus.png")
                candidates.append(("defocus", blurred))
                continue
            for k in sweep:
                name = method if len(sweep) == 1 else f"{method}[K={k:g}]"
                config = _cell_config(spec, method, k)
                cell_dir = image_dir / name.replace("[", "_").replace("]", "").replace("=", "")
                jobs.append((name, original.data, boxes, config, cell_dir))

        if jobs:
            if spec.workers > 1:
                with ProcessPoolExecutor(max_workers=spec.workers) as pool:
                    results = list(pool.map(_run_capture_cell, jobs))
            else:
                results = [_run_capture_cell(job) for job in jobs]
            for name, final_data, attack_data, diag in results:
                candidates.append((name, Image(final_data)))
                candidates.append((f"{name}+attack", Image(attack_data)))
                if not (diag["final_converged"] and diag["attack_converged"]):
                    nonconverged = True

        report = evaluate(original, candidates, boxes)
        report_blocks.append(f"# image: {image_path.name}\n" + report.to_text())
        table_blocks.append(
            "\n".join(
                f"{image_path.name},{line}"
                for line in report.to_table().splitlines()[1:]
            )
        )

    (spec.out_dir / "report.txt").write_text("\n".join(report_blocks), encoding="utf-8")
    csv_header = "image,method,psnr_out_dB,mse_in,mse_all,combined"
    (spec.out_dir / "report.csv").write_text(
        csv_header + "\n" + "\n".join(table_blocks) + "\n", encoding="utf-8"
    )

    if nonconverged and spec.strict:
        print("error: a reconstruction did not converge (strict mode)", file=sys.stderr)
        return EXIT_SOLVER
    return EXIT_OK


# ---------------------------------------------------------------------------
# Argument parsing
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="adaspi",
        description=(
            "Adaptive single-pixel imaging simulator with pre-capture "
            "region anonymization"
        ),
    )
    parser.add_argument("--config", help="capture config file (flat key = value)")
    parser.add_argument(
        "--image", action="append", required=True, help="input image; repeatable"
    )
    parser.add_argument(
        "--boxes",
        help="protected-region box file (default: <image>.boxes next to the image)",
    )
    parser.add_argument(
        "--methods",
        default="original,defocus,ours-oracle",
        help=f"comma-separated subset of {','.join(METHODS)}",
    )
    parser.add_argument(
        "--sweep-k", help="comma-separated feedback-base values to sweep"
    )
    parser.add_argument("--rate", type=float, help="override sampling rate M/N")
    parser.add_argument("--seed", type=int, help="override master seed")
    parser.add_argument(
        "--scale",
        choices=sorted(SCALES),
        help="preset geometry: desk (L=64, B=8) or paper (L=256, B=32)",
    )
    parser.add_argument("--out", required=True, help="output directory")
    parser.add_argument(
        "--strict",
        action="store_true",
        help="exit nonzero if any reconstruction fails to converge",
    )
    return parser


def _spec_from_args(args) -> ExperimentSpec:
    config = load_config(args.config) if args.config else CaptureConfig()
    overrides = {}
    if args.scale:
        side, block = SCALES[args.scale]
        overrides.update(side=side, block=block)
    if args.rate is not None:
        overrides["rate"] = args.rate
    if args.seed is not None:
        overrides["seed"] = args.seed
    if overrides:
        config = dataclasses.replace(config, **overrides)

    sweep_k = None
    if args.sweep_k:
        sweep_k = [float(v) for v in args.sweep_k.split(",") if v.strip()]

    workers = int(os.environ.get(WORKERS_ENV, "1"))
    return ExperimentSpec(
        image_paths=list(args.image),
        boxes_path=args.boxes,
        config=config,
        methods=[m.strip() for m in args.methods.split(",") if m.strip()],
        out_dir=Path(args.out),
        sweep_k=sweep_k,
        strict=args.strict,
        workers=max(workers, 1),
    )


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        spec = _spec_from_args(args)
    except (ConfigError, ValueError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO
    try:
        return run_experiment(spec)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
