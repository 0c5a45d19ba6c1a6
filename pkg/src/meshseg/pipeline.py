"""End-to-end segmentation runs with phase timing and telemetry.

Pipeline order: read -> conform -> [mask+crop] -> inference (full-volume or
tiled) -> merge -> argmax -> [embed] -> largest-component filter -> write.
Each phase is wall-timed into a TelemetryRecord whose keys are fixed:
preprocessing, cropping, inference, merging, postprocessing.  A full-volume
run that trips the memory budget retries once in tiled mode when failsafe is
enabled.
"""

from __future__ import annotations

import json
import os
import time
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path
from typing import Optional, Union

import numpy as np

from . import nifti
from .engine import FeatureMap, MemoryBudget, argmax_labels, run_model, volume_to_feature
from .errors import BudgetExceeded, EmptyMask, MeshsegError
from .components import keep_largest
from .model import ModelSpec, load_model_dir
from .tiling import assemble_scores, divide, run_tiles
from .volume import Volume3D, conform, crop, embed, mask_bbox

PHASES = ("preprocessing", "cropping", "inference", "merging", "postprocessing")

UNLIMITED_BYTES = 1 << 62


@dataclass
class TelemetryRecord:
    timestamp: str
    model_name: str
    input_shape: tuple[int, int, int]
    cropped: bool
    tiled: bool
    cube: Optional[int]
    halo: Optional[int]
    phase_seconds: dict[str, float]
    peak_bytes: int
    status: str
    error_kind: str = ""

    def __post_init__(self):
        if set(self.phase_seconds) != set(PHASES):
            raise ValueError(f"phase keys must be exactly {PHASES}")
        if self.status == "Fail" and not self.error_kind:
            raise ValueError("Fail records need an error_kind")

    def to_dict(self) -> dict:
        return {
            "timestamp": self.timestamp,
            "model_name": self.model_name,
            "input_shape": list(self.input_shape),
            "cropped": self.cropped,
            "tiled": self.tiled,
            "cube": self.cube,
            "halo": self.halo,
            "phase_seconds": {k: self.phase_seconds[k] for k in PHASES},
            "peak_bytes": self.peak_bytes,
            "status": self.status,
            "error_kind": self.error_kind,
        }


def append_telemetry(records, path: Union[str, Path]) -> None:
    """Append records as JSON lines; each line is one atomic write.

    Accepts a single record or an iterable; an empty iterable leaves the
    file untouched.
    """
    if isinstance(records, TelemetryRecord):
        records = [records]
    lines = [json.dumps(r.to_dict() if isinstance(r, TelemetryRecord) else r,
                        separators=(",", ":")) + "\n"
             for r in records]
    if not lines:
        return
    fd = os.open(str(path), os.O_WRONLY | os.O_CREAT | os.O_APPEND, 0o644)
    try:
        for line in lines:
            os.write(fd, line.encode("utf-8"))
    finally:
        os.close(fd)


@dataclass
class PipelineConfig:
    input_path: Union[str, Path]
    model_dir: Union[str, Path]
    output_path: Optional[Union[str, Path]] = None
    crop: bool = False
    crop_margin: int = 8
    tile: bool = False
    cube: int = 64
    halo: int = 0
    budget_bytes: Optional[int] = None
    failsafe: bool = False
    connectivity: int = 26
    per_class_components: bool = False
    rescale_hi_pct: float = 99.9
    telemetry_path: Optional[Union[str, Path]] = None
    mask_model_dir: Optional[Union[str, Path]] = None
    fast_conv: bool = True


class _PhaseTimer:
    def __init__(self):
        self.seconds = {k: 0.0 for k in PHASES}

    def add(self, phase: str, t0: float):
        self.seconds[phase] += time.perf_counter() - t0


def _normalized_feature(vol: Volume3D) -> FeatureMap:
    """Conformed uint8-range intensities scaled to [0, 1]."""
    fm = volume_to_feature(vol)
    return FeatureMap(fm.data * np.float32(1.0 / 255.0))


def _mask_volume(conformed: Volume3D, mask_model: Optional[ModelSpec],
                 budget: MemoryBudget, fast: bool) -> Volume3D:
    """Foreground mask from the mask model, or intensity > 0 when absent."""
    if mask_model is None:
        return conformed.with_data((conformed.data > 0).astype(np.uint8))
    scores = run_model(mask_model, _normalized_feature(conformed), budget, fast=fast)
    labels = argmax_labels(scores, conformed.spacing, conformed.affine)
    return conformed.with_data((labels.data != 0).astype(np.uint8))


def run_pipeline(config: PipelineConfig):
    """Execute one segmentation; returns (labels_or_None, TelemetryRecord).

    Any error is captured as a Fail record carrying the error class name;
    no partial output file is ever left behind (write is temp + rename).
    """
    timer = _PhaseTimer()
    timestamp = datetime.now(timezone.utc).isoformat()
    status, error_kind = "OK", ""
    model_name = ""
    input_shape = (0, 0, 0)
    cropped = False
    tiled = bool(config.tile)
    result: Optional[Volume3D] = None
    budget = MemoryBudget(config.budget_bytes if config.budget_bytes else UNLIMITED_BYTES)

    try:
        model = load_model_dir(config.model_dir)
        model_name = model.name

        t0 = time.perf_counter()
        raw = nifti.read_volume(config.input_path)
        input_shape = raw.extents
        conformed = conform(raw, hi_pct=config.rescale_hi_pct)
        timer.add("preprocessing", t0)

        work = conformed
        box = None
        if config.crop:
            t0 = time.perf_counter()
            mask_model = (load_model_dir(config.mask_model_dir)
                          if config.mask_model_dir else None)
            mask = _mask_volume(conformed, mask_model, budget, config.fast_conv)
            box = mask_bbox(mask, config.crop_margin)
            work = crop(conformed, box)
            cropped = True
            timer.add("cropping", t0)

        fm = _normalized_feature(work)
        tile_results = None
        scores = None
        t0 = time.perf_counter()
        if config.tile:
            grid = divide(work.extents, config.cube, config.halo)
            tile_results = run_tiles(model, fm, grid, budget, fast=config.fast_conv)
        else:
            try:
                scores = run_model(model, fm, budget, fast=config.fast_conv)
            except BudgetExceeded:
                if not config.failsafe:
                    raise
                timer.add("inference", t0)
                tiled = True
                grid = divide(work.extents, config.cube, config.halo)
                t0 = time.perf_counter()
                tile_results = run_tiles(model, fm, grid, budget, fast=config.fast_conv)
        timer.add("inference", t0)

        if tile_results is not None:
            t0 = time.perf_counter()
            scores = assemble_scores(grid, tile_results)
            timer.add("merging", t0)

        t0 = time.perf_counter()
        labels = argmax_labels(scores, work.spacing, work.affine)
        if box is not None:
            labels = embed(labels, box, conformed.extents)
            labels = Volume3D(labels.data, conformed.spacing, conformed.affine)
        if np.any(labels.data != 0):
            labels = keep_largest(labels, config.connectivity,
                                  per_class=config.per_class_components)
        if config.output_path is not None:
            out_path = Path(config.output_path)
            # temp name keeps the suffix so .gz outputs stay compressed
            tmp_path = out_path.parent / (".tmp-" + out_path.name)
            nifti.write_volume(labels, 2, tmp_path)
            os.replace(tmp_path, out_path)
        timer.add("postprocessing", t0)
        result = labels
    except MeshsegError as e:
        status, error_kind = "Fail", type(e).__name__
    except OSError:
        status, error_kind = "Fail", "IoError"

    record = TelemetryRecord(
        timestamp=timestamp,
        model_name=model_name,
        input_shape=input_shape,
        cropped=cropped,
        tiled=tiled,
        cube=config.cube if tiled else None,
        halo=config.halo if tiled else None,
        phase_seconds=timer.seconds,
        peak_bytes=budget.high_water,
        status=status,
        error_kind=error_kind,
    )
    if config.telemetry_path is not None:
        append_telemetry(record, config.telemetry_path)
    return result, record
