"""Subvolume division and merge for memory-bounded inference.

``divide`` plans a grid of disjoint cores that exactly cover the volume,
each padded by a halo of context voxels clamped to the volume bounds.
``infer_tiled`` runs the model on every padded tile and keeps only the core
region of each output, so with halo >= (receptive_field - 1) / 2 the stitched
result matches full-volume inference voxel for voxel; halo 0 is the cheap
failsafe with edge effects at core faces.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .engine import FeatureMap, MemoryBudget, run_model
from .errors import BadCubeSize, GapDetected, OverlapDetected, ShapeMismatch
from .model import ModelSpec
from .volume import Volume3D, identity_affine

Triple = tuple[int, int, int]


@dataclass(frozen=True)
class Tile:
    core_origin: Triple
    core_extents: Triple
    padded_origin: Triple
    padded_extents: Triple


@dataclass
class SubvolumeGrid:
    source_extents: Triple
    cube: int
    halo: int
    tiles: list[Tile]


def divide(extents: Triple, cube: int, halo: int = 0) -> SubvolumeGrid:
    """Plan ceil(n/cube) cores per axis in row-major order (z fastest)."""
    if cube < 1:
        raise BadCubeSize(f"cube must be >= 1, got {cube}")
    if halo < 0:
        raise ValueError(f"halo must be >= 0, got {halo}")
    counts = [(n + cube - 1) // cube for n in extents]
    tiles: list[Tile] = []
    for ix in range(counts[0]):
        for iy in range(counts[1]):
            for iz in range(counts[2]):
                origin = (ix * cube, iy * cube, iz * cube)
                core = tuple(min(cube, n - o) for o, n in zip(origin, extents))
                pad_lo = tuple(max(0, o - halo) for o in origin)
                pad_hi = tuple(min(n, o + c + halo)
                               for o, c, n in zip(origin, core, extents))
                tiles.append(Tile(
                    core_origin=origin,
                    core_extents=core,  # type: ignore[arg-type]
                    padded_origin=pad_lo,  # type: ignore[arg-type]
                    padded_extents=tuple(h - l for l, h in zip(pad_lo, pad_hi)),  # type: ignore[arg-type]
                ))
    return SubvolumeGrid(source_extents=tuple(extents), cube=cube, halo=halo, tiles=tiles)


def _tile_slices(origin: Triple, extents: Triple, zyx: bool):
    """Slices for a (x,y,z) box, optionally in feature-map (z,y,x) axis order."""
    sl = tuple(slice(o, o + e) for o, e in zip(origin, extents))
    return (sl[2], sl[1], sl[0]) if zyx else sl


def run_tiles(m: ModelSpec, fm: FeatureMap, grid: SubvolumeGrid,
              budget: MemoryBudget, fast: bool = True):
    """Run the model tile by tile; yields (tile, core-region scores).

    Each tile is an independent run_model invocation against the shared
    budget, so the recorded high_water is the per-tile peak.
    """
    if fm.extents != grid.source_extents:
        raise ShapeMismatch(
            f"grid built for {grid.source_extents}, feature map is {fm.extents}")
    results = []
    for index, tile in enumerate(grid.tiles):
        patch = fm.data[(slice(None),) + _tile_slices(tile.padded_origin, tile.padded_extents, zyx=True)]
        patch_fm = FeatureMap(np.ascontiguousarray(patch))
        try:
            scores = run_model(m, patch_fm, budget, fast=fast)
        except Exception as e:
            e.args = (f"tile {index} at core {tile.core_origin}: {e}",)
            raise
        rel = tuple(c - p for c, p in zip(tile.core_origin, tile.padded_origin))
        core = scores.data[(slice(None),) + _tile_slices(rel, tile.core_extents, zyx=True)]
        results.append((tile, np.ascontiguousarray(core)))
    return results


def assemble_scores(grid: SubvolumeGrid, results) -> FeatureMap:
    """Place each tile's core scores at its origin in a full-extent map."""
    channels = results[0][1].shape[0]
    nx, ny, nz = grid.source_extents
    out = np.zeros((channels, nz, ny, nx), dtype=results[0][1].dtype)
    for tile, core in results:
        out[(slice(None),) + _tile_slices(tile.core_origin, tile.core_extents, zyx=True)] = core
    return FeatureMap(out)


def infer_tiled(m: ModelSpec, fm: FeatureMap, grid: SubvolumeGrid,
                budget: MemoryBudget, fast: bool = True) -> FeatureMap:
    """Tile-wise inference stitched from core regions (halo voxels discarded)."""
    return assemble_scores(grid, run_tiles(m, fm, grid, budget, fast=fast))


def merge_labels(tiles, target_extents: Triple,
                 spacing=(1.0, 1.0, 1.0), affine=None) -> Volume3D:
    """Assemble label cores by direct placement; cores must tile the target.

    ``tiles`` is an iterable of ((origin, extents), label-array) pairs.
    """
    out = np.zeros(target_extents, dtype=np.int32)
    seen = np.zeros(target_extents, dtype=bool)
    for (origin, extents), labels in tiles:
        labels = np.asarray(labels)
        if labels.shape != tuple(extents):
            raise ShapeMismatch(f"tile at {origin} has shape {labels.shape}, expected {extents}")
        sl = _tile_slices(tuple(origin), tuple(extents), zyx=False)
        if seen[sl].any():
            raise OverlapDetected(f"tile at {origin} overlaps previously placed cores")
        seen[sl] = True
        out[sl] = labels
    if not seen.all():
        missing = int(seen.size - seen.sum())
        raise GapDetected(f"{missing} voxels not covered by any tile core")
    if affine is None:
        affine = identity_affine(spacing)
    return Volume3D(out, spacing, affine)
