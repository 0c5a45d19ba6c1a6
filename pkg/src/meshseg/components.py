"""3D connected-components labeling and largest-component filtering.

Two-pass raster scan with union-find (path compression), compiled loops.
Component ids are contiguous 1..count, assigned by first encounter in
x-fastest scan order, which also fixes the keep_largest tie rule.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels
from .errors import EmptyMask
from .volume import Volume3D

_OFFSETS_CACHE: dict[int, np.ndarray] = {}


def _preceding_offsets(connectivity: int) -> np.ndarray:
    """Neighbor offsets (z, y, x) that precede a voxel in scan order."""
    if connectivity in _OFFSETS_CACHE:
        return _OFFSETS_CACHE[connectivity]
    if connectivity == 6:
        offs = [(-1, 0, 0), (0, -1, 0), (0, 0, -1)]
    elif connectivity == 26:
        offs = []
        for dz in (-1, 0, 1):
            for dy in (-1, 0, 1):
                for dx in (-1, 0, 1):
                    if (dz, dy, dx) < (0, 0, 0):
                        offs.append((dz, dy, dx))
    else:
        raise ValueError(f"connectivity must be 6 or 26, got {connectivity}")
    arr = np.array(offs, dtype=np.int64)
    _OFFSETS_CACHE[connectivity] = arr
    return arr


@dataclass
class ComponentLabeling:
    component_id: np.ndarray  # (nx, ny, nz) int32, 0 = background
    sizes: np.ndarray         # sizes[i] is the voxel count of component i+1
    count: int


def label_components(binary: Volume3D, connectivity: int = 26) -> ComponentLabeling:
    """Equivalence-class labeling of nonzero voxels under the adjacency."""
    fg = np.ascontiguousarray((binary.data.T != 0).astype(np.uint8))  # (nz, ny, nx)
    n_fg = int(np.count_nonzero(fg))
    lab = np.zeros(fg.shape, dtype=np.int32)
    if n_fg == 0:
        return ComponentLabeling(np.ascontiguousarray(lab.T), np.zeros(0, np.int64), 0)
    parent = np.zeros(n_fg + 1, dtype=np.int32)
    offsets = _preceding_offsets(connectivity)
    n_prov = _kernels.cc_label_pass(fg, offsets, parent, lab)
    remap = np.zeros(n_prov + 1, dtype=np.int32)
    sizes = np.zeros(n_prov + 1, dtype=np.int64)
    count = _kernels.cc_resolve_pass(lab, parent, remap, sizes)
    return ComponentLabeling(np.ascontiguousarray(lab.T), sizes[1:count + 1].copy(), count)


def keep_largest(labels: Volume3D, connectivity: int = 26,
                 per_class: bool = False) -> Volume3D:
    """Zero out every voxel outside the largest foreground component.

    By default the foreground is the union of all nonzero classes (filtering
    per class would delete legitimate thin structures); class values inside
    the surviving component are untouched.  ``per_class`` instead keeps each
    class's own largest component, for atlas-style outputs.  Size ties go to
    the component whose first voxel comes earliest in scan order (the lowest
    id).
    """
    if per_class:
        values = [int(v) for v in np.unique(labels.data) if v != 0]
        if not values:
            raise EmptyMask("label volume has no foreground voxel")
        out = np.zeros_like(labels.data)
        for value in values:
            mask = labels.with_data((labels.data == value).astype(np.uint8))
            comps = label_components(mask, connectivity)
            winner = int(np.argmax(comps.sizes)) + 1
            out[comps.component_id == winner] = value
        return labels.with_data(out)
    comps = label_components(labels, connectivity)
    if comps.count == 0:
        raise EmptyMask("label volume has no foreground voxel")
    winner = int(np.argmax(comps.sizes)) + 1  # argmax takes the first max: lowest id
    kept = np.where(comps.component_id == winner, labels.data, 0)
    return labels.with_data(kept.astype(labels.data.dtype))
