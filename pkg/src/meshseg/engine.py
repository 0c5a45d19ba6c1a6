"""Forward inference: dilated conv, batchnorm, ReLU, identity dropout.

``run_model`` executes the layer stack one layer at a time and releases the
previous activation before the next conv allocates, so at most two
activation buffers are ever live; a ``MemoryBudget`` enforces a hard peak
and records the high-water mark.  ``conv3d_ref`` is the plain nested-loop
evaluation; ``conv3d_fast`` is a cache-friendly tap-sliced path with the
same per-voxel accumulation order (results are bit-identical here, and the
contract only requires agreement within 1e-4).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels
from .errors import BudgetExceeded, NegativeVariance, ShapeMismatch
from .model import BATCHNORM3D, CONV3D, DROPOUT3D, RELU, LayerSpec, ModelSpec
from .volume import Volume3D, identity_affine


@dataclass
class FeatureMap:
    """Channel-major activation: data[channel][z][y][x], float32."""

    data: np.ndarray

    def __post_init__(self):
        if self.data.ndim != 4:
            raise ShapeMismatch(f"feature map must be 4D, got shape {self.data.shape}")

    @property
    def channels(self) -> int:
        return self.data.shape[0]

    @property
    def extents(self) -> tuple[int, int, int]:
        c, nz, ny, nx = self.data.shape
        return (nx, ny, nz)

    @property
    def nbytes(self) -> int:
        return self.data.nbytes


def volume_to_feature(vol: Volume3D) -> FeatureMap:
    """Single-channel feature map; axes reorder from (x,y,z) to (z,y,x)."""
    data = np.ascontiguousarray(vol.data.T, dtype=np.float32)
    return FeatureMap(data[None])


@dataclass
class MemoryBudget:
    """Peak-allocation accounting for one inference run.

    ``allocate``/``release`` must pair up; activation buffers are counted
    separately so the two-live-buffers invariant can be asserted.
    """

    peak_bytes: int
    live_bytes: int = 0
    high_water: int = 0
    live_buffers: int = 0
    max_live_buffers: int = 0

    def allocate(self, nbytes: int, activation: bool = True, what: str = "") -> None:
        if self.live_bytes + nbytes > self.peak_bytes:
            raise BudgetExceeded(
                f"allocating {nbytes} B for {what or 'buffer'} would raise live bytes "
                f"to {self.live_bytes + nbytes} over the {self.peak_bytes} B budget")
        self.live_bytes += nbytes
        self.high_water = max(self.high_water, self.live_bytes)
        if activation:
            self.live_buffers += 1
            self.max_live_buffers = max(self.max_live_buffers, self.live_buffers)

    def release(self, nbytes: int, activation: bool = True) -> None:
        self.live_bytes -= nbytes
        if activation:
            self.live_buffers -= 1


def unlimited_budget() -> MemoryBudget:
    return MemoryBudget(peak_bytes=1 << 62)


def _conv_out_shape(fm: FeatureMap, layer: LayerSpec) -> tuple[int, int, int, int]:
    if layer.kind != CONV3D:
        raise ShapeMismatch(f"expected conv3d layer, got {layer.kind}")
    if fm.channels != layer.in_channels:
        raise ShapeMismatch(
            f"input has {fm.channels} channels, layer expects {layer.in_channels}")
    _, nz, ny, nx = fm.data.shape
    ox = layer.output_extent(nx, 0)
    oy = layer.output_extent(ny, 1)
    oz = layer.output_extent(nz, 2)
    if min(ox, oy, oz) < 1:
        raise ShapeMismatch(
            f"conv output extents ({ox},{oy},{oz}) from input ({nx},{ny},{nz})")
    return (layer.out_channels, oz, oy, ox)


def _zyx(triple: tuple[int, int, int]) -> tuple[int, int, int]:
    """LayerSpec tuples are (x, y, z); kernels take (z, y, x)."""
    return (triple[2], triple[1], triple[0])


def _run_conv(kernel, fm: FeatureMap, layer: LayerSpec, weights) -> FeatureMap:
    w, bias = weights
    out = np.empty(_conv_out_shape(fm, layer), dtype=fm.data.dtype)
    dz, dy, dx = _zyx(layer.dilation)
    pz, py, px = _zyx(layer.padding)
    kernel(fm.data[None], w, bias, dz, dy, dx, pz, py, px, out[None])
    return FeatureMap(out)


def conv3d_ref(fm: FeatureMap, layer: LayerSpec, weights) -> FeatureMap:
    """Direct nested-loop dilated convolution with zero padding."""
    return _run_conv(_kernels.conv3d_direct, fm, layer, weights)


def conv3d_fast(fm: FeatureMap, layer: LayerSpec, weights) -> FeatureMap:
    """Tap-sliced dilated convolution; numerically equivalent to conv3d_ref."""
    return _run_conv(_kernels.conv3d_taps, fm, layer, weights)


def _bn_factors(layer: LayerSpec, params):
    scale, shift, mean, var = params
    if any(p.shape != (layer.out_channels,) for p in (scale, shift, mean, var)):
        raise ShapeMismatch("batchnorm parameter lengths must equal the channel count")
    if np.any(var < 0):
        raise NegativeVariance("running variance has negative entries")
    eps = np.float32(layer.epsilon)
    inv = np.float32(1.0) / np.sqrt(var.astype(np.float32) + eps)
    return scale, shift, mean, inv


def batchnorm_eval(fm: FeatureMap, layer: LayerSpec, params) -> FeatureMap:
    """out = scale*(in - running_mean)/sqrt(running_var + eps) + shift, per channel."""
    if layer.kind != BATCHNORM3D:
        raise ShapeMismatch(f"expected batchnorm3d layer, got {layer.kind}")
    if fm.channels != layer.out_channels:
        raise ShapeMismatch(
            f"input has {fm.channels} channels, layer expects {layer.out_channels}")
    scale, shift, mean, inv = _bn_factors(layer, params)
    x = fm.data
    col = (slice(None), None, None, None)
    out = (x - mean.astype(x.dtype)[col]) * inv.astype(x.dtype)[col]
    out = out * scale.astype(x.dtype)[col] + shift.astype(x.dtype)[col]
    return FeatureMap(out)


def _batchnorm_inplace(fm: FeatureMap, layer: LayerSpec, params) -> None:
    scale, shift, mean, inv = _bn_factors(layer, params)
    x = fm.data
    col = (slice(None), None, None, None)
    x -= mean.astype(x.dtype)[col]
    x *= inv.astype(x.dtype)[col]
    x *= scale.astype(x.dtype)[col]
    x += shift.astype(x.dtype)[col]


def relu(fm: FeatureMap) -> FeatureMap:
    return FeatureMap(np.maximum(fm.data, 0))


def dropout_eval(fm: FeatureMap) -> FeatureMap:
    """Inference-mode dropout is the identity."""
    return FeatureMap(fm.data.copy())


def run_model(m: ModelSpec, fm: FeatureMap, budget: MemoryBudget,
              fast: bool = True, validate: bool = False) -> FeatureMap:
    """Apply the layer stack with buffer-disposal memory discipline.

    The weight blob plus the live activations are charged against ``budget``;
    every charge is released before return, leaving ``high_water`` as the
    run's peak.  Elementwise layers run in place on the current activation,
    so only a conv briefly holds two buffers.
    """
    if fm.channels != 1:
        raise ShapeMismatch(f"model input must have 1 channel, got {fm.channels}")
    conv = conv3d_fast if fast else conv3d_ref
    weights_bytes = m.weights.nbytes
    budget.allocate(weights_bytes, activation=False, what="weights")
    current = fm
    budget.allocate(current.nbytes, what="input activation")
    try:
        for idx, layer in enumerate(m.layers):
            if layer.kind == CONV3D:
                out_shape = _conv_out_shape(current, layer)
                out_bytes = int(np.prod(out_shape)) * current.data.dtype.itemsize
                budget.allocate(out_bytes, what=f"layer {idx} activation")
                nxt = conv(current, layer, (m.conv_weight(layer), m.conv_bias(layer)))
                budget.release(current.nbytes)
                current = nxt
            elif layer.kind == BATCHNORM3D:
                _batchnorm_inplace(current, layer, m.bn_params(layer))
            elif layer.kind == RELU:
                np.maximum(current.data, 0, out=current.data)
            elif layer.kind == DROPOUT3D:
                pass  # identity at inference
            else:
                raise ShapeMismatch(f"unknown layer kind {layer.kind}")
            if validate and not np.all(np.isfinite(current.data)):
                raise ShapeMismatch(f"non-finite activation after layer {idx}")
    finally:
        budget.release(current.nbytes)
        budget.release(weights_bytes, activation=False)
    return current


def argmax_labels(scores: FeatureMap, spacing=(1.0, 1.0, 1.0),
                  affine: np.ndarray | None = None) -> Volume3D:
    """Per-voxel winning class; ties go to the lowest channel index."""
    if scores.channels < 1:
        raise ShapeMismatch("score map needs at least one channel")
    labels = np.argmax(scores.data, axis=0).astype(np.int32)
    data = np.ascontiguousarray(labels.T)  # back to (x, y, z)
    if affine is None:
        affine = identity_affine(spacing)
    return Volume3D(data, spacing, affine)
