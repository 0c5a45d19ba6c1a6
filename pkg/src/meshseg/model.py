"""Declarative model description and portable weight storage.

A model is a JSON manifest (layer stack, labels, offsets, checksum) plus a
flat little-endian float32 weight blob.  Conv weights are stored
[out][in][kz][ky][kx]; each batchnorm layer stores scale, shift,
running_mean, running_var consecutively.  See docs/model_format.md for the
frozen field names.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence, Union

import numpy as np

from .errors import (
    BlobSizeMismatch,
    ChannelMismatch,
    OffsetOutOfRange,
    SchemaError,
)

FLOAT_SIZE = 4
DEFAULT_DROPOUT_P = 0.1
DEFAULT_BN_EPSILON = 1e-5

CONV3D = "conv3d"
BATCHNORM3D = "batchnorm3d"
RELU = "relu"
DROPOUT3D = "dropout3d"
_KINDS = (CONV3D, BATCHNORM3D, RELU, DROPOUT3D)


@dataclass
class LayerSpec:
    kind: str
    in_channels: int
    out_channels: int
    kernel: tuple[int, int, int] = (1, 1, 1)
    dilation: tuple[int, int, int] = (1, 1, 1)
    padding: tuple[int, int, int] = (0, 0, 0)
    dropout_p: float = DEFAULT_DROPOUT_P
    epsilon: float = DEFAULT_BN_EPSILON
    # byte offsets into the weight blob; -1 = assign canonical packing at load
    weight_offset: int = -1
    bias_offset: int = -1
    bn_param_offset: int = -1

    def weight_count(self) -> int:
        if self.kind != CONV3D:
            return 0
        kx, ky, kz = self.kernel
        return self.in_channels * self.out_channels * kx * ky * kz

    def output_extent(self, extent: int, axis: int) -> int:
        """Spatial shape rule: n + 2p - d*(k-1) (stride fixed at 1)."""
        if self.kind != CONV3D:
            return extent
        return extent + 2 * self.padding[axis] - self.dilation[axis] * (self.kernel[axis] - 1)


@dataclass
class ModelSpec:
    name: str
    labels: list[str]
    layers: list[LayerSpec]
    weights: np.ndarray  # flat float32 view of the blob
    dropout_default: float = DEFAULT_DROPOUT_P

    def conv_layers(self) -> list[LayerSpec]:
        return [l for l in self.layers if l.kind == CONV3D]

    # --- parameter views (share memory with the blob) ---

    def conv_weight(self, layer: LayerSpec) -> np.ndarray:
        kx, ky, kz = layer.kernel
        n = layer.weight_count()
        o = layer.weight_offset // FLOAT_SIZE
        return self.weights[o:o + n].reshape(layer.out_channels, layer.in_channels, kz, ky, kx)

    def conv_bias(self, layer: LayerSpec) -> np.ndarray:
        o = layer.bias_offset // FLOAT_SIZE
        return self.weights[o:o + layer.out_channels]

    def bn_params(self, layer: LayerSpec):
        """(scale, shift, running_mean, running_var), each out_channels long."""
        c = layer.out_channels
        o = layer.bn_param_offset // FLOAT_SIZE
        return (self.weights[o:o + c], self.weights[o + c:o + 2 * c],
                self.weights[o + 2 * c:o + 3 * c], self.weights[o + 3 * c:o + 4 * c])


def count_parameters(m: ModelSpec) -> int:
    """Learnable parameters: conv weights+biases and batchnorm scale+shift.

    Batchnorm running statistics live in the blob but are not learnable and
    are not counted.
    """
    total = 0
    for layer in m.layers:
        if layer.kind == CONV3D:
            total += layer.weight_count() + layer.out_channels
        elif layer.kind == BATCHNORM3D:
            total += 2 * layer.out_channels
    return total


def receptive_field(m: ModelSpec) -> tuple[int, int, int]:
    """Per axis: 1 + sum over conv layers of dilation*(kernel-1)."""
    rf = [1, 1, 1]
    for layer in m.conv_layers():
        for a in range(3):
            rf[a] += layer.dilation[a] * (layer.kernel[a] - 1)
    return tuple(rf)  # type: ignore[return-value]


def exact_halo(m: ModelSpec) -> int:
    """Halo width that makes tiled inference match full-volume inference."""
    return (max(receptive_field(m)) - 1) // 2


def blob_float_count(layers: Sequence[LayerSpec]) -> int:
    n = 0
    for layer in layers:
        if layer.kind == CONV3D:
            n += layer.weight_count() + layer.out_channels
        elif layer.kind == BATCHNORM3D:
            n += 4 * layer.out_channels
    return n


# --------------------------------------------------------------------------
# Manifest parsing
# --------------------------------------------------------------------------

def _triple(value, name: str) -> tuple[int, int, int]:
    if isinstance(value, int):
        return (value, value, value)
    if isinstance(value, (list, tuple)) and len(value) == 3 and all(
            isinstance(v, int) for v in value):
        return tuple(value)  # type: ignore[return-value]
    raise SchemaError(f"layer field '{name}' must be an int or a 3-list, got {value!r}")


def _parse_layer(entry: dict, index: int, prev_channels: int,
                 dropout_default: float) -> LayerSpec:
    if not isinstance(entry, dict) or "kind" not in entry:
        raise SchemaError(f"layer {index}: expected an object with a 'kind'")
    kind = entry["kind"]
    if kind not in _KINDS:
        raise SchemaError(f"layer {index}: unknown kind {kind!r}")

    if kind == CONV3D:
        try:
            cin, cout = int(entry["in"]), int(entry["out"])
        except KeyError as e:
            raise SchemaError(f"layer {index}: conv3d needs 'in' and 'out'") from e
        if cin < 1 or cout < 1:
            raise SchemaError(f"layer {index}: channels must be positive")
        if cin != prev_channels:
            raise ChannelMismatch(
                f"layer {index}: in={cin} but previous layer emits {prev_channels}")
        kernel = _triple(entry.get("kernel", 3), "kernel")
        dilation = _triple(entry.get("dilation", 1), "dilation")
        padding = _triple(entry.get("padding", 0), "padding")
        offsets = entry.get("offsets", {})
        return LayerSpec(
            kind=CONV3D, in_channels=cin, out_channels=cout,
            kernel=kernel, dilation=dilation, padding=padding,
            weight_offset=int(offsets.get("weight", -1)),
            bias_offset=int(offsets.get("bias", -1)),
        )

    # channel-preserving layers
    channels = int(entry.get("out", entry.get("in", prev_channels)))
    if channels != prev_channels:
        raise ChannelMismatch(
            f"layer {index}: channels={channels} but previous layer emits {prev_channels}")
    spec = LayerSpec(kind=kind, in_channels=channels, out_channels=channels)
    if kind == BATCHNORM3D:
        spec.epsilon = float(entry.get("epsilon", DEFAULT_BN_EPSILON))
        spec.bn_param_offset = int(entry.get("offsets", {}).get("params", -1))
    elif kind == DROPOUT3D:
        spec.dropout_p = float(entry.get("dropout_p", dropout_default))
        if not 0.0 <= spec.dropout_p < 1.0:
            raise SchemaError(f"layer {index}: dropout_p must be in [0, 1)")
    return spec


def _assign_missing_offsets(layers: list[LayerSpec]):
    """Canonical packing order when a manifest omits offsets."""
    cursor = 0
    for layer in layers:
        if layer.kind == CONV3D:
            if layer.weight_offset < 0:
                layer.weight_offset = cursor
            cursor = layer.weight_offset + layer.weight_count() * FLOAT_SIZE
            if layer.bias_offset < 0:
                layer.bias_offset = cursor
            cursor = layer.bias_offset + layer.out_channels * FLOAT_SIZE
        elif layer.kind == BATCHNORM3D:
            if layer.bn_param_offset < 0:
                layer.bn_param_offset = cursor
            cursor = layer.bn_param_offset + 4 * layer.out_channels * FLOAT_SIZE


def _validate_offsets(layers: Sequence[LayerSpec], blob_bytes: int):
    taken: list[tuple[int, int, int]] = []
    for i, layer in enumerate(layers):
        spans = []
        if layer.kind == CONV3D:
            spans = [(layer.weight_offset, layer.weight_count() * FLOAT_SIZE),
                     (layer.bias_offset, layer.out_channels * FLOAT_SIZE)]
        elif layer.kind == BATCHNORM3D:
            spans = [(layer.bn_param_offset, 4 * layer.out_channels * FLOAT_SIZE)]
        for offset, size in spans:
            if offset < 0 or offset % FLOAT_SIZE != 0 or offset + size > blob_bytes:
                raise OffsetOutOfRange(
                    f"layer {i}: span [{offset}, {offset + size}) outside blob of {blob_bytes} bytes")
            taken.append((offset, offset + size, i))
    taken.sort()
    for (_, prev_end, prev_i), (start, _, i) in zip(taken, taken[1:]):
        if start < prev_end:
            raise OffsetOutOfRange(
                f"layers {prev_i} and {i} have overlapping parameter spans")


def _validate_shapes(layers: Sequence[LayerSpec]):
    """Every spatial extent must stay positive when run from a 256^3 input."""
    extent = [256, 256, 256]
    for i, layer in enumerate(layers):
        for a in range(3):
            extent[a] = layer.output_extent(extent[a], a)
            if extent[a] < 1:
                raise SchemaError(
                    f"layer {i}: output extent {extent[a]} on axis {a} (256-input chain)")


def load_model(manifest: Union[bytes, str], weights: bytes,
               verify_checksum: bool = True) -> ModelSpec:
    """Parse, validate and bind a manifest to its weight blob.

    All invariants are checked eagerly, so a loaded model runs the full
    engine without shape errors.
    """
    try:
        doc = json.loads(manifest)
    except json.JSONDecodeError as e:
        raise SchemaError(f"manifest is not valid JSON: {e}") from e
    if not isinstance(doc, dict):
        raise SchemaError("manifest root must be an object")
    for field_name in ("name", "labels", "layers"):
        if field_name not in doc:
            raise SchemaError(f"manifest missing required field '{field_name}'")
    labels = doc["labels"]
    if (not isinstance(labels, list) or len(labels) < 1
            or not all(isinstance(l, str) for l in labels)):
        raise SchemaError("'labels' must be a non-empty list of strings")
    if not isinstance(doc["layers"], list) or not doc["layers"]:
        raise SchemaError("'layers' must be a non-empty list")

    if verify_checksum and "weights_checksum" in doc:
        digest = hashlib.sha256(weights).hexdigest()
        if digest != doc["weights_checksum"]:
            raise SchemaError(
                f"weights checksum mismatch: blob {digest}, manifest {doc['weights_checksum']}")

    dropout_default = float(doc.get("dropout_p", DEFAULT_DROPOUT_P))
    layers: list[LayerSpec] = []
    prev_channels = 1
    for i, entry in enumerate(doc["layers"]):
        layer = _parse_layer(entry, i, prev_channels, dropout_default)
        prev_channels = layer.out_channels
        layers.append(layer)

    convs = [l for l in layers if l.kind == CONV3D]
    if not convs:
        raise SchemaError("model has no conv3d layer")
    if convs[0].in_channels != 1:
        raise ChannelMismatch(f"first conv must take 1 channel, has {convs[0].in_channels}")
    if convs[-1].out_channels != len(labels):
        raise ChannelMismatch(
            f"last conv emits {convs[-1].out_channels} channels for {len(labels)} labels")

    if len(weights) % FLOAT_SIZE != 0:
        raise BlobSizeMismatch(f"blob length {len(weights)} is not a multiple of 4")
    expected = blob_float_count(layers) * FLOAT_SIZE
    if len(weights) != expected:
        raise BlobSizeMismatch(f"blob is {len(weights)} bytes, layers need {expected}")

    _assign_missing_offsets(layers)
    _validate_offsets(layers, len(weights))
    _validate_shapes(layers)

    blob = np.frombuffer(bytearray(weights), dtype="<f4").copy()
    return ModelSpec(name=str(doc["name"]), labels=list(labels), layers=layers,
                     weights=blob, dropout_default=dropout_default)


def load_model_dir(path: Union[str, Path]) -> ModelSpec:
    """Load manifest.json + the weights file it names from a directory."""
    path = Path(path)
    manifest_path = path / "manifest.json"
    if not manifest_path.exists():
        raise SchemaError(f"no manifest.json in {path}")
    manifest = manifest_path.read_bytes()
    doc = json.loads(manifest)
    weights_file = doc.get("weights_file", "weights.bin")
    weights = (path / weights_file).read_bytes()
    return load_model(manifest, weights)


def manifest_dict(m: ModelSpec) -> dict:
    """Manifest document for a ModelSpec (checksum included)."""
    layers = []
    for layer in m.layers:
        if layer.kind == CONV3D:
            layers.append({
                "kind": CONV3D, "in": layer.in_channels, "out": layer.out_channels,
                "kernel": list(layer.kernel), "dilation": list(layer.dilation),
                "padding": list(layer.padding),
                "offsets": {"weight": layer.weight_offset, "bias": layer.bias_offset},
            })
        elif layer.kind == BATCHNORM3D:
            layers.append({
                "kind": BATCHNORM3D, "out": layer.out_channels, "epsilon": layer.epsilon,
                "offsets": {"params": layer.bn_param_offset},
            })
        elif layer.kind == DROPOUT3D:
            layers.append({"kind": DROPOUT3D, "out": layer.out_channels,
                           "dropout_p": layer.dropout_p})
        else:
            layers.append({"kind": layer.kind, "out": layer.out_channels})
    blob = m.weights.astype("<f4").tobytes()
    return {
        "name": m.name,
        "labels": list(m.labels),
        "weights_file": "weights.bin",
        "weights_checksum": hashlib.sha256(blob).hexdigest(),
        "layers": layers,
    }


def save_model_dir(m: ModelSpec, path: Union[str, Path]) -> None:
    """Write manifest.json + weights.bin; round-trips through load_model_dir."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    (path / "weights.bin").write_bytes(m.weights.astype("<f4").tobytes())
    (path / "manifest.json").write_text(json.dumps(manifest_dict(m), indent=2) + "\n")


# --------------------------------------------------------------------------
# Architecture builders
# --------------------------------------------------------------------------

def meshnet_layers(dilations: Sequence[int], channels: int, classes: int,
                   dropout_p: float = DEFAULT_DROPOUT_P) -> list[LayerSpec]:
    """Dilated conv blocks [conv3x3, bn, relu, dropout] + a final 1^3 conv.

    ``dilations`` gives the per-block dilation; padding equals dilation so
    every block preserves spatial extents.
    """
    layers: list[LayerSpec] = []
    cin = 1
    for d in dilations:
        layers.append(LayerSpec(CONV3D, cin, channels, kernel=(3, 3, 3),
                                dilation=(d, d, d), padding=(d, d, d)))
        layers.append(LayerSpec(BATCHNORM3D, channels, channels))
        layers.append(LayerSpec(RELU, channels, channels))
        layers.append(LayerSpec(DROPOUT3D, channels, channels, dropout_p=dropout_p))
        cin = channels
    layers.append(LayerSpec(CONV3D, channels, classes, kernel=(1, 1, 1),
                            dilation=(1, 1, 1), padding=(0, 0, 0)))
    return layers


GWM_DILATIONS = (1, 2, 4, 8, 16, 8, 4, 2, 1)
GWM_LABELS = ["background", "gray_matter", "white_matter"]


def init_model(name: str, layers: list[LayerSpec], labels: list[str],
               seed: int = 0) -> ModelSpec:
    """Seeded He-normal conv init; batchnorm starts as the identity map."""
    _assign_missing_offsets(layers)
    blob = np.zeros(blob_float_count(layers), dtype=np.float32)
    spec = ModelSpec(name=name, labels=labels, layers=layers, weights=blob)
    rng = np.random.default_rng(seed)
    for layer in layers:
        if layer.kind == CONV3D:
            w = spec.conv_weight(layer)
            fan_in = layer.in_channels * np.prod(layer.kernel)
            w[...] = rng.normal(0.0, math.sqrt(2.0 / fan_in), size=w.shape)
            spec.conv_bias(layer)[...] = 0.0
        elif layer.kind == BATCHNORM3D:
            scale, shift, mean, var = spec.bn_params(layer)
            scale[...] = 1.0
            shift[...] = 0.0
            mean[...] = 0.0
            var[...] = 1.0
    return spec
