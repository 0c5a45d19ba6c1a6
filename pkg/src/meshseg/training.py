"""Desk-scale training: data batching, losses, hand-derived backward passes.

Activations are (batch, channel, z, y, x) arrays.  Training runs in float32
on views into the model's weight blob, so SGD updates the blob in place; the
same forward/backward code accepts float64 copies for finite-difference
verification.  Dropout masks are drawn from rng_seed + step, making every
run reproducible.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from . import _kernels
from .errors import LabelOutOfRange, NonFiniteLoss, ShapeMismatch
from .model import BATCHNORM3D, CONV3D, DROPOUT3D, RELU, LayerSpec, ModelSpec
from .tiling import divide
from .volume import Volume3D

_REDUCE_AXES = (0, 2, 3, 4)  # batch + spatial, keeping the channel axis


@dataclass
class Batch:
    """Model inputs in [0,1] plus one-hot targets; both (B, C, Z, Y, X)."""

    inputs: np.ndarray
    targets_onehot: np.ndarray


@dataclass
class Hyperparams:
    learning_rate: float = 0.01
    momentum: float = 0.9
    dropout_p: Optional[float] = None  # None: use each layer's manifest value
    bn_momentum: float = 0.1


@dataclass
class TrainState:
    model: ModelSpec
    velocities: list[dict]
    step: int = 0
    rng_seed: int = 0
    hyper: Hyperparams = field(default_factory=Hyperparams)
    last_loss: float = math.nan


# --------------------------------------------------------------------------
# Parameters
# --------------------------------------------------------------------------

def extract_params(m: ModelSpec, dtype=np.float32) -> list[dict]:
    """Per-layer parameter arrays; float32 gives in-place views of the blob,
    any other dtype gives detached copies (for high-precision checks)."""
    params: list[dict] = []
    for layer in m.layers:
        if layer.kind == CONV3D:
            w, b = m.conv_weight(layer), m.conv_bias(layer)
            if dtype != np.float32:
                w, b = w.astype(dtype), b.astype(dtype)
            params.append({"weight": w, "bias": b})
        elif layer.kind == BATCHNORM3D:
            scale, shift, mean, var = m.bn_params(layer)
            if dtype != np.float32:
                scale, shift = scale.astype(dtype), shift.astype(dtype)
                mean, var = mean.astype(dtype), var.astype(dtype)
            params.append({"scale": scale, "shift": shift,
                           "running_mean": mean, "running_var": var})
        else:
            params.append({})
    return params


def zero_like_params(params: Sequence[dict]) -> list[dict]:
    return [{k: np.zeros_like(v) for k, v in p.items() if k in _LEARNABLE}
            for p in params]


_LEARNABLE = {"weight", "bias", "scale", "shift"}


# --------------------------------------------------------------------------
# Layer forward/backward
# --------------------------------------------------------------------------

def conv_forward(x: np.ndarray, layer: LayerSpec, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    B = x.shape[0]
    oz = layer.output_extent(x.shape[2], 2)
    oy = layer.output_extent(x.shape[3], 1)
    ox = layer.output_extent(x.shape[4], 0)
    if min(ox, oy, oz) < 1:
        raise ShapeMismatch(f"conv output extents ({ox},{oy},{oz})")
    out = np.empty((B, layer.out_channels, oz, oy, ox), dtype=x.dtype)
    dx, dy, dz = layer.dilation
    px, py, pz = layer.padding
    _kernels.conv3d_taps(x, w, b, dz, dy, dx, pz, py, px, out)
    return out


def conv_backward(x: np.ndarray, layer: LayerSpec, w: np.ndarray, gout: np.ndarray):
    """Returns (grad_input, grad_weight, grad_bias)."""
    dx, dy, dz = layer.dilation
    px, py, pz = layer.padding
    gin = np.zeros_like(x)
    _kernels.conv3d_grad_input(gout, w, dz, dy, dx, pz, py, px, gin)
    gw = np.zeros_like(w)
    gb = np.zeros(w.shape[0], dtype=w.dtype)
    _kernels.conv3d_grad_params(x, gout, dz, dy, dx, pz, py, px, gw, gb)
    return gin, gw, gb


def batchnorm_forward(x: np.ndarray, layer: LayerSpec, p: dict,
                      bn_momentum: float, update_running: bool):
    """Normalize with batch statistics (biased variance); returns (out, cache)."""
    mean = x.mean(axis=_REDUCE_AXES)
    var = ((x - mean[None, :, None, None, None]) ** 2).mean(axis=_REDUCE_AXES)
    inv = 1.0 / np.sqrt(var + np.asarray(layer.epsilon, dtype=x.dtype))
    xhat = (x - mean[None, :, None, None, None]) * inv[None, :, None, None, None]
    out = (p["scale"][None, :, None, None, None] * xhat
           + p["shift"][None, :, None, None, None])
    if update_running:
        m = np.asarray(bn_momentum, dtype=p["running_mean"].dtype)
        p["running_mean"][...] = (1 - m) * p["running_mean"] + m * mean.astype(p["running_mean"].dtype)
        p["running_var"][...] = (1 - m) * p["running_var"] + m * var.astype(p["running_var"].dtype)
    return out, (xhat, inv)


def batchnorm_backward(layer: LayerSpec, p: dict, cache, gout: np.ndarray):
    """Returns (grad_input, grad_scale, grad_shift)."""
    xhat, inv = cache
    n = gout.shape[0] * gout.shape[2] * gout.shape[3] * gout.shape[4]
    gshift = gout.sum(axis=_REDUCE_AXES)
    gscale = (gout * xhat).sum(axis=_REDUCE_AXES)
    gxhat = gout * p["scale"][None, :, None, None, None]
    mean_g = gxhat.mean(axis=_REDUCE_AXES)[None, :, None, None, None]
    mean_gx = (gxhat * xhat).mean(axis=_REDUCE_AXES)[None, :, None, None, None]
    gin = inv[None, :, None, None, None] * (gxhat - mean_g - xhat * mean_gx)
    return gin, gscale, gshift


def dropout_mask(rng: np.random.Generator, shape_bc: tuple[int, int],
                 p: float, dtype) -> np.ndarray:
    """Channelwise keep/drop factors: 0 with probability p, else 1/(1-p)."""
    keep = (rng.random(shape_bc) >= p).astype(dtype)
    return keep / np.asarray(1.0 - p, dtype=dtype)


# --------------------------------------------------------------------------
# Whole-network forward and backward
# --------------------------------------------------------------------------

def forward_train(layers: Sequence[LayerSpec], params: Sequence[dict], x: np.ndarray,
                  rng: Optional[np.random.Generator] = None,
                  dropout_override: Optional[float] = None,
                  bn_momentum: float = 0.1, update_running: bool = True):
    """Training-mode forward pass; returns (scores, per-layer caches)."""
    caches: list = []
    for layer, p in zip(layers, params):
        if layer.kind == CONV3D:
            caches.append(x)
            x = conv_forward(x, layer, p["weight"], p["bias"])
        elif layer.kind == BATCHNORM3D:
            x, cache = batchnorm_forward(x, layer, p, bn_momentum, update_running)
            caches.append(cache)
        elif layer.kind == RELU:
            mask = x > 0
            x = x * mask
            caches.append(mask)
        elif layer.kind == DROPOUT3D:
            drop_p = layer.dropout_p if dropout_override is None else dropout_override
            if drop_p == 0.0:
                caches.append(None)
            else:
                if rng is None:
                    raise ValueError("dropout_p > 0 requires an rng")
                factors = dropout_mask(rng, x.shape[:2], drop_p, x.dtype)
                x = x * factors[:, :, None, None, None]
                caches.append(factors)
        else:
            raise ShapeMismatch(f"unknown layer kind {layer.kind}")
    return x, caches


def backward_from_scores(layers, params, caches, gscores: np.ndarray) -> tuple[np.ndarray, list[dict]]:
    """Reverse-mode pass given d(loss)/d(scores); returns (grad_input, grads)."""
    grads: list[dict] = [{} for _ in layers]
    g = gscores
    for i in range(len(layers) - 1, -1, -1):
        layer, p, cache = layers[i], params[i], caches[i]
        if layer.kind == CONV3D:
            g, gw, gb = conv_backward(cache, layer, p["weight"], g)
            grads[i] = {"weight": gw, "bias": gb}
        elif layer.kind == BATCHNORM3D:
            g, gscale, gshift = batchnorm_backward(layer, p, cache, g)
            grads[i] = {"scale": gscale, "shift": gshift}
        elif layer.kind == RELU:
            g = g * cache
        elif layer.kind == DROPOUT3D:
            if cache is not None:
                g = g * cache[:, :, None, None, None]
    return g, grads


def softmax_ce(scores: np.ndarray, targets_onehot: np.ndarray):
    """Mean cross-entropy over batch and voxels, with its analytic gradient.

    Stabilized by max-subtraction; loss accumulates in float64.
    """
    if scores.shape != targets_onehot.shape:
        raise ShapeMismatch(f"scores {scores.shape} vs targets {targets_onehot.shape}")
    m = scores.max(axis=1, keepdims=True)
    shifted = scores - m
    logsum = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    logp = shifted - logsum
    n = scores.shape[0] * scores.shape[2] * scores.shape[3] * scores.shape[4]
    loss = -float(np.sum(targets_onehot * logp, dtype=np.float64)) / n
    p = np.exp(logp)
    grad = (p - targets_onehot) / np.asarray(n, dtype=scores.dtype)
    return loss, grad


def backward(m: ModelSpec, batch: Batch, rng_seed: int = 0, step: int = 0,
             dropout_override: Optional[float] = None, bn_momentum: float = 0.1,
             update_running: bool = True):
    """Full train-mode pass; returns (loss, per-layer gradient dicts)."""
    params = extract_params(m)
    rng = np.random.default_rng(rng_seed + step)
    scores, caches = forward_train(m.layers, params, batch.inputs, rng=rng,
                                   dropout_override=dropout_override,
                                   bn_momentum=bn_momentum,
                                   update_running=update_running)
    loss, gscores = softmax_ce(scores, batch.targets_onehot)
    _, grads = backward_from_scores(m.layers, params, caches, gscores)
    return loss, grads


# --------------------------------------------------------------------------
# Metrics
# --------------------------------------------------------------------------

def macro_dice(pred: Volume3D, truth: Volume3D, classes: int,
               ignore_background: bool = False) -> float:
    """Unweighted mean over classes of 2|X∩Y| / (|X|+|Y|); 1.0 when a class
    is absent from both volumes."""
    if pred.extents != truth.extents:
        raise ShapeMismatch(f"extents differ: {pred.extents} vs {truth.extents}")
    start = 1 if ignore_background else 0
    scores = []
    for c in range(start, classes):
        x = pred.data == c
        y = truth.data == c
        denom = int(x.sum()) + int(y.sum())
        if denom == 0:
            scores.append(1.0)
        else:
            scores.append(2.0 * int(np.logical_and(x, y).sum()) / denom)
    return float(np.mean(scores))


# --------------------------------------------------------------------------
# Batching
# --------------------------------------------------------------------------

def normalize_cube(values: np.ndarray) -> np.ndarray:
    """Min-max map to [0,1] (all zeros when the cube is constant)."""
    lo = float(values.min())
    hi = float(values.max())
    if hi == lo:
        return np.zeros_like(values, dtype=np.float32)
    return ((values - lo) / (hi - lo)).astype(np.float32)


def one_hot(labels: np.ndarray, classes: int) -> np.ndarray:
    """(classes, z, y, x) indicator planes from an integer (z, y, x) array."""
    out = np.zeros((classes,) + labels.shape, dtype=np.float32)
    for c in range(classes):
        out[c] = labels == c
    return out


def make_batches(volumes: Sequence[tuple[Volume3D, Volume3D]], cube: int,
                 batch_size: int, seed: int, classes: int) -> list[Batch]:
    """Cut image/label pairs into cube-sized subvolumes, normalize, one-hot,
    shuffle by seed, and emit fixed-size batches (last partial dropped).

    Boundary subcubes smaller than ``cube`` are skipped so every batch is
    rectangular.
    """
    cubes: list[tuple[np.ndarray, np.ndarray]] = []
    for image, label in volumes:
        if image.extents != label.extents:
            raise ShapeMismatch(
                f"image {image.extents} and label {label.extents} extents differ")
        lab = label.data
        if lab.min() < 0 or lab.max() > classes - 1:
            raise LabelOutOfRange(
                f"labels span [{lab.min()}, {lab.max()}], expected 0..{classes - 1}")
        if np.any(lab != np.rint(lab)):
            raise LabelOutOfRange("label volume has non-integer values")
        grid = divide(image.extents, cube, halo=0)
        for tile in grid.tiles:
            if tile.core_extents != (cube, cube, cube):
                continue
            sl = tuple(slice(o, o + e) for o, e in zip(tile.core_origin, tile.core_extents))
            img_cube = np.ascontiguousarray(image.data[sl].T)  # (z, y, x)
            lab_cube = np.ascontiguousarray(lab[sl].T).astype(np.int64)
            cubes.append((normalize_cube(img_cube), one_hot(lab_cube, classes)))

    order = np.random.default_rng(seed).permutation(len(cubes))
    batches: list[Batch] = []
    for start in range(0, len(order) - batch_size + 1, batch_size):
        chosen = [cubes[i] for i in order[start:start + batch_size]]
        batches.append(Batch(
            inputs=np.stack([c[0] for c in chosen])[:, None],
            targets_onehot=np.stack([c[1] for c in chosen]),
        ))
    return batches


# --------------------------------------------------------------------------
# Optimization
# --------------------------------------------------------------------------

def init_train_state(model: ModelSpec, rng_seed: int = 0,
                     hyper: Optional[Hyperparams] = None) -> TrainState:
    params = extract_params(model)
    return TrainState(model=model, velocities=zero_like_params(params),
                      rng_seed=rng_seed, hyper=hyper or Hyperparams())


def sgd_update(params: Sequence[dict], velocities: Sequence[dict],
               grads: Sequence[dict], lr: float, momentum: float) -> None:
    """In-place momentum update: v <- mu*v - lr*g; w <- w + v."""
    for p, v, g in zip(params, velocities, grads):
        for key in g:
            lr_t = np.asarray(lr, dtype=v[key].dtype)
            mu_t = np.asarray(momentum, dtype=v[key].dtype)
            v[key][...] = mu_t * v[key] - lr_t * g[key]
            p[key][...] += v[key]


def train_step(state: TrainState, batch: Batch) -> TrainState:
    """One SGD-with-momentum update over the batch's cross-entropy loss."""
    params = extract_params(state.model)
    rng = np.random.default_rng(state.rng_seed + state.step)
    scores, caches = forward_train(
        state.model.layers, params, batch.inputs, rng=rng,
        dropout_override=state.hyper.dropout_p,
        bn_momentum=state.hyper.bn_momentum, update_running=True)
    loss, gscores = softmax_ce(scores, batch.targets_onehot)
    if not math.isfinite(loss):
        raise NonFiniteLoss(f"loss is {loss} at step {state.step}")
    _, grads = backward_from_scores(state.model.layers, params, caches, gscores)
    sgd_update(params, state.velocities, grads,
               state.hyper.learning_rate, state.hyper.momentum)
    state.step += 1
    state.last_loss = loss
    return state


def fit(state: TrainState, batches: Sequence[Batch], steps: int,
        eval_every: int = 50,
        report: Optional[Callable[[int, float, float], None]] = None) -> TrainState:
    """Cycle through ``batches`` for ``steps`` updates; report (step, loss,
    batch macro-dice) every ``eval_every`` steps."""
    if not batches:
        raise ValueError("fit needs at least one batch")
    for i in range(steps):
        batch = batches[i % len(batches)]
        state = train_step(state, batch)
        if report is not None and (state.step % eval_every == 0 or i == steps - 1):
            dice = _batch_dice(state.model, batch)
            report(state.step, state.last_loss, dice)
    return state


def _batch_dice(model: ModelSpec, batch: Batch) -> float:
    """Macro dice of eval-mode predictions against the batch targets."""
    params = extract_params(model)
    x = batch.inputs
    for layer, p in zip(model.layers, params):
        if layer.kind == CONV3D:
            x = conv_forward(x, layer, p["weight"], p["bias"])
        elif layer.kind == BATCHNORM3D:
            inv = 1.0 / np.sqrt(p["running_var"] + np.float32(layer.epsilon))
            x = (x - p["running_mean"][None, :, None, None, None]) * inv[None, :, None, None, None]
            x = x * p["scale"][None, :, None, None, None] + p["shift"][None, :, None, None, None]
        elif layer.kind == RELU:
            x = np.maximum(x, 0)
    pred = np.argmax(x, axis=1)
    truth = np.argmax(batch.targets_onehot, axis=1)
    classes = batch.targets_onehot.shape[1]
    scores = []
    for b in range(pred.shape[0]):
        pv = Volume3D(np.ascontiguousarray(pred[b].T), (1, 1, 1), np.eye(4))
        tv = Volume3D(np.ascontiguousarray(truth[b].T), (1, 1, 1), np.eye(4))
        scores.append(macro_dice(pv, tv, classes))
    return float(np.mean(scores))
