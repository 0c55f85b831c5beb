"""Deterministic float64 network engine with explicit forward and backward passes.

Tensors are numpy arrays. Dense batches are ``(K, N)``, image batches
``(K, C, H, W)``. Dense weights are stored ``(out, in)`` so a layer computes
``A = T W^T + b``; conv weights are ``(out, in, kh, kw)`` and convolution is a
valid (unpadded) strided correlation.
"""
from __future__ import annotations

import math
from dataclasses import replace
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .errors import IncompatibleShapes, LabelOutOfRange, ShapeMismatch, TraceMismatch
from .models import (
    ForwardTrace,
    GradientRecord,
    LayerGradient,
    LayerKind,
    LayerParams,
    LayerSpec,
    Model,
)

_SEED_MASK = (1 << 64) - 1


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr = np.ascontiguousarray(arr, dtype=np.float64)
    arr.setflags(write=False)
    return arr


def _pooled_size(size: int, window: int, stride: int) -> int:
    return (size - window) // stride + 1


def layer_output_shape(spec: LayerSpec, shape: Tuple[int, ...]) -> Tuple[int, ...]:
    """Per-sample output shape of ``spec`` applied to per-sample ``shape``."""
    if spec.kind is LayerKind.DENSE:
        if shape != (spec.in_size,):
            raise IncompatibleShapes(f"dense layer expects input ({spec.in_size},), got {shape}")
        return (spec.out_size,)
    if spec.kind is LayerKind.CONV2D:
        if len(shape) != 3 or shape[0] != spec.in_channels:
            raise IncompatibleShapes(f"conv2d layer expects {spec.in_channels} input channels, got {shape}")
        _, h, w = shape
        if h < spec.kernel_h or w < spec.kernel_w or spec.stride < 1:
            raise IncompatibleShapes(f"conv2d kernel {spec.kernel_h}x{spec.kernel_w} does not fit input {shape}")
        return (
            spec.out_channels,
            _pooled_size(h, spec.kernel_h, spec.stride),
            _pooled_size(w, spec.kernel_w, spec.stride),
        )
    if spec.kind is LayerKind.MAXPOOL2D:
        if len(shape) != 3:
            raise IncompatibleShapes(f"maxpool2d expects (C, H, W) input, got {shape}")
        c, h, w = shape
        if h < spec.window or w < spec.window or spec.stride < 1 or spec.window < 1:
            raise IncompatibleShapes(f"maxpool2d window {spec.window} does not fit input {shape}")
        return (c, _pooled_size(h, spec.window, spec.stride), _pooled_size(w, spec.window, spec.stride))
    if spec.kind is LayerKind.RELU:
        return shape
    if spec.kind is LayerKind.FLATTEN:
        return (int(np.prod(shape)),)
    raise IncompatibleShapes(f"unknown layer kind {spec.kind!r}")


def infer_shapes(layers: Sequence[LayerSpec], input_shape: Tuple[int, ...]) -> List[Tuple[int, ...]]:
    shapes = [tuple(input_shape)]
    for i, spec in enumerate(layers):
        try:
            shapes.append(layer_output_shape(spec, shapes[-1]))
        except IncompatibleShapes as e:
            raise IncompatibleShapes(f"layer {i} ({spec.kind.value}): {e}") from None
    return shapes


def _glorot_limit(spec: LayerSpec) -> float:
    if spec.kind is LayerKind.DENSE:
        fan_in, fan_out = spec.in_size, spec.out_size
    else:
        area = spec.kernel_h * spec.kernel_w
        fan_in, fan_out = spec.in_channels * area, spec.out_channels * area
    return math.sqrt(6.0 / (fan_in + fan_out))


def build_model(spec: Sequence[LayerSpec], seed: int, input_shape: Optional[Sequence[int]] = None) -> Model:
    layers = tuple(spec)
    if not layers:
        raise IncompatibleShapes("model has no layers")
    if input_shape is None:
        if layers[0].kind is not LayerKind.DENSE:
            raise IncompatibleShapes("input_shape is required when the first layer is not dense")
        input_shape = (layers[0].in_size,)
    shapes = infer_shapes(layers, tuple(int(s) for s in input_shape))
    if len(shapes[-1]) != 1 or not layers[-1].parameterized:
        raise IncompatibleShapes(f"model must end with a dense layer producing logits, got output {shapes[-1]}")

    rng = np.random.default_rng(int(seed) & _SEED_MASK)
    params: List[LayerParams] = []
    for layer in layers:
        if not layer.parameterized:
            continue
        limit = _glorot_limit(layer)
        weight = rng.uniform(-limit, limit, size=layer.weight_shape())
        params.append(LayerParams(_frozen(weight), _frozen(np.zeros(layer.bias_shape()))))
    return Model(layers=layers, params=tuple(params), rng_seed=int(seed), input_shape=tuple(shapes[0]))


def with_params(model: Model, params: Sequence[LayerParams]) -> Model:
    if len(params) != len(model.params):
        raise ShapeMismatch(f"expected {len(model.params)} parameter layers, got {len(params)}")
    frozen = []
    for old, new in zip(model.params, params):
        if new.weight.shape != old.weight.shape or new.bias.shape != old.bias.shape:
            raise ShapeMismatch(
                f"parameter shape {new.weight.shape}/{new.bias.shape} does not match {old.weight.shape}/{old.bias.shape}"
            )
        frozen.append(LayerParams(_frozen(new.weight), _frozen(new.bias)))
    return replace(model, params=tuple(frozen))


def same_parameters(a: Model, b: Model) -> bool:
    if a is b:
        return True
    if a.layers != b.layers or len(a.params) != len(b.params):
        return False
    return all(
        np.array_equal(pa.weight, pb.weight) and np.array_equal(pa.bias, pb.bias)
        for pa, pb in zip(a.params, b.params)
    )


def softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def _window_view(x: np.ndarray, u: int, v: int, out_h: int, out_w: int, stride: int) -> np.ndarray:
    return x[:, :, u : u + stride * (out_h - 1) + 1 : stride, v : v + stride * (out_w - 1) + 1 : stride]


def _conv_forward(x: np.ndarray, weight: np.ndarray, bias: np.ndarray, stride: int) -> np.ndarray:
    k = x.shape[0]
    out_c, _, kh, kw = weight.shape
    out_h = _pooled_size(x.shape[2], kh, stride)
    out_w = _pooled_size(x.shape[3], kw, stride)
    out = np.zeros((k, out_c, out_h, out_w))
    for u in range(kh):
        for v in range(kw):
            patch = _window_view(x, u, v, out_h, out_w, stride)
            out += np.einsum("kchw,oc->kohw", patch, weight[:, :, u, v])
    out += bias[None, :, None, None]
    return out


def _conv_backward(
    delta: np.ndarray, x: np.ndarray, weight: np.ndarray, stride: int, need_input: bool
) -> Tuple[np.ndarray, np.ndarray, Optional[np.ndarray]]:
    _, _, kh, kw = weight.shape
    out_h, out_w = delta.shape[2], delta.shape[3]
    grad_w = np.zeros_like(weight)
    grad_x = np.zeros_like(x) if need_input else None
    for u in range(kh):
        for v in range(kw):
            patch = _window_view(x, u, v, out_h, out_w, stride)
            grad_w[:, :, u, v] = np.einsum("kohw,kchw->oc", delta, patch)
            if grad_x is not None:
                _window_view(grad_x, u, v, out_h, out_w, stride)[...] += np.einsum(
                    "kohw,oc->kchw", delta, weight[:, :, u, v]
                )
    grad_b = delta.sum(axis=(0, 2, 3))
    return grad_w, grad_b, grad_x


def _pool_forward(x: np.ndarray, window: int, stride: int) -> Tuple[np.ndarray, np.ndarray]:
    out_h = _pooled_size(x.shape[2], window, stride)
    out_w = _pooled_size(x.shape[3], window, stride)
    best = _window_view(x, 0, 0, out_h, out_w, stride).copy()
    argmax = np.zeros(best.shape, dtype=np.int64)
    for u in range(window):
        for v in range(window):
            if u == 0 and v == 0:
                continue
            cand = _window_view(x, u, v, out_h, out_w, stride)
            better = cand > best  # first maximum wins ties
            best = np.where(better, cand, best)
            argmax = np.where(better, u * window + v, argmax)
    return best, argmax


def _pool_backward(delta: np.ndarray, argmax: np.ndarray, input_shape: Tuple[int, ...], window: int, stride: int) -> np.ndarray:
    out_h, out_w = delta.shape[2], delta.shape[3]
    grad_x = np.zeros(input_shape)
    for u in range(window):
        for v in range(window):
            routed = np.where(argmax == u * window + v, delta, 0.0)
            _window_view(grad_x, u, v, out_h, out_w, stride)[...] += routed
    return grad_x


def forward(model: Model, batch: np.ndarray) -> ForwardTrace:
    x = np.asarray(batch, dtype=np.float64)
    if x.ndim != len(model.input_shape) + 1 or tuple(x.shape[1:]) != model.input_shape:
        raise ShapeMismatch(f"batch shape {x.shape} does not match model input (K, {', '.join(map(str, model.input_shape))})")
    if x.shape[0] < 1:
        raise ShapeMismatch("batch must contain at least one sample")

    activations = [x]
    relu_masks = {}
    pool_argmax = {}
    p = 0
    for i, spec in enumerate(model.layers):
        if spec.kind is LayerKind.DENSE:
            w = model.params[p]
            x = x @ w.weight.T + w.bias
            p += 1
        elif spec.kind is LayerKind.CONV2D:
            w = model.params[p]
            x = _conv_forward(x, w.weight, w.bias, spec.stride)
            p += 1
        elif spec.kind is LayerKind.MAXPOOL2D:
            x, pool_argmax[i] = _pool_forward(x, spec.window, spec.stride)
        elif spec.kind is LayerKind.RELU:
            mask = x > 0
            relu_masks[i] = mask
            x = np.where(mask, x, 0.0)
        elif spec.kind is LayerKind.FLATTEN:
            x = x.reshape(x.shape[0], -1)
        activations.append(x)
    return ForwardTrace(
        model=model,
        activations=activations,
        relu_masks=relu_masks,
        pool_argmax=pool_argmax,
        probs=softmax(x),
    )


def one_hot(labels: np.ndarray, num_classes: int, batch_size: int) -> np.ndarray:
    y = np.asarray(labels)
    if y.ndim == 2:
        if y.shape != (batch_size, num_classes):
            raise LabelOutOfRange(f"one-hot labels of shape {y.shape} do not match ({batch_size}, {num_classes})")
        return y.astype(np.float64)
    if y.shape != (batch_size,):
        raise ShapeMismatch(f"expected {batch_size} labels, got shape {y.shape}")
    if y.size and (y.min() < 0 or y.max() >= num_classes or not np.all(np.equal(np.mod(y, 1), 0))):
        raise LabelOutOfRange(f"class labels must be integers in [0, {num_classes})")
    out = np.zeros((batch_size, num_classes))
    out[np.arange(batch_size), y.astype(np.int64)] = 1.0
    return out


def loss_softmax_ce(trace: ForwardTrace, labels: np.ndarray) -> Tuple[float, np.ndarray]:
    """Mean softmax cross-entropy (nats) and the backward seed ``(Y_hat - Y) / K``."""
    logits = trace.logits
    k, d_y = logits.shape
    y = one_hot(labels, d_y, k)
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_probs = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    loss = float(-(y * log_probs).sum(axis=1).sum() / k)
    seed = (trace.probs - y) / k
    return max(loss, 0.0), seed


def backward(model: Model, trace: ForwardTrace, seed: np.ndarray, *, seed_kind: str = "loss", round_index: int = 0) -> GradientRecord:
    """Backpropagate ``seed`` (taken as dL/dA_L) through the frozen trace.

    The map seed -> GradientRecord is linear: ReLU masks and pool indices come
    from the trace.
    """
    if not same_parameters(trace.model, model):
        raise TraceMismatch("trace was produced by a different model")
    delta = np.asarray(seed, dtype=np.float64)
    if delta.shape != trace.logits.shape:
        raise TraceMismatch(f"seed shape {delta.shape} does not match output shape {trace.logits.shape}")

    grads: List[Optional[LayerGradient]] = [None] * len(model.params)
    p = len(model.params)
    for i in range(len(model.layers) - 1, -1, -1):
        spec = model.layers[i]
        x_in = trace.activations[i]
        need_input = i > 0
        if spec.kind is LayerKind.DENSE:
            p -= 1
            w = model.params[p]
            grads[p] = LayerGradient(delta.T @ x_in, delta.sum(axis=0))
            if need_input:
                delta = delta @ w.weight
        elif spec.kind is LayerKind.CONV2D:
            p -= 1
            w = model.params[p]
            gw, gb, delta = _conv_backward(delta, x_in, w.weight, spec.stride, need_input)
            grads[p] = LayerGradient(gw, gb)
        elif spec.kind is LayerKind.MAXPOOL2D:
            delta = _pool_backward(delta, trace.pool_argmax[i], x_in.shape, spec.window, spec.stride)
        elif spec.kind is LayerKind.RELU:
            delta = np.where(trace.relu_masks[i], delta, 0.0)
        elif spec.kind is LayerKind.FLATTEN:
            delta = delta.reshape(x_in.shape)
    return GradientRecord(
        layers=tuple(g for g in grads if g is not None),
        batch_size=trace.batch_size,
        round=round_index,
        seed_kind=seed_kind,
    )


def loss_gradients(model: Model, batch: np.ndarray, labels: np.ndarray, *, round_index: int = 0) -> Tuple[float, GradientRecord]:
    trace = forward(model, batch)
    loss, seed = loss_softmax_ce(trace, labels)
    return loss, backward(model, trace, seed, round_index=round_index)


def sgd_step(model: Model, grads: GradientRecord, lr: float) -> Model:
    """theta' = theta - lr * G, returned as a new Model."""
    if len(grads.layers) != len(model.params):
        raise ShapeMismatch(f"gradient record has {len(grads.layers)} layers, model has {len(model.params)}")
    new_params = []
    for w, g in zip(model.params, grads.layers):
        if g.weight.shape != w.weight.shape or g.bias.shape != w.bias.shape:
            raise ShapeMismatch(f"gradient shape {g.weight.shape} does not match parameter shape {w.weight.shape}")
        new_params.append(LayerParams(w.weight - lr * g.weight, w.bias - lr * g.bias))
    return with_params(model, new_params)


def predict_proba(model: Model, inputs: np.ndarray) -> np.ndarray:
    return forward(model, inputs).probs
