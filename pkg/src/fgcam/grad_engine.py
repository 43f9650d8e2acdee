"""Reverse-mode gradient of one class logit w.r.t. any traced activation."""

from dataclasses import dataclass

import numpy as np

from . import tensor_core as tc
from .errors import UnknownLayerError
from .model_graph import ActivationTrace, ModelGraph


@dataclass
class GradientRequest:
    class_index: int
    target_layer: str
    trace: ActivationTrace


def _layer_vjp(layer, g: np.ndarray, x_in: np.ndarray, x_out: np.ndarray,
               trace: ActivationTrace) -> np.ndarray:
    kind = layer.kind
    if kind == "linear":
        return (layer.weights.astype(np.float64).T @ g.astype(np.float64)) \
            .astype(np.float32)
    if kind == "conv2d":
        return tc.conv2d_input_vjp(g, layer.weights, x_in.shape,
                                   layer.stride, layer.padding)
    if kind == "relu":
        # subgradient at 0 is taken as 0, so a zero post-activation kills it
        return (g * (x_out > 0)).astype(np.float32)
    if kind == "maxpool2d":
        return tc.maxpool_scatter(g, trace.argmax[layer.name], x_in.shape)
    if kind == "avgpool2d":
        return tc.avgpool_vjp(g, layer.kernel, layer.stride, x_in.shape)
    if kind == "flatten":
        return g.reshape(x_in.shape)
    raise UnknownLayerError(f"no gradient rule for layer kind {kind!r}")


def backward_class_gradient(model: ModelGraph, request: GradientRequest) -> np.ndarray:
    """d(logit[class]) / d(output of target layer), via per-layer VJPs."""
    trace = request.trace
    if not 0 <= request.class_index < model.class_count:
        raise UnknownLayerError(
            f"class index {request.class_index} out of range "
            f"for {model.class_count} classes")
    try:
        target = model.layer_index(request.target_layer)
    except KeyError:
        raise UnknownLayerError(
            f"layer {request.target_layer!r} not in model") from None

    g = np.zeros(model.class_count, dtype=np.float32)
    g[request.class_index] = 1.0
    for i in range(len(model.layers) - 1, target, -1):
        layer = model.layers[i]
        g = _layer_vjp(layer, g, trace.input_of_index(i), trace.outputs[i], trace)
    return g
