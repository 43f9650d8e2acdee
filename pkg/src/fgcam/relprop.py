"""Relevance propagation rules and the fine-grained explanation pipeline.

Resolution improvement walks relevance from the last conv layer back
toward the input, one layer at a time.  Through a layer with inputs
``x_i`` and connection weights ``w_ij``, the z-plus rule redistributes
the relevance ``I_j`` of each output proportionally to the positive
contributions:

    I_ij = w+_ij x_i / (sum_i' w+_i'j x_i') * I_j ;   I_i = sum_j I_ij

At the input layer the z-beta rule replaces it, accounting for the
bounded pixel domain ``[b_i, h_i]``:

    I_ij = (w_ij x_i - w+_ij b_i - w-_ij h_i) / (sum_i' ...) * I_j

Both rules are evaluated with forward/adjoint kernel pairs instead of
materializing ``w_ij``: numerator terms become an elementwise product of
the input with the adjoint of the output-side sensitivities
``s_j = I_j / z_j``.  Denominators are stabilized as ``z_j + eps`` and
outputs with ``z_j <= 0`` donate nothing.
"""

from dataclasses import dataclass

import numpy as np

from . import tensor_core as tc
from .cam_backends import (Explanation, RelevanceStack, explanation_components,
                           gradcam_weights, scorecam_weights)
from .denoise import denoise_components
from .errors import ShapeError, UnsupportedStructureError
from .model_graph import ActivationTrace, LayerSpec, ModelGraph

EPSILON = 1e-9


@dataclass
class InputDomain:
    """Per-channel pixel-value bounds of the preprocessed input."""

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        if not (self.lower < self.upper).all():
            raise ShapeError("input domain requires lower < upper per channel")


def domain_from_model(model: ModelGraph) -> InputDomain:
    """Domain of normalized pixels when raw values live in [0, 1]."""
    return InputDomain(lower=(0.0 - model.mean) / model.std,
                       upper=(1.0 - model.mean) / model.std)


def _sensitivities(z: np.ndarray, relevance: np.ndarray) -> np.ndarray:
    z64 = z.astype(np.float64)
    s = np.where(z64 > 0.0, relevance.astype(np.float64) / (z64 + EPSILON), 0.0)
    return s.astype(np.float32)


def zplus_layer(layer: LayerSpec, input_activation: np.ndarray,
                relevance_out: RelevanceStack) -> RelevanceStack:
    """Redistribute relevance through conv/linear/avgpool/flatten by the
    z-plus rule (bias excluded; avgpool acts as uniform positive weights)."""
    x = input_activation
    r = relevance_out.values
    if layer.kind == "flatten":
        values = r.reshape(x.shape)
    elif layer.kind == "conv2d":
        if x.shape[0] != layer.weights.shape[1]:
            raise ShapeError(f"{layer.name}: activation {x.shape} does not "
                             f"match weights {layer.weights.shape}")
        wp = tc.relu(layer.weights)
        zero_bias = np.zeros(layer.weights.shape[0], dtype=np.float32)
        z = tc.conv2d(x, wp, zero_bias, layer.stride, layer.padding)
        s = _sensitivities(z, r)
        values = x * tc.conv2d_input_vjp(s, wp, x.shape, layer.stride, layer.padding)
    elif layer.kind == "linear":
        if x.shape[0] != layer.weights.shape[1]:
            raise ShapeError(f"{layer.name}: activation {x.shape} does not "
                             f"match weights {layer.weights.shape}")
        wp = tc.relu(layer.weights).astype(np.float64)
        z = wp @ x.astype(np.float64)
        s = _sensitivities(z, r).astype(np.float64)
        values = (x.astype(np.float64) * (wp.T @ s)).astype(np.float32)
    elif layer.kind == "avgpool2d":
        z = tc.avgpool2d(x, layer.kernel, layer.stride)
        s = _sensitivities(z, r)
        values = x * tc.avgpool_vjp(s, layer.kernel, layer.stride, x.shape)
    else:
        raise UnsupportedStructureError(
            f"z-plus rule does not apply to layer kind {layer.kind!r}")
    return RelevanceStack(layer=f"{layer.name}::input",
                          values=values.astype(np.float32),
                          signed=relevance_out.signed)


def maxpool_route(indices: np.ndarray, relevance_out: RelevanceStack,
                  input_shape) -> RelevanceStack:
    """Winner-take-all routing: each output cell's relevance lands on its
    recorded argmax position; overlapping windows accumulate."""
    values = tc.maxpool_scatter(relevance_out.values, indices, input_shape)
    return RelevanceStack(layer="maxpool::input", values=values,
                          signed=relevance_out.signed)


def zbeta_input(layer: LayerSpec, input_image: np.ndarray, domain: InputDomain,
                relevance_out: RelevanceStack) -> RelevanceStack:
    """Input-layer rule for the first conv, bounded pixel domain [b, h]."""
    if layer.kind != "conv2d":
        raise UnsupportedStructureError("z-beta rule applies to a conv2d input layer")
    x = input_image
    c = x.shape[0]
    b = np.broadcast_to(domain.lower.astype(np.float32)[:c, None, None], x.shape)
    h = np.broadcast_to(domain.upper.astype(np.float32)[:c, None, None], x.shape)
    b = np.ascontiguousarray(b)
    h = np.ascontiguousarray(h)
    w = layer.weights
    wp = tc.relu(w)
    wn = (w - wp).astype(np.float32)
    zero_bias = np.zeros(w.shape[0], dtype=np.float32)

    def fwd(img, wgt):
        return tc.conv2d(img, wgt, zero_bias, layer.stride, layer.padding)

    def back(s, wgt):
        return tc.conv2d_input_vjp(s, wgt, x.shape, layer.stride, layer.padding)

    z = (fwd(x, w).astype(np.float64) - fwd(b, wp).astype(np.float64)
         - fwd(h, wn).astype(np.float64)).astype(np.float32)
    s = _sensitivities(z, relevance_out.values)
    values = x * back(s, w) - b * back(s, wp) - h * back(s, wn)
    return RelevanceStack(layer="input", values=values.astype(np.float32),
                          signed=True)


def _propagate_through(layer: LayerSpec, trace: ActivationTrace, index: int,
                       stack: RelevanceStack) -> RelevanceStack:
    x_in = trace.input_of_index(index)
    if layer.kind == "relu":
        # z-plus at the layer above already sent nothing to dead units
        return RelevanceStack(layer=layer.name, values=stack.values,
                              signed=stack.signed)
    if layer.kind == "maxpool2d":
        return maxpool_route(trace.argmax[layer.name], stack, x_in.shape)
    return zplus_layer(layer, x_in, stack)


def improve_resolution(model: ModelGraph, trace: ActivationTrace,
                       components: RelevanceStack, target_layer: str,
                       domain: InputDomain | None = None) -> RelevanceStack:
    """Walk components from the last conv layer back to ``target_layer``
    (or "input"), raising resolution while filtering non-contributors."""
    idx_l = model.last_conv_index()
    if components.layer != model.layers[idx_l].name:
        raise UnsupportedStructureError(
            f"components sit at {components.layer!r}, expected the last conv "
            f"{model.layers[idx_l].name!r}")
    if target_layer == "input":
        stop = -1
        if model.layers[0].kind != "conv2d":
            raise UnsupportedStructureError(
                "input-layer explanations need a conv2d first layer")
        if domain is None:
            domain = domain_from_model(model)
    else:
        stop = model.layer_index(target_layer)
        if stop > idx_l:
            raise UnsupportedStructureError(
                f"target {target_layer!r} comes after the last conv layer")

    stack = components
    for i in range(idx_l, stop, -1):
        layer = model.layers[i]
        if i == 0 and target_layer == "input":
            stack = zbeta_input(layer, trace.input_of_index(0), domain, stack)
        else:
            stack = _propagate_through(layer, trace, i, stack)
    return RelevanceStack(layer=target_layer, values=stack.values,
                          signed=stack.signed or components.signed)


def _finalize(values: np.ndarray, layer: str, signed: bool) -> Explanation:
    summed = values.astype(np.float64).sum(axis=0).astype(np.float32)
    if not signed:
        summed = tc.relu(summed)
    return Explanation(layer=layer, map=summed, signed=signed)


def fg_cam_explain(model: ModelGraph, trace: ActivationTrace,
                   input_image: np.ndarray, class_index: int, backend: str,
                   target_layer: str, denoise: bool = False,
                   signed: bool = False) -> Explanation:
    """Full fine-grained pipeline: CAM components at the last conv layer,
    optional low-rank denoising, resolution improvement to the target
    layer, then channel summation (ReLU skipped in signed mode)."""
    if backend == "grad":
        weights = gradcam_weights(model, trace, class_index)
    elif backend == "score":
        weights = scorecam_weights(model, trace, input_image, class_index)
    else:
        raise ValueError(f"unknown backend {backend!r}, expected 'grad' or 'score'")
    components = explanation_components(weights, trace, model.last_conv_name())
    if denoise:
        components = denoise_components(components)
    stack = improve_resolution(model, trace, components, target_layer,
                               domain_from_model(model))
    return _finalize(stack.values, target_layer, signed)


def lrp_explain(model: ModelGraph, trace: ActivationTrace, class_index: int,
                signed: bool = False) -> Explanation:
    """Baseline relevance propagation from the output layer to the input.

    The output layer is initialized with the class logit (non-target
    classes zeroed), hidden layers use the z-plus rule, the input conv
    uses z-beta, and the input channels are summed into one map.
    """
    if model.layers[0].kind != "conv2d":
        raise UnsupportedStructureError(
            "input-layer explanations need a conv2d first layer")
    init = np.zeros(model.class_count, dtype=np.float32)
    init[class_index] = trace.logits[class_index]
    stack = RelevanceStack(layer=model.layers[-1].name, values=init, signed=True)
    domain = domain_from_model(model)
    for i in range(len(model.layers) - 1, -1, -1):
        layer = model.layers[i]
        if i == 0:
            stack = zbeta_input(layer, trace.input_of_index(0), domain, stack)
        else:
            stack = _propagate_through(layer, trace, i, stack)
    return _finalize(stack.values, "input", signed)
