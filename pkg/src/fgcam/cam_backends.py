"""CAM weight computation and explanation components.

A CAM-style explanation of class ``c`` at layer ``l`` is
``ReLU(sum_k w_k * A_l^k)`` where ``A_l^k`` is the k-th feature map of
the layer.  The backends here differ only in how they produce the
weights ``w``: Grad-CAM averages the class-logit gradient spatially,
Score-CAM scores each channel by forwarding a masked copy of the input,
and Layer-CAM replaces the global weight with the positive pixel-level
gradient.
"""

from dataclasses import dataclass

import numpy as np

from . import tensor_core as tc
from .errors import ShapeError
from .grad_engine import GradientRequest, backward_class_gradient
from .model_graph import ActivationTrace, ModelGraph, forward_logits


@dataclass
class CamWeights:
    """kind 'global' carries one scalar per channel; 'pixelwise' a full map."""

    kind: str
    values: np.ndarray


@dataclass
class RelevanceStack:
    """Per-neuron relevance aligned with the named layer's output.

    For intermediate walk states the ``layer`` label names the layer
    whose output the values currently sit at ("input" for the image).
    """

    layer: str
    values: np.ndarray
    signed: bool = False


@dataclass
class Explanation:
    """Single-channel importance map; non-negative unless ``signed``."""

    layer: str
    map: np.ndarray
    signed: bool = False


def gradcam_weights(model: ModelGraph, trace: ActivationTrace,
                    class_index: int, layer: str | None = None) -> CamWeights:
    """Spatial mean of the class-logit gradient, one weight per channel."""
    layer = layer or model.last_conv_name()
    g = backward_class_gradient(
        model, GradientRequest(class_index=class_index, target_layer=layer,
                               trace=trace))
    return CamWeights(kind="global",
                      values=g.astype(np.float64).mean(axis=(1, 2)).astype(np.float32))


def scorecam_weights(model: ModelGraph, trace: ActivationTrace,
                     input_image: np.ndarray, class_index: int,
                     layer: str | None = None) -> CamWeights:
    """Softmax over per-channel logits of mask-perturbed forward passes.

    Each channel of the target layer is upsampled to the input size,
    min-max normalized, and multiplied into the preprocessed input; the
    class logit of that masked image is the channel's score.
    """
    layer = layer or model.last_conv_name()
    acts = trace.output_of(layer)
    _, h, w = input_image.shape
    scores = np.empty(acts.shape[0], dtype=np.float32)
    for k in range(acts.shape[0]):
        mask = tc.minmax_normalize(tc.bilinear_resize(acts[k:k + 1], h, w))[0]
        scores[k] = forward_logits(model, (input_image * mask).astype(np.float32))[class_index]
    return CamWeights(kind="global", values=tc.softmax(scores))


def layercam_explanation(model: ModelGraph, trace: ActivationTrace,
                         class_index: int, target_layer: str) -> Explanation:
    """ReLU(sum_k ReLU(grad_k) * A_k) evaluated directly at the target layer."""
    acts = trace.output_of(target_layer)
    g = backward_class_gradient(
        model, GradientRequest(class_index=class_index,
                               target_layer=target_layer, trace=trace))
    weighted = tc.relu(g) * acts
    return Explanation(layer=target_layer,
                       map=tc.relu(weighted.astype(np.float64).sum(axis=0).astype(np.float32)),
                       signed=False)


def explanation_components(weights: CamWeights, trace: ActivationTrace,
                           last_conv: str) -> RelevanceStack:
    """Per-channel weighted feature maps at the last conv layer, kept
    un-summed so their resolution can be improved layer by layer."""
    if weights.kind != "global":
        raise ShapeError("explanation components need global (per-channel) weights")
    acts = trace.output_of(last_conv)
    if weights.values.shape[0] != acts.shape[0]:
        raise ShapeError(f"{weights.values.shape[0]} weights for "
                         f"{acts.shape[0]} channels at {last_conv!r}")
    values = (acts * weights.values[:, None, None]).astype(np.float32)
    return RelevanceStack(layer=last_conv, values=values,
                          signed=bool((weights.values < 0).any()))


def cam_explanation(weights: CamWeights, trace: ActivationTrace,
                    layer: str) -> Explanation:
    """Channel-sum of weighted feature maps followed by ReLU."""
    stack = explanation_components(weights, trace, layer)
    summed = stack.values.astype(np.float64).sum(axis=0).astype(np.float32)
    return Explanation(layer=layer, map=tc.relu(summed), signed=False)
