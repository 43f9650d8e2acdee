"""Conversion of torch modules into FGM layer lists.

Only strictly sequential stacks convert; anything with branching or an
unsupported module type is rejected with a clear message.  Batchnorm
parameters are exported raw — folding is the engine's job — and adaptive
average pools are rewritten to fixed kernels, which is exact because the
input resolution is fixed.
"""

from dataclasses import dataclass, field

import numpy as np
import torch
from torch import nn


class ExportError(Exception):
    pass


@dataclass
class ExportResult:
    layers: list[dict]
    mapping: list[dict] = field(default_factory=list)


def _pair(v) -> list[int]:
    if isinstance(v, int):
        return [v, v]
    return [int(v[0]), int(v[1])]


def module_to_layers(model: nn.Module, input_shape) -> ExportResult:
    """Walk a sequential torch module, emitting one FGM layer per child."""
    if not isinstance(model, nn.Sequential):
        raise ExportError(
            f"only sequential models convert; got {type(model).__name__} "
            "(residual or branching architectures are not supported)")
    layers: list[dict] = []
    mapping: list[dict] = []
    shape = tuple(input_shape)
    used_names = set()

    def unique(name: str) -> str:
        if name in used_names:
            raise ExportError(f"duplicate module name {name!r}")
        used_names.add(name)
        return name

    for name, mod in model.named_children():
        entry: dict | None = None
        if isinstance(mod, nn.Conv2d):
            if mod.groups != 1 or _pair(mod.dilation) != [1, 1]:
                raise ExportError(f"{name}: grouped or dilated conv not supported")
            weights = mod.weight.detach().numpy()
            bias = (mod.bias.detach().numpy() if mod.bias is not None
                    else np.zeros(mod.out_channels, dtype=np.float32))
            entry = {"kind": "conv2d", "name": unique(name),
                     "stride": _pair(mod.stride), "padding": _pair(mod.padding),
                     "weights": weights, "bias": bias}
            ph, pw = entry["padding"]
            sh, sw = entry["stride"]
            kh, kw = weights.shape[2], weights.shape[3]
            shape = (weights.shape[0],
                     (shape[1] + 2 * ph - kh) // sh + 1,
                     (shape[2] + 2 * pw - kw) // sw + 1)
        elif isinstance(mod, nn.BatchNorm2d):
            entry = {"kind": "batchnorm2d", "name": unique(name),
                     "eps": float(mod.eps),
                     "gamma": mod.weight.detach().numpy(),
                     "beta": mod.bias.detach().numpy(),
                     "running_mean": mod.running_mean.numpy(),
                     "running_var": mod.running_var.numpy()}
        elif isinstance(mod, nn.ReLU):
            entry = {"kind": "relu", "name": unique(name)}
        elif isinstance(mod, (nn.MaxPool2d, nn.AvgPool2d)):
            if _pair(mod.padding) != [0, 0]:
                raise ExportError(f"{name}: padded pooling not supported")
            kind = "maxpool2d" if isinstance(mod, nn.MaxPool2d) else "avgpool2d"
            kh, kw = _pair(mod.kernel_size)
            sh, sw = _pair(mod.stride if mod.stride is not None else mod.kernel_size)
            entry = {"kind": kind, "name": unique(name),
                     "kernel": [kh, kw], "stride": [sh, sw]}
            shape = (shape[0], (shape[1] - kh) // sh + 1, (shape[2] - kw) // sw + 1)
        elif isinstance(mod, nn.AdaptiveAvgPool2d):
            oh, ow = _pair(mod.output_size)
            if shape[1] % oh or shape[2] % ow:
                raise ExportError(
                    f"{name}: adaptive pool {shape[1:]} -> {(oh, ow)} does not "
                    "divide evenly, cannot rewrite to a fixed kernel")
            kh, kw = shape[1] // oh, shape[2] // ow
            entry = {"kind": "avgpool2d", "name": unique(name),
                     "kernel": [kh, kw], "stride": [kh, kw]}
            mapping.append({"module": name, "rewritten": "adaptive-avgpool",
                            "kernel": [kh, kw]})
            shape = (shape[0], oh, ow)
        elif isinstance(mod, nn.Flatten):
            entry = {"kind": "flatten", "name": unique(name)}
            shape = (int(np.prod(shape)),)
        elif isinstance(mod, nn.Linear):
            entry = {"kind": "linear", "name": unique(name),
                     "weights": mod.weight.detach().numpy(),
                     "bias": mod.bias.detach().numpy()}
            shape = (mod.out_features,)
        elif isinstance(mod, nn.Dropout):
            mapping.append({"module": name, "rewritten": "dropout-removed"})
            continue
        else:
            raise ExportError(
                f"{name}: module type {type(mod).__name__} not supported "
                "(only sequential conv/bn/relu/pool/flatten/linear stacks)")
        mapping.append({"module": name, "kind": entry["kind"]})
        layers.append(entry)
    return ExportResult(layers=layers, mapping=mapping)


@torch.no_grad()
def capture_activations(model: nn.Sequential, x: torch.Tensor) -> dict[str, np.ndarray]:
    """Per-layer eval-mode outputs, keyed by the engine's folded layer
    names: a batchnorm output is stored under the conv before it (that is
    the folded conv's output), plus under ``<conv>.raw`` for the pre-BN
    conv output."""
    model.eval()
    captured: dict[str, np.ndarray] = {}
    cur = x
    prev_name = None
    for name, mod in model.named_children():
        out = mod(cur)
        arr = out.numpy()[0].copy()
        if isinstance(mod, nn.BatchNorm2d) and prev_name is not None:
            captured[f"{prev_name}.raw"] = captured[prev_name]
            captured[prev_name] = arr
        else:
            captured[name] = arr
        cur = out
        prev_name = name
    return captured
