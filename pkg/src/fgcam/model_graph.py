"""Sequential CNN representation, FGM file format and traced execution.

FGM layout, in order: a UTF-8 JSON header, the 8-byte magic
``FGCAMv01``, then the concatenated little-endian float32 weight blobs
in header order.  Each blob entry in the header records its shape, its
byte offset relative to the end of the magic, and a CRC-32 of its bytes.
"""

import json
import zlib
from dataclasses import dataclass, field, replace

import numpy as np

from . import tensor_core as tc
from .errors import ModelFormatError, ShapeError, UnsupportedStructureError

MAGIC = b"FGCAMv01"

KINDS = ("conv2d", "batchnorm2d", "relu", "maxpool2d", "avgpool2d",
         "flatten", "linear")


@dataclass
class LayerSpec:
    """One layer of a sequential model.

    Which fields apply depends on ``kind``: conv2d and linear carry
    ``weights``/``bias`` (plus ``stride``/``padding`` for conv2d),
    pooling layers carry ``kernel``/``stride``, batchnorm2d carries the
    four per-channel vectors and ``eps``.
    """

    kind: str
    name: str
    weights: np.ndarray | None = None
    bias: np.ndarray | None = None
    stride: tuple[int, int] | None = None
    padding: tuple[int, int] | None = None
    kernel: tuple[int, int] | None = None
    gamma: np.ndarray | None = None
    beta: np.ndarray | None = None
    running_mean: np.ndarray | None = None
    running_var: np.ndarray | None = None
    eps: float | None = None


@dataclass
class ModelGraph:
    layers: list[LayerSpec]
    input_shape: tuple[int, int, int]
    class_count: int
    mean: np.ndarray
    std: np.ndarray

    def layer_index(self, name: str) -> int:
        for i, layer in enumerate(self.layers):
            if layer.name == name:
                return i
        raise KeyError(name)

    def last_conv_index(self) -> int:
        idx = [i for i, l in enumerate(self.layers) if l.kind == "conv2d"]
        if not idx:
            raise UnsupportedStructureError("model has no conv2d layer")
        return idx[-1]

    def last_conv_name(self) -> str:
        return self.layers[self.last_conv_index()].name


@dataclass
class ActivationTrace:
    """Every intermediate activation of one forward pass.

    ``outputs[i]`` is the output of ``layers[i]``; the input to layer
    ``i`` is ``outputs[i-1]`` (the model input for ``i == 0``).
    """

    input: np.ndarray
    outputs: list[np.ndarray]
    argmax: dict[str, np.ndarray]
    logits: np.ndarray
    layer_names: list[str] = field(default_factory=list)

    def output_of(self, name: str) -> np.ndarray:
        return self.outputs[self.layer_names.index(name)]

    def input_of_index(self, i: int) -> np.ndarray:
        return self.input if i == 0 else self.outputs[i - 1]


# --- static shape propagation -----------------------------------------------

def _static_shapes(model: ModelGraph) -> tuple[list[tuple], list[str]]:
    """Predicted output shape per layer plus any composition findings."""
    findings: list[str] = []
    shapes: list[tuple] = []
    cur: tuple = tuple(model.input_shape)
    for layer in model.layers:
        kind = layer.kind
        if kind == "conv2d":
            if len(cur) != 3:
                findings.append(f"{layer.name}: conv2d needs a CHW input, has {cur}")
            else:
                co, ci, kh, kw = layer.weights.shape
                if ci != cur[0]:
                    findings.append(f"{layer.name}: expects {ci} input channels, gets {cur[0]}")
                ph, pw = layer.padding
                sh, sw = layer.stride
                oh, ow = tc.conv_output_hw(cur[1], cur[2], kh, kw, sh, sw, ph, pw)
                if oh < 1 or ow < 1:
                    findings.append(f"{layer.name}: kernel does not fit input {cur}")
                cur = (co, max(oh, 1), max(ow, 1))
        elif kind == "batchnorm2d":
            if len(cur) != 3 or layer.gamma.shape[0] != cur[0]:
                findings.append(f"{layer.name}: batchnorm channels do not match input {cur}")
        elif kind in ("maxpool2d", "avgpool2d"):
            if len(cur) != 3:
                findings.append(f"{layer.name}: pooling needs a CHW input, has {cur}")
            else:
                kh, kw = layer.kernel
                sh, sw = layer.stride
                if kh > cur[1] or kw > cur[2]:
                    findings.append(f"{layer.name}: pool kernel larger than input {cur}")
                cur = (cur[0], max((cur[1] - kh) // sh + 1, 1),
                       max((cur[2] - kw) // sw + 1, 1))
        elif kind == "flatten":
            cur = (int(np.prod(cur)),)
        elif kind == "linear":
            m, n = layer.weights.shape
            if len(cur) != 1:
                findings.append(f"{layer.name}: linear needs a flat input, has {cur}")
            elif n != cur[0]:
                findings.append(f"{layer.name}: expects {n} inputs, gets {cur[0]}")
            cur = (m,)
        shapes.append(cur)
    return shapes, findings


def validate_model(model: ModelGraph) -> list[str]:
    """Structural findings; empty for a well-formed graph."""
    findings: list[str] = []
    names = [l.name for l in model.layers]
    for name in sorted(set(n for n in names if names.count(n) > 1)):
        findings.append(f"duplicate layer name {name!r}")
    if not any(l.kind == "conv2d" for l in model.layers):
        findings.append("model has no conv2d layer")
    linear_idx = [i for i, l in enumerate(model.layers) if l.kind == "linear"]
    if not linear_idx or linear_idx[-1] != len(model.layers) - 1:
        findings.append("model must end with a linear layer")
    else:
        out = model.layers[-1].weights.shape[0]
        if out != model.class_count:
            findings.append(f"final linear produces {out} outputs, "
                            f"class_count is {model.class_count}")
    for layer in model.layers:
        if layer.kind == "batchnorm2d":
            c = layer.gamma.shape[0]
            for vec_name in ("beta", "running_mean", "running_var"):
                if getattr(layer, vec_name).shape[0] != c:
                    findings.append(f"{layer.name}: batchnorm vectors disagree on length")
        if layer.kind in ("conv2d", "linear") and \
                layer.bias.shape[0] != layer.weights.shape[0]:
            findings.append(f"{layer.name}: bias length does not match weights")
    _, shape_findings = _static_shapes(model)
    findings.extend(shape_findings)
    return findings


# --- FGM serialization --------------------------------------------------------

_BLOB_FIELDS = {
    "conv2d": ("weights", "bias"),
    "linear": ("weights", "bias"),
    "batchnorm2d": ("gamma", "beta", "running_mean", "running_var"),
}

_EXPECTED_RANK = {"weights": {"conv2d": 4, "linear": 2}}


def save_model(model: ModelGraph, path) -> None:
    """Write the bit-exact FGM layout (header, magic, blobs)."""
    blobs: list[bytes] = []
    offset = 0
    layer_entries = []
    for layer in model.layers:
        entry: dict = {"kind": layer.kind, "name": layer.name}
        if layer.kind == "conv2d":
            entry["stride"] = list(layer.stride)
            entry["padding"] = list(layer.padding)
        if layer.kind in ("maxpool2d", "avgpool2d"):
            entry["kernel"] = list(layer.kernel)
            entry["stride"] = list(layer.stride)
        if layer.kind == "batchnorm2d":
            entry["eps"] = float(layer.eps)
        for fname in _BLOB_FIELDS.get(layer.kind, ()):
            arr = np.ascontiguousarray(getattr(layer, fname), dtype="<f4")
            raw = arr.tobytes()
            entry[fname] = {"shape": list(arr.shape), "offset": offset,
                            "crc32": zlib.crc32(raw)}
            blobs.append(raw)
            offset += len(raw)
        layer_entries.append(entry)
    header = {
        "input_shape": list(model.input_shape),
        "class_count": model.class_count,
        "preprocessing": {"mean": [float(v) for v in model.mean],
                          "std": [float(v) for v in model.std]},
        "layers": layer_entries,
    }
    with open(path, "wb") as fh:
        fh.write(json.dumps(header, sort_keys=True).encode("utf-8"))
        fh.write(MAGIC)
        for raw in blobs:
            fh.write(raw)


def _read_blob(data: bytes, start: int, entry: dict, layer_name: str,
               fname: str, kind: str) -> np.ndarray:
    shape = tuple(int(d) for d in entry["shape"])
    want_rank = _EXPECTED_RANK.get(fname, {}).get(kind, 1)
    if len(shape) != want_rank or any(d < 1 for d in shape):
        raise ModelFormatError(
            "shape-mismatch",
            f"{layer_name}.{fname}: blob shape {shape} invalid for {kind}")
    nbytes = 4 * int(np.prod(shape))
    lo = start + int(entry["offset"])
    raw = data[lo:lo + nbytes]
    if len(raw) != nbytes:
        raise ModelFormatError(
            "checksum-mismatch",
            f"{layer_name}.{fname}: blob truncated ({len(raw)} of {nbytes} bytes)")
    if zlib.crc32(raw) != int(entry["crc32"]):
        raise ModelFormatError(
            "checksum-mismatch", f"{layer_name}.{fname}: CRC-32 does not match")
    return np.frombuffer(raw, dtype="<f4").reshape(shape).copy()


def load_model(path, validate: bool = True) -> ModelGraph:
    """Load and verify an FGM file.

    ``validate=False`` skips the graph-level findings check so that
    inspection tools can display a malformed graph; header, blob shape
    and checksum verification always run.
    """
    with open(path, "rb") as fh:
        data = fh.read()
    split = data.find(MAGIC)
    if split < 0:
        raise ModelFormatError("malformed-header", "magic FGCAMv01 not found")
    try:
        header = json.loads(data[:split].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ModelFormatError("malformed-header", f"header is not JSON: {exc}") from exc
    try:
        input_shape = tuple(int(d) for d in header["input_shape"])
        class_count = int(header["class_count"])
        mean = np.asarray(header["preprocessing"]["mean"], dtype=np.float32)
        std = np.asarray(header["preprocessing"]["std"], dtype=np.float32)
        entries = header["layers"]
    except (KeyError, TypeError, ValueError) as exc:
        raise ModelFormatError("malformed-header", f"missing header field: {exc}") from exc

    start = split + len(MAGIC)
    layers: list[LayerSpec] = []
    for entry in entries:
        kind = entry.get("kind")
        name = entry.get("name")
        if kind not in KINDS or not name:
            raise ModelFormatError("malformed-header",
                                   f"bad layer entry {entry.get('name')!r}: kind {kind!r}")
        layer = LayerSpec(kind=kind, name=name)
        if kind == "conv2d":
            layer.stride = tuple(entry["stride"])
            layer.padding = tuple(entry["padding"])
        if kind in ("maxpool2d", "avgpool2d"):
            layer.kernel = tuple(entry["kernel"])
            layer.stride = tuple(entry["stride"])
        if kind == "batchnorm2d":
            layer.eps = float(entry["eps"])
        for fname in _BLOB_FIELDS.get(kind, ()):
            setattr(layer, fname, _read_blob(data, start, entry[fname], name, fname, kind))
        layers.append(layer)

    model = ModelGraph(layers=layers, input_shape=input_shape,
                       class_count=class_count, mean=mean, std=std)
    if validate:
        findings = validate_model(model)
        if findings:
            raise ModelFormatError("invalid-graph", "; ".join(findings))
    return model


# --- batchnorm folding --------------------------------------------------------

def fold_batchnorm(model: ModelGraph) -> ModelGraph:
    """Return an equivalent graph with every batchnorm fused into the
    conv2d immediately before it; the conv keeps its name."""
    layers: list[LayerSpec] = []
    for layer in model.layers:
        if layer.kind != "batchnorm2d":
            layers.append(replace(layer))
            continue
        if not layers or layers[-1].kind != "conv2d":
            raise UnsupportedStructureError(
                f"{layer.name}: batchnorm2d must immediately follow a conv2d")
        conv = layers[-1]
        scale = layer.gamma.astype(np.float64) / \
            np.sqrt(layer.running_var.astype(np.float64) + layer.eps)
        w = conv.weights.astype(np.float64) * scale[:, None, None, None]
        b = (conv.bias.astype(np.float64) - layer.running_mean.astype(np.float64)) \
            * scale + layer.beta.astype(np.float64)
        layers[-1] = replace(conv, weights=w.astype(np.float32),
                             bias=b.astype(np.float32))
    return ModelGraph(layers=layers, input_shape=model.input_shape,
                      class_count=model.class_count, mean=model.mean.copy(),
                      std=model.std.copy())


# --- execution ----------------------------------------------------------------

def _apply_layer(layer: LayerSpec, x: np.ndarray):
    """Returns (output, argmax-or-None)."""
    if layer.kind == "conv2d":
        return tc.conv2d(x, layer.weights, layer.bias, layer.stride, layer.padding), None
    if layer.kind == "relu":
        return tc.relu(x), None
    if layer.kind == "maxpool2d":
        return tc.maxpool2d(x, layer.kernel, layer.stride)
    if layer.kind == "avgpool2d":
        return tc.avgpool2d(x, layer.kernel, layer.stride), None
    if layer.kind == "flatten":
        return x.reshape(-1), None
    if layer.kind == "linear":
        return tc.linear(x, layer.weights, layer.bias), None
    raise UnsupportedStructureError(
        f"{layer.name}: cannot execute kind {layer.kind!r} (fold batchnorm first)")


def forward_trace(model: ModelGraph, x: np.ndarray) -> ActivationTrace:
    """Run the folded model on one image, recording every activation."""
    if tuple(x.shape) != tuple(model.input_shape):
        raise ShapeError(f"input {x.shape} does not match model input "
                         f"{tuple(model.input_shape)}")
    x = np.ascontiguousarray(x, dtype=np.float32)
    outputs: list[np.ndarray] = []
    argmax: dict[str, np.ndarray] = {}
    cur = x
    for layer in model.layers:
        cur, arg = _apply_layer(layer, cur)
        if arg is not None:
            argmax[layer.name] = arg
        outputs.append(cur)
    return ActivationTrace(input=x, outputs=outputs, argmax=argmax,
                           logits=outputs[-1],
                           layer_names=[l.name for l in model.layers])


def forward_logits(model: ModelGraph, x: np.ndarray) -> np.ndarray:
    """Like :func:`forward_trace` but keeps only the logits."""
    if tuple(x.shape) != tuple(model.input_shape):
        raise ShapeError(f"input {x.shape} does not match model input "
                         f"{tuple(model.input_shape)}")
    cur = np.ascontiguousarray(x, dtype=np.float32)
    for layer in model.layers:
        cur, _ = _apply_layer(layer, cur)
    return cur
