"""Dense tensor operations every other module builds on.

A tensor is a float32 :class:`numpy.ndarray`; rank-4 arrays follow the
NCHW convention and activations are CHW (single image).  All operations
are pure functions.  The heavy kernels dispatch to the active backend in
:mod:`fgcam.kernels`; everything here owns validation and padding so
both backends see identical, pre-checked inputs.
"""

import numpy as np

from . import kernels
from .errors import ShapeError

Tensor = np.ndarray
ArgmaxIndices = np.ndarray


def as_tensor(data, shape=None) -> Tensor:
    """Coerce to a contiguous float32 tensor with all dimensions >= 1."""
    arr = np.ascontiguousarray(data, dtype=np.float32)
    if shape is not None:
        arr = arr.reshape(shape)
    if arr.ndim == 0 or any(d < 1 for d in arr.shape):
        raise ShapeError(f"tensor dimensions must all be >= 1, got {arr.shape}")
    return arr


def _pair(v, what: str) -> tuple[int, int]:
    if isinstance(v, int):
        v = (v, v)
    a, b = int(v[0]), int(v[1])
    if what == "stride" and (a < 1 or b < 1):
        raise ShapeError(f"stride must be >= 1, got {(a, b)}")
    if what == "padding" and (a < 0 or b < 0):
        raise ShapeError(f"padding must be >= 0, got {(a, b)}")
    return a, b


def conv_output_hw(h: int, w: int, kh: int, kw: int, sh: int, sw: int,
                   ph: int, pw: int) -> tuple[int, int]:
    return (h + 2 * ph - kh) // sh + 1, (w + 2 * pw - kw) // sw + 1


def conv2d(x: Tensor, weights: Tensor, bias: Tensor,
           stride=(1, 1), padding=(0, 0)) -> Tensor:
    """Zero-padded cross-correlation of a (Ci,H,W) input."""
    sh, sw = _pair(stride, "stride")
    ph, pw = _pair(padding, "padding")
    if x.ndim != 3 or weights.ndim != 4:
        raise ShapeError(f"conv2d expects CHW input and OIHW weights, "
                         f"got {x.shape} and {weights.shape}")
    co, ci, kh, kw = weights.shape
    if x.shape[0] != ci:
        raise ShapeError(f"input channels {x.shape} do not match "
                         f"weight channels {weights.shape}")
    if kh > x.shape[1] + 2 * ph or kw > x.shape[2] + 2 * pw:
        raise ShapeError(f"kernel {(kh, kw)} larger than padded input "
                         f"{(x.shape[1] + 2 * ph, x.shape[2] + 2 * pw)}")
    xp = np.pad(x, ((0, 0), (ph, ph), (pw, pw))) if (ph or pw) else x
    return kernels.get_backend().conv2d_padded(
        np.ascontiguousarray(xp), weights, bias.astype(np.float32), sh, sw)


def conv2d_input_vjp(g: Tensor, weights: Tensor, in_shape, stride=(1, 1),
                     padding=(0, 0)) -> Tensor:
    """Adjoint of :func:`conv2d` w.r.t. its input (bias plays no role)."""
    sh, sw = _pair(stride, "stride")
    ph, pw = _pair(padding, "padding")
    ci, h, w = in_shape
    gxp = kernels.get_backend().conv2d_input_vjp(
        np.ascontiguousarray(g, dtype=np.float32), weights, sh, sw,
        h + 2 * ph, w + 2 * pw)
    if ph or pw:
        gxp = gxp[:, ph:ph + h, pw:pw + w]
    return np.ascontiguousarray(gxp)


def _check_pool(x, kh, kw, what):
    if x.ndim != 3:
        raise ShapeError(f"{what} expects a CHW input, got {x.shape}")
    if kh > x.shape[1] or kw > x.shape[2]:
        raise ShapeError(f"{what} kernel {(kh, kw)} larger than input {x.shape}")


def maxpool2d(x: Tensor, kernel, stride) -> tuple[Tensor, ArgmaxIndices]:
    """Windowed maximum; also returns the winning flat input index per cell."""
    kh, kw = _pair(kernel, "kernel")
    sh, sw = _pair(stride, "stride")
    _check_pool(x, kh, kw, "maxpool2d")
    return kernels.get_backend().maxpool_forward(
        np.ascontiguousarray(x, dtype=np.float32), kh, kw, sh, sw)


def maxpool_scatter(g: Tensor, arg: ArgmaxIndices, in_shape) -> Tensor:
    c, h, w = in_shape
    return kernels.get_backend().maxpool_scatter(
        np.ascontiguousarray(g, dtype=np.float32), arg, c, h, w)


def avgpool2d(x: Tensor, kernel, stride) -> Tensor:
    kh, kw = _pair(kernel, "kernel")
    sh, sw = _pair(stride, "stride")
    _check_pool(x, kh, kw, "avgpool2d")
    return kernels.get_backend().avgpool_forward(
        np.ascontiguousarray(x, dtype=np.float32), kh, kw, sh, sw)


def avgpool_vjp(g: Tensor, kernel, stride, in_shape) -> Tensor:
    kh, kw = _pair(kernel, "kernel")
    sh, sw = _pair(stride, "stride")
    _, h, w = in_shape
    return kernels.get_backend().avgpool_vjp(
        np.ascontiguousarray(g, dtype=np.float32), kh, kw, sh, sw, h, w)


def linear(x: Tensor, weights: Tensor, bias: Tensor) -> Tensor:
    """out_j = sum_i W[j,i] x[i] + b[j]."""
    if weights.ndim != 2 or x.ndim != 1 or weights.shape[1] != x.shape[0]:
        raise ShapeError(f"linear got weights {weights.shape} and input {x.shape}")
    out = weights.astype(np.float64) @ x.astype(np.float64) + bias.astype(np.float64)
    return out.astype(np.float32)


def bilinear_resize(x: Tensor, out_h: int, out_w: int) -> Tensor:
    """Resize a (C,H,W) tensor with half-pixel-center source coordinates."""
    if x.ndim != 3:
        raise ShapeError(f"bilinear_resize expects a CHW input, got {x.shape}")
    if out_h < 1 or out_w < 1:
        raise ShapeError(f"output size must be >= 1, got {(out_h, out_w)}")
    if (out_h, out_w) == x.shape[1:]:
        return np.ascontiguousarray(x, dtype=np.float32)
    return kernels.get_backend().bilinear_resize(
        np.ascontiguousarray(x, dtype=np.float32), out_h, out_w)


def gaussian_kernel1d(ksize: int, sigma: float) -> np.ndarray:
    if ksize % 2 == 0:
        raise ShapeError(f"gaussian_blur kernel size must be odd, got {ksize}")
    half = ksize // 2
    t = np.arange(-half, half + 1, dtype=np.float64)
    k = np.exp(-(t * t) / (2.0 * sigma * sigma))
    return (k / k.sum()).astype(np.float32)


def gaussian_blur(x: Tensor, ksize: int, sigma: float) -> Tensor:
    """Separable normalized Gaussian with reflect borders, per channel."""
    if x.ndim != 3:
        raise ShapeError(f"gaussian_blur expects a CHW input, got {x.shape}")
    k = gaussian_kernel1d(ksize, sigma)
    pad = ksize // 2
    if pad > x.shape[1] - 1 or pad > x.shape[2] - 1:
        raise ShapeError(f"blur kernel {ksize} needs reflect padding {pad}, "
                         f"too large for spatial size {x.shape[1:]}")
    return kernels.get_backend().gaussian_blur_reflect(
        np.ascontiguousarray(x, dtype=np.float32), k)


def relu(x: Tensor) -> Tensor:
    return np.maximum(x, 0.0).astype(np.float32)


def softmax(x: Tensor) -> Tensor:
    """Softmax along the final axis, shift-stabilized."""
    x64 = x.astype(np.float64)
    e = np.exp(x64 - x64.max(axis=-1, keepdims=True))
    return (e / e.sum(axis=-1, keepdims=True)).astype(np.float32)


def minmax_normalize(x: Tensor) -> Tensor:
    """Map the whole tensor to [0,1]; a constant tensor maps to all zeros."""
    lo = float(x.min())
    hi = float(x.max())
    if hi == lo:
        return np.zeros_like(x, dtype=np.float32)
    return ((x - lo) / (hi - lo)).astype(np.float32)
