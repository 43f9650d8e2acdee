"""Pure-numpy kernel implementations.

Reference path for every hot kernel in :mod:`fgcam.kernels.accel`.  All
functions take and return float32 arrays; accumulations run in float64
(dot products and scatters routinely span thousands of terms).

Inputs arrive already padded where padding applies; callers own
validation and padding so both backends stay interchangeable.
"""

import numpy as np

name = "numpy"


def conv2d_padded(xp: np.ndarray, w: np.ndarray, bias: np.ndarray,
                  sh: int, sw: int) -> np.ndarray:
    """Cross-correlate a padded (Ci,Hp,Wp) input with (Co,Ci,kh,kw) weights."""
    co, ci, kh, kw = w.shape
    win = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(1, 2))
    win = win[:, ::sh, ::sw]
    out = np.tensordot(w.astype(np.float64), win.astype(np.float64),
                       axes=([1, 2, 3], [0, 3, 4]))
    out += bias.astype(np.float64)[:, None, None]
    return out.astype(np.float32)


def conv2d_input_vjp(g: np.ndarray, w: np.ndarray, sh: int, sw: int,
                     hp: int, wp: int) -> np.ndarray:
    """Adjoint of conv2d_padded w.r.t. the padded input."""
    co, ci, kh, kw = w.shape
    _, ho, wo = g.shape
    cols = np.tensordot(w.astype(np.float64), g.astype(np.float64),
                        axes=([0], [0]))  # (Ci,kh,kw,Ho,Wo)
    gxp = np.zeros((ci, hp, wp), dtype=np.float64)
    for ki in range(kh):
        for kj in range(kw):
            gxp[:, ki:ki + sh * (ho - 1) + 1:sh,
                kj:kj + sw * (wo - 1) + 1:sw] += cols[:, ki, kj]
    return gxp.astype(np.float32)


def maxpool_forward(x: np.ndarray, kh: int, kw: int,
                    sh: int, sw: int) -> tuple[np.ndarray, np.ndarray]:
    """Windowed max plus, per output cell, the flat index of the winner.

    Flat indices address the whole (C,H,W) input; ties resolve to the
    lowest flat index (first scan position).
    """
    c, h, w = x.shape
    win = np.lib.stride_tricks.sliding_window_view(x, (kh, kw), axis=(1, 2))
    win = win[:, ::sh, ::sw]
    _, ho, wo = win.shape[:3]
    flat_win = win.reshape(c, ho, wo, kh * kw)
    local = flat_win.argmax(axis=3)
    out = np.take_along_axis(flat_win, local[..., None], axis=3)[..., 0]
    ki, kj = local // kw, local % kw
    ci = np.arange(c)[:, None, None]
    oi = np.arange(ho)[None, :, None]
    oj = np.arange(wo)[None, None, :]
    arg = ci * h * w + (oi * sh + ki) * w + (oj * sw + kj)
    return np.ascontiguousarray(out, dtype=np.float32), arg.astype(np.int64)


def maxpool_scatter(g: np.ndarray, arg: np.ndarray, c: int, h: int,
                    w: int) -> np.ndarray:
    """Scatter-add each output value onto its recorded argmax position."""
    acc = np.zeros(c * h * w, dtype=np.float64)
    np.add.at(acc, arg.ravel(), g.ravel().astype(np.float64))
    return acc.reshape(c, h, w).astype(np.float32)


def avgpool_forward(x: np.ndarray, kh: int, kw: int,
                    sh: int, sw: int) -> np.ndarray:
    win = np.lib.stride_tricks.sliding_window_view(x, (kh, kw), axis=(1, 2))
    win = win[:, ::sh, ::sw]
    return win.astype(np.float64).mean(axis=(3, 4)).astype(np.float32)


def avgpool_vjp(g: np.ndarray, kh: int, kw: int, sh: int, sw: int,
                h: int, w: int) -> np.ndarray:
    """Spread each output gradient uniformly over its source window."""
    c, ho, wo = g.shape
    gx = np.zeros((c, h, w), dtype=np.float64)
    share = g.astype(np.float64) / (kh * kw)
    for ki in range(kh):
        for kj in range(kw):
            gx[:, ki:ki + sh * (ho - 1) + 1:sh,
               kj:kj + sw * (wo - 1) + 1:sw] += share
    return gx.astype(np.float32)


def bilinear_resize(x: np.ndarray, oh: int, ow: int) -> np.ndarray:
    """Half-pixel-center bilinear interpolation of a (C,H,W) tensor."""
    c, h, w = x.shape
    sy = np.clip((np.arange(oh) + 0.5) * (h / oh) - 0.5, 0.0, h - 1.0)
    sx = np.clip((np.arange(ow) + 0.5) * (w / ow) - 0.5, 0.0, w - 1.0)
    y0 = np.floor(sy).astype(np.int64)
    x0 = np.floor(sx).astype(np.int64)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    fy = (sy - y0)[None, :, None]
    fx = (sx - x0)[None, None, :]
    x64 = x.astype(np.float64)
    tl = x64[:, y0[:, None], x0[None, :]]
    tr = x64[:, y0[:, None], x1[None, :]]
    bl = x64[:, y1[:, None], x0[None, :]]
    br = x64[:, y1[:, None], x1[None, :]]
    top = tl + (tr - tl) * fx
    bot = bl + (br - bl) * fx
    return (top + (bot - top) * fy).astype(np.float32)


def gaussian_blur_reflect(x: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """Separable blur with reflect padding; kernel is 1-D and sums to 1."""
    k = kernel.size
    pad = k // 2
    x64 = x.astype(np.float64)
    k64 = kernel.astype(np.float64)
    xp = np.pad(x64, ((0, 0), (0, 0), (pad, pad)), mode="reflect")
    tmp = np.zeros_like(x64)
    for t in range(k):
        tmp += k64[t] * xp[:, :, t:t + x.shape[2]]
    xp = np.pad(tmp, ((0, 0), (pad, pad), (0, 0)), mode="reflect")
    out = np.zeros_like(x64)
    for t in range(k):
        out += k64[t] * xp[:, t:t + x.shape[1], :]
    return out.astype(np.float32)
