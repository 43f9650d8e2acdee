"""Numba-compiled kernels, signature-identical to :mod:`fgcam.kernels.fallback`.

Loops accumulate in float64 and write float32.  Parallel loops only ever
iterate over disjoint output slices, so results do not depend on the
thread count.
"""

import numpy as np
from numba import njit, prange

name = "numba"


@njit(cache=True, parallel=True, nogil=True)
def conv2d_padded(xp, w, bias, sh, sw):
    co, ci, kh, kw = w.shape
    hp, wp = xp.shape[1], xp.shape[2]
    ho = (hp - kh) // sh + 1
    wo = (wp - kw) // sw + 1
    out = np.empty((co, ho, wo), dtype=np.float32)
    for o in prange(co):
        for i in range(ho):
            ib = i * sh
            for j in range(wo):
                jb = j * sw
                acc = np.float64(bias[o])
                for c in range(ci):
                    for ki in range(kh):
                        for kj in range(kw):
                            acc += np.float64(xp[c, ib + ki, jb + kj]) * \
                                np.float64(w[o, c, ki, kj])
                out[o, i, j] = np.float32(acc)
    return out


@njit(cache=True, parallel=True, nogil=True)
def conv2d_input_vjp(g, w, sh, sw, hp, wp):
    co, ci, kh, kw = w.shape
    ho, wo = g.shape[1], g.shape[2]
    gxp = np.zeros((ci, hp, wp), dtype=np.float64)
    for c in prange(ci):
        for o in range(co):
            for i in range(ho):
                ib = i * sh
                for j in range(wo):
                    gv = np.float64(g[o, i, j])
                    if gv != 0.0:
                        for ki in range(kh):
                            for kj in range(kw):
                                gxp[c, ib + ki, j * sw + kj] += \
                                    gv * np.float64(w[o, c, ki, kj])
    return gxp.astype(np.float32)


@njit(cache=True, parallel=True, nogil=True)
def maxpool_forward(x, kh, kw, sh, sw):
    c, h, w = x.shape
    ho = (h - kh) // sh + 1
    wo = (w - kw) // sw + 1
    out = np.empty((c, ho, wo), dtype=np.float32)
    arg = np.empty((c, ho, wo), dtype=np.int64)
    for ch in prange(c):
        for i in range(ho):
            ib = i * sh
            for j in range(wo):
                jb = j * sw
                best = x[ch, ib, jb]
                bi = ch * h * w + ib * w + jb
                for ki in range(kh):
                    for kj in range(kw):
                        v = x[ch, ib + ki, jb + kj]
                        if v > best:
                            best = v
                            bi = ch * h * w + (ib + ki) * w + (jb + kj)
                out[ch, i, j] = best
                arg[ch, i, j] = bi
    return out, arg


@njit(cache=True, parallel=True, nogil=True)
def maxpool_scatter(g, arg, c, h, w):
    acc = np.zeros((c, h, w), dtype=np.float64)
    ho, wo = g.shape[1], g.shape[2]
    for ch in prange(c):
        base = ch * h * w
        for i in range(ho):
            for j in range(wo):
                f = arg[ch, i, j] - base
                acc[ch, f // w, f % w] += np.float64(g[ch, i, j])
    return acc.astype(np.float32)


@njit(cache=True, parallel=True, nogil=True)
def avgpool_forward(x, kh, kw, sh, sw):
    c, h, w = x.shape
    ho = (h - kh) // sh + 1
    wo = (w - kw) // sw + 1
    out = np.empty((c, ho, wo), dtype=np.float32)
    inv = 1.0 / (kh * kw)
    for ch in prange(c):
        for i in range(ho):
            for j in range(wo):
                acc = 0.0
                for ki in range(kh):
                    for kj in range(kw):
                        acc += np.float64(x[ch, i * sh + ki, j * sw + kj])
                out[ch, i, j] = np.float32(acc * inv)
    return out


@njit(cache=True, parallel=True, nogil=True)
def avgpool_vjp(g, kh, kw, sh, sw, h, w):
    c, ho, wo = g.shape
    gx = np.zeros((c, h, w), dtype=np.float64)
    inv = 1.0 / (kh * kw)
    for ch in prange(c):
        for i in range(ho):
            for j in range(wo):
                share = np.float64(g[ch, i, j]) * inv
                for ki in range(kh):
                    for kj in range(kw):
                        gx[ch, i * sh + ki, j * sw + kj] += share
    return gx.astype(np.float32)


@njit(cache=True, parallel=True, nogil=True)
def bilinear_resize(x, oh, ow):
    c, h, w = x.shape
    out = np.empty((c, oh, ow), dtype=np.float32)
    for ch in prange(c):
        for oy in range(oh):
            sy = (oy + 0.5) * (h / oh) - 0.5
            if sy < 0.0:
                sy = 0.0
            if sy > h - 1.0:
                sy = h - 1.0
            y0 = int(np.floor(sy))
            y1 = min(y0 + 1, h - 1)
            fy = sy - y0
            for ox in range(ow):
                sx = (ox + 0.5) * (w / ow) - 0.5
                if sx < 0.0:
                    sx = 0.0
                if sx > w - 1.0:
                    sx = w - 1.0
                x0 = int(np.floor(sx))
                x1 = min(x0 + 1, w - 1)
                fx = sx - x0
                tl = np.float64(x[ch, y0, x0])
                tr = np.float64(x[ch, y0, x1])
                bl = np.float64(x[ch, y1, x0])
                br = np.float64(x[ch, y1, x1])
                top = tl + (tr - tl) * fx
                bot = bl + (br - bl) * fx
                out[ch, oy, ox] = np.float32(top + (bot - top) * fy)
    return out


@njit(cache=True, nogil=True)
def _reflect(i, n):
    if i < 0:
        return -i
    if i >= n:
        return 2 * n - 2 - i
    return i


@njit(cache=True, parallel=True, nogil=True)
def gaussian_blur_reflect(x, kernel):
    c, h, w = x.shape
    k = kernel.size
    pad = k // 2
    tmp = np.empty((c, h, w), dtype=np.float64)
    out = np.empty((c, h, w), dtype=np.float32)
    for ch in prange(c):
        for i in range(h):
            for j in range(w):
                acc = 0.0
                for t in range(k):
                    acc += np.float64(kernel[t]) * \
                        np.float64(x[ch, i, _reflect(j + t - pad, w)])
                tmp[ch, i, j] = acc
        for i in range(h):
            for j in range(w):
                acc = 0.0
                for t in range(k):
                    acc += np.float64(kernel[t]) * tmp[ch, _reflect(i + t - pad, h), j]
                out[ch, i, j] = np.float32(acc)
    return out
