"""numba twins of the numpy kernels; same signatures, same accumulation order.

im2col is re-exported from the numpy backend: a strided view plus one
contiguous copy is memory-bound and beat every compiled loop we tried.
"""
import numpy as np
from numba import njit

from ._numpy import im2col  # noqa: F401


@njit(cache=True, nogil=True)
def maxpool(x, k, stride, pad, oh, ow):
    b, h, w, c = x.shape
    out = np.empty((b, oh, ow, c))
    for n in range(b):
        for oy in range(oh):
            y0 = max(oy * stride - pad, 0)
            y1 = min(oy * stride - pad + k, h)
            for ox in range(ow):
                x0 = max(ox * stride - pad, 0)
                x1 = min(ox * stride - pad + k, w)
                for ch in range(c):
                    m = -np.inf
                    for iy in range(y0, y1):
                        for ix in range(x0, x1):
                            v = x[n, iy, ix, ch]
                            if v > m:
                                m = v
                    out[n, oy, ox, ch] = m
    return out


@njit(cache=True, nogil=True)
def lrn(x, n, alpha, beta, k):
    b, h, w, c = x.shape
    half = n // 2
    scale = alpha / n
    out = np.empty_like(x)
    three_quarters = beta == 0.75
    for i in range(b):
        for yy in range(h):
            for xx in range(w):
                for ch in range(c):
                    s = 0.0
                    for cc in range(max(ch - half, 0), min(ch + half + 1, c)):
                        v = x[i, yy, xx, cc]
                        s += v * v
                    t = k + scale * s
                    if three_quarters:
                        r = np.sqrt(t)
                        out[i, yy, xx, ch] = x[i, yy, xx, ch] / (r * np.sqrt(r))
                    else:
                        out[i, yy, xx, ch] = x[i, yy, xx, ch] / t**beta
    return out


@njit(cache=True, nogil=True)
def bilinear_gather(img, xs, ys):
    h, w, c = img.shape
    m = xs.shape[0]
    out = np.empty((m, c))
    for i in range(m):
        x = min(max(xs[i], 0.0), w - 1.0)
        y = min(max(ys[i], 0.0), h - 1.0)
        x0 = int(np.floor(x))
        y0 = int(np.floor(y))
        x1 = min(x0 + 1, w - 1)
        y1 = min(y0 + 1, h - 1)
        fx = x - x0
        fy = y - y0
        for ch in range(c):
            top = img[y0, x0, ch] * (1.0 - fx) + img[y0, x1, ch] * fx
            bot = img[y1, x0, ch] * (1.0 - fx) + img[y1, x1, ch] * fx
            out[i, ch] = top * (1.0 - fy) + bot * fy
    return out
