"""Brute-force references written with plain loops, independent of the package kernels."""
import math

import numpy as np


def conv2d_loops(x, weights, bias, groups, stride, pad):
    h, w, c = x.shape
    cout, cg, kh, kw = weights.shape
    og = cout // groups
    oh = (h + 2 * pad - kh) // stride + 1
    ow = (w + 2 * pad - kw) // stride + 1
    out = np.zeros((oh, ow, cout))
    for oc in range(cout):
        g = oc // og
        for oy in range(oh):
            for ox in range(ow):
                acc = bias[oc]
                for ci in range(cg):
                    for ky in range(kh):
                        for kx in range(kw):
                            iy = oy * stride + ky - pad
                            ix = ox * stride + kx - pad
                            if 0 <= iy < h and 0 <= ix < w:
                                acc += weights[oc, ci, ky, kx] * x[iy, ix, g * cg + ci]
                out[oy, ox, oc] = acc
    return out


def maxpool_loops(x, k, stride, pad, ceil_mode):
    h, w, c = x.shape

    def size(n):
        span = n + 2 * pad - k
        return (math.ceil(span / stride) if ceil_mode else span // stride) + 1

    oh, ow = size(h), size(w)
    out = np.empty((oh, ow, c))
    for ch in range(c):
        for oy in range(oh):
            for ox in range(ow):
                vals = [
                    x[iy, ix, ch]
                    for iy in range(oy * stride - pad, oy * stride - pad + k)
                    for ix in range(ox * stride - pad, ox * stride - pad + k)
                    if 0 <= iy < h and 0 <= ix < w
                ]
                out[oy, ox, ch] = max(vals)
    return out


def lrn_loops(x, n, alpha, beta, k):
    h, w, c = x.shape
    out = np.empty_like(x)
    for yy in range(h):
        for xx in range(w):
            for ch in range(c):
                s = sum(x[yy, xx, j] ** 2 for j in range(max(0, ch - n // 2), min(c, ch + n // 2 + 1)))
                out[yy, xx, ch] = x[yy, xx, ch] / (k + alpha / n * s) ** beta
    return out


def bilinear_loops(img, x, y):
    h, w, _ = img.shape
    x = min(max(x, 0.0), w - 1.0)
    y = min(max(y, 0.0), h - 1.0)
    x0, y0 = int(math.floor(x)), int(math.floor(y))
    x1, y1 = min(x0 + 1, w - 1), min(y0 + 1, h - 1)
    fx, fy = x - x0, y - y0
    return (
        img[y0, x0] * (1 - fx) * (1 - fy)
        + img[y0, x1] * fx * (1 - fy)
        + img[y1, x0] * (1 - fx) * fy
        + img[y1, x1] * fx * fy
    )


def receptive_field_loops(layers):
    """(rf, jump) after each conv/pool layer via the forward recurrence."""
    rf, jump, out = 1, 1, {}
    for name, k, s in layers:
        rf = rf + (k - 1) * jump
        jump = jump * s
        out[name] = (rf, jump)
    return out


def ridge_dense(X, Y, lam):
    """Primal normal equations with an explicit inverse: W = Y^T X (X^T X + lam I)^-1."""
    d = X.shape[1]
    return (np.linalg.inv(X.T @ X + lam * np.eye(d)) @ X.T @ Y).T
