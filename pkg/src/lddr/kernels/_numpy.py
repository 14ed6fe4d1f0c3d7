"""Pure-numpy kernels. Reference path when numba is disabled or missing.

All kernels take batched ``(batch, height, width, channels)`` float64 arrays
and assume geometry was validated by the caller.
"""
import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def im2col(x, kh, kw, stride, pad, oh, ow):
    """Gather conv windows into ``(batch, oh*ow, kh*kw*channels)``, (ky, kx, c) order."""
    b, _, _, c = x.shape
    if pad:
        x = np.pad(x, ((0, 0), (pad, pad), (pad, pad), (0, 0)))
    win = sliding_window_view(x, (kh, kw), axis=(1, 2))
    win = win[:, : (oh - 1) * stride + 1 : stride, : (ow - 1) * stride + 1 : stride]
    return np.ascontiguousarray(win.transpose(0, 1, 2, 4, 5, 3)).reshape(b, oh * ow, kh * kw * c)


def maxpool(x, k, stride, pad, oh, ow):
    b, h, w, c = x.shape
    eh = max((oh - 1) * stride + k, h + 2 * pad)
    ew = max((ow - 1) * stride + k, w + 2 * pad)
    # padding never wins a max: fill with -inf
    xp = np.full((b, eh, ew, c), -np.inf)
    xp[:, pad : pad + h, pad : pad + w] = x
    out = np.full((b, oh, ow, c), -np.inf)
    for dy in range(k):
        for dx in range(k):
            np.maximum(
                out,
                xp[:, dy : dy + (oh - 1) * stride + 1 : stride, dx : dx + (ow - 1) * stride + 1 : stride],
                out=out,
            )
    return out


def lrn(x, n, alpha, beta, k):
    c = x.shape[-1]
    half = n // 2
    padded = np.zeros(x.shape[:-1] + (c + 2 * half,))
    padded[..., half : half + c] = x * x
    acc = np.zeros_like(x)
    for d in range(n):
        acc += padded[..., d : d + c]
    t = k + (alpha / n) * acc
    if beta == 0.75:
        # t**0.75 as sqrt(t) * sqrt(sqrt(t)): about twice as fast as pow
        r = np.sqrt(t)
        return x / (r * np.sqrt(r))
    return x / t**beta


def bilinear_gather(img, xs, ys):
    """Sample ``img`` (h, w, c) at float coordinates; out-of-range clamps (edge replication)."""
    h, w, _ = img.shape
    x = np.clip(xs, 0.0, w - 1.0)
    y = np.clip(ys, 0.0, h - 1.0)
    x0 = np.floor(x).astype(np.intp)
    y0 = np.floor(y).astype(np.intp)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = (x - x0)[:, None]
    fy = (y - y0)[:, None]
    top = img[y0, x0] * (1.0 - fx) + img[y0, x1] * fx
    bot = img[y1, x0] * (1.0 - fx) + img[y1, x1] * fx
    return top * (1.0 - fy) + bot * fy
