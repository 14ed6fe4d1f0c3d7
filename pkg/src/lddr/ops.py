"""Dense tensors and the four forward kernels: conv2d, relu, lrn, maxpool2d.

A tensor is a float64 ``numpy.ndarray`` of shape ``(height, width, channels)``.
The single-tensor functions here are thin wrappers over batched variants
(``*_batch``) that operate on ``(batch, height, width, channels)`` stacks; the
descriptor network only ever calls the batched forms.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import ConfigurationError, GeometryError

LRN_SIZE = 5
LRN_ALPHA = 1e-4
LRN_BETA = 0.75
LRN_K = 2.0


def as_tensor(data) -> np.ndarray:
    """Validate and convert to a float64 (h, w, c) array; 2-D input gains a channel axis."""
    arr = np.asarray(data, dtype=np.float64)
    if arr.ndim == 2:
        arr = arr[:, :, None]
    if arr.ndim != 3 or min(arr.shape) < 1:
        raise GeometryError(f"tensor must be (height, width, channels) with positive dims, got {arr.shape}")
    return arr


def conv_output_size(n: int, kernel: int, stride: int, pad: int) -> int:
    return (n + 2 * pad - kernel) // stride + 1


def pool_output_size(n: int, kernel: int, stride: int, pad: int, ceil_mode: bool) -> int:
    span = n + 2 * pad - kernel
    steps = -(-span // stride) if ceil_mode else span // stride
    return steps + 1


@dataclass(eq=False)
class ConvWeights:
    """Filter bank in (out_channels, in_channels/groups, kernel_h, kernel_w) order."""

    weights: np.ndarray
    bias: np.ndarray
    groups: int = 1
    _packed: list | None = field(default=None, init=False, repr=False)

    def __post_init__(self):
        self.weights = np.ascontiguousarray(self.weights, dtype=np.float64)
        self.bias = np.ascontiguousarray(self.bias, dtype=np.float64)
        if self.weights.ndim != 4:
            raise ConfigurationError(f"conv weights must be 4-D, got shape {self.weights.shape}")
        if self.groups < 1 or self.out_channels % self.groups:
            raise ConfigurationError(f"out_channels {self.out_channels} not divisible by groups {self.groups}")
        if self.bias.shape != (self.out_channels,):
            raise ConfigurationError(f"bias length {self.bias.size} != out_channels {self.out_channels}")

    @property
    def out_channels(self) -> int:
        return self.weights.shape[0]

    @property
    def in_channels(self) -> int:
        return self.weights.shape[1] * self.groups

    @property
    def kernel_h(self) -> int:
        return self.weights.shape[2]

    @property
    def kernel_w(self) -> int:
        return self.weights.shape[3]

    def __eq__(self, other):
        if not isinstance(other, ConvWeights):
            return NotImplemented
        return (
            self.groups == other.groups
            and np.array_equal(self.weights, other.weights)
            and np.array_equal(self.bias, other.bias)
        )

    def packed(self) -> list[np.ndarray]:
        """Per-group GEMM matrices of shape (kh*kw*cin_g, cout_g), rows in (ky, kx, c) order."""
        if self._packed is None:
            self._packed = pack_conv(self)
        return self._packed


_pack_calls = 0


def pack_conv(w: ConvWeights) -> list[np.ndarray]:
    global _pack_calls
    _pack_calls += 1
    og = w.out_channels // w.groups
    mats = []
    for g in range(w.groups):
        blk = w.weights[g * og : (g + 1) * og]  # (og, cg, kh, kw)
        mats.append(np.ascontiguousarray(blk.transpose(2, 3, 1, 0).reshape(-1, og)))
    return mats


def conv2d_batch(x: np.ndarray, w: ConvWeights, stride: int, pad: int, packed=None) -> np.ndarray:
    b, h, wd, c = x.shape
    if c != w.in_channels:
        raise ConfigurationError(f"input has {c} channels, kernel expects {w.in_channels}")
    if stride < 1 or pad < 0:
        raise ConfigurationError(f"invalid stride {stride} / pad {pad}")
    if h + 2 * pad < w.kernel_h or wd + 2 * pad < w.kernel_w:
        raise GeometryError(
            f"{w.kernel_h}x{w.kernel_w} window larger than padded input {h + 2 * pad}x{wd + 2 * pad}"
        )
    oh = conv_output_size(h, w.kernel_h, stride, pad)
    ow = conv_output_size(wd, w.kernel_w, stride, pad)
    mats = packed if packed is not None else w.packed()
    cg = c // w.groups
    outs = []
    for g, mat in enumerate(mats):
        xg = x if w.groups == 1 else np.ascontiguousarray(x[..., g * cg : (g + 1) * cg])
        cols = kernels.im2col(xg, w.kernel_h, w.kernel_w, stride, pad, oh, ow)
        # stacked matmul: one GEMM per batch item, so item results never depend on batch size
        outs.append(cols @ mat)
    out = outs[0] if len(outs) == 1 else np.concatenate(outs, axis=-1)
    out += w.bias
    return out.reshape(b, oh, ow, w.out_channels)


def relu_batch(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


def lrn_batch(x: np.ndarray, n=LRN_SIZE, alpha=LRN_ALPHA, beta=LRN_BETA, k=LRN_K) -> np.ndarray:
    if n < 1 or n % 2 == 0:
        raise ConfigurationError(f"LRN window must be a positive odd integer, got {n}")
    if k <= 0:
        raise ConfigurationError(f"LRN k must be positive, got {k}")
    return kernels.lrn(np.ascontiguousarray(x), int(n), float(alpha), float(beta), float(k))


def check_pool_geometry(h: int, w: int, kernel: int, stride: int, pad: int, ceil_mode: bool) -> tuple[int, int]:
    """Output dims of a pooling layer, raising if any window covers no real input."""
    if kernel < 1 or stride < 1 or pad < 0:
        raise ConfigurationError(f"invalid pool kernel {kernel} / stride {stride} / pad {pad}")
    out = []
    for n in (h, w):
        if n + 2 * pad < kernel:
            raise GeometryError(f"pool window {kernel} larger than padded input {n + 2 * pad}")
        o = pool_output_size(n, kernel, stride, pad, ceil_mode)
        if pad >= kernel or (o - 1) * stride - pad >= n:
            raise GeometryError(f"pool window lies entirely in padding (input {n}, k={kernel}, s={stride}, p={pad})")
        out.append(o)
    return out[0], out[1]


def maxpool2d_batch(x: np.ndarray, kernel: int, stride: int, pad: int, ceil_mode: bool) -> np.ndarray:
    oh, ow = check_pool_geometry(x.shape[1], x.shape[2], kernel, stride, pad, ceil_mode)
    return kernels.maxpool(np.ascontiguousarray(x), kernel, stride, pad, oh, ow)


def conv2d(input, w: ConvWeights, stride: int = 1, pad: int = 0) -> np.ndarray:
    return conv2d_batch(as_tensor(input)[None], w, stride, pad)[0]


def relu(input) -> np.ndarray:
    return relu_batch(as_tensor(input))


def lrn(input, n: int = LRN_SIZE, alpha: float = LRN_ALPHA, beta: float = LRN_BETA, k: float = LRN_K) -> np.ndarray:
    """Across-channel local response normalization.

    ``out[c] = in[c] / (k + alpha/n * sum(in[c']**2))**beta`` where ``c'`` runs
    over the channels within ``n // 2`` of ``c`` (clipped at the ends).
    """
    return lrn_batch(as_tensor(input)[None], n, alpha, beta, k)[0]


def maxpool2d(input, kernel: int, stride: int = 1, pad: int = 0, ceil_mode: bool = False) -> np.ndarray:
    """Max pooling where padded cells never contribute to a window's max."""
    return maxpool2d_batch(as_tensor(input)[None], kernel, stride, pad, ceil_mode)[0]


def is_finite(t: np.ndarray) -> bool:
    return bool(np.isfinite(t).all())


__all__ = [
    "ConvWeights",
    "as_tensor",
    "conv2d",
    "conv_output_size",
    "lrn",
    "maxpool2d",
    "pool_output_size",
    "relu",
]
