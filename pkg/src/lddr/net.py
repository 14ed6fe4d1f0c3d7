"""Descriptor network: stage configs, geometry calculus, weights, forward passes.

All four regression stages share one set of conv weights; they differ only in
input size and in the strides of conv1/max1/conv2/max2::

    stage  input  conv1  max1  conv2  max2
      1      92     4     2      1     1
      2      68     3     2      1     1
      3      42     2     1      1     2
      4      21     1     1      1     1

Pooling rounds up (ceil mode). With floor rounding stages 1-3 do not close to
a 1x1 conv5 map; with ceil rounding every stage does, e.g. stage 1 runs
92 -> 21 -> 11 -> 7 -> 7 -> 5 -> 3 -> 1.
"""
from __future__ import annotations

import hashlib
import io
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import (
    ConfigurationError,
    GeometryError,
    ParseError,
    ShapeMismatchError,
    TruncationError,
    UnsupportedVersionError,
)
from .ops import (
    LRN_ALPHA,
    LRN_BETA,
    LRN_K,
    LRN_SIZE,
    ConvWeights,
    as_tensor,
    check_pool_geometry,
    conv2d_batch,
    conv_output_size,
    lrn_batch,
    maxpool2d_batch,
    pack_conv,
    relu_batch,
)

DESCRIPTOR_DIM = 256
STAGE_INPUT_SIZES = (92, 68, 42, 21)
# (conv1, max1, conv2, max2) strides per stage
STAGE_STRIDES = {1: (4, 2, 1, 1), 2: (3, 2, 1, 1), 3: (2, 1, 1, 2), 4: (1, 1, 1, 1)}
DEFAULT_CHANNELS = (96, 256, 384, 384, 256)
DEFAULT_GROUPS = (1, 2, 1, 2, 2)
CONV_KERNELS = (11, 5, 3, 3, 3)
CONV_NAMES = ("conv1", "conv2", "conv3", "conv4", "conv5")
LAYER_KINDS = ("conv", "relu", "lrn", "maxpool")


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    name: str
    kernel: int = 1
    stride: int = 1
    pad: int = 0
    out_channels: int = 0
    groups: int = 1
    ceil_mode: bool = False
    lrn: tuple = (LRN_SIZE, LRN_ALPHA, LRN_BETA, LRN_K)

    def __post_init__(self):
        if self.kind not in LAYER_KINDS:
            raise ConfigurationError(f"{self.name}: unknown layer kind {self.kind!r}")
        if self.stride < 1 or self.pad < 0 or self.kernel < 1:
            raise ConfigurationError(f"{self.name}: need stride >= 1, pad >= 0, kernel >= 1")
        if self.kind == "conv" and (self.out_channels < 1 or self.groups < 1):
            raise ConfigurationError(f"{self.name}: conv needs out_channels >= 1 and groups >= 1")


@dataclass(frozen=True)
class StageConfig:
    stage_index: int
    input_size: int
    layers: tuple

    @property
    def conv_layers(self) -> list[LayerSpec]:
        return [l for l in self.layers if l.kind == "conv"]

    def strides(self) -> dict[str, int]:
        return {l.name: l.stride for l in self.layers if l.kind in ("conv", "maxpool")}


def _conv(name, kernel, out, groups=1, stride=1, pad=0):
    return LayerSpec("conv", name, kernel=kernel, stride=stride, pad=pad, out_channels=out, groups=groups)


def _pool(name, stride, pad=1, kernel=3):
    return LayerSpec("maxpool", name, kernel=kernel, stride=stride, pad=pad, ceil_mode=True)


def build_layers(strides=(1, 1, 1, 1), channels=DEFAULT_CHANNELS, groups=DEFAULT_GROUPS) -> tuple:
    """The descriptor stack: conv pads 0, pool pads 1, no fully connected layers."""
    s_c1, s_m1, s_c2, s_m2 = strides
    c, g = channels, groups
    return (
        _conv("conv1", 11, c[0], g[0], s_c1),
        LayerSpec("relu", "relu1"),
        LayerSpec("lrn", "norm1"),
        _pool("max1", s_m1),
        _conv("conv2", 5, c[1], g[1], s_c2),
        LayerSpec("relu", "relu2"),
        LayerSpec("lrn", "norm2"),
        _pool("max2", s_m2),
        _conv("conv3", 3, c[2], g[2]),
        LayerSpec("relu", "relu3"),
        _conv("conv4", 3, c[3], g[3]),
        LayerSpec("relu", "relu4"),
        _conv("conv5", 3, c[4], g[4]),
    )


def standard_stage_config(stage: int, channels=DEFAULT_CHANNELS, groups=DEFAULT_GROUPS) -> StageConfig:
    if stage not in STAGE_STRIDES:
        raise ConfigurationError(f"stage must be 1..4, got {stage}")
    return StageConfig(stage, STAGE_INPUT_SIZES[stage - 1], build_layers(STAGE_STRIDES[stage], channels, groups))


def standard_stages(channels=DEFAULT_CHANNELS, groups=DEFAULT_GROUPS) -> list[StageConfig]:
    return [standard_stage_config(s, channels, groups) for s in (1, 2, 3, 4)]


def original_network_config() -> StageConfig:
    """The unmodified base network up to pool5 (fully connected layers dropped).

    Its conv5 receptive field is 163 px; the 195 px figure usually quoted for
    this network is reached only after pool5.
    """
    layers = (
        _conv("conv1", 11, 96, 1, stride=4),
        LayerSpec("relu", "relu1"),
        LayerSpec("lrn", "norm1"),
        _pool("max1", 2, pad=0),
        _conv("conv2", 5, 256, 2, pad=2),
        LayerSpec("relu", "relu2"),
        LayerSpec("lrn", "norm2"),
        _pool("max2", 2, pad=0),
        _conv("conv3", 3, 384, 1, pad=1),
        LayerSpec("relu", "relu3"),
        _conv("conv4", 3, 384, 2, pad=1),
        LayerSpec("relu", "relu4"),
        _conv("conv5", 3, 256, 2, pad=1),
        LayerSpec("relu", "relu5"),
        _pool("pool5", 2, pad=0),
    )
    return StageConfig(0, 227, layers)


# -- geometry ---------------------------------------------------------------


def _layer_out(layer: LayerSpec, n: int) -> int:
    if layer.kind == "conv":
        if n + 2 * layer.pad < layer.kernel:
            raise GeometryError(f"{layer.name}: {layer.kernel}-wide window does not fit input {n}")
        return conv_output_size(n, layer.kernel, layer.stride, layer.pad)
    if layer.kind == "maxpool":
        try:
            return check_pool_geometry(n, n, layer.kernel, layer.stride, layer.pad, layer.ceil_mode)[0]
        except GeometryError as exc:
            raise GeometryError(f"{layer.name}: {exc}") from None
    return n


def output_geometry(cfg: StageConfig, input_size: int | None = None, in_channels: int = 3) -> list[tuple]:
    """Per-layer ``(name, out_h, out_w, out_channels)`` for a square input."""
    n = cfg.input_size if input_size is None else input_size
    ch = in_channels
    rows = []
    for layer in cfg.layers:
        if n < 1:
            raise GeometryError(f"{layer.name}: input dimension {n} < 1")
        n = _layer_out(layer, n)
        if n < 1:
            raise GeometryError(f"{layer.name}: output dimension {n} < 1")
        if layer.kind == "conv":
            ch = layer.out_channels
        rows.append((layer.name, n, n, ch))
    return rows


def _min_layer_input(layer: LayerSpec, target: int) -> int:
    k, s, p = layer.kernel, layer.stride, layer.pad
    if layer.kind == "conv":
        need = (target - 1) * s + k - 2 * p
    elif layer.kind == "maxpool":
        if layer.ceil_mode:
            need = (target - 2) * s + 1 + k - 2 * p if target >= 2 else k - 2 * p
        else:
            need = (target - 1) * s + k - 2 * p
    else:
        need = target
    return max(need, 1)


def min_input_size(cfg: StageConfig) -> int:
    """Smallest square input that still yields a >= 1x1 final map.

    Every layer's size map is monotone, so inverting the layers back to front
    gives the minimum directly; a forward check guards the edge cases where a
    pool window would otherwise land wholly in padding.
    """
    n = 1
    for layer in reversed(cfg.layers):
        n = _min_layer_input(layer, n)
    while True:
        try:
            output_geometry(cfg, n)
            return n
        except GeometryError:
            n += 1


def receptive_field(layers, upto: str) -> tuple[int, int]:
    """``(rf, jump)`` after layer ``upto`` via rf += (k-1)*jump, jump *= stride."""
    layers = list(layers)
    if not layers:
        raise ConfigurationError("empty layer list")
    if upto not in {l.name for l in layers}:
        raise ConfigurationError(f"unknown layer {upto!r}")
    rf, jump = 1, 1
    for layer in layers:
        if layer.kind in ("conv", "maxpool"):
            rf += (layer.kernel - 1) * jump
            jump *= layer.stride
        if layer.name == upto:
            break
    return rf, jump


def geometry_report(cfg: StageConfig, in_channels: int = 3) -> list[tuple]:
    """Rows of ``(layer, out_h, out_w, out_c, rf, jump)``."""
    rows = []
    for name, h, w, c in output_geometry(cfg, in_channels=in_channels):
        rf, jump = receptive_field(cfg.layers, name)
        rows.append((name, h, w, c, rf, jump))
    return rows


# -- weights ----------------------------------------------------------------

WEIGHTS_MAGIC = b"LDDRW"
WEIGHTS_VERSION = b"001"


@dataclass(eq=False)
class WeightSet:
    layers: dict
    version: str = "LDDRW001"

    def __eq__(self, other):
        if not isinstance(other, WeightSet):
            return NotImplemented
        return list(self.layers) == list(other.layers) and all(
            self.layers[k] == other.layers[k] for k in self.layers
        )

    def __getitem__(self, name) -> ConvWeights:
        return self.layers[name]

    @property
    def in_channels(self) -> int:
        return next(iter(self.layers.values())).in_channels

    @property
    def channels(self) -> tuple:
        return tuple(w.out_channels for w in self.layers.values())

    def to_bytes(self) -> bytes:
        buf = io.BytesIO()
        _write_weights(self, buf)
        return buf.getvalue()

    def digest(self) -> str:
        return hashlib.sha256(self.to_bytes()).hexdigest()

    def validate(self):
        prev = None
        for name, w in self.layers.items():
            if prev is not None and w.in_channels != prev.out_channels:
                raise ConfigurationError(
                    f"{name}: expects {w.in_channels} input channels, previous layer emits {prev.out_channels}"
                )
            prev = w
        if prev is not None and prev.out_channels != DESCRIPTOR_DIM:
            raise ConfigurationError(f"last conv emits {prev.out_channels} channels, need {DESCRIPTOR_DIM}")


def init_random_weights(
    seed: int,
    scale: float = 1.0,
    in_channels: int = 3,
    channels=DEFAULT_CHANNELS,
    groups=DEFAULT_GROUPS,
) -> WeightSet:
    """Seeded Gaussian weights with zero biases.

    Each layer draws from N(0, (scale * sqrt(2 / fan_in))**2), so ``scale`` is a
    gain over fan-in scaling and activations keep unit order through the stack.
    """
    if not scale > 0:
        raise ConfigurationError(f"scale must be positive, got {scale}")
    rng = np.random.default_rng(seed)
    layers = {}
    cin = in_channels
    for name, k, cout, g in zip(CONV_NAMES, CONV_KERNELS, channels, groups):
        if cin % g or cout % g:
            raise ConfigurationError(f"{name}: channels {cin}->{cout} not divisible by groups {g}")
        fan_in = (cin // g) * k * k
        w = rng.standard_normal((cout, cin // g, k, k)) * (scale * np.sqrt(2.0 / fan_in))
        layers[name] = ConvWeights(w, np.zeros(cout), g)
        cin = cout
    return WeightSet(layers)


def _write_weights(ws: WeightSet, fh):
    fh.write(WEIGHTS_MAGIC + WEIGHTS_VERSION)
    fh.write(struct.pack("<I", len(ws.layers)))
    for name, w in ws.layers.items():
        raw = name.encode("utf-8")
        fh.write(struct.pack("<I", len(raw)))
        fh.write(raw)
        fh.write(struct.pack("<5I", w.out_channels, w.in_channels, w.kernel_h, w.kernel_w, w.groups))
        fh.write(w.weights.astype("<f8").tobytes())
        fh.write(w.bias.astype("<f8").tobytes())


def save_weights(weights: WeightSet, path):
    Path(path).write_bytes(weights.to_bytes())


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.data):
            raise TruncationError(f"truncated {what}: need {n} bytes at offset {self.pos}, file has {len(self.data)}")
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def u32(self, what: str, count: int = 1):
        vals = struct.unpack(f"<{count}I", self.take(4 * count, what))
        return vals[0] if count == 1 else vals

    def f64(self, count: int, what: str) -> np.ndarray:
        return np.frombuffer(self.take(8 * count, what), dtype="<f8").astype(np.float64)

    def done(self):
        if self.pos != len(self.data):
            raise TruncationError(f"{len(self.data) - self.pos} trailing bytes after declared payload")


def check_magic(data: bytes, family: bytes, version: bytes):
    if len(data) < 8 and (family + version).startswith(data):
        raise TruncationError(f"file ends inside the {len(family + version)}-byte magic ({len(data)} bytes)")
    if len(data) < 8 or data[:5] != family:
        raise ParseError(f"bad magic {data[:8]!r}, expected {family + version!r}")
    if data[5:8] != version:
        raise UnsupportedVersionError(f"unsupported version {data[5:8]!r} (this build reads {version!r})")


def weights_from_bytes(data: bytes) -> WeightSet:
    check_magic(data, WEIGHTS_MAGIC, WEIGHTS_VERSION)
    r = _Reader(data)
    r.pos = 8
    count = r.u32("layer count")
    layers = {}
    for _ in range(count):
        nlen = r.u32("name length")
        try:
            name = r.take(nlen, "layer name").decode("utf-8")
        except UnicodeDecodeError as exc:
            raise ParseError(f"layer name is not UTF-8: {exc}") from None
        out_c, in_c, kh, kw, groups = r.u32(f"{name} header", 5)
        if groups < 1 or in_c % groups or out_c % groups or min(out_c, in_c, kh, kw) < 1:
            raise ShapeMismatchError(f"{name}: inconsistent dims out={out_c} in={in_c} k={kh}x{kw} groups={groups}")
        w = r.f64(out_c * (in_c // groups) * kh * kw, f"{name} weights").reshape(out_c, in_c // groups, kh, kw)
        b = r.f64(out_c, f"{name} bias")
        if name in layers:
            raise ShapeMismatchError(f"duplicate layer {name!r}")
        layers[name] = ConvWeights(w, b, groups)
    r.done()
    return WeightSet(layers)


def load_weights(path) -> WeightSet:
    return weights_from_bytes(Path(path).read_bytes())


# -- forward ----------------------------------------------------------------


def check_stage(cfg: StageConfig, weights: WeightSet):
    """Raise ConfigurationError unless ``cfg`` can run on ``weights`` and emit 1x1x256."""
    convs = cfg.conv_layers
    names = [l.name for l in convs]
    if names != list(weights.layers):
        raise ConfigurationError(f"stage {cfg.stage_index}: conv layers {names} vs weights {list(weights.layers)}")
    for spec in convs:
        w = weights[spec.name]
        if (w.kernel_h, w.kernel_w) != (spec.kernel, spec.kernel):
            raise ConfigurationError(f"{spec.name}: config kernel {spec.kernel}, weights {w.kernel_h}x{w.kernel_w}")
        if w.out_channels != spec.out_channels or w.groups != spec.groups:
            raise ConfigurationError(
                f"{spec.name}: config {spec.out_channels} ch / {spec.groups} groups, "
                f"weights {w.out_channels} ch / {w.groups} groups"
            )
    weights.validate()
    geo = output_geometry(cfg, in_channels=weights.in_channels)
    _, h, w, c = geo[-1]
    if (h, w, c) != (1, 1, DESCRIPTOR_DIM):
        raise GeometryError(f"stage {cfg.stage_index}: final map {h}x{w}x{c}, need 1x1x{DESCRIPTOR_DIM}")


_weight_packs = 0


def _pack_all(weights: WeightSet) -> dict:
    global _weight_packs
    _weight_packs += 1
    return {name: pack_conv(w) for name, w in weights.layers.items()}


def _run_stack(x: np.ndarray, cfg: StageConfig, weights: WeightSet, packed: dict) -> np.ndarray:
    for layer in cfg.layers:
        if layer.kind == "conv":
            x = conv2d_batch(x, weights[layer.name], layer.stride, layer.pad, packed[layer.name])
        elif layer.kind == "relu":
            x = relu_batch(x)
        elif layer.kind == "lrn":
            x = lrn_batch(x, *layer.lrn)
        else:
            x = maxpool2d_batch(x, layer.kernel, layer.stride, layer.pad, layer.ceil_mode)
    return x.reshape(x.shape[0], -1)


def _stack_patches(patches, cfg: StageConfig, in_channels: int) -> np.ndarray:
    if isinstance(patches, np.ndarray) and patches.ndim == 4:
        batch = np.asarray(patches, dtype=np.float64)
        items = batch
    else:
        items = [as_tensor(p) for p in patches]
        batch = None
    want = (cfg.input_size, cfg.input_size, in_channels)
    for i, p in enumerate(items):
        if p.shape != want:
            raise GeometryError(f"patch {i}: shape {p.shape}, stage {cfg.stage_index} expects {want}")
    if batch is None:
        batch = np.stack(items) if items else np.zeros((0,) + want)
    return np.ascontiguousarray(batch)


def _forward(batch: np.ndarray, cfg, weights, packed) -> np.ndarray:
    if batch.shape[0] == 0:
        return np.zeros((0, DESCRIPTOR_DIM))
    return _run_stack(batch, cfg, weights, packed)


def forward_batch(patches, stage: StageConfig, weights: WeightSet) -> np.ndarray:
    """Descriptors ``(n, 256)`` for a batch; row i is bit-identical to ``forward_patch(patches[i])``."""
    check_stage(stage, weights)
    batch = _stack_patches(patches, stage, weights.in_channels)
    return _forward(batch, stage, weights, _pack_all(weights))


def forward_patch(patch, stage: StageConfig, weights: WeightSet) -> np.ndarray:
    return forward_batch([patch], stage, weights)[0]


@dataclass(eq=False)
class Engine:
    """One weight copy serving every registered stage.

    Construct through :func:`shared_engine`; immutable afterwards, so forward
    calls may run from several threads at once.
    """

    weights: WeightSet
    stages: dict
    weight_allocations: int = 0
    _packed: dict = field(default_factory=dict, repr=False)
    _digest: str = ""

    @property
    def weights_digest(self) -> str:
        return self._digest

    def stage(self, index: int) -> StageConfig:
        try:
            return self.stages[index]
        except KeyError:
            raise ConfigurationError(f"stage {index} not registered (have {sorted(self.stages)})") from None

    def forward_batch(self, index: int, patches) -> np.ndarray:
        cfg = self.stage(index)
        batch = _stack_patches(patches, cfg, self.weights.in_channels)
        return _forward(batch, cfg, self.weights, self._packed)

    def forward(self, index: int, patch) -> np.ndarray:
        return self.forward_batch(index, [patch])[0]


def shared_engine(weights: WeightSet, stages) -> Engine:
    stages = list(stages)
    table = {}
    for cfg in stages:
        check_stage(cfg, weights)
        if cfg.stage_index in table and table[cfg.stage_index] != cfg:
            raise ConfigurationError(f"two different configs for stage {cfg.stage_index}")
        table[cfg.stage_index] = cfg
    before = _weight_packs
    packed = _pack_all(weights)
    return Engine(weights, table, weight_allocations=_weight_packs - before, _packed=packed, _digest=weights.digest())


def with_strides(cfg: StageConfig, **strides) -> StageConfig:
    """Copy of ``cfg`` with the named layers' strides replaced."""
    layers = tuple(replace(l, stride=strides[l.name]) if l.name in strides else l for l in cfg.layers)
    return replace(cfg, layers=layers)
