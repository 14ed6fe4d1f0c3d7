"""Cascaded linear shape regression over shape-indexed deep descriptors.

Stage ``t`` updates the shape additively, ``S_t = S_{t-1} + W_t @ phi_t``,
where ``phi_t`` concatenates the descriptors at every landmark of ``S_{t-1}``
plus one constant feature. ``W_t`` minimizes the ridge objective

    sum_i ||dS_i - W phi_i||^2 + lam * ||W||_F^2

solved in closed form. With fewer samples than features the dual form
``W = Y^T (Phi Phi^T + lam I)^-1 Phi`` is used, which also makes every
predicted increment a linear combination of the training targets.
"""
from __future__ import annotations

import logging
import struct
import time
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.linalg

from .errors import (
    ConfigurationError,
    InputError,
    NumericalError,
    ParseError,
    ShapeMismatchError,
    WeightHashMismatch,
)
from .net import Engine, LayerSpec, StageConfig, _Reader, check_magic, standard_stages
from .shape import (
    FaceFrame,
    PatchSchedule,
    as_shape,
    assemble_features,
    augment,
    canonical_image,
    extract_patches,
    flatten,
    from_canonical,
    mean_shape,
    perturb_shape,
    to_canonical,
    unflatten,
)

log = logging.getLogger(__name__)

DEFAULT_LAMBDA_GRID = (1e-2, 1e-1, 1.0, 1e1, 1e2, 1e3)


@dataclass(eq=False)
class StageRegressor:
    W: np.ndarray  # (2L, D)
    lam: float

    def apply(self, features: np.ndarray) -> np.ndarray:
        return self.W @ np.array(features, dtype=np.float64)


def _spd_solve(G: np.ndarray, R: np.ndarray, lam: float) -> np.ndarray:
    if lam == 0:
        rcond = 1.0 / np.linalg.cond(G)
        if not rcond > G.shape[0] * np.finfo(float).eps:
            raise NumericalError(f"normal equations are singular (rcond={rcond:.3g}); use lambda > 0")
    try:
        return scipy.linalg.cho_solve(scipy.linalg.cho_factor(G, lower=True), R)
    except scipy.linalg.LinAlgError:
        pass
    log.debug("cholesky failed, falling back to pivoted LDL^T solve")
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("error", scipy.linalg.LinAlgWarning)
            return scipy.linalg.solve(G, R, assume_a="sym")
    except (scipy.linalg.LinAlgError, scipy.linalg.LinAlgWarning) as exc:
        raise NumericalError(f"cannot solve normal equations ({exc}); use lambda > 0") from None


def train_stage(features, targets, lam: float) -> StageRegressor:
    """Ridge-regress ``targets`` (N, 2L) on ``features`` (N, D)."""
    X = np.asarray(features, dtype=np.float64)
    Y = np.asarray(targets, dtype=np.float64)
    if X.ndim != 2 or Y.ndim != 2 or X.shape[0] != Y.shape[0] or X.shape[0] < 1:
        raise InputError(f"features {X.shape} and targets {Y.shape} must be (N, D) and (N, 2L) with N >= 1")
    if not lam >= 0:
        raise InputError(f"lambda must be >= 0, got {lam}")
    if not (np.isfinite(X).all() and np.isfinite(Y).all()):
        raise InputError("non-finite features or targets")
    n, d = X.shape
    if n <= d:
        G = X @ X.T
        G[np.diag_indices(n)] += lam
        W = _spd_solve(G, Y, lam).T @ X
    else:
        G = X.T @ X
        G[np.diag_indices(d)] += lam
        W = _spd_solve(G, X.T @ Y, lam).T
    return StageRegressor(np.ascontiguousarray(W), float(lam))


def ridge_objective(W, features, targets, lam) -> float:
    R = np.asarray(targets) - np.asarray(features) @ np.asarray(W).T
    return float((R * R).sum() + lam * (np.asarray(W) ** 2).sum())


def select_lambda(features, targets, grid=DEFAULT_LAMBDA_GRID, folds: int = 5, seed: int = 0):
    """k-fold cross-validated ridge strength; returns ``(best, {lam: mean sq. error})``.

    One Gram matrix and one eigendecomposition per fold serve the whole grid.
    """
    X = np.asarray(features, dtype=np.float64)
    Y = np.asarray(targets, dtype=np.float64)
    n = X.shape[0]
    if n < 2:
        raise InputError("cross-validation needs at least 2 samples")
    grid = [float(g) for g in grid]
    if not grid or min(grid) <= 0:
        raise ConfigurationError("lambda grid must be non-empty and positive")
    K = X @ X.T
    perm = np.random.default_rng(seed).permutation(n)
    sse = np.zeros(len(grid))
    for va in np.array_split(perm, min(folds, n)):
        tr = np.setdiff1d(perm, va)
        evals, Q = np.linalg.eigh(K[np.ix_(tr, tr)])
        QtY = Q.T @ Y[tr]
        Kva = K[np.ix_(va, tr)]
        for j, lam in enumerate(grid):
            alpha = Q @ (QtY / (np.maximum(evals, 0.0) + lam)[:, None])
            resid = Y[va] - Kva @ alpha
            sse[j] += (resid * resid).sum()
    scores = {lam: s / Y.size for lam, s in zip(grid, sse)}
    return grid[int(np.argmin(sse))], scores


@dataclass(eq=False)
class CascadeModel:
    mean_shape: np.ndarray
    stages: list
    schedule: PatchSchedule
    stage_configs: list
    weights_ref: str

    def __post_init__(self):
        self.mean_shape = as_shape(self.mean_shape)
        if not (len(self.stages) == len(self.schedule) == len(self.stage_configs)):
            raise ConfigurationError(
                f"{len(self.stages)} regressors, {len(self.schedule)} patch sizes, "
                f"{len(self.stage_configs)} stage configs"
            )
        for reg in self.stages:
            if reg.W.shape[0] != 2 * self.n_landmarks:
                raise ConfigurationError(f"regressor has {reg.W.shape[0]} rows for {self.n_landmarks} landmarks")

    @property
    def n_landmarks(self) -> int:
        return len(self.mean_shape)

    @property
    def n_stages(self) -> int:
        return len(self.stages)


def check_schedule(schedule: PatchSchedule, configs) -> None:
    if len(schedule) != len(configs):
        raise ConfigurationError(f"schedule has {len(schedule)} sizes for {len(configs)} stages")
    for size, cfg in zip(schedule.sizes, configs):
        if size != cfg.input_size:
            raise ConfigurationError(f"stage {cfg.stage_index}: patch size {size} != network input {cfg.input_size}")


def check_engine(model: CascadeModel, engine: Engine) -> None:
    if engine.weights_digest != model.weights_ref:
        raise WeightHashMismatch(
            f"model was trained with weights {model.weights_ref[:12]}..., engine holds {engine.weights_digest[:12]}..."
        )
    for cfg in model.stage_configs:
        if engine.stage(cfg.stage_index) != cfg:
            raise ConfigurationError(f"engine stage {cfg.stage_index} differs from the model's config")


def shape_features(engine: Engine, stage_index: int, image: np.ndarray, shape: np.ndarray, size: int) -> np.ndarray:
    """Shape-indexed feature vector plus the trailing constant 1."""
    desc = engine.forward_batch(stage_index, extract_patches(image, shape, size))
    return np.append(assemble_features(desc), 1.0)


def run_cascade(model: CascadeModel, image: np.ndarray, engine: Engine, init=None):
    """Run every stage on a canonical-frame image.

    Returns ``(shapes, increments)``: the ``T + 1`` intermediate shapes starting
    from the initialization, and the ``T`` flat increments.
    """
    cur = model.mean_shape.copy() if init is None else as_shape(init).copy()
    shapes, incs = [cur], []
    for reg, size, cfg in zip(model.stages, model.schedule.sizes, model.stage_configs):
        inc = reg.apply(shape_features(engine, cfg.stage_index, image, cur, size))
        cur = cur + unflatten(inc)
        shapes.append(cur)
        incs.append(inc)
    return shapes, incs


def predict(model: CascadeModel, image: np.ndarray, frame: FaceFrame, engine: Engine) -> np.ndarray:
    """Landmarks in image coordinates for the face in ``frame``."""
    check_engine(model, engine)
    canon = canonical_image(image, frame)
    shapes, _ = run_cascade(model, canon, engine)
    return from_canonical(shapes[-1], frame)


@dataclass
class TrainConfig:
    stage_configs: list = field(default_factory=standard_stages)
    schedule: PatchSchedule | None = None  # defaults to the configs' input sizes
    lam: float | None = None  # None selects by cross-validation
    lambda_grid: tuple = DEFAULT_LAMBDA_GRID
    cv_folds: int = 5
    augment: bool = True
    n_rotations: int = 1
    max_rotation_deg: float = 15.0
    perturb_init: bool = True
    init_scale_range: tuple = (0.9, 1.1)
    init_max_shift: float = 0.05
    mean_shape: np.ndarray | None = None
    seed: int = 0
    threads: int = 1
    keep_targets: bool = False

    def resolved_schedule(self) -> PatchSchedule:
        sched = self.schedule or PatchSchedule(tuple(c.input_size for c in self.stage_configs))
        check_schedule(sched, self.stage_configs)
        return sched


@dataclass
class TrainReport:
    stage_errors: list  # mean canonical-pixel error, [initial, after stage 1, ...]
    lambdas: list
    cv_scores: list
    n_samples: int
    seconds: float = 0.0
    targets: list = field(default_factory=list)


def parallel_map(fn, items, threads: int):
    if threads <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def _mean_error(shapes, gts) -> float:
    return float(np.mean([np.hypot(*(s - g).T).mean() for s, g in zip(shapes, gts)]))


def prepare_samples(dataset, config: TrainConfig) -> list:
    """Canonical-frame (image, shape) pairs, augmented when configured."""
    out = []
    for i, (image, frame, shape) in enumerate(dataset):
        sample = (canonical_image(image, frame), to_canonical(shape, frame))
        if config.augment:
            out.extend(augment(sample, [config.seed, i], config.max_rotation_deg, config.n_rotations))
        else:
            out.append(sample)
    return out


def train_cascade(dataset, config: TrainConfig, engine: Engine):
    """Train all stages; returns ``(CascadeModel, TrainReport)``.

    ``dataset`` holds ``(image, FaceFrame, shape)`` triples with shapes in image
    coordinates.
    """
    t0 = time.perf_counter()
    schedule = config.resolved_schedule()
    for cfg in config.stage_configs:
        engine.stage(cfg.stage_index)
    samples = prepare_samples(dataset, config)
    if len(samples) < 2:
        raise InputError(f"need at least 2 training samples after augmentation, got {len(samples)}")
    images = [s[0] for s in samples]
    gts = [s[1] for s in samples]
    mean = mean_shape(gts) if config.mean_shape is None else as_shape(config.mean_shape)
    if len(mean) != len(gts[0]):
        raise InputError(f"mean shape has {len(mean)} points, samples have {len(gts[0])}")
    if config.perturb_init:
        cur = [
            perturb_shape(mean, np.random.default_rng([config.seed, 1, i]), config.init_scale_range, config.init_max_shift)
            for i in range(len(samples))
        ]
    else:
        cur = [mean.copy() for _ in samples]

    errors = [_mean_error(cur, gts)]
    regs, lambdas, cv_scores, kept = [], [], [], []
    log.info("training on %d samples, initial error %.4f", len(samples), errors[0])
    for t, (cfg, size) in enumerate(zip(config.stage_configs, schedule.sizes)):
        X = np.stack(
            parallel_map(lambda k: shape_features(engine, cfg.stage_index, images[k], cur[k], size), range(len(samples)), config.threads)
        )
        Y = np.stack([flatten(g - c) for g, c in zip(gts, cur)])
        if config.lam is None:
            lam, scores = select_lambda(X, Y, config.lambda_grid, config.cv_folds, seed=config.seed + t)
        else:
            lam, scores = float(config.lam), {}
        reg = train_stage(X, Y, lam)
        cur = [c + unflatten(reg.apply(x)) for c, x in zip(cur, X)]
        errors.append(_mean_error(cur, gts))
        regs.append(reg)
        lambdas.append(lam)
        cv_scores.append(scores)
        if config.keep_targets:
            kept.append(Y)
        log.info("stage %d: lambda=%g error %.4f", t + 1, lam, errors[-1])
        if errors[-1] >= errors[-2]:
            log.warning("stage %d did not reduce training error (%.4f -> %.4f)", t + 1, errors[-2], errors[-1])
    model = CascadeModel(mean, regs, schedule, list(config.stage_configs), engine.weights_digest)
    report = TrainReport(errors, lambdas, cv_scores, len(samples), time.perf_counter() - t0, kept)
    return model, report


# -- model file -----------------------------------------------------------

MODEL_MAGIC = b"LDDRM"
MODEL_VERSION = b"001"
_KINDS = ("conv", "relu", "lrn", "maxpool")


def _pack_layer(layer: LayerSpec) -> bytes:
    raw = layer.name.encode("utf-8")
    return (
        struct.pack("<BI", _KINDS.index(layer.kind), len(raw))
        + raw
        + struct.pack("<5IB", layer.kernel, layer.stride, layer.pad, layer.out_channels, layer.groups, layer.ceil_mode)
        + struct.pack("<I3d", int(layer.lrn[0]), *map(float, layer.lrn[1:]))
    )


def model_to_bytes(model: CascadeModel) -> bytes:
    L, T = model.n_landmarks, model.n_stages
    cols = model.stages[0].W.shape[1]
    parts = [MODEL_MAGIC + MODEL_VERSION, struct.pack("<3I", L, T, cols), bytes.fromhex(model.weights_ref)]
    parts.append(model.mean_shape.astype("<f8").tobytes())
    parts.append(struct.pack(f"<{T}I", *model.schedule.sizes))
    for cfg in model.stage_configs:
        parts.append(struct.pack("<3I", cfg.stage_index, cfg.input_size, len(cfg.layers)))
        parts.extend(_pack_layer(layer) for layer in cfg.layers)
    for reg in model.stages:
        parts.append(struct.pack("<d2I", reg.lam, *reg.W.shape))
        parts.append(reg.W.astype("<f8").tobytes())
    return b"".join(parts)


def save_model(model: CascadeModel, path):
    Path(path).write_bytes(model_to_bytes(model))


def _read_layer(r: _Reader) -> LayerSpec:
    kind = r.take(1, "layer kind")[0]
    if kind >= len(_KINDS):
        raise ParseError(f"unknown layer kind code {kind}")
    name = r.take(r.u32("layer name length"), "layer name").decode("utf-8", errors="strict")
    kernel, stride, pad, out_c, groups = r.u32(f"{name} params", 5)
    ceil = r.take(1, f"{name} ceil flag")[0]
    n = r.u32(f"{name} lrn size")
    a, b, k = struct.unpack("<3d", r.take(24, f"{name} lrn params"))
    try:
        return LayerSpec(_KINDS[kind], name, kernel, stride, pad, out_c, groups, bool(ceil), (n, a, b, k))
    except ConfigurationError as exc:
        raise ShapeMismatchError(str(exc)) from None


def model_from_bytes(data: bytes) -> CascadeModel:
    check_magic(data, MODEL_MAGIC, MODEL_VERSION)
    r = _Reader(data)
    r.pos = 8
    L, T, cols = r.u32("model header", 3)
    if L < 1 or T < 1 or cols < 1:
        raise ShapeMismatchError(f"empty model header: {L} landmarks, {T} stages, {cols} features")
    digest = r.take(32, "weight hash").hex()
    mean = r.f64(2 * L, "mean shape").reshape(L, 2)
    sizes = struct.unpack(f"<{T}I", r.take(4 * T, "schedule"))
    configs = []
    for _ in range(T):
        idx, inp, nl = r.u32("stage header", 3)
        configs.append(StageConfig(idx, inp, tuple(_read_layer(r) for _ in range(nl))))
    regs = []
    for t in range(T):
        lam = struct.unpack("<d", r.take(8, "stage lambda"))[0]
        rows, c = r.u32("stage dims", 2)
        if rows != 2 * L or c != cols:
            raise ShapeMismatchError(f"stage {t + 1}: W is {rows}x{c}, header implies {2 * L}x{cols}")
        regs.append(StageRegressor(r.f64(rows * c, f"stage {t + 1} W").reshape(rows, c), lam))
    r.done()
    try:
        schedule = PatchSchedule(sizes)
        check_schedule(schedule, configs)
        return CascadeModel(mean, regs, schedule, configs, digest)
    except ConfigurationError as exc:
        raise ShapeMismatchError(str(exc)) from None


def load_model(path) -> CascadeModel:
    return model_from_bytes(Path(path).read_bytes())
