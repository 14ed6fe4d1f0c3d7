"""Landmark shapes, the canonical face frame, patch extraction, augmentation.

A shape is an ``(L, 2)`` float64 array of ``(x, y)`` points. Image pixel
``(row, col)`` sits at coordinate ``(x=col, y=row)``. The canonical frame maps
the face box linearly onto ``[0, 224] x [0, 224]`` (no rotation).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import ConfigurationError, InputError
from .net import DESCRIPTOR_DIM, STAGE_INPUT_SIZES

CANONICAL_SIZE = 224
PATCH_RATIOS = (0.4, 0.3, 0.2, 0.1)

# 1-based left/right partner of each point in the 68-point markup
_FLIP_PAIRS_68 = (
    [(i, 18 - i) for i in range(1, 9)]
    + [(18, 27), (19, 26), (20, 25), (21, 24), (22, 23)]
    + [(32, 36), (33, 35)]
    + [(37, 46), (38, 45), (39, 44), (40, 43), (41, 48), (42, 47)]
    + [(49, 55), (50, 54), (51, 53), (56, 60), (57, 59)]
    + [(61, 65), (62, 64), (66, 68)]
)
MIDLINE_68 = (9, 28, 29, 30, 31, 34, 52, 58, 63, 67)


def as_shape(points) -> np.ndarray:
    arr = np.asarray(points, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[1] != 2 or arr.shape[0] < 1:
        raise InputError(f"shape must be (L, 2), got {arr.shape}")
    if not np.isfinite(arr).all():
        raise InputError("shape has non-finite coordinates")
    return arr


def mean_shape(shapes) -> np.ndarray:
    shapes = [as_shape(s) for s in shapes]
    if not shapes:
        raise InputError("mean of an empty shape list")
    counts = {len(s) for s in shapes}
    if len(counts) != 1:
        raise InputError(f"mixed landmark counts {sorted(counts)}")
    return np.mean(np.stack(shapes), axis=0)


@dataclass(frozen=True)
class FaceFrame:
    """Axis-aligned map between an image face box and the canonical square."""

    x: float
    y: float
    w: float
    h: float
    size: int = CANONICAL_SIZE

    def __post_init__(self):
        if not (self.w > 0 and self.h > 0):
            raise InputError(f"degenerate face box w={self.w} h={self.h}")

    @property
    def box(self) -> tuple:
        return (self.x, self.y, self.w, self.h)

    @property
    def scale(self) -> np.ndarray:
        return np.array([self.size / self.w, self.size / self.h])

    @property
    def origin(self) -> np.ndarray:
        return np.array([self.x, self.y], dtype=np.float64)


def to_canonical(shape, frame: FaceFrame) -> np.ndarray:
    return (as_shape(shape) - frame.origin) * frame.scale


def from_canonical(shape, frame: FaceFrame) -> np.ndarray:
    return as_shape(shape) / frame.scale + frame.origin


def canonical_image(image: np.ndarray, frame: FaceFrame) -> np.ndarray:
    """Resample the face box onto a ``size x size`` canonical image (bilinear, edge-replicated)."""
    n = frame.size
    u = np.arange(n, dtype=np.float64)
    xs = frame.x + u * (frame.w / n)
    ys = frame.y + u * (frame.h / n)
    gx, gy = np.meshgrid(xs, ys)
    flat = kernels.bilinear_gather(np.ascontiguousarray(image, dtype=np.float64), gx.ravel(), gy.ravel())
    return flat.reshape(n, n, image.shape[2])


def _patch_grid(centers: np.ndarray, size: int) -> tuple[np.ndarray, np.ndarray]:
    offs = np.arange(size, dtype=np.float64) - size // 2
    xs = centers[:, 0, None] + offs  # (L, size)
    ys = centers[:, 1, None] + offs
    gx = np.broadcast_to(xs[:, None, :], (len(centers), size, size))
    gy = np.broadcast_to(ys[:, :, None], (len(centers), size, size))
    return gx.ravel(), gy.ravel()


def extract_patches(image: np.ndarray, centers, size: int) -> np.ndarray:
    """``(L, size, size, c)`` patches, top-left at ``center - size // 2``.

    Integer centers copy pixels exactly; fractional centers interpolate
    bilinearly; pixels outside the image replicate the nearest edge.
    """
    if size < 1 or size > CANONICAL_SIZE:
        raise InputError(f"patch size must be in 1..{CANONICAL_SIZE}, got {size}")
    centers = as_shape(centers)
    gx, gy = _patch_grid(centers, size)
    flat = kernels.bilinear_gather(np.ascontiguousarray(image, dtype=np.float64), gx, gy)
    return flat.reshape(len(centers), size, size, image.shape[2])


def extract_patch(image: np.ndarray, center, size: int) -> np.ndarray:
    return extract_patches(image, np.asarray(center, dtype=np.float64).reshape(1, 2), size)[0]


def assemble_features(descriptors) -> np.ndarray:
    """Landmark-major concatenation of per-landmark descriptors."""
    d = np.asarray(descriptors, dtype=np.float64)
    if d.ndim != 2 or d.shape[1] != DESCRIPTOR_DIM or d.shape[0] < 1:
        raise InputError(f"need (L, {DESCRIPTOR_DIM}) descriptors, got {d.shape}")
    return d.reshape(-1)


@dataclass(frozen=True)
class PatchSchedule:
    sizes: tuple = STAGE_INPUT_SIZES
    ratios: tuple = PATCH_RATIOS  # descriptive only; sizes are authoritative

    def __post_init__(self):
        sizes = tuple(int(s) for s in self.sizes)
        if not sizes or min(sizes) < 1 or any(a <= b for a, b in zip(sizes, sizes[1:])):
            raise ConfigurationError(f"patch sizes must be positive and strictly decreasing, got {sizes}")
        object.__setattr__(self, "sizes", sizes)

    def __len__(self):
        return len(self.sizes)


def patch_size_for_stage(schedule: PatchSchedule, stage: int) -> int:
    if not 1 <= stage <= len(schedule.sizes):
        raise InputError(f"stage {stage} outside 1..{len(schedule.sizes)}")
    return schedule.sizes[stage - 1]


def flip_index_map(n_points: int = 68) -> np.ndarray:
    """0-based permutation ``m`` with ``mirrored[i] = flipped_points[m[i]]``."""
    if n_points != 68:
        raise ConfigurationError(f"no left/right map registered for {n_points} points")
    m = np.arange(68)
    for a, b in _FLIP_PAIRS_68:
        m[a - 1], m[b - 1] = b - 1, a - 1
    return m


# -- augmentation ---------------------------------------------------------


def flip_sample(image: np.ndarray, shape: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Mirror a canonical-frame sample left-right and swap left/right landmarks."""
    w = image.shape[1]
    mirrored = as_shape(shape).copy()
    mirrored[:, 0] = (w - 1) - mirrored[:, 0]
    return np.ascontiguousarray(image[:, ::-1]), mirrored[flip_index_map(len(mirrored))]


def _rotation(deg: float) -> np.ndarray:
    t = np.deg2rad(deg)
    c, s = np.cos(t), np.sin(t)
    return np.array([[c, -s], [s, c]])


def rotate_shape(shape, deg: float, center) -> np.ndarray:
    center = np.asarray(center, dtype=np.float64)
    return (as_shape(shape) - center) @ _rotation(deg).T + center


def rotate_image(image: np.ndarray, deg: float, center) -> np.ndarray:
    """Rotate about ``center`` so that points move like :func:`rotate_shape`."""
    h, w, c = image.shape
    gx, gy = np.meshgrid(np.arange(w, dtype=np.float64), np.arange(h, dtype=np.float64))
    src = rotate_shape(np.column_stack([gx.ravel(), gy.ravel()]), -deg, center)
    flat = kernels.bilinear_gather(np.ascontiguousarray(image), src[:, 0].copy(), src[:, 1].copy())
    return flat.reshape(h, w, c)


def augment(sample, seed: int, max_rotation_deg: float = 15.0, n_rotations: int = 1) -> list:
    """Original, its mirror, and ``n_rotations`` random rotations of each.

    Angles are uniform in ``[-max_rotation_deg, max_rotation_deg]`` about the
    image center.
    """
    image, shape = sample
    shape = as_shape(shape)
    base = [(image, shape), flip_sample(image, shape)]
    rng = np.random.default_rng(seed)
    h, w = image.shape[:2]
    center = ((w - 1) / 2.0, (h - 1) / 2.0)
    out = list(base)
    for img, shp in base:
        for _ in range(n_rotations):
            deg = rng.uniform(-max_rotation_deg, max_rotation_deg)
            if deg == 0.0:
                out.append((img, shp.copy()))
            else:
                out.append((rotate_image(img, deg, center), rotate_shape(shp, deg, center)))
    return out


def perturb_shape(shape, rng: np.random.Generator, scale_range=(0.9, 1.1), max_shift: float = 0.05,
                  frame_size: int = CANONICAL_SIZE) -> np.ndarray:
    """Random similarity (scale about the centroid, then shift) of ``shape``."""
    shape = as_shape(shape)
    c = shape.mean(axis=0)
    s = rng.uniform(*scale_range)
    shift = rng.uniform(-max_shift, max_shift, size=2) * frame_size
    return (shape - c) * s + c + shift


def flatten(shape: np.ndarray) -> np.ndarray:
    """(L, 2) -> (2L,) as x1, y1, x2, y2, ..."""
    return np.asarray(shape, dtype=np.float64).reshape(-1)


def unflatten(vec: np.ndarray) -> np.ndarray:
    return np.asarray(vec, dtype=np.float64).reshape(-1, 2)
