"""Normalized mean error (NME) and cumulative error distribution (CED) curves."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InputError, MetricError
from .shape import as_shape

PROTOCOLS = ("interpupil68", "interpupil49", "eye_nose_3pt", "facesize")

# 1-based indices in the 68-point markup
RIGHT_EYE_68 = tuple(range(37, 43))
LEFT_EYE_68 = tuple(range(43, 49))
# inner points: drop the jaw contour (1-17) and the inner-mouth corners (61, 65)
INNER_49 = tuple(i for i in range(18, 69) if i not in (61, 65))
# eye-nose protocol point order: (eye, eye, nose tip)
EYE_NOSE_ORDER = ("eye_a", "eye_b", "nose_tip")


def _idx(one_based) -> np.ndarray:
    return np.asarray(one_based) - 1


def _eye_centers(gt: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    if len(gt) == 68:
        right, left = _idx(RIGHT_EYE_68), _idx(LEFT_EYE_68)
    else:
        pos = {p: i for i, p in enumerate(INNER_49)}
        right = np.array([pos[p] for p in RIGHT_EYE_68])
        left = np.array([pos[p] for p in LEFT_EYE_68])
    return gt[right].mean(axis=0), gt[left].mean(axis=0)


def point_errors(pred, gt) -> np.ndarray:
    pred, gt = as_shape(pred), as_shape(gt)
    if pred.shape != gt.shape:
        raise InputError(f"landmark count mismatch: {len(pred)} vs {len(gt)}")
    return np.hypot(*(pred - gt).T)


def mean_point_error(pred, gt) -> float:
    """Mean Euclidean landmark error in raw coordinate units."""
    return float(point_errors(pred, gt).mean())


def normalizer(gt, protocol: str, box=None) -> float:
    gt = as_shape(gt)
    if protocol in ("interpupil68", "interpupil49"):
        if len(gt) not in ((68,) if protocol == "interpupil68" else (68, 49)):
            raise InputError(f"{protocol} needs 68 or 49 points, got {len(gt)}")
        a, b = _eye_centers(gt)
        return float(np.hypot(*(a - b)))
    if protocol == "eye_nose_3pt":
        if len(gt) != 3:
            raise InputError(f"eye_nose_3pt needs 3 points, got {len(gt)}")
        return float(np.hypot(*(gt[2] - (gt[0] + gt[1]) / 2.0)))
    if protocol == "facesize":
        if box is None:
            lo, hi = gt.min(axis=0), gt.max(axis=0)
            w, h = hi - lo
        else:
            w, h = box[2], box[3]
        return float(math.sqrt(max(w, 0.0) * max(h, 0.0)))
    raise InputError(f"unknown protocol {protocol!r}; choose from {PROTOCOLS}")


def nme(pred, gt, protocol: str = "interpupil68", box=None) -> float:
    """Mean landmark error over the protocol's points divided by its normalizer.

    The normalizer comes from ``gt`` only. ``facesize`` uses the geometric mean
    of the face box sides (the ground-truth bounding box if ``box`` is None).
    """
    pred, gt = as_shape(pred), as_shape(gt)
    if pred.shape != gt.shape:
        raise InputError(f"landmark count mismatch: {len(pred)} vs {len(gt)}")
    norm = normalizer(gt, protocol, box)
    if not norm > 0:
        raise MetricError(f"zero normalizer under {protocol}")
    err = point_errors(pred, gt)
    if protocol == "interpupil49" and len(gt) == 68:
        err = err[_idx(INNER_49)]
    return float(err.mean() / norm)


@dataclass
class NmeResult:
    per_image: list
    mean: float
    protocol: str
    failed: list = field(default_factory=list)  # indices with degenerate normalizers


def evaluate(preds, gts, protocol: str = "interpupil68", boxes=None) -> NmeResult:
    """NME per image; degenerate images are excluded from the mean but reported."""
    if len(preds) != len(gts):
        raise InputError(f"{len(preds)} predictions vs {len(gts)} ground truths")
    errs, failed = [], []
    for i, (p, g) in enumerate(zip(preds, gts)):
        try:
            errs.append(nme(p, g, protocol, None if boxes is None else boxes[i]))
        except MetricError:
            failed.append(i)
    mean = float(np.mean(errs)) if errs else float("nan")
    return NmeResult(errs, mean, protocol, failed)


def ced_curve(errors, thresholds) -> list[tuple[float, float]]:
    """Fraction of errors ``<=`` each threshold."""
    errors = np.asarray(errors, dtype=np.float64)
    if errors.size == 0:
        raise InputError("CED of an empty error list")
    thresholds = np.asarray(thresholds, dtype=np.float64)
    if np.any(np.diff(thresholds) < 0):
        raise InputError("thresholds must be sorted ascending")
    srt = np.sort(errors)
    counts = np.searchsorted(srt, thresholds, side="right")
    return [(float(t), float(c) / errors.size) for t, c in zip(thresholds, counts)]


def format_ced(curve) -> str:
    return "".join(f"{t:.6f}\t{f:.6f}\n" for t, f in curve)


def write_ced(curve, path):
    with open(path, "w") as fh:
        fh.write(format_ced(curve))
