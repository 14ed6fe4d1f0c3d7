"""Deterministic procedural faces with exactly known 68-point landmarks.

Faces are deliberately crude (elliptic head, eye blobs, nose wedge, lips)
but their appearance follows the landmark geometry, which is all a cascade
needs to learn something measurable. Every sample draws from its own
``default_rng([seed, index])`` stream, so output is a pure function of the spec.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.ndimage import gaussian_filter
from skimage.draw import disk, polygon

from .data import format_pts, save_image, write_manifest
from .errors import InputError


def face_template() -> np.ndarray:
    """Left/right-symmetric 68-point face in a unit box (x right, y down)."""
    pts = np.zeros((68, 2))
    k = np.arange(17)
    phi = np.pi - k * np.pi / 16
    pts[0:17] = np.column_stack([0.5 + 0.45 * np.cos(phi), 0.42 + 0.52 * np.sin(phi)])
    bx = np.array([0.17, 0.23, 0.30, 0.37, 0.44])
    by = np.array([0.30, 0.26, 0.25, 0.26, 0.28])
    pts[17:22] = np.column_stack([bx, by])
    pts[22:27] = np.column_stack([1.0 - bx[::-1], by[::-1]])
    pts[27:31] = np.column_stack([np.full(4, 0.5), [0.38, 0.46, 0.54, 0.62]])
    pts[31:36] = np.column_stack([[0.41, 0.45, 0.5, 0.55, 0.59], [0.66, 0.68, 0.69, 0.68, 0.66]])
    hw, hh = 0.085, 0.035
    for start, cx in ((36, 0.32), (42, 0.68)):
        # right eye starts at its outer corner, left eye at its inner corner
        ring = np.array([[-hw, 0], [-0.03, -hh], [0.03, -hh], [hw, 0], [0.03, hh], [-0.03, hh]])
        pts[start : start + 6] = ring + [cx, 0.40]
    pts[48:60] = [
        [0.34, 0.79], [0.40, 0.76], [0.46, 0.745], [0.5, 0.75], [0.54, 0.745], [0.60, 0.76],
        [0.66, 0.79], [0.60, 0.83], [0.55, 0.85], [0.5, 0.855], [0.45, 0.85], [0.40, 0.83],
    ]
    pts[60:68] = [
        [0.38, 0.79], [0.45, 0.78], [0.5, 0.782], [0.55, 0.78],
        [0.62, 0.79], [0.55, 0.80], [0.5, 0.802], [0.45, 0.80],
    ]
    return pts


@dataclass(frozen=True)
class SynthSpec:
    seed: int = 0
    count: int = 100
    image_size: int = 160
    face_scale: tuple = (0.45, 0.6)  # face width as a fraction of the image
    rotation_deg: float = 20.0
    shift: float = 0.05
    mouth_open: tuple = (0.0, 0.07)
    smile: tuple = (-0.02, 0.03)
    brow_raise: tuple = (-0.02, 0.04)
    eye_open: tuple = (0.4, 1.4)
    jaw_width: tuple = (0.9, 1.1)
    yaw: tuple = (-0.07, 0.07)
    warp: float = 0.01
    noise: float = 0.02

    def __post_init__(self):
        if self.count < 1:
            raise InputError(f"count must be >= 1, got {self.count}")
        if self.image_size < 32:
            raise InputError(f"image_size too small: {self.image_size}")
        for name in ("face_scale", "mouth_open", "smile", "brow_raise", "eye_open", "jaw_width", "yaw"):
            lo, hi = getattr(self, name)
            if not (np.isfinite(lo) and np.isfinite(hi) and lo <= hi):
                raise InputError(f"{name} range must be finite and ordered, got {(lo, hi)}")


def _deform(t: np.ndarray, rng: np.random.Generator, spec: SynthSpec) -> np.ndarray:
    p = t.copy()
    k = np.arange(17)
    opening = rng.uniform(*spec.mouth_open)
    p[55:60, 1] += opening
    p[65:68, 1] += 0.9 * opening
    p[0:17, 1] += opening * np.clip(1 - np.abs(k - 8) / 5.0, 0, None)
    smile = rng.uniform(*spec.smile)
    for left, right in ((48, 54), (60, 64)):
        p[[left, right], 1] -= smile
        p[left, 0] -= 0.5 * smile
        p[right, 0] += 0.5 * smile
    p[17:27, 1] -= rng.uniform(*spec.brow_raise)
    eye = rng.uniform(*spec.eye_open)
    for s in (36, 42):
        cy = p[s : s + 6, 1].mean()
        p[s : s + 6, 1] = cy + (p[s : s + 6, 1] - cy) * eye
    p[0:17, 0] = 0.5 + (p[0:17, 0] - 0.5) * rng.uniform(*spec.jaw_width)
    depth = np.zeros(68)
    depth[0:17] = 0.5 * np.cos((k - 8) / 8 * np.pi / 2)
    depth[17:27] = depth[36:48] = 0.35
    depth[27:36] = 1.0
    depth[30] = 1.2
    depth[48:68] = 0.6
    p[:, 0] += rng.uniform(*spec.yaw) * depth
    a = rng.uniform(-spec.warp, spec.warp, 2)
    f = rng.uniform(0.5, 1.0, 2)
    ph = rng.uniform(0, 1, 2)
    p[:, 0] += a[0] * np.sin(2 * np.pi * (f[0] * p[:, 1] + ph[0]))
    p[:, 1] += a[1] * np.sin(2 * np.pi * (f[1] * p[:, 0] + ph[1]))
    return p


def _place(unit: np.ndarray, center, size: float, deg: float) -> np.ndarray:
    th = np.deg2rad(deg)
    rot = np.array([[np.cos(th), -np.sin(th)], [np.sin(th), np.cos(th)]])
    return (unit - 0.5) @ rot.T * size + center


def _fill(canvas, pts, color, ss):
    rr, cc = polygon(pts[:, 1] * ss + (ss - 1) / 2, pts[:, 0] * ss + (ss - 1) / 2, canvas.shape[:2])
    canvas[rr, cc] = color


def _dot(canvas, center, radius, color, ss):
    rr, cc = disk((center[1] * ss + (ss - 1) / 2, center[0] * ss + (ss - 1) / 2), radius * ss, shape=canvas.shape[:2])
    canvas[rr, cc] = color


def render_face(spec: SynthSpec, index: int):
    """One sample: ``(image (n, n, 3) in [0, 1], landmarks (68, 2), box (x, y, w, h))``."""
    rng = np.random.default_rng([spec.seed, index])
    n = spec.image_size
    unit = _deform(face_template(), rng, spec)
    size = rng.uniform(*spec.face_scale) * n
    deg = rng.uniform(-spec.rotation_deg, spec.rotation_deg)
    center = np.array([n / 2.0, n / 2.0]) + rng.uniform(-spec.shift, spec.shift, 2) * n
    lm = _place(unit, center, size, deg)

    ss = 2  # supersampling factor
    yy, xx = np.mgrid[0:n * ss, 0:n * ss] / (n * ss)
    bg = rng.uniform(0.1, 0.7, 3)
    grad = rng.uniform(-0.2, 0.2, 2)
    canvas = np.clip(bg + (grad[0] * xx + grad[1] * yy)[..., None], 0, 1)

    arc = np.linspace(0, -np.pi, 24)
    forehead = np.column_stack([0.5 + 0.45 * np.cos(arc), 0.42 + 0.42 * np.sin(arc)])
    forehead[:, 0] = 0.5 + (forehead[:, 0] - 0.5) * (unit[16, 0] - unit[0, 0]) / 0.9
    head = np.vstack([lm[0:17], _place(forehead, center, size, deg)])
    skin = rng.uniform(0.45, 0.9) * np.array([1.0, rng.uniform(0.75, 0.9), rng.uniform(0.6, 0.8)])
    _fill(canvas, head, skin, ss)

    hair = rng.uniform(0.05, 0.3) * np.ones(3)
    thick = 0.025 * size
    up = np.array([np.sin(np.deg2rad(deg)), -np.cos(np.deg2rad(deg))])
    for s in (17, 22):
        brow = lm[s : s + 5]
        _fill(canvas, np.vstack([brow + up * thick, (brow - up * thick)[::-1]]), hair, ss)

    iris = rng.uniform(0.05, 0.4, 3)
    gaze = rng.uniform(-0.015, 0.015, 2) * size
    for s in (36, 42):
        eye = lm[s : s + 6]
        _fill(canvas, eye, np.full(3, 0.92), ss)
        _dot(canvas, eye.mean(axis=0) + gaze, 0.022 * size, iris, ss)

    _fill(canvas, lm[[27, 31, 32, 33, 34, 35]], skin * 0.82, ss)
    for i in (32, 34):
        _dot(canvas, lm[i], 0.012 * size, skin * 0.35, ss)

    lip = np.array([rng.uniform(0.5, 0.8), rng.uniform(0.15, 0.3), rng.uniform(0.2, 0.35)])
    _fill(canvas, lm[48:60], lip, ss)
    _fill(canvas, lm[60:68], np.full(3, 0.12), ss)

    img = canvas.reshape(n, ss, n, ss, 3).mean(axis=(1, 3))
    img = gaussian_filter(img, sigma=(0.6, 0.6, 0))
    img = np.clip(img + rng.normal(0, spec.noise, img.shape), 0, 1)

    lo, hi = lm.min(axis=0), lm.max(axis=0)
    w, h = hi - lo
    x0 = lo[0] - rng.uniform(0.03, 0.12) * w
    x1 = hi[0] + rng.uniform(0.03, 0.12) * w
    y0 = lo[1] - rng.uniform(0.10, 0.25) * h
    y1 = hi[1] + rng.uniform(0.03, 0.10) * h
    x0, y0 = max(x0, 0.0), max(y0, 0.0)
    x1, y1 = min(x1, float(n)), min(y1, float(n))
    return img, lm, (x0, y0, x1 - x0, y1 - y0)


def synth_faces(spec: SynthSpec):
    for i in range(spec.count):
        yield render_face(spec, i)


def synth_generate(spec: SynthSpec, out_dir) -> Path:
    """Write images, pts files and ``manifest.tsv`` under ``out_dir``; returns the manifest path."""
    out = Path(out_dir)
    (out / "images").mkdir(parents=True, exist_ok=True)
    (out / "pts").mkdir(exist_ok=True)
    rows = []
    for i, (img, lm, box) in enumerate(synth_faces(spec)):
        name = f"face_{i:05d}"
        image_rel, pts_rel = f"images/{name}.ppm", f"pts/{name}.pts"
        save_image(img, out / image_rel)
        (out / pts_rel).write_text(format_pts(lm))
        rows.append((image_rel, pts_rel, box))
    manifest = out / "manifest.tsv"
    write_manifest(rows, manifest)
    return manifest
