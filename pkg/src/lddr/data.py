"""Annotation files, PGM/PPM images, manifests, and synthetic faces."""
from __future__ import annotations

import logging
import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import InputError, ParseError, TruncationError
from .shape import as_shape

log = logging.getLogger(__name__)

# -- pts --------------------------------------------------------------------


def parse_pts(text: str) -> np.ndarray:
    """Parse the ``version / n_points / { x y ... }`` landmark format."""
    header = {}
    lines = text.splitlines()
    i = 0
    while i < len(lines):
        line = lines[i].strip()
        i += 1
        if not line or line.startswith("#"):
            continue
        if line == "{":
            break
        key, sep, value = line.partition(":")
        if not sep:
            raise ParseError(f"line {i}: expected 'key: value' header or '{{', got {line!r}")
        header[key.strip()] = value.strip()
    else:
        raise ParseError("missing '{' opening the coordinate block")
    if "n_points" not in header:
        raise ParseError("header lacks n_points")
    try:
        n = int(header["n_points"])
    except ValueError:
        raise ParseError(f"n_points is not an integer: {header['n_points']!r}") from None
    points = []
    closed = False
    for j in range(i, len(lines)):
        line = lines[j].strip()
        if not line:
            continue
        if line == "}":
            closed = True
            break
        toks = line.split()
        if len(toks) != 2:
            raise ParseError(f"line {j + 1}: expected 'x y', got {line!r}")
        try:
            points.append((float(toks[0]), float(toks[1])))
        except ValueError:
            raise ParseError(f"line {j + 1}: non-numeric coordinate in {line!r}") from None
    if not closed:
        raise ParseError("missing '}' closing the coordinate block")
    if len(points) != n:
        raise ParseError(f"n_points says {n} but {len(points)} coordinates given")
    if n == 0:
        raise ParseError("zero landmarks")
    return np.array(points, dtype=np.float64)


def format_pts(shape) -> str:
    shape = as_shape(shape)
    body = "".join(f"{x!r} {y!r}\n" for x, y in shape.tolist())
    return f"version: 1\nn_points: {len(shape)}\n{{\n{body}}}\n"


def read_pts(path) -> np.ndarray:
    try:
        return parse_pts(Path(path).read_text())
    except ParseError as exc:
        raise ParseError(f"{path}: {exc}") from None


def write_pts(shape, path):
    Path(path).write_text(format_pts(shape))


# -- PGM / PPM ---------------------------------------------------------------

_PNM_CHANNELS = {b"P2": 1, b"P3": 3, b"P5": 1, b"P6": 3}
_TOKEN = re.compile(rb"\s*(?:#[^\n]*\n\s*)*(\S+)")


def decode_pnm(data: bytes) -> np.ndarray:
    """Decode a PGM/PPM (binary P5/P6 or ASCII P2/P3) into an (h, w, c) tensor in [0, 1]."""
    magic = data[:2]
    if magic not in _PNM_CHANNELS:
        raise ParseError(f"unsupported image format (magic {magic!r})")
    channels = _PNM_CHANNELS[magic]
    pos = 2
    vals = []
    for what in ("width", "height", "maxval"):
        m = _TOKEN.match(data, pos)
        if not m:
            raise ParseError(f"malformed header: missing {what}")
        try:
            vals.append(int(m.group(1)))
        except ValueError:
            raise ParseError(f"malformed header: {what} = {m.group(1)!r}") from None
        pos = m.end()
    w, h, maxval = vals
    if w < 1 or h < 1 or not 0 < maxval < 65536:
        raise ParseError(f"malformed header: {w}x{h}, maxval {maxval}")
    count = w * h * channels
    if magic in (b"P5", b"P6"):
        pos += 1  # single whitespace byte after maxval
        dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
        need = count * dtype.itemsize
        if len(data) - pos < need:
            raise TruncationError(f"pixel payload has {len(data) - pos} bytes, need {need}")
        pix = np.frombuffer(data, dtype=dtype, count=count, offset=pos)
    else:
        toks = data[pos:].split()
        if len(toks) < count:
            raise TruncationError(f"{len(toks)} ASCII samples, need {count}")
        try:
            pix = np.array([int(t) for t in toks[:count]])
        except ValueError:
            raise ParseError("non-integer ASCII sample") from None
    if pix.max(initial=0) > maxval:
        raise ParseError(f"sample exceeds maxval {maxval}")
    return pix.astype(np.float64).reshape(h, w, channels) / maxval


def load_image(path) -> np.ndarray:
    try:
        return decode_pnm(Path(path).read_bytes())
    except ParseError as exc:
        raise type(exc)(f"{path}: {exc}") from None


def encode_pnm(image, maxval: int = 255) -> bytes:
    img = np.asarray(image, dtype=np.float64)
    if img.ndim == 2:
        img = img[:, :, None]
    h, w, c = img.shape
    if c not in (1, 3):
        raise InputError(f"can only write 1 or 3 channel images, got {c}")
    q = np.rint(np.clip(img, 0.0, 1.0) * maxval)
    dtype = ">u2" if maxval > 255 else "u1"
    magic = b"P5" if c == 1 else b"P6"
    return magic + f"\n{w} {h}\n{maxval}\n".encode() + q.astype(dtype).tobytes()


def save_image(image, path, maxval: int = 255):
    Path(path).write_bytes(encode_pnm(image, maxval))


def image_size(path) -> tuple[int, int]:
    """(width, height) from a PNM header without decoding pixels."""
    with open(path, "rb") as fh:
        head = fh.read(512)
    if head[:2] not in _PNM_CHANNELS:
        raise ParseError(f"{path}: unsupported image format")
    pos, vals = 2, []
    for _ in range(2):
        m = _TOKEN.match(head, pos)
        if not m:
            raise ParseError(f"{path}: malformed header")
        vals.append(int(m.group(1)))
        pos = m.end()
    return vals[0], vals[1]


# -- manifests ----------------------------------------------------------------


@dataclass
class Sample:
    identifier: str
    image_path: Path
    box: tuple
    pts_path: Path | None = None
    shape: np.ndarray | None = None


def clip_box(box, width: int, height: int) -> tuple:
    x, y, w, h = box
    x0, y0 = max(x, 0.0), max(y, 0.0)
    x1, y1 = min(x + w, float(width)), min(y + h, float(height))
    if x1 <= x0 or y1 <= y0:
        raise InputError(f"face box {box} lies outside the {width}x{height} image")
    return (x0, y0, x1 - x0, y1 - y0)


def load_manifest(path) -> list[Sample]:
    """Rows of ``image<TAB>pts<TAB>x<TAB>y<TAB>w<TAB>h``; ``-`` marks a missing pts file.

    Relative paths resolve against the manifest's directory.
    """
    path = Path(path)
    if not path.is_file():
        raise InputError(f"manifest not found: {path}")
    root = path.parent
    samples = []
    n_points = None
    for lineno, line in enumerate(path.read_text().splitlines(), 1):
        if not line.strip() or line.startswith("#"):
            continue
        cols = line.split("\t")
        if len(cols) != 6:
            raise ParseError(f"{path}:{lineno}: expected 6 tab-separated columns, got {len(cols)}")
        try:
            box = tuple(float(v) for v in cols[2:])
        except ValueError:
            raise ParseError(f"{path}:{lineno}: non-numeric face box") from None
        image = root / cols[0]
        if not image.is_file():
            raise InputError(f"{path}:{lineno}: image not found: {image}")
        pts = shape = None
        if cols[1] != "-":
            pts = root / cols[1]
            if not pts.is_file():
                raise InputError(f"{path}:{lineno}: pts file not found: {pts}")
            shape = read_pts(pts)
            if n_points is None:
                n_points = len(shape)
            elif len(shape) != n_points:
                raise InputError(f"{pts}: {len(shape)} landmarks, earlier entries have {n_points}")
        samples.append(Sample(Path(cols[0]).stem, image, box, pts, shape))
    return samples


def write_manifest(rows, path):
    """``rows`` of (image, pts or None, (x, y, w, h)), paths relative to the manifest."""
    with open(path, "w") as fh:
        for image, pts, box in rows:
            fh.write("\t".join([str(image), "-" if pts is None else str(pts)] + [repr(float(v)) for v in box]) + "\n")
