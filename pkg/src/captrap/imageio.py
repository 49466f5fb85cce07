"""In-memory image representation, binary PPM (P6) I/O, and bilinear resize.

P6 is the toolkit's interchange format because it round-trips bit-exactly:
load(save(img)) == img for every valid image. Resize uses half-pixel-center
sample mapping with half-away-from-zero rounding so resized outputs are
reproducible across implementations.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import FormatError, IOFailure, ValidationError

__all__ = ["Image", "load_image", "save_image", "resize_bilinear", "peek_image_size"]


@dataclass(frozen=True, eq=False)
class Image:
    """8-bit RGB raster: pixels is a (height, width, 3) uint8 array."""

    pixels: np.ndarray

    def __post_init__(self):
        p = self.pixels
        if not isinstance(p, np.ndarray) or p.dtype != np.uint8:
            raise ValidationError("Image pixels must be a uint8 ndarray")
        if p.ndim != 3 or p.shape[2] != 3 or p.shape[0] < 1 or p.shape[1] < 1:
            raise ValidationError(f"Image pixels must have shape (h, w, 3), got {p.shape}")

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    def __eq__(self, other):
        return isinstance(other, Image) and np.array_equal(self.pixels, other.pixels)

    def copy(self) -> "Image":
        return Image(self.pixels.copy())


_TOKEN = re.compile(rb"[^\s#]+")


def _read_header_token(data: bytes, pos: int, path) -> tuple[bytes, int]:
    """Next whitespace-delimited header token, skipping '#' comments."""
    n = len(data)
    while pos < n:
        b = data[pos : pos + 1]
        if b == b"#":
            nl = data.find(b"\n", pos)
            if nl < 0:
                raise FormatError(path, "unterminated comment in header", pos)
            pos = nl + 1
        elif b.isspace():
            pos += 1
        else:
            m = _TOKEN.match(data, pos)
            return m.group(0), m.end()
    raise FormatError(path, "truncated header", pos)


def load_image(path) -> Image:
    """Read a binary PPM (P6, maxval 255) file byte-for-byte into an Image."""
    path = Path(path)
    try:
        data = path.read_bytes()
    except FileNotFoundError:
        raise IOFailure(f"{path}: no such file")
    except OSError as e:
        raise IOFailure(f"{path}: {e}")

    if data[:2] != b"P6":
        raise FormatError(path, f"not a P6 file (magic {data[:2]!r})", 0)
    pos = 2
    fields = []
    for name in ("width", "height", "maxval"):
        tok, pos = _read_header_token(data, pos, path)
        if not tok.isdigit():
            raise FormatError(path, f"non-numeric {name} {tok!r}", pos - len(tok))
        fields.append(int(tok))
    width, height, maxval = fields
    if width < 1 or height < 1:
        raise FormatError(path, f"bad dimensions {width}x{height}", 2)
    if maxval != 255:
        raise FormatError(path, f"unsupported maxval {maxval} (only 255)", pos)
    # exactly one whitespace byte separates the header from the pixel payload
    if pos >= len(data) or not data[pos : pos + 1].isspace():
        raise FormatError(path, "missing whitespace after maxval", pos)
    pos += 1

    expected = width * height * 3
    payload = data[pos:]
    if len(payload) < expected:
        raise FormatError(
            path, f"truncated pixel data: need {expected} bytes, have {len(payload)}", pos + len(payload)
        )
    if len(payload) > expected:
        raise FormatError(path, f"{len(payload) - expected} trailing bytes after pixel data", pos + expected)
    pixels = np.frombuffer(payload, dtype=np.uint8).reshape(height, width, 3)
    return Image(pixels.copy())


def peek_image_size(path) -> tuple[int, int]:
    """(width, height) from the P6 header without reading pixel data."""
    path = Path(path)
    try:
        with open(path, "rb") as fh:
            head = fh.read(4096)  # ample for any sane header, comments included
    except FileNotFoundError:
        raise IOFailure(f"{path}: no such file")
    except OSError as e:
        raise IOFailure(f"{path}: {e}")
    if head[:2] != b"P6":
        raise FormatError(path, f"not a P6 file (magic {head[:2]!r})", 0)
    pos = 2
    dims = []
    for name in ("width", "height"):
        tok, pos = _read_header_token(head, pos, path)
        if not tok.isdigit():
            raise FormatError(path, f"non-numeric {name} {tok!r}", pos - len(tok))
        dims.append(int(tok))
    return dims[0], dims[1]


def save_image(img: Image, path) -> None:
    """Write img as binary PPM; load_image(path) recovers it exactly."""
    path = Path(path)
    header = f"P6\n{img.width} {img.height}\n255\n".encode("ascii")
    try:
        path.write_bytes(header + img.pixels.tobytes())
    except OSError as e:
        raise IOFailure(f"{path}: {e}")


def resize_bilinear(img: Image, out_w: int, out_h: int) -> Image:
    """Bilinear resample with half-pixel-center mapping.

    Each output sample point is (i + 0.5) * in/out - 0.5 in source coordinates;
    channel values are rounded half-away-from-zero into [0, 255].
    """
    if out_w < 1 or out_h < 1:
        raise ValidationError(f"resize target must be positive, got {out_w}x{out_h}")
    in_h, in_w = img.pixels.shape[:2]
    if (out_w, out_h) == (in_w, in_h):
        return img.copy()

    src = img.pixels.astype(np.float64)

    def axis_coords(n_out, n_in):
        x = (np.arange(n_out, dtype=np.float64) + 0.5) * (n_in / n_out) - 0.5
        lo = np.floor(x)
        frac = x - lo
        lo0 = np.clip(lo, 0, n_in - 1).astype(np.intp)
        lo1 = np.clip(lo + 1, 0, n_in - 1).astype(np.intp)
        return lo0, lo1, frac

    x0, x1, fx = axis_coords(out_w, in_w)
    y0, y1, fy = axis_coords(out_h, in_h)

    top = src[y0][:, x0] * (1.0 - fx)[None, :, None] + src[y0][:, x1] * fx[None, :, None]
    bot = src[y1][:, x0] * (1.0 - fx)[None, :, None] + src[y1][:, x1] * fx[None, :, None]
    out = top * (1.0 - fy)[:, None, None] + bot * fy[:, None, None]
    # values are convex combinations of [0,255], so floor(v + .5) is the
    # half-away-from-zero rounding for the non-negative case; clip guards
    # against float drift a few ulps past 255
    return Image(np.clip(np.floor(out + 0.5), 0, 255).astype(np.uint8))
