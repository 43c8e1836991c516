"""Image loading, saving, and float64 raster primitives.

Images travel through the pipeline as float64 H x W x 3 arrays in [0, 1],
RGB channel order. On disk two formats are accepted: 8-bit RGB PNG
(decoded via Pillow) and binary PPM (P6, maxval 255, decoded here).

The resize here is plain bilinear interpolation with half-pixel-aligned
sample centers and edge clamping:

    src = (dst + 0.5) * (in_size / out_size) - 0.5

computed in float64 throughout, so results are bit-reproducible across
platforms. Library resizers are avoided on purpose; their filter choices
vary by version and would break checkpoint-to-pixel determinism.
"""

from __future__ import annotations

import os

import numpy as np
from PIL import Image

from .errors import ImageFormatError

_WS = b" \t\r\n"


def _read_ppm(path):
    with open(path, "rb") as fh:
        data = fh.read()
    if not data.startswith(b"P6"):
        raise ImageFormatError(f"{path}: not a binary PPM (missing P6 magic)")
    pos = 2
    fields = []
    while len(fields) < 3:
        while pos < len(data):
            ch = data[pos : pos + 1]
            if ch in _WS:
                pos += 1
            elif ch == b"#":
                nl = data.find(b"\n", pos)
                if nl == -1:
                    raise ImageFormatError(f"{path}: unterminated comment in PPM header")
                pos = nl + 1
            else:
                break
        start = pos
        while pos < len(data) and data[pos : pos + 1] not in _WS and data[pos : pos + 1] != b"#":
            pos += 1
        token = data[start:pos]
        if not token.isdigit():
            raise ImageFormatError(f"{path}: bad PPM header token {token!r}")
        fields.append(int(token))
    width, height, maxval = fields
    if maxval != 255:
        raise ImageFormatError(f"{path}: unsupported PPM maxval {maxval} (need 255)")
    if pos >= len(data) or data[pos : pos + 1] not in _WS:
        raise ImageFormatError(f"{path}: PPM header not terminated by whitespace")
    pos += 1
    need = width * height * 3
    raw = data[pos : pos + need]
    if len(raw) != need:
        raise ImageFormatError(
            f"{path}: truncated PPM payload ({len(raw)} of {need} bytes)"
        )
    return np.frombuffer(raw, dtype=np.uint8).reshape(height, width, 3)


def write_ppm(path, pixels: np.ndarray) -> None:
    pixels = np.ascontiguousarray(pixels, dtype=np.uint8)
    h, w, c = pixels.shape
    if c != 3:
        raise ImageFormatError(f"PPM writer needs 3 channels, got shape {pixels.shape}")
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(pixels.tobytes())


def _read_png(path):
    with Image.open(path) as img:
        if img.mode != "RGB":
            raise ImageFormatError(
                f"{path}: expected 8-bit RGB PNG, got mode {img.mode}"
            )
        return np.asarray(img, dtype=np.uint8)


def write_png(path, pixels: np.ndarray) -> None:
    pixels = np.ascontiguousarray(pixels, dtype=np.uint8)
    if pixels.ndim != 3 or pixels.shape[2] != 3:
        raise ImageFormatError(f"PNG writer needs HxWx3 uint8, got shape {pixels.shape}")
    Image.fromarray(pixels, mode="RGB").save(path)


def load_image(path) -> np.ndarray:
    """Read a PNG or PPM file as float64 HxWx3 in [0, 1]."""
    ext = os.path.splitext(str(path))[1].lower()
    if ext == ".png":
        raw = _read_png(path)
    elif ext in (".ppm", ".pnm"):
        raw = _read_ppm(path)
    else:
        raise ImageFormatError(f"{path}: unsupported image extension {ext!r}")
    return raw.astype(np.float64) / 255.0


def to_uint8(img: np.ndarray) -> np.ndarray:
    return np.clip(np.rint(np.asarray(img) * 255.0), 0, 255).astype(np.uint8)


def bilinear_resize(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 3:
        raise ImageFormatError(f"resize expects HxWxC, got shape {img.shape}")
    h, w = img.shape[:2]
    out_h, out_w = int(out_h), int(out_w)
    ys = (np.arange(out_h) + 0.5) * (h / out_h) - 0.5
    xs = (np.arange(out_w) + 0.5) * (w / out_w) - 0.5
    y0 = np.floor(ys).astype(np.intp)
    x0 = np.floor(xs).astype(np.intp)
    wy = (ys - y0)[:, None, None]
    wx = (xs - x0)[None, :, None]
    y0c = np.clip(y0, 0, h - 1)
    y1c = np.clip(y0 + 1, 0, h - 1)
    x0c = np.clip(x0, 0, w - 1)
    x1c = np.clip(x0 + 1, 0, w - 1)
    top = img[y0c[:, None], x0c[None, :]] * (1.0 - wx) + img[y0c[:, None], x1c[None, :]] * wx
    bot = img[y1c[:, None], x0c[None, :]] * (1.0 - wx) + img[y1c[:, None], x1c[None, :]] * wx
    return top * (1.0 - wy) + bot * wy


def center_crop(img: np.ndarray, size: int) -> np.ndarray:
    h, w = img.shape[:2]
    size = int(size)
    if size > h or size > w:
        raise ImageFormatError(f"crop size {size} exceeds image {img.shape}")
    top = (h - size) // 2
    left = (w - size) // 2
    return np.ascontiguousarray(img[top : top + size, left : left + size])


def resize_and_center_crop(img: np.ndarray, crop: int) -> np.ndarray:
    """Square-resize with a small margin, then crop the center.

    The margin scales with the crop (224 -> resize 256, 64 -> resize 74) so
    the border trimmed off stays proportionally the same at any input size.
    """
    crop = int(crop)
    target = crop + 2 * int(round(crop / 14))
    return center_crop(bilinear_resize(img, target, target), crop)


def gaussian_blur(img: np.ndarray, sigma: float) -> np.ndarray:
    """Separable gaussian with edge-replicated borders; radius 3 sigma."""
    img = np.asarray(img, dtype=np.float64)
    sigma = float(sigma)
    if sigma <= 0.0:
        return img.copy()
    r = max(1, int(np.ceil(3.0 * sigma)))
    t = np.arange(-r, r + 1, dtype=np.float64)
    k = np.exp(-0.5 * (t / sigma) ** 2)
    k /= k.sum()
    pad = np.pad(img, ((r, r), (0, 0), (0, 0)), mode="edge")
    win = np.lib.stride_tricks.sliding_window_view(pad, 2 * r + 1, axis=0)
    img = win @ k
    pad = np.pad(img, ((0, 0), (r, r), (0, 0)), mode="edge")
    win = np.lib.stride_tricks.sliding_window_view(pad, 2 * r + 1, axis=1)
    return win @ k
