"""Writing and reading 8-bit RGB frames."""
from __future__ import annotations

import os

import numpy as np

from ..errors import SceneIOError, ValidationError

FRAME_PATTERN = "frame_{:05d}.png"

try:  # Pillow is optional; PPM always works
    from PIL import Image as _PILImage
except ImportError:  # pragma: no cover
    _PILImage = None


def quantize(pixels):
    """Float RGB in [0, 1] -> uint8, round-half-to-even after clipping."""
    return np.rint(np.clip(np.asarray(pixels, dtype=np.float64), 0.0, 1.0) * 255.0).astype(np.uint8)


def _pixels_of(image):
    pixels = getattr(image, "pixels", image)
    pixels = np.asarray(pixels)
    if pixels.ndim != 3 or pixels.shape[2] != 3 or pixels.shape[0] == 0 or pixels.shape[1] == 0:
        raise ValidationError(f"image must be a non-empty HxWx3 array, got shape {pixels.shape}", field="image")
    return pixels


def encode_ppm(pixels8):
    h, w, _ = pixels8.shape
    return f"P6\n{w} {h}\n255\n".encode("ascii") + pixels8.tobytes()


def save_frame(image, path, fmt=None):
    """Write ``image`` (an :class:`~splatsim.renderer.Image` or HxWx3 floats) as 8-bit RGB.

    PNG is used when Pillow is available and the suffix is not ``.ppm``;
    otherwise a binary PPM is written. Encoder settings are fixed so equal
    pixels always give equal bytes.
    """
    pixels = _pixels_of(image)
    pixels8 = pixels if pixels.dtype == np.uint8 else quantize(pixels)
    path = os.fspath(path)
    fmt = fmt or ("ppm" if path.lower().endswith(".ppm") or _PILImage is None else "png")
    tmp = f"{path}.tmp{os.getpid()}"
    try:
        if fmt == "png":
            _PILImage.fromarray(pixels8, mode="RGB").save(tmp, format="PNG", optimize=False, compress_level=6)
        else:
            with open(tmp, "wb") as fh:
                fh.write(encode_ppm(pixels8))
        os.replace(tmp, path)
    except OSError as exc:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise SceneIOError(f"cannot write frame {path}: {exc}") from exc


def load_frame(path):
    """Decode a PNG or PPM frame to a uint8 ``(H, W, 3)`` array."""
    path = os.fspath(path)
    with open(path, "rb") as fh:
        data = fh.read()
    if data.startswith(b"P6"):
        parts = data.split(maxsplit=4)
        w, h = int(parts[1]), int(parts[2])
        return np.frombuffer(parts[4], dtype=np.uint8, count=w * h * 3).reshape(h, w, 3).copy()
    if _PILImage is None:  # pragma: no cover
        raise SceneIOError(f"cannot decode {path} without Pillow")
    with _PILImage.open(path) as im:
        return np.asarray(im.convert("RGB")).copy()
