"""File formats: probability maps (PLPM), layout JSON, PNG images.

All writers are atomic (temp file + rename in the destination directory).
"""

from __future__ import annotations

import json
import os
import struct
import tempfile

import numpy as np
from PIL import Image

from .errors import DimensionError
from .layout import ManhattanLayout

PLPM_MAGIC = b"PLPM"


def atomic_write_bytes(path, data: bytes):
    path = os.fspath(path)
    d = os.path.dirname(path) or "."
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_plpm(path, array: np.ndarray):
    """Raw little-endian map file: magic, u32 width/height/channels, f32 rows."""
    arr = np.asarray(array, dtype="<f4")
    if arr.ndim == 2:
        arr = arr[:, :, None]
    if arr.ndim != 3:
        raise DimensionError(f"expected 2-D or 3-D map, got shape {arr.shape}")
    h, w, c = arr.shape
    header = PLPM_MAGIC + struct.pack("<III", w, h, c)
    atomic_write_bytes(path, header + arr.tobytes(order="C"))


def read_plpm(path) -> np.ndarray:
    with open(path, "rb") as f:
        data = f.read()
    if len(data) < 16 or data[:4] != PLPM_MAGIC:
        raise DimensionError(f"{path}: not a PLPM file")
    w, h, c = struct.unpack("<III", data[4:16])
    expect = 16 + 4 * w * h * c
    if len(data) != expect:
        raise DimensionError(f"{path}: truncated PLPM payload")
    arr = np.frombuffer(data[16:], dtype="<f4").reshape(h, w, c).astype(np.float32)
    return arr[:, :, 0] if c == 1 else arr


def write_map_png(path, array: np.ndarray):
    """8-bit grayscale visualization of a [0, 1] map."""
    arr = np.clip(np.asarray(array, dtype=np.float64), 0.0, 1.0)
    img = Image.fromarray((arr * 255.0 + 0.5).astype(np.uint8), mode="L")
    _atomic_save_image(path, img)


def write_rgb_png(path, array: np.ndarray):
    img = Image.fromarray(np.asarray(array, dtype=np.uint8), mode="RGB")
    _atomic_save_image(path, img)


def read_png(path) -> np.ndarray:
    with Image.open(path) as img:
        return np.asarray(img.convert("RGB"))


def _atomic_save_image(path, img: Image.Image):
    import io as _io

    buf = _io.BytesIO()
    img.save(buf, format="PNG")
    atomic_write_bytes(path, buf.getvalue())


def save_layout(path, layout: ManhattanLayout):
    payload = json.dumps(layout.to_json_dict(), indent=2).encode()
    atomic_write_bytes(path, payload)


def load_layout(path) -> ManhattanLayout:
    with open(path) as f:
        return ManhattanLayout.from_json_dict(json.load(f))


def save_json(path, obj):
    atomic_write_bytes(path, json.dumps(obj, indent=2).encode())


def load_json(path):
    with open(path) as f:
        return json.load(f)
