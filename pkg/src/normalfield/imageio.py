"""PNG (8-bit sRGB) and PFM (float32) image I/O.

PFM layout: ASCII header ("PF" color / "Pf" grayscale), "width height",
scale line whose sign gives endianness (-1.0 here, little-endian), then
float32 rows bottom-up.
"""

import re

import numpy as np
from PIL import Image

from .errors import DataError


def write_png(path, img):
    """img: float array in [0,1], (H,W) or (H,W,3); quantized to 8 bit."""
    arr = np.asarray(img)
    if arr.dtype != np.uint8:
        arr = (np.clip(arr, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)
    Image.fromarray(arr).save(path, format="PNG")


def read_png(path):
    """8-bit PNG to float in [0,1]; RGBA is cut down to RGB."""
    try:
        img = Image.open(path)
    except OSError as e:
        raise DataError(f"cannot read image: {path} ({e})") from None
    arr = np.asarray(img, dtype=np.float64) / 255.0
    if arr.ndim == 3 and arr.shape[2] == 4:
        arr = arr[:, :, :3]
    return arr


def write_pfm(path, data):
    """data: float32/float64 (H,W) or (H,W,3), written little-endian."""
    arr = np.asarray(data, dtype=np.float32)
    if arr.ndim == 2:
        header = b"Pf"
    elif arr.ndim == 3 and arr.shape[2] == 3:
        header = b"PF"
    else:
        raise ValueError("PFM wants (H,W) or (H,W,3)")
    h, w = arr.shape[:2]
    with open(path, "wb") as f:
        f.write(header + b"\n")
        f.write(f"{w} {h}\n".encode("ascii"))
        f.write(b"-1.0\n")
        f.write(arr[::-1].astype("<f4").tobytes())  # bottom-up rows


def read_pfm(path):
    try:
        f = open(path, "rb")
    except OSError as e:
        raise DataError(f"cannot read PFM: {path} ({e})") from None
    with f:
        head = f.readline().strip()
        if head == b"PF":
            channels = 3
        elif head == b"Pf":
            channels = 1
        else:
            raise DataError(f"not a PFM file: {path}")
        dims = f.readline().decode("ascii", "replace")
        m = re.match(r"^\s*(\d+)\s+(\d+)\s*$", dims)
        if not m:
            raise DataError(f"bad PFM dimensions in {path}")
        w, h = int(m.group(1)), int(m.group(2))
        scale = float(f.readline().decode("ascii", "replace"))
        dtype = "<f4" if scale < 0 else ">f4"
        count = w * h * channels
        buf = f.read(4 * count)
        if len(buf) != 4 * count:
            raise DataError(f"truncated PFM: {path}")
        raw = np.frombuffer(buf, dtype=dtype)
    shape = (h, w, 3) if channels == 3 else (h, w)
    return raw.reshape(shape)[::-1].astype(np.float64)
