"""Readers and writers for the image formats the tool consumes and produces.

PGM (8- and 16-bit, binary P5) and PFM (single channel, little-endian) are
implemented directly; PNG input goes through Pillow.
"""

from __future__ import annotations

import re
from pathlib import Path

import numpy as np

_PNM_HEADER = re.compile(rb"(P[25])\s+(?:#.*?\n\s*)*(\d+)\s+(?:#.*?\n\s*)*(\d+)\s+(?:#.*?\n\s*)*(\d+)\s")


def read_pgm(path) -> np.ndarray:
    data = Path(path).read_bytes()
    m = _PNM_HEADER.match(data)
    if m is None:
        raise ValueError(f"{path}: not a PGM file")
    magic, w, h, maxval = m.group(1), int(m.group(2)), int(m.group(3)), int(m.group(4))
    body = data[m.end():]
    dtype = np.uint8 if maxval < 256 else np.dtype(">u2")
    if magic == b"P2":
        arr = np.array(body.split(), dtype=np.int64).astype(dtype)
    else:
        arr = np.frombuffer(body, dtype=dtype, count=w * h)
    return arr.reshape(h, w).astype(np.uint8 if maxval < 256 else np.uint16)


def write_pgm(path, image: np.ndarray) -> None:
    """Binary PGM; uint16 input produces a 16-bit (big-endian) file."""
    image = np.asarray(image)
    h, w = image.shape
    if image.dtype == np.uint16:
        maxval, body = 65535, image.astype(">u2").tobytes()
    elif image.dtype == np.uint8:
        maxval, body = 255, image.tobytes()
    else:
        raise TypeError(f"PGM supports uint8 or uint16, got {image.dtype}")
    Path(path).write_bytes(f"P5\n{w} {h}\n{maxval}\n".encode() + body)


def read_pfm(path) -> np.ndarray:
    with open(path, "rb") as f:
        if f.readline().strip() != b"Pf":
            raise ValueError(f"{path}: not a greyscale PFM")
        w, h = (int(v) for v in f.readline().split())
        scale = float(f.readline())
        dtype = "<f4" if scale < 0 else ">f4"
        arr = np.frombuffer(f.read(), dtype=dtype, count=w * h).reshape(h, w)
    return np.flipud(arr).astype(np.float32)


def write_pfm(path, image: np.ndarray) -> None:
    """Little-endian greyscale PFM (rows stored bottom to top)."""
    image = np.asarray(image, dtype="<f4")
    h, w = image.shape
    with open(path, "wb") as f:
        f.write(f"Pf\n{w} {h}\n-1.0\n".encode())
        f.write(np.flipud(image).tobytes())


def read_grey(path) -> np.ndarray:
    """8-bit greyscale image from PGM or PNG."""
    path = Path(path)
    if path.suffix.lower() == ".pgm":
        img = read_pgm(path)
        if img.dtype != np.uint8:
            raise ValueError(f"{path}: expected an 8-bit PGM")
        return img
    from PIL import Image

    with Image.open(path) as im:
        if im.mode not in ("L", "P", "1"):
            im = im.convert("L")
        return np.asarray(im.convert("L"), dtype=np.uint8).copy()
