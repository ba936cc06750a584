"""Frame ingestion: numbered image sequences and the packed GFRM raw stream.

GFRM layout: 16-byte header (magic "GFRM", width, height, frame count, all
u32 little-endian) followed by frames of width*height grayscale bytes.
"""
from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .imgproc import RgbFrame

GFRM_MAGIC = b"GFRM"
IMAGE_SUFFIXES = (".png", ".pgm", ".jpg", ".jpeg", ".bmp", ".tif", ".tiff")


class IngestError(RuntimeError):
    """Input source is missing, empty, or malformed."""


def iter_image_dir(path):
    """Yield RgbFrames from a directory of images, ordered by numeric stem
    when all stems are digits, lexicographically otherwise."""
    from PIL import Image

    path = Path(path)
    if not path.is_dir():
        raise IngestError(f"{path} is not a directory")
    files = [p for p in path.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES]
    if not files:
        raise IngestError(f"{path} contains no image frames")
    if all(p.stem.isdigit() for p in files):
        files.sort(key=lambda p: int(p.stem))
    else:
        files.sort(key=lambda p: p.name)
    for index, p in enumerate(files):
        img = Image.open(p)
        if img.mode not in ("RGB", "L"):
            img = img.convert("RGB")
        arr = np.asarray(img, dtype=np.uint8)
        yield RgbFrame.from_array(arr, frame_index=index)


def read_gfrm_header(path):
    with open(path, "rb") as fh:
        header = fh.read(16)
    if len(header) != 16 or header[:4] != GFRM_MAGIC:
        raise IngestError(f"{path}: not a GFRM stream")
    w, h, count = struct.unpack("<III", header[4:])
    return w, h, count


def iter_gfrm(path):
    """Yield RgbFrames from a packed grayscale stream."""
    path = Path(path)
    w, h, count = read_gfrm_header(path)
    if count == 0:
        raise IngestError(f"{path}: stream holds no frames")
    frame_bytes = w * h
    with open(path, "rb") as fh:
        fh.seek(16)
        for index in range(count):
            raw = fh.read(frame_bytes)
            if len(raw) != frame_bytes:
                raise IngestError(f"{path}: truncated at frame {index}")
            gray = np.frombuffer(raw, dtype=np.uint8).reshape(h, w)
            yield RgbFrame.from_array(gray, frame_index=index)


def write_gfrm(path, frames):
    """Pack an iterable of 2D uint8 arrays into a GFRM stream."""
    frames = list(frames)
    if not frames:
        raise ValueError("need at least one frame")
    h, w = frames[0].shape
    with open(path, "wb") as fh:
        fh.write(GFRM_MAGIC + struct.pack("<III", w, h, len(frames)))
        for arr in frames:
            if arr.shape != (h, w) or arr.dtype != np.uint8:
                raise ValueError("all frames must be uint8 with equal dims")
            fh.write(arr.tobytes())
