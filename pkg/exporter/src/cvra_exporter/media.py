"""Frame decoding: binary PPM/PGM, numpy arrays, and (optionally) PIL formats."""

from __future__ import annotations

import os

import numpy as np

from .errors import MediaDecodeError


def _read_pnm(path: str) -> np.ndarray:
    try:
        with open(path, "rb") as fh:
            raw = fh.read()
    except OSError as exc:
        raise MediaDecodeError(f"cannot read {path}: {exc}") from exc
    fields: list[bytes] = []
    pos = 0
    # header: magic, width, height, maxval, with '#' comments allowed
    while len(fields) < 4 and pos < len(raw):
        while pos < len(raw) and raw[pos:pos + 1].isspace():
            pos += 1
        if raw[pos:pos + 1] == b"#":
            while pos < len(raw) and raw[pos:pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(raw) and not raw[pos:pos + 1].isspace():
            pos += 1
        fields.append(raw[start:pos])
    if len(fields) < 4:
        raise MediaDecodeError(f"{path}: truncated PNM header")
    magic = fields[0]
    if magic not in (b"P5", b"P6"):
        raise MediaDecodeError(f"{path}: unsupported PNM magic {magic!r}")
    try:
        width, height, maxval = int(fields[1]), int(fields[2]), int(fields[3])
    except ValueError as exc:
        raise MediaDecodeError(f"{path}: bad PNM header") from exc
    if maxval != 255:
        raise MediaDecodeError(f"{path}: only 8-bit PNM supported")
    pos += 1  # single whitespace after maxval
    channels = 3 if magic == b"P6" else 1
    expected = width * height * channels
    data = raw[pos:pos + expected]
    if len(data) != expected:
        raise MediaDecodeError(f"{path}: PNM pixel data truncated")
    img = np.frombuffer(data, dtype=np.uint8).reshape(height, width, channels)
    return img[:, :, 0] if channels == 1 else img


def load_frame(path: str) -> np.ndarray:
    """One image file -> (H, W[, 3]) uint8 array."""
    ext = os.path.splitext(path)[1].lower()
    if ext in (".ppm", ".pgm"):
        return _read_pnm(path)
    if ext == ".npy":
        try:
            arr = np.load(path)
        except Exception as exc:
            raise MediaDecodeError(f"cannot load {path}: {exc}") from exc
        if arr.ndim not in (2, 3):
            raise MediaDecodeError(f"{path}: expected a 2-D or 3-D array")
        return arr
    if ext in (".png", ".jpg", ".jpeg", ".bmp"):
        try:
            from PIL import Image
        except ImportError as exc:
            raise MediaDecodeError(
                f"{path}: decoding {ext} needs the optional Pillow install") \
                from exc
        try:
            with Image.open(path) as im:
                return np.asarray(im.convert("RGB"))
        except Exception as exc:
            raise MediaDecodeError(f"cannot decode {path}: {exc}") from exc
    raise MediaDecodeError(f"{path}: unsupported frame format {ext!r}")


def load_video(path: str) -> list[np.ndarray]:
    """A stacked-frames .npy/.npz file -> list of (H, W[, 3]) arrays."""
    ext = os.path.splitext(path)[1].lower()
    if ext not in (".npy", ".npz"):
        raise MediaDecodeError(f"{path}: unsupported video container {ext!r}")
    try:
        if ext == ".npz":
            with np.load(path) as z:
                arr = z[list(z.files)[0]]
        else:
            arr = np.load(path)
    except Exception as exc:
        raise MediaDecodeError(f"cannot load {path}: {exc}") from exc
    if arr.ndim not in (3, 4):
        raise MediaDecodeError(
            f"{path}: expected (F, H, W) or (F, H, W, 3), got {arr.shape}")
    return [arr[i] for i in range(arr.shape[0])]


def sample_frames(frames: list[np.ndarray], target: int) -> list[np.ndarray]:
    """Evenly subsample down to ``target`` frames; shorter inputs pass through."""
    if len(frames) <= target:
        return frames
    idx = np.linspace(0, len(frames) - 1, target).round().astype(int)
    return [frames[i] for i in idx]
