"""PFM (little-endian float maps) and binary PGM (8-bit masks)."""

from __future__ import annotations

import os
import re

import numpy as np


class PFMError(ValueError):
    pass


class PGMError(ValueError):
    pass


def write_pfm(path, data: np.ndarray) -> None:
    """Write a (H, W) or (H, W, 3) array as little-endian float32 PFM.

    Rows are stored bottom-to-top as the format requires.
    """
    data = np.asarray(data)
    if data.ndim == 2:
        header = b"Pf"
    elif data.ndim == 3 and data.shape[2] == 3:
        header = b"PF"
    else:
        raise PFMError(f"{path}: PFM holds (H, W) or (H, W, 3) arrays, got {data.shape}")
    h, w = data.shape[:2]
    body = np.ascontiguousarray(np.flipud(data), dtype="<f4")
    with open(path, "wb") as f:
        f.write(header + b"\n")
        f.write(f"{w} {h}\n".encode())
        f.write(b"-1.0\n")
        f.write(body.tobytes())


def _read_token_lines(f, n):
    lines = []
    while len(lines) < n:
        line = f.readline()
        if not line:
            break
        lines.append(line)
    return lines


def read_pfm(path) -> np.ndarray:
    """Read a little-endian PFM; returns float64 (H, W) or (H, W, 3)."""
    with open(path, "rb") as f:
        lines = _read_token_lines(f, 3)
        if len(lines) < 3:
            raise PFMError(f"{path}: truncated PFM header")
        kind = lines[0].strip()
        if kind == b"PF":
            channels = 3
        elif kind == b"Pf":
            channels = 1
        else:
            raise PFMError(f"{path}: not a PFM file (header {kind!r})")
        m = re.match(rb"^\s*(\d+)\s+(\d+)\s*$", lines[1])
        if not m:
            raise PFMError(f"{path}: malformed PFM dimensions {lines[1]!r}")
        w, h = int(m.group(1)), int(m.group(2))
        try:
            scale = float(lines[2])
        except ValueError:
            raise PFMError(f"{path}: malformed PFM scale {lines[2]!r}") from None
        if scale >= 0:
            raise PFMError(f"{path}: big-endian PFM (scale {scale}); only little-endian is supported")
        count = w * h * channels
        raw = f.read()
    if len(raw) < 4 * count:
        raise PFMError(f"{path}: truncated PFM data ({len(raw)} of {4 * count} bytes)")
    arr = np.frombuffer(raw[: 4 * count], dtype="<f4").astype(np.float64)
    arr = arr.reshape((h, w, 3) if channels == 3 else (h, w))
    return np.flipud(arr).copy()


def write_pgm(path, mask: np.ndarray) -> None:
    """Binary mask as P5 PGM with values 0/255."""
    mask = np.asarray(mask)
    if mask.ndim != 2:
        raise PGMError(f"{path}: PGM holds 2-D maps, got {mask.shape}")
    h, w = mask.shape
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n255\n".encode())
        f.write(np.where(mask, 255, 0).astype(np.uint8).tobytes())


def read_pgm(path) -> np.ndarray:
    """Read a P5 PGM as a boolean map (nonzero = True)."""
    with open(path, "rb") as f:
        raw = f.read()
    m = re.match(rb"^P5\s+(\d+)\s+(\d+)\s+(\d+)\s", raw)
    if not m:
        raise PGMError(f"{path}: not a binary PGM")
    w, h, maxval = (int(g) for g in m.groups())
    if maxval > 255:
        raise PGMError(f"{path}: 16-bit PGM not supported")
    data = raw[m.end():]
    if len(data) < w * h:
        raise PGMError(f"{path}: truncated PGM data ({len(data)} of {w * h} bytes)")
    return np.frombuffer(data[: w * h], dtype=np.uint8).reshape(h, w) > 0


def ensure_dir(path) -> str:
    os.makedirs(path, exist_ok=True)
    return str(path)
