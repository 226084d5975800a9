"""Binary PPM (P6) frame files for decoded video output."""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .errors import ShapeError


def write_ppm(path: Path | str, frame: np.ndarray) -> None:
    """Write an RGB frame [3, H, W] with values in [0, 1] as binary P6."""
    if frame.ndim != 3 or frame.shape[0] != 3:
        raise ShapeError(f"write_ppm: expected [3, H, W], got {frame.shape}")
    h, w = frame.shape[1:]
    pixels = np.clip(frame, 0.0, 1.0)
    raw = np.round(pixels * 255.0).astype(np.uint8).transpose(1, 2, 0)
    with open(path, "wb") as f:
        f.write(f"P6\n{w} {h}\n255\n".encode())
        f.write(raw.tobytes())


def read_ppm(path: Path | str) -> np.ndarray:
    """Read a binary P6 file back to float32 [3, H, W] in [0, 1]."""
    data = Path(path).read_bytes()
    if not data.startswith(b"P6"):
        raise ValueError(f"{path}: not a binary PPM file")
    # header: magic, width, height, maxval, then a single whitespace byte
    fields: list[bytes] = []
    i = 2
    while len(fields) < 3:
        while i < len(data) and data[i : i + 1].isspace():
            i += 1
        if data[i : i + 1] == b"#":
            while i < len(data) and data[i] != 0x0A:
                i += 1
            continue
        start = i
        while i < len(data) and not data[i : i + 1].isspace():
            i += 1
        fields.append(data[start:i])
    i += 1
    w, h, maxval = (int(x) for x in fields)
    raw = np.frombuffer(data, dtype=np.uint8, count=w * h * 3, offset=i)
    frame = raw.reshape(h, w, 3).transpose(2, 0, 1).astype(np.float32)
    return frame / float(maxval)
