"""Binary portable graymap/pixmap writers and readers.

Chosen over richer formats so golden-file tests can compare bytes.
BEV maps are stored row-major with y as rows; cell value 1 maps to 255.
"""

from __future__ import annotations

import numpy as np

from .errors import FormatError


def write_pgm(path, gray: np.ndarray):
    """gray: (H, W) uint8."""
    if gray.ndim != 2 or gray.dtype != np.uint8:
        raise FormatError(f"expected (H, W) uint8, got {gray.shape} {gray.dtype}")
    h, w = gray.shape
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n255\n".encode())
        f.write(gray.tobytes())


def write_ppm(path, rgb: np.ndarray):
    """rgb: (H, W, 3) uint8."""
    if rgb.ndim != 3 or rgb.shape[2] != 3 or rgb.dtype != np.uint8:
        raise FormatError(f"expected (H, W, 3) uint8, got {rgb.shape} {rgb.dtype}")
    h, w, _ = rgb.shape
    with open(path, "wb") as f:
        f.write(f"P6\n{w} {h}\n255\n".encode())
        f.write(rgb.tobytes())


def bev_to_gray(cells: np.ndarray) -> np.ndarray:
    """(width, height) {0,1} cells -> (H, W) uint8 image, y as rows."""
    return (cells.T.astype(np.uint8)) * 255


def map_to_gray(values: np.ndarray) -> np.ndarray:
    """(width, height) values in [0, 1] -> (H, W) uint8 image."""
    return np.clip(np.floor(values.T * 255.0 + 0.5), 0, 255).astype(np.uint8)


def _read_netpbm(path, magic):
    with open(path, "rb") as f:
        blob = f.read()
    tokens = []
    i = 0
    while len(tokens) < 4:
        while i < len(blob) and blob[i:i + 1].isspace():
            i += 1
        if blob[i:i + 1] == b"#":
            while i < len(blob) and blob[i] != 0x0A:
                i += 1
            continue
        j = i
        while j < len(blob) and not blob[j:j + 1].isspace():
            j += 1
        tokens.append(blob[i:j])
        i = j
    if tokens[0] != magic:
        raise FormatError(f"bad magic {tokens[0]!r}, expected {magic!r}")
    w, h, maxval = int(tokens[1]), int(tokens[2]), int(tokens[3])
    if maxval != 255:
        raise FormatError(f"unsupported maxval {maxval}")
    return blob[i + 1:], w, h


def read_pgm(path) -> np.ndarray:
    payload, w, h = _read_netpbm(path, b"P5")
    if len(payload) != w * h:
        raise FormatError(f"payload length {len(payload)} != {w * h}")
    return np.frombuffer(payload, dtype=np.uint8).reshape(h, w)


def read_ppm(path) -> np.ndarray:
    payload, w, h = _read_netpbm(path, b"P6")
    if len(payload) != w * h * 3:
        raise FormatError(f"payload length {len(payload)} != {w * h * 3}")
    return np.frombuffer(payload, dtype=np.uint8).reshape(h, w, 3)
