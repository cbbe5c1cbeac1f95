"""Binary NetPBM (P6) images and ``filename,label`` index files."""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np


class NetPBMError(ValueError):
    pass


def write_ppm(path, pixels: np.ndarray) -> None:
    """Write an ``H x W x 3`` array with values in [0, 1] as 8-bit P6."""
    pixels = np.asarray(pixels)
    if pixels.ndim != 3 or pixels.shape[2] != 3:
        raise NetPBMError(f"expected H x W x 3 pixels, got {pixels.shape}")
    h, w, _ = pixels.shape
    data = np.clip(np.rint(pixels * 255.0), 0, 255).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(data.tobytes())


def _tokens(buf: bytes, count: int) -> tuple[list[bytes], int]:
    out, i = [], 0
    while len(out) < count:
        while i < len(buf) and buf[i : i + 1].isspace():
            i += 1
        if buf[i : i + 1] == b"#":
            while i < len(buf) and buf[i : i + 1] not in (b"\n", b"\r"):
                i += 1
            continue
        j = i
        while j < len(buf) and not buf[j : j + 1].isspace() and buf[j : j + 1] != b"#":
            j += 1
        if j == i:
            raise NetPBMError("truncated header")
        out.append(buf[i:j])
        i = j
    return out, i + 1  # exactly one whitespace byte precedes the raster


def read_ppm(path) -> np.ndarray:
    """Read a P6 file into float64 pixels in [0, 1]."""
    buf = Path(path).read_bytes()
    try:
        toks, offset = _tokens(buf, 4)
    except IndexError:
        raise NetPBMError(f"{path}: truncated header") from None
    if toks[0] != b"P6":
        raise NetPBMError(f"{path}: not a binary PPM (P6) file")
    w, h, maxval = (int(t) for t in toks[1:])
    if not 0 < maxval < 65536:
        raise NetPBMError(f"{path}: bad maxval {maxval}")
    dtype = np.dtype(">u2") if maxval > 255 else np.dtype(np.uint8)
    n = w * h * 3
    raw = np.frombuffer(buf, dtype=dtype, count=n, offset=offset) if len(buf) - offset >= n * dtype.itemsize else None
    if raw is None:
        raise NetPBMError(f"{path}: truncated raster")
    return raw.reshape(h, w, 3).astype(np.float64) / maxval


def write_label_file(path, rows: list[tuple[str, str]]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["filename", "label"])
        wr.writerows(rows)


def read_label_file(path) -> list[tuple[str, str]]:
    with open(path, newline="", encoding="utf-8") as fh:
        rd = csv.reader(fh)
        header = next(rd, None)
        if header is None or [c.strip() for c in header] != ["filename", "label"]:
            raise NetPBMError(f"{path}: expected header filename,label")
        out = []
        for lineno, row in enumerate(rd, start=2):
            if not row:
                continue
            if len(row) != 2:
                raise NetPBMError(f"{path}:{lineno}: expected 2 fields")
            out.append((row[0].strip(), row[1].strip()))
    return out
