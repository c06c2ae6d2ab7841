"""File exports: grayscale PNG abundance maps, spectra and simplex CSVs.

The PNG writer is deliberately minimal (8-bit grayscale, filter 0, fixed
zlib level, IHDR/IDAT/IEND only) so output bytes depend on pixel values
alone.
"""
from __future__ import annotations

import csv
import struct
import zlib
from pathlib import Path

import numpy as np

from .linalg import ContractError

PNG_SIGNATURE = b"\x89PNG\r\n\x1a\n"
ZLIB_LEVEL = 9


def _chunk(tag: bytes, payload: bytes) -> bytes:
    crc = zlib.crc32(tag + payload) & 0xFFFFFFFF
    return struct.pack(">I", len(payload)) + tag + payload + struct.pack(">I", crc)


def encode_png_gray(pixels) -> bytes:
    """PNG bytes for a ``height x width`` uint8 array."""
    img = np.asarray(pixels)
    if img.ndim != 2 or img.dtype != np.uint8:
        raise ContractError(f"expected a 2-D uint8 image, got {img.dtype} {img.shape}")
    height, width = img.shape
    if width == 0 or height == 0:
        raise ContractError("PNG images need at least one pixel")
    ihdr = struct.pack(">IIBBBBB", width, height, 8, 0, 0, 0, 0)
    # filter type 0 on every scanline
    raw = np.hstack([np.zeros((height, 1), dtype=np.uint8), img]).tobytes()
    return PNG_SIGNATURE + _chunk(b"IHDR", ihdr) + _chunk(b"IDAT", zlib.compress(raw, ZLIB_LEVEL)) + _chunk(b"IEND", b"")


def decode_png_gray(blob: bytes) -> np.ndarray:
    """Inverse of :func:`encode_png_gray` (only handles what it writes)."""
    if not blob.startswith(PNG_SIGNATURE):
        raise ContractError("not a PNG stream")
    pos = len(PNG_SIGNATURE)
    width = height = None
    idat = b""
    while pos < len(blob):
        (length,) = struct.unpack(">I", blob[pos : pos + 4])
        tag = blob[pos + 4 : pos + 8]
        payload = blob[pos + 8 : pos + 8 + length]
        if tag == b"IHDR":
            width, height, depth, color = struct.unpack(">IIBB", payload[:10])
            if depth != 8 or color != 0:
                raise ContractError("only 8-bit grayscale PNGs are supported")
        elif tag == b"IDAT":
            idat += payload
        pos += 12 + length
    rows = np.frombuffer(zlib.decompress(idat), dtype=np.uint8).reshape(height, width + 1)
    if np.any(rows[:, 0] != 0):
        raise ContractError("only filter type 0 is supported")
    return rows[:, 1:].copy()


def to_gray(values) -> np.ndarray:
    """round(255 * v) for v clipped to [0, 1]."""
    v = np.clip(np.asarray(values, dtype=np.float64), 0.0, 1.0)
    return np.rint(255.0 * v).astype(np.uint8)


def abundance_image(column, width: int, height: int) -> np.ndarray:
    column = np.asarray(column, dtype=np.float64)
    if column.size != width * height:
        raise ContractError(f"{column.size} abundances do not fill a {width}x{height} raster")
    return to_gray(column).reshape(height, width)


def write_png(path, image) -> None:
    Path(path).write_bytes(encode_png_gray(image))


def write_abundance_maps(directory, a, width: int, height: int, a_true=None, permutation=None) -> list[str]:
    """One PNG per extracted member, plus |A - A_true| maps for matched ones.

    ``permutation[j]`` is the extracted member matched to true member ``j``.
    """
    directory = Path(directory)
    written = []
    for k in range(a.shape[1]):
        p = directory / f"abundance_{k}.png"
        write_png(p, abundance_image(a[:, k], width, height))
        written.append(str(p))
    if a_true is not None and permutation is not None:
        for j, k in enumerate(permutation):
            p = directory / f"difference_{j}.png"
            write_png(p, abundance_image(np.abs(a[:, k] - a_true[:, j]), width, height))
            written.append(str(p))
    return written


def write_spectra_csv(path, extracted, truth=None, permutation=None, wavelengths=None) -> None:
    """Columns: band, wavelength, then ``gt_j``/``extracted_j`` per true member.

    Without ground truth every extracted member gets one column.
    """
    extracted = np.asarray(extracted, dtype=np.float64)
    f = extracted.shape[1]
    if truth is not None and permutation is not None:
        header = ["band", "wavelength"]
        cols = []
        for j, k in enumerate(permutation):
            header += [f"gt_{j}", f"extracted_{j}"]
            cols += [truth[j], extracted[k]]
    else:
        header = ["band", "wavelength"] + [f"extracted_{k}" for k in range(extracted.shape[0])]
        cols = list(extracted)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for b in range(f):
            wl = "" if wavelengths is None else repr(float(wavelengths[b]))
            w.writerow([b, wl] + [repr(float(c[b])) for c in cols])


def simplex_projection(a) -> np.ndarray:
    """2-D coordinates of abundance rows: vertices on a regular K-gon.

    For K = 3 this is the usual triangle; the first two abundance
    coordinates alone are also written for quick plotting.
    """
    a = np.asarray(a, dtype=np.float64)
    k = a.shape[1]
    angles = np.pi / 2 + 2 * np.pi * np.arange(k) / k
    vertices = np.stack([np.cos(angles), np.sin(angles)], axis=1)
    return a @ vertices


def write_simplex_csvs(directory, a) -> tuple[str, str]:
    directory = Path(directory)
    scatter = directory / "simplex_scatter.csv"
    proj = directory / "simplex_projection.csv"
    k = a.shape[1]
    np.savetxt(scatter, a, delimiter=",", fmt="%.17g", header=",".join(f"a{i}" for i in range(k)), comments="")
    xy = simplex_projection(a)
    first_two = a[:, :2] if k >= 2 else np.hstack([a, np.zeros_like(a)])
    np.savetxt(
        proj, np.hstack([first_two, xy]), delimiter=",", fmt="%.17g", header="a0,a1,x,y", comments=""
    )
    return str(scatter), str(proj)
