"""Hyperspectral datasets: container, scaling, synthesis, corruption and I/O.

All randomness goes through ``numpy.random.default_rng(seed)`` (PCG64), so a
given seed reproduces the same arrays on every platform numpy supports.

HSX file layout::

    {"magic": "HSX1", "n": N, "f": F, "width": W, "height": H, "dtype": "f64", ...}\\n
    <N*F little-endian float64 values, row-major>

The header is one line of UTF-8 JSON.  Optional keys: ``wavelengths`` (list
of F numbers), ``scale`` (``{"y_min": .., "y_max": ..}``) and ``kind``.
"""
from __future__ import annotations

import io
import json
import math
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .linalg import ContractError, as_matrix

HSX_MAGIC = "HSX1"
MAX_HSX_ELEMENTS = 2**40


class DegenerateInputError(ValueError):
    pass


class HsxFormatError(ValueError):
    pass


class SeedError(RuntimeError):
    """A seeded generator could not satisfy its constraints."""


@dataclass(frozen=True)
class ScaleParams:
    y_min: float
    y_max: float

    def __post_init__(self):
        if not self.y_max > self.y_min:
            raise DegenerateInputError(f"scale needs y_max > y_min, got ({self.y_min}, {self.y_max})")

    @property
    def span(self) -> float:
        return self.y_max - self.y_min


@dataclass
class HsiDataset:
    y: np.ndarray  # N x F
    width: int | None = None
    height: int | None = None
    wavelengths: list[float] | None = None
    scale: ScaleParams | None = None

    def __post_init__(self):
        self.y = as_matrix(self.y, "y")
        if np.any(self.y < 0):
            raise ContractError("reflectances must be nonnegative")
        if (self.width is None) != (self.height is None):
            raise ContractError("width and height must be given together")
        if self.width is not None and self.width * self.height != self.n_pixels:
            raise ContractError(f"raster {self.width}x{self.height} does not hold {self.n_pixels} pixels")
        if self.wavelengths is not None and len(self.wavelengths) != self.n_bands:
            raise ContractError(f"{len(self.wavelengths)} wavelengths for {self.n_bands} bands")

    @property
    def n_pixels(self) -> int:
        return self.y.shape[0]

    @property
    def n_bands(self) -> int:
        return self.y.shape[1]

    @property
    def has_geometry(self) -> bool:
        return self.width is not None


@dataclass
class GroundTruth:
    endmembers: np.ndarray  # K x F, original units
    abundances: np.ndarray  # N x K

    def __post_init__(self):
        self.endmembers = as_matrix(self.endmembers, "endmembers")
        self.abundances = as_matrix(self.abundances, "abundances")
        if self.abundances.shape[1] != self.endmembers.shape[0]:
            raise ContractError("abundance columns must match endmember rows")


@dataclass(frozen=True)
class NoiseConfig:
    snr_db: float
    seed: int = 0


@dataclass(frozen=True)
class OutlierConfig:
    count: int
    seed: int = 0


def raster_shape(n: int) -> tuple[int, int]:
    """(width, height) of the squarest raster holding exactly ``n`` pixels."""
    height = max(d for d in range(1, math.isqrt(n) + 1) if n % d == 0)
    return n // height, height


# -- scaling ------------------------------------------------------------------

def scale(data: HsiDataset) -> HsiDataset:
    """Map all entries affinely onto [0, 1] with one global min/max."""
    y_min = float(data.y.min())
    y_max = float(data.y.max())
    if y_max == y_min:
        raise DegenerateInputError(f"cannot scale a constant dataset (all entries {y_min})")
    params = ScaleParams(y_min, y_max)
    ys = (data.y - y_min) / params.span
    return replace(data, y=ys, scale=params)


def unscale_endmembers(e_scaled, p: ScaleParams) -> np.ndarray:
    return np.asarray(e_scaled, dtype=np.float64) * p.span + p.y_min


def scale_endmembers(e, p: ScaleParams) -> np.ndarray:
    return (np.asarray(e, dtype=np.float64) - p.y_min) / p.span


# -- synthesis ----------------------------------------------------------------

def _bump_spectra(rng: np.random.Generator, k: int, f: int) -> np.ndarray:
    bands = np.arange(f, dtype=np.float64)
    e = np.zeros((k, f))
    for row in e:
        for _ in range(int(rng.integers(3, 6))):
            centre = rng.uniform(0.0, f)
            width = rng.uniform(0.04, 0.2) * f
            row += rng.uniform(0.2, 1.0) * np.exp(-0.5 * ((bands - centre) / width) ** 2)
        row /= row.max()
    return e


def _min_pairwise_angle(e: np.ndarray) -> float:
    if e.shape[0] < 2:
        return math.pi
    unit = e / np.linalg.norm(e, axis=1, keepdims=True)
    cos = np.clip(unit @ unit.T, -1.0, 1.0)
    return float(np.arccos(cos[np.triu_indices(e.shape[0], 1)]).min())


def synth_generate(
    k: int,
    f: int,
    n: int,
    seed: int,
    purity: float = 1.0,
    min_angle: float = 0.15,
    max_attempts: int = 1000,
) -> tuple[HsiDataset, GroundTruth]:
    """Noiseless linear mixtures of smooth synthetic spectra.

    Endmembers are sums of 3-5 Gaussian bumps normalized to a peak of 1 and
    redrawn until every pair is at least ``min_angle`` radians apart.
    Abundances are flat-Dirichlet rows; one random row per endmember is then
    replaced by the point with weight ``purity`` on that endmember (an exact
    pure pixel when ``purity == 1``).
    """
    if k > f:
        raise ContractError(f"k exceeds f ({k} > {f})")
    if n < k:
        raise ContractError(f"need n >= k, got n={n}, k={k}")
    if not 0.0 < purity <= 1.0:
        raise ContractError(f"purity must lie in (0, 1], got {purity}")
    rng = np.random.default_rng(seed)
    for _ in range(max_attempts):
        e = _bump_spectra(rng, k, f)
        if _min_pairwise_angle(e) >= min_angle:
            break
    else:
        raise SeedError(f"no endmember set with pairwise SAD >= {min_angle} after {max_attempts} draws (seed {seed})")

    a = rng.dirichlet(np.ones(k), size=n)
    vertex_rows = rng.choice(n, size=k, replace=False)
    rest = (1.0 - purity) / (k - 1) if k > 1 else 0.0
    for member, row in enumerate(vertex_rows):
        a[row] = rest
        a[row, member] = purity
    y = a @ e
    width, height = raster_shape(n)
    return HsiDataset(y, width, height), GroundTruth(e, a)


# -- corruption ---------------------------------------------------------------

def add_noise(data: HsiDataset, cfg: NoiseConfig) -> HsiDataset:
    """Add white Gaussian noise at ``cfg.snr_db``; negatives are clamped to 0."""
    if math.isinf(cfg.snr_db) and cfg.snr_db > 0:
        return replace(data, y=data.y.copy())
    if not math.isfinite(cfg.snr_db):
        raise ContractError(f"snr_db must be finite or +inf, got {cfg.snr_db}")
    rng = np.random.default_rng(cfg.seed)
    sigma = math.sqrt(float(np.mean(data.y**2)) / 10.0 ** (cfg.snr_db / 10.0))
    noisy = data.y + rng.normal(0.0, sigma, size=data.y.shape)
    return replace(data, y=np.maximum(noisy, 0.0))


def add_outliers(data: HsiDataset, cfg: OutlierConfig) -> tuple[HsiDataset, np.ndarray]:
    """Replace ``cfg.count`` random pixels by U[0,1) spectra; return their indices."""
    if not 0 <= cfg.count <= data.n_pixels:
        raise ContractError(f"outlier count {cfg.count} outside [0, {data.n_pixels}]")
    rng = np.random.default_rng(cfg.seed)
    idx = np.sort(rng.choice(data.n_pixels, size=cfg.count, replace=False))
    y = data.y.copy()
    y[idx] = rng.random((cfg.count, data.n_bands))
    return replace(data, y=y), idx


# -- HSX / CSV ----------------------------------------------------------------

def write_hsx(path, matrix, *, width=None, height=None, wavelengths=None, scale=None, kind=None) -> None:
    m = as_matrix(matrix)
    header = {"magic": HSX_MAGIC, "n": m.shape[0], "f": m.shape[1], "width": width, "height": height, "dtype": "f64"}
    if wavelengths is not None:
        header["wavelengths"] = [float(v) for v in wavelengths]
    if scale is not None:
        header["scale"] = {"y_min": scale.y_min, "y_max": scale.y_max}
    if kind is not None:
        header["kind"] = kind
    with open(path, "wb") as fh:
        fh.write(json.dumps(header, separators=(",", ":")).encode("utf-8") + b"\n")
        fh.write(m.astype("<f8").tobytes(order="C"))


def read_hsx(path) -> tuple[dict, np.ndarray]:
    """Return ``(header, matrix)`` from an HSX file, validating the layout."""
    raw = Path(path).read_bytes()
    nl = raw.find(b"\n")
    if nl < 0:
        raise HsxFormatError(f"{path}: no header terminator in {len(raw)} bytes")
    try:
        header = json.loads(raw[:nl].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise HsxFormatError(f"{path}: header at byte 0..{nl} is not UTF-8 JSON ({exc})") from None
    if not isinstance(header, dict) or header.get("magic") != HSX_MAGIC:
        raise HsxFormatError(f"{path}: bad magic at byte 0 (expected {HSX_MAGIC!r})")
    if header.get("dtype") != "f64":
        raise HsxFormatError(f"{path}: unsupported dtype {header.get('dtype')!r}")
    n, f = header.get("n"), header.get("f")
    if not (isinstance(n, int) and isinstance(f, int)) or n < 0 or f < 0:
        raise HsxFormatError(f"{path}: header n/f must be nonnegative integers, got {n!r}/{f!r}")
    if n * f > MAX_HSX_ELEMENTS:
        raise HsxFormatError(f"{path}: n*f = {n * f} overflows the {MAX_HSX_ELEMENTS}-element limit")
    start = nl + 1
    expected = n * f * 8
    actual = len(raw) - start
    if actual != expected:
        raise HsxFormatError(
            f"{path}: payload starting at byte {start} holds {actual} bytes, header declares {expected}"
        )
    m = np.frombuffer(raw, dtype="<f8", offset=start, count=n * f).astype(np.float64).reshape(n, f)
    return header, m


def save(data: HsiDataset, path) -> None:
    write_hsx(path, data.y, width=data.width, height=data.height, wavelengths=data.wavelengths, scale=data.scale)


def load(path) -> HsiDataset:
    header, y = read_hsx(path)
    s = header.get("scale")
    return HsiDataset(
        y,
        width=header.get("width"),
        height=header.get("height"),
        wavelengths=header.get("wavelengths"),
        scale=ScaleParams(s["y_min"], s["y_max"]) if s else None,
    )


def load_csv(path_or_text, f: int | None = None) -> HsiDataset:
    """One pixel per line, comma separated.  Accepts a path or CSV text."""
    src = path_or_text
    if isinstance(src, str) and "\n" in src:
        src = io.StringIO(src)
    y = np.loadtxt(src, delimiter=",", dtype=np.float64, ndmin=2)
    if f is not None and y.shape[1] != f:
        raise HsxFormatError(f"CSV rows have {y.shape[1]} values, expected {f}")
    return HsiDataset(y)


def write_matrix_csv(path, m) -> None:
    np.savetxt(path, np.asarray(m, dtype=np.float64), delimiter=",", fmt="%.17g")


def read_matrix_csv(path) -> np.ndarray:
    return np.loadtxt(path, delimiter=",", dtype=np.float64, ndmin=2)


def save_ground_truth(gt: GroundTruth, directory, *, width=None, height=None) -> dict:
    """Write ``endmembers.csv`` and ``abundances.hsx``; return their paths."""
    directory = Path(directory)
    paths = {"endmembers": directory / "endmembers.csv", "abundances": directory / "abundances.hsx"}
    write_matrix_csv(paths["endmembers"], gt.endmembers)
    write_hsx(paths["abundances"], gt.abundances, width=width, height=height, kind="abundances")
    return {k: str(v) for k, v in paths.items()}


def load_ground_truth(endmembers_path, abundances_path=None) -> GroundTruth:
    e = read_matrix_csv(endmembers_path)
    if abundances_path is None:
        return GroundTruth(e, np.zeros((0, e.shape[0])))
    _, a = read_hsx(abundances_path)
    return GroundTruth(e, a)
