"""Full-reference image quality metrics and the Frechet distance between Gaussians."""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np
from scipy import ndimage

from .imgcore import BayerImage, ColorImage, quantize

Image = Union[BayerImage, ColorImage, np.ndarray]

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03

PSD_TOL = 1e-9
EIG_ERROR_TOL = 1e-6


def _samples(img: Image, bit_depth: int) -> np.ndarray:
    """Integer-valued sample array: (H, W) for mosaics and gray arrays, (3, H, W) for color."""
    if isinstance(img, BayerImage):
        return img.samples.astype(np.float64)
    if isinstance(img, ColorImage):
        return quantize(img.planes, bit_depth).astype(np.float64)
    return np.asarray(img, dtype=np.float64)


def _pair(a: Image, b: Image, bit_depth: int) -> tuple[np.ndarray, np.ndarray]:
    if type(a) is not type(b):
        raise ValueError(f"cannot compare {type(a).__name__} with {type(b).__name__}")
    x, y = _samples(a, bit_depth), _samples(b, bit_depth)
    if x.shape != y.shape:
        raise ValueError(f"image dimensions differ: {x.shape} vs {y.shape}")
    return x, y


def mse(a: Image, b: Image, bit_depth: int = 8) -> float:
    """Mean squared error on integer sample values.

    Color images are quantized to `bit_depth` bits first; the per-plane MSEs are
    averaged, which for equal-size planes is the mean over all samples.
    """
    x, y = _pair(a, b, bit_depth)
    diff = x - y
    if diff.ndim == 3:
        return float(np.mean([np.mean(d * d) for d in diff]))
    return float(np.mean(diff * diff))


def psnr_from_mse(value: float, bit_depth: int) -> float:
    if value < 0:
        raise ValueError("MSE cannot be negative")
    if value == 0:
        return math.inf
    return 10.0 * math.log10((2**bit_depth - 1) ** 2 / value)


def psnr(a: Image, b: Image, bit_depth: int = 8) -> float:
    """Peak signal-to-noise ratio in dB; ``math.inf`` for identical images."""
    return psnr_from_mse(mse(a, b, bit_depth), bit_depth)


def ave_psnr(mses: Sequence[float], bit_depth: int = 8) -> float:
    """Dataset PSNR computed from the mean of the per-pair MSEs (not the mean of PSNRs)."""
    mses = list(mses)
    if not mses:
        raise ValueError("need at least one MSE value")
    if min(mses) < 0:
        raise ValueError("MSE cannot be negative")
    return psnr_from_mse(math.fsum(mses) / len(mses), bit_depth)


def _gaussian_window() -> np.ndarray:
    r = SSIM_WINDOW // 2
    g = np.exp(-(np.arange(-r, r + 1) ** 2) / (2 * SSIM_SIGMA**2))
    return g / g.sum()


def _filter_valid(img: np.ndarray, g: np.ndarray) -> np.ndarray:
    r = g.size // 2
    out = ndimage.correlate1d(img, g, axis=0, mode="constant")
    out = ndimage.correlate1d(out, g, axis=1, mode="constant")
    return out[r:-r, r:-r]


def ssim_map(x: np.ndarray, y: np.ndarray, data_range: float) -> np.ndarray:
    """Local SSIM over an 11x11 Gaussian window (sigma 1.5), valid region only."""
    if x.shape[0] < SSIM_WINDOW or x.shape[1] < SSIM_WINDOW:
        raise ValueError(f"images smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} SSIM window")
    g = _gaussian_window()
    c1 = (SSIM_K1 * data_range) ** 2
    c2 = (SSIM_K2 * data_range) ** 2
    mu_x = _filter_valid(x, g)
    mu_y = _filter_valid(y, g)
    var_x = _filter_valid(x * x, g) - mu_x * mu_x
    var_y = _filter_valid(y * y, g) - mu_y * mu_y
    cov = _filter_valid(x * y, g) - mu_x * mu_y
    num = (2 * mu_x * mu_y + c1) * (2 * cov + c2)
    den = (mu_x * mu_x + mu_y * mu_y + c1) * (var_x + var_y + c2)
    return num / den


def mssim(a: Image, b: Image, bit_depth: int = 8) -> float:
    """Mean SSIM. Color images are compared on the luma (R + G + B) / 3."""
    x, y = _pair(a, b, bit_depth)
    if x.ndim == 3:
        x, y = x.mean(axis=0), y.mean(axis=0)
    value = float(np.mean(ssim_map(x, y, 2**bit_depth - 1)))
    return min(max(value, -1.0), 1.0)


@dataclass(frozen=True, eq=False)
class GaussianStats:
    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        mu = np.atleast_1d(np.array(self.mean, dtype=np.float64))
        cov = np.atleast_2d(np.array(self.cov, dtype=np.float64))
        d = mu.size
        if mu.ndim != 1 or cov.shape != (d, d):
            raise ValueError(f"covariance shape {cov.shape} does not match dimension {d}")
        if not np.allclose(cov, cov.T, rtol=0, atol=PSD_TOL):
            raise ValueError("covariance is not symmetric")
        if np.linalg.eigvalsh(cov).min() < -PSD_TOL:
            raise ValueError("covariance is not positive semidefinite")
        mu.setflags(write=False)
        cov.setflags(write=False)
        object.__setattr__(self, "mean", mu)
        object.__setattr__(self, "cov", cov)

    @property
    def dim(self) -> int:
        return self.mean.size


def gaussian_stats(features: Sequence[Sequence[float]]) -> GaussianStats:
    """Sample mean and unbiased sample covariance of a set of feature vectors."""
    try:
        arr = np.array(features, dtype=np.float64)
    except ValueError as exc:
        raise ValueError(f"feature vectors have inconsistent dimensions: {exc}") from exc
    if arr.ndim != 2:
        raise ValueError("features must be a list of equal-length vectors")
    if arr.shape[0] < 2:
        raise ValueError("need at least two feature vectors")
    cov = np.cov(arr, rowvar=False, ddof=1).reshape(arr.shape[1], arr.shape[1])
    return GaussianStats(arr.mean(axis=0), 0.5 * (cov + cov.T))


def _psd_sqrt(mat: np.ndarray) -> np.ndarray:
    vals, vecs = np.linalg.eigh(0.5 * (mat + mat.T))
    return (vecs * np.sqrt(np.clip(vals, 0.0, None))) @ vecs.T


def frechet_distance(a: GaussianStats, b: GaussianStats) -> float:
    """||mu_a - mu_b||^2 + Tr(S_a + S_b - 2 (S_a S_b)^(1/2)).

    The trace of (S_a S_b)^(1/2) is taken from the eigenvalues of the symmetric
    matrix S_a^(1/2) S_b S_a^(1/2), which has the same spectrum.
    """
    if a.dim != b.dim:
        raise ValueError(f"dimension mismatch: {a.dim} vs {b.dim}")
    root_a = _psd_sqrt(a.cov)
    inner = root_a @ b.cov @ root_a
    vals = np.linalg.eigvalsh(0.5 * (inner + inner.T))
    if vals.min(initial=0.0) < -EIG_ERROR_TOL:
        raise ValueError(f"product of covariances has eigenvalue {vals.min()} < -{EIG_ERROR_TOL}")
    tr_sqrt = float(np.sum(np.sqrt(np.clip(vals, 0.0, None))))
    diff = a.mean - b.mean
    value = float(diff @ diff + np.trace(a.cov) + np.trace(b.cov) - 2.0 * tr_sqrt)
    if value < -EIG_ERROR_TOL:
        raise ValueError(f"negative Frechet distance {value}")
    return max(value, 0.0)


def write_feature_vectors(features: np.ndarray, path) -> None:
    """Little-endian int32 count and dimension, then count*dim float64 values."""
    arr = np.asarray(features, dtype=np.float64)
    if arr.ndim != 2:
        raise ValueError("features must be a 2-D (count, dim) array")
    with open(path, "wb") as fh:
        fh.write(struct.pack("<2i", *arr.shape))
        fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def read_feature_vectors(path) -> np.ndarray:
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 8:
        raise ValueError(f"{path}: truncated feature file")
    n, d = struct.unpack_from("<2i", blob, 0)
    if n < 0 or d < 0 or len(blob) != 8 + 8 * n * d:
        raise ValueError(f"{path}: header ({n}, {d}) does not match file size {len(blob)}")
    return np.frombuffer(blob, dtype="<f8", count=n * d, offset=8).reshape(n, d).copy()


@dataclass
class PairMetrics:
    name: str
    mse: float
    psnr: float
    mssim: Optional[float] = None


@dataclass
class MetricReport:
    pairs: list = field(default_factory=list)
    bit_depth: int = 8
    frechet: Optional[float] = None

    @property
    def ave_psnr(self) -> Optional[float]:
        if not self.pairs:
            return None
        return ave_psnr([p.mse for p in self.pairs], self.bit_depth)

    @property
    def mssim_mean(self) -> Optional[float]:
        values = [p.mssim for p in self.pairs if p.mssim is not None]
        return float(np.mean(values)) if values else None

    def to_dict(self) -> dict:
        pairs = []
        for p in sorted(self.pairs, key=lambda p: p.name):
            entry = {"name": p.name, "mse": p.mse, "psnr": _json_number(p.psnr)}
            if p.mssim is not None:
                entry["mssim"] = p.mssim
            pairs.append(entry)
        return {
            "pairs": pairs,
            "ave_psnr": _json_number(self.ave_psnr),
            "mssim_mean": self.mssim_mean,
            "frechet": self.frechet,
        }


def _json_number(value):
    if value is not None and math.isinf(value):
        return "inf"
    return value
