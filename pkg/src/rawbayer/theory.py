"""Numeric checks for GAN training on transformed data.

Distributions are either discrete probability vectors or 1-D piecewise-constant
densities on a (possibly non-uniform) grid. Maps are index maps (permutations,
or deliberately non-injective folds) and strictly increasing piecewise-linear
functions. With these, the optimal discriminator, the value function, the
Jensen-Shannon divergence and its invariance under invertible maps can all be
evaluated exactly, without sampling.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from typing import Callable, Optional, Sequence, Union

import numpy as np

LOG4 = math.log(4.0)
D_CLAMP = 1e-12

DEFAULT_PERCEPTUAL_WEIGHTS = (1 / 32, 1 / 16, 1 / 8, 1 / 4, 1.0)
DEFAULT_ALPHA_FM = 10.0
DEFAULT_ALPHA_VGG = 10.0

DISCRETE_TOL = 1e-12
GRIDDED_TOL = 1e-6


def _frozen(arr) -> np.ndarray:
    arr = np.array(arr, dtype=np.float64)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class DiscreteDistribution:
    probs: np.ndarray

    def __post_init__(self):
        p = _frozen(self.probs)
        if p.ndim != 1 or p.size == 0:
            raise ValueError("probabilities must be a nonempty 1-D vector")
        if np.any(p < 0) or abs(p.sum() - 1.0) > 1e-12:
            raise ValueError(f"not a probability vector (sum {p.sum()!r})")
        object.__setattr__(self, "probs", p)

    @property
    def n(self) -> int:
        return self.probs.size


@dataclass(frozen=True, eq=False)
class GriddedDensity:
    """Piecewise-constant density: `density[i]` holds on [edges[i], edges[i+1])."""

    edges: np.ndarray
    density: np.ndarray

    def __post_init__(self):
        edges, dens = _frozen(self.edges), _frozen(self.density)
        if edges.ndim != 1 or dens.ndim != 1 or edges.size != dens.size + 1 or dens.size == 0:
            raise ValueError("need n cell densities and n+1 edges")
        if np.any(np.diff(edges) <= 0):
            raise ValueError("grid edges must be strictly increasing")
        if np.any(dens < 0):
            raise ValueError("densities must be nonnegative")
        mass = float(np.sum(dens * np.diff(edges)))
        if abs(mass - 1.0) > 1e-9:
            raise ValueError(f"density integrates to {mass}, not 1")
        object.__setattr__(self, "edges", edges)
        object.__setattr__(self, "density", dens)

    @classmethod
    def on_interval(cls, lo: float, hi: float, density: Sequence[float]) -> "GriddedDensity":
        density = np.asarray(density, dtype=np.float64)
        return cls(np.linspace(lo, hi, density.size + 1), density)

    @classmethod
    def from_function(cls, func: Callable, lo: float, hi: float, n: int) -> "GriddedDensity":
        """Sample `func` at cell midpoints and renormalize to unit mass."""
        edges = np.linspace(lo, hi, n + 1)
        mids = 0.5 * (edges[:-1] + edges[1:])
        vals = np.asarray(func(mids), dtype=np.float64)
        return cls(edges, vals / np.sum(vals * np.diff(edges)))

    @property
    def widths(self) -> np.ndarray:
        return np.diff(self.edges)

    @property
    def mass(self) -> float:
        return float(np.sum(self.density * self.widths))

    def at(self, x: np.ndarray) -> np.ndarray:
        idx = np.clip(np.searchsorted(self.edges, x, side="right") - 1, 0, self.density.size - 1)
        return self.density[idx]


@dataclass(frozen=True, eq=False)
class IndexMap:
    """Map of outcome i to outcome mapping[i]; a permutation when bijective."""

    mapping: np.ndarray
    size: Optional[int] = None

    def __post_init__(self):
        m = np.array(self.mapping, dtype=np.int64)
        size = int(m.max()) + 1 if self.size is None else int(self.size)
        if m.ndim != 1 or m.min() < 0 or m.max() >= size:
            raise ValueError("index map targets must lie in [0, size)")
        m.setflags(write=False)
        object.__setattr__(self, "mapping", m)
        object.__setattr__(self, "size", size)

    @classmethod
    def permutation(cls, perm: Sequence[int]) -> "IndexMap":
        perm = np.asarray(perm)
        if sorted(perm.tolist()) != list(range(perm.size)):
            raise ValueError("not a permutation")
        return cls(perm, perm.size)

    @classmethod
    def fold(cls, n: int) -> "IndexMap":
        """Two-to-one fold i -> min(i, n-1-i); not invertible."""
        i = np.arange(n)
        return cls(np.minimum(i, n - 1 - i), (n + 1) // 2)

    @property
    def invertible(self) -> bool:
        return self.size == self.mapping.size and np.unique(self.mapping).size == self.size


@dataclass(frozen=True, eq=False)
class PiecewiseLinearMap:
    """Strictly increasing piecewise-linear function through (knots[i], values[i])."""

    knots: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        x, y = _frozen(self.knots), _frozen(self.values)
        if x.ndim != 1 or x.shape != y.shape or x.size < 2:
            raise ValueError("need at least two matching knots and values")
        if np.any(np.diff(x) <= 0) or np.any(np.diff(y) <= 0):
            raise ValueError("piecewise-linear map must be strictly increasing (all slopes > 0)")
        object.__setattr__(self, "knots", x)
        object.__setattr__(self, "values", y)

    @classmethod
    def affine(cls, scale: float, offset: float, lo: float, hi: float) -> "PiecewiseLinearMap":
        return cls([lo, hi], [scale * lo + offset, scale * hi + offset])

    @property
    def slopes(self) -> np.ndarray:
        return np.diff(self.values) / np.diff(self.knots)

    @property
    def invertible(self) -> bool:
        return True

    def __call__(self, x):
        return np.interp(x, self.knots, self.values)

    def inverse(self, t):
        return np.interp(t, self.values, self.knots)

    def inverse_derivative(self, t) -> np.ndarray:
        """d T^-1 / dt evaluated inside the pieces containing t."""
        idx = np.clip(np.searchsorted(self.values, t, side="right") - 1, 0, self.slopes.size - 1)
        return 1.0 / self.slopes[idx]


Distribution = Union[DiscreteDistribution, GriddedDensity]
InvertibleMap = Union[IndexMap, PiecewiseLinearMap]


def _xlogy_over(p: np.ndarray, m: np.ndarray) -> np.ndarray:
    out = np.zeros_like(p)
    pos = p > 0
    out[pos] = p[pos] * np.log(p[pos] / m[pos])
    return out


def _same_grid(p: GriddedDensity, q: GriddedDensity) -> None:
    if p.edges.shape != q.edges.shape or not np.allclose(p.edges, q.edges, rtol=1e-12, atol=1e-12):
        raise ValueError("densities live on different grids")


def js_divergence(p: Distribution, q: Distribution) -> float:
    """Jensen-Shannon divergence in nats, with 0 log 0 = 0."""
    if isinstance(p, DiscreteDistribution) and isinstance(q, DiscreteDistribution):
        if p.n != q.n:
            raise ValueError(f"support sizes differ: {p.n} vs {q.n}")
        a, b, w = p.probs, q.probs, None
    elif isinstance(p, GriddedDensity) and isinstance(q, GriddedDensity):
        _same_grid(p, q)
        a, b, w = p.density, q.density, p.widths
    else:
        raise TypeError("js_divergence needs two distributions of the same kind")
    m = 0.5 * (a + b)
    terms = 0.5 * _xlogy_over(a, m) + 0.5 * _xlogy_over(b, m)
    if w is not None:
        terms = terms * w
    return float(min(max(math.fsum(terms), 0.0), math.log(2.0)))


def optimal_discriminator(p_data: Distribution, p_g: Distribution) -> np.ndarray:
    """D*(x) = p_data / (p_data + p_g) per outcome or grid cell; 0/0 is taken as 1/2."""
    if isinstance(p_data, DiscreteDistribution) and isinstance(p_g, DiscreteDistribution):
        if p_data.n != p_g.n:
            raise ValueError(f"support sizes differ: {p_data.n} vs {p_g.n}")
        a, b = p_data.probs, p_g.probs
    elif isinstance(p_data, GriddedDensity) and isinstance(p_g, GriddedDensity):
        _same_grid(p_data, p_g)
        a, b = p_data.density, p_g.density
    else:
        raise TypeError("optimal_discriminator needs two distributions of the same kind")
    total = a + b
    safe = np.where(total > 0, total, 1.0)
    return np.where(total > 0, a / safe, 0.5)


def gan_value(p_data: DiscreteDistribution, p_g: DiscreteDistribution, disc: Sequence[float]) -> float:
    """E_data[log D] + E_g[log(1 - D)] with D clamped away from 0 and 1."""
    d = np.asarray(disc, dtype=np.float64)
    if d.shape != (p_data.n,) or p_g.n != p_data.n:
        raise ValueError("discriminator and distributions must have the same length")
    d = np.clip(d, D_CLAMP, 1.0 - D_CLAMP)
    return _expect(p_data.probs, np.log(d)) + _expect(p_g.probs, np.log1p(-d))


def _expect(probs: np.ndarray, values: np.ndarray) -> float:
    # centre on one value so a constant integrand comes out exact even when
    # the probabilities sum to 1 only up to rounding
    c = float(values[np.argmax(probs)])
    return c + math.fsum(probs * (values - c))


def virtual_criterion(p_data: Distribution, p_g: Distribution) -> float:
    """Value at the optimal discriminator: -log 4 + 2 JS(p_data || p_g)."""
    return -LOG4 + 2.0 * js_divergence(p_data, p_g)


def pushforward(p: Distribution, transform: InvertibleMap) -> Distribution:
    """Distribution of T(x) for x ~ p.

    Discrete outcomes are relabelled (and merged, for non-injective maps).
    Gridded densities follow p(T^-1(t)) |dT^-1/dt| on the grid formed by the
    images of the cell edges and of the map's knots, on which the result is
    again exactly piecewise constant.
    """
    if isinstance(p, DiscreteDistribution):
        if not isinstance(transform, IndexMap) or transform.mapping.size != p.n:
            raise ValueError("discrete distributions need an index map over the same support")
        out = np.zeros(transform.size)
        np.add.at(out, transform.mapping, p.probs)
        return DiscreteDistribution(out)
    if isinstance(p, GriddedDensity):
        if not isinstance(transform, PiecewiseLinearMap):
            raise ValueError("gridded densities need a piecewise-linear map")
        lo, hi = p.edges[0], p.edges[-1]
        if transform.knots[0] > lo or transform.knots[-1] < hi:
            raise ValueError("map does not cover the density's support")
        inner = transform.knots[(transform.knots > lo) & (transform.knots < hi)]
        new_edges = transform(np.union1d(p.edges, inner))
        mids = 0.5 * (new_edges[:-1] + new_edges[1:])
        dens = p.at(transform.inverse(mids)) * transform.inverse_derivative(mids)
        return GriddedDensity(new_edges, dens)
    raise TypeError(f"cannot push forward {type(p).__name__}")


@dataclass(frozen=True)
class InvarianceReport:
    js_before: float
    js_after: float
    abs_diff: float
    tolerance: float
    invertible: bool

    @property
    def invariant(self) -> bool:
        return self.abs_diff <= self.tolerance

    @property
    def passed(self) -> bool:
        # non-invertible maps are negative controls: they should break invariance
        return self.invariant if self.invertible else not self.invariant


def verify_js_invariance(p: Distribution, q: Distribution, transform: InvertibleMap) -> InvarianceReport:
    before = js_divergence(p, q)
    after = js_divergence(pushforward(p, transform), pushforward(q, transform))
    tol = DISCRETE_TOL if isinstance(p, DiscreteDistribution) else GRIDDED_TOL
    return InvarianceReport(before, after, abs(before - after), tol, bool(transform.invertible))


# weight demodulation


@dataclass(frozen=True, eq=False)
class WeightTensor:
    """Convolution weights indexed [in_channel, out_channel, k_h, k_w] with per-input scales."""

    weights: np.ndarray
    scales: np.ndarray
    eps: float = 1e-8

    def __post_init__(self):
        w, s = _frozen(self.weights), _frozen(self.scales)
        if w.ndim != 4 or s.shape != (w.shape[0],):
            raise ValueError("weights must be 4-D with one scale per input channel")
        if not (np.all(np.isfinite(w)) and np.all(np.isfinite(s))):
            raise ValueError("weights and scales must be finite")
        if self.eps < 0:
            raise ValueError("epsilon must be nonnegative")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "scales", s)


def weight_demodulate(w: WeightTensor) -> WeightTensor:
    """Scale by s_i, then normalize every output channel j to unit L2 norm (softened by eps)."""
    modulated = w.scales[:, None, None, None] * w.weights
    sq = np.sum(modulated**2, axis=(0, 2, 3)) + w.eps
    if np.any(sq == 0):
        raise ValueError("zero output-channel norm with eps = 0")
    out = modulated / np.sqrt(sq)[None, :, None, None]
    return WeightTensor(out, np.ones_like(w.scales), w.eps)


# loss arithmetic


@dataclass(frozen=True, eq=False)
class FeatureTensor:
    data: np.ndarray
    layer: int = 0

    def __post_init__(self):
        d = _frozen(self.data)
        if d.ndim != 3 or min(d.shape) < 1:
            raise ValueError(f"feature tensor must be C x H x W with C, H, W >= 1, got {d.shape}")
        object.__setattr__(self, "data", d)


def _normalized_l1(a: FeatureTensor, b: FeatureTensor) -> float:
    if a.data.shape != b.data.shape:
        raise ValueError(f"feature shapes differ: {a.data.shape} vs {b.data.shape}")
    return float(np.sum(np.abs(a.data - b.data)) / a.data.size)


def feature_matching_loss(real: Sequence[FeatureTensor], fake: Sequence[FeatureTensor]) -> float:
    """Sum over layers of the L1 distance divided by C*H*W."""
    if len(real) != len(fake):
        raise ValueError(f"layer counts differ: {len(real)} vs {len(fake)}")
    return math.fsum(_normalized_l1(a, b) for a, b in zip(real, fake))


def perceptual_loss(
    real: Sequence[FeatureTensor],
    fake: Sequence[FeatureTensor],
    weights: Sequence[float] = DEFAULT_PERCEPTUAL_WEIGHTS,
) -> float:
    """Weighted normalized L1 over exactly five feature blocks."""
    if len(real) != 5 or len(fake) != 5 or len(weights) != 5:
        raise ValueError("perceptual loss needs exactly five blocks and five weights")
    return math.fsum(lam * _normalized_l1(a, b) for lam, a, b in zip(weights, real, fake))


def total_loss(
    l_gan: float,
    l_fm: float,
    l_vgg: float,
    alpha_fm: float = DEFAULT_ALPHA_FM,
    alpha_vgg: float = DEFAULT_ALPHA_VGG,
) -> float:
    return l_gan + alpha_fm * l_fm + alpha_vgg * l_vgg


def write_feature_tensors(tensors: Sequence[FeatureTensor], path) -> None:
    """Little-endian: int32 layer count, int32 (C, H, W) per layer, then float64 data."""
    with open(path, "wb") as fh:
        fh.write(struct.pack("<i", len(tensors)))
        for t in tensors:
            fh.write(struct.pack("<3i", *t.data.shape))
        for t in tensors:
            fh.write(np.ascontiguousarray(t.data, dtype="<f8").tobytes())


def read_feature_tensors(path) -> list[FeatureTensor]:
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 4:
        raise ValueError(f"{path}: truncated feature file")
    (count,) = struct.unpack_from("<i", blob, 0)
    if count < 0 or len(blob) < 4 + 12 * count:
        raise ValueError(f"{path}: bad layer count {count}")
    shapes = [struct.unpack_from("<3i", blob, 4 + 12 * i) for i in range(count)]
    offset = 4 + 12 * count
    need = offset + 8 * sum(c * h * w for c, h, w in shapes)
    if len(blob) != need:
        raise ValueError(f"{path}: expected {need} bytes, found {len(blob)}")
    tensors = []
    for i, shape in enumerate(shapes):
        n = shape[0] * shape[1] * shape[2]
        data = np.frombuffer(blob, dtype="<f8", count=n, offset=offset).reshape(shape)
        tensors.append(FeatureTensor(data, i))
        offset += 8 * n
    return tensors


# differentiability harness

MAX_JACOBIAN_SIDE = 12


def numerical_jacobian(func: Callable[[np.ndarray], np.ndarray], x: np.ndarray, h: float = 1e-6) -> np.ndarray:
    """Central-difference Jacobian, shape (outputs, inputs), of an array-to-array map."""
    x = np.asarray(x, dtype=np.float64)
    if h <= 0:
        raise ValueError("step must be positive")
    if x.ndim < 2 or x.shape[-1] > MAX_JACOBIAN_SIDE or x.shape[-2] > MAX_JACOBIAN_SIDE:
        raise ValueError(f"numerical Jacobian limited to images of at most {MAX_JACOBIAN_SIDE}x{MAX_JACOBIAN_SIDE}")
    flat = x.ravel()
    columns = []
    for i in range(flat.size):
        step = np.zeros_like(flat)
        step[i] = h
        hi = np.asarray(func((flat + step).reshape(x.shape)), dtype=np.float64).ravel()
        lo = np.asarray(func((flat - step).reshape(x.shape)), dtype=np.float64).ravel()
        columns.append((hi - lo) / (2 * h))
    return np.stack(columns, axis=1)
