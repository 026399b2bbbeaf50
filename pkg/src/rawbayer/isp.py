"""Forward and reverse ISP pipelines plus the polynomial camera response model.

A pipeline is an ordered tuple of stages. Stages ahead of the Demosaic stage
work on the mosaic in sensor units (DN); stages after it work on real-valued
color planes in [0, 1]. Color planes are clamped after every color stage and
the clamping is accumulated into a per-pixel clip mask.
"""

from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass, field
from typing import ClassVar, NamedTuple, Optional, Sequence, Union

import numpy as np
from scipy import ndimage

from .imgcore import BayerImage, CfaPattern, ColorImage, pattern_of
from .mosaic import (
    ALGORITHMS,
    RESIZE_FILTERS,
    demosaic_array,
    mosaic_array,
    pack_array,
    resize_planes,
    unpack_array,
)

Gains = tuple[float, float, float]

BISECTION_MAX_ITER = 60
MONOTONE_GRID = 1024
MIN_ABS_DET = 1e-9


class PipelineError(ValueError):
    """Invalid pipeline structure, stage parameters, or configuration document."""


class ClipReport(NamedTuple):
    """Per-pixel record of samples pushed outside [0, 1] and clamped."""

    mask: np.ndarray

    @property
    def clipped_fraction(self) -> float:
        return float(np.mean(self.mask)) if self.mask.size else 0.0

    def to_dict(self) -> dict:
        return {"clipped_fraction": self.clipped_fraction}


# polynomial helpers shared by ToneCurve and CameraModel


def poly_eval(coeffs: Sequence[float], x: np.ndarray) -> np.ndarray:
    """Evaluate sum_k coeffs[k] * x**k."""
    return np.polynomial.polynomial.polyval(x, np.asarray(coeffs, dtype=np.float64))


def poly_is_increasing(coeffs: Sequence[float]) -> bool:
    """Derivative sign test on a 1024-point grid of [0, 1].

    The derivative may touch zero at isolated grid points (x^2 at 0) as long
    as the values still strictly increase from one grid point to the next.
    """
    coeffs = np.asarray(coeffs, dtype=np.float64)
    grid = np.linspace(0.0, 1.0, MONOTONE_GRID)
    deriv = np.polynomial.polynomial.polyval(grid, np.polynomial.polynomial.polyder(coeffs))
    values = np.polynomial.polynomial.polyval(grid, coeffs)
    return bool(np.all(deriv >= 0) and np.all(np.diff(values) > 0))


def poly_invert(coeffs: Sequence[float], values: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Solve f(y) = v on [0, 1] by bisection for an increasing polynomial f.

    Returns the solutions and a mask of values outside f([0, 1]), which are
    pinned to the nearest endpoint instead.
    """
    values = np.asarray(values, dtype=np.float64)
    f0, f1 = poly_eval(coeffs, 0.0), poly_eval(coeffs, 1.0)
    out_of_range = (values < f0) | (values > f1)
    lo = np.zeros_like(values)
    hi = np.ones_like(values)
    for _ in range(BISECTION_MAX_ITER):
        mid = 0.5 * (lo + hi)
        below = poly_eval(coeffs, mid) < values
        lo = np.where(below, mid, lo)
        hi = np.where(below, hi, mid)
        if np.all(hi - lo <= 1e-15):
            break
    y = 0.5 * (lo + hi)
    y = np.where(values <= f0, 0.0, np.where(values >= f1, 1.0, y))
    return y, out_of_range


def _apply_matrix(matrix: np.ndarray, planes: np.ndarray) -> np.ndarray:
    return np.einsum("ij,jhw->ihw", np.asarray(matrix, dtype=np.float64), planes)


def _to_tuple(value):
    if isinstance(value, (list, tuple, np.ndarray)):
        return tuple(_to_tuple(v) for v in value)
    return value


def _to_list(value):
    if isinstance(value, tuple):
        return [_to_list(v) for v in value]
    return value


# stages


@dataclass(frozen=True)
class Linearize:
    """Map DN in [black, white] onto [0, 1] ahead of demosaicing."""

    kind: ClassVar[str] = "linearize"
    domain: ClassVar[str] = "bayer"
    black: int
    white: int

    def __post_init__(self):
        if not 0 <= self.black < self.white:
            raise PipelineError(f"linearize needs 0 <= black < white, got {self.black}, {self.white}")


@dataclass(frozen=True)
class Denoise:
    kind: ClassVar[str] = "denoise"
    domain: ClassVar[str] = "bayer"
    method: str = "none"

    def __post_init__(self):
        if self.method not in ("none", "bayer_median3"):
            raise PipelineError(f"unknown denoise method {self.method!r}")

    @property
    def invertible(self) -> bool:
        return self.method == "none"

    def apply(self, dn: np.ndarray, pattern: CfaPattern) -> np.ndarray:
        if self.method == "none":
            return dn
        # 3x3 median over same-color neighbors, i.e. over each packed channel
        chans = pack_array(dn, pattern)
        chans = ndimage.median_filter(chans, size=(1, 3, 3), mode="nearest")
        return unpack_array(chans, pattern)


@dataclass(frozen=True)
class Noise:
    """Injected sensor noise; the seed falls back to the run seed when unset."""

    kind: ClassVar[str] = "noise"
    domain: ClassVar[str] = "bayer"
    sigma: float = 0.0
    poisson_scale: float = 0.0
    seed: Optional[int] = None

    def __post_init__(self):
        if self.sigma < 0 or self.poisson_scale < 0:
            raise PipelineError("noise sigma and poisson_scale must be nonnegative")


@dataclass(frozen=True)
class Demosaic:
    kind: ClassVar[str] = "demosaic"
    domain: ClassVar[str] = "demosaic"
    alg: str = "bilinear"

    def __post_init__(self):
        if self.alg not in ALGORITHMS:
            raise PipelineError(f"unknown demosaic algorithm {self.alg!r}")


@dataclass(frozen=True)
class WhiteBalance:
    kind: ClassVar[str] = "white_balance"
    domain: ClassVar[str] = "color"
    mode: str = "gray_world"
    gains: Optional[Gains] = None

    def __post_init__(self):
        if self.mode == "fixed":
            if self.gains is None or len(self.gains) != 3 or min(self.gains) <= 0:
                raise PipelineError("fixed white balance needs three positive gains")
            object.__setattr__(self, "gains", tuple(float(g) for g in self.gains))
        elif self.mode == "gray_world":
            if self.gains is not None:
                raise PipelineError("gray_world white balance takes no gains")
        else:
            raise PipelineError(f"unknown white balance mode {self.mode!r}")

    def resolve(self, planes: np.ndarray) -> Gains:
        return self.gains if self.mode == "fixed" else _gray_world(planes)

    def forward(self, planes: np.ndarray, gains: Gains) -> np.ndarray:
        return planes * np.asarray(gains)[:, None, None]

    def inverse(self, planes: np.ndarray, gains: Gains) -> np.ndarray:
        return planes / np.asarray(gains)[:, None, None]


@dataclass(frozen=True)
class ColorMatrix:
    kind: ClassVar[str] = "color_matrix"
    domain: ClassVar[str] = "color"
    matrix: tuple

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=np.float64)
        if m.shape != (3, 3) or not np.all(np.isfinite(m)):
            raise PipelineError("color matrix must be a finite 3x3 matrix")
        object.__setattr__(self, "matrix", _to_tuple(m.tolist()))

    @property
    def invertible(self) -> bool:
        return abs(np.linalg.det(np.asarray(self.matrix))) > MIN_ABS_DET

    def forward(self, planes: np.ndarray) -> np.ndarray:
        return _apply_matrix(self.matrix, planes)

    def inverse(self, planes: np.ndarray) -> np.ndarray:
        return _apply_matrix(np.linalg.inv(np.asarray(self.matrix)), planes)


@dataclass(frozen=True)
class Gamma:
    kind: ClassVar[str] = "gamma"
    domain: ClassVar[str] = "color"
    a: float

    def __post_init__(self):
        if not 0.0 < self.a <= 1.0:
            raise PipelineError(f"gamma exponent must lie in (0, 1], got {self.a}")

    def forward(self, planes: np.ndarray) -> np.ndarray:
        return np.power(np.maximum(planes, 0.0), self.a)

    def inverse(self, planes: np.ndarray) -> np.ndarray:
        return np.power(np.maximum(planes, 0.0), 1.0 / self.a)


@dataclass(frozen=True)
class ToneCurve:
    """Per-channel polynomial, coefficients listed from the constant term up."""

    kind: ClassVar[str] = "tone_curve"
    domain: ClassVar[str] = "color"
    coeffs: tuple

    def __post_init__(self):
        coeffs = _to_tuple(self.coeffs)
        if len(coeffs) != 3 or any(not 1 <= len(c) <= 6 for c in coeffs):
            raise PipelineError("tone curve needs three polynomials of degree <= 5")
        object.__setattr__(self, "coeffs", tuple(tuple(float(v) for v in c) for c in coeffs))

    @property
    def invertible(self) -> bool:
        return all(poly_is_increasing(c) for c in self.coeffs)

    def forward(self, planes: np.ndarray) -> np.ndarray:
        return np.stack([poly_eval(c, p) for c, p in zip(self.coeffs, planes)])

    def inverse(self, planes: np.ndarray) -> np.ndarray:
        return np.stack([poly_invert(c, p)[0] for c, p in zip(self.coeffs, planes)])


@dataclass(frozen=True)
class Resize:
    kind: ClassVar[str] = "resize"
    domain: ClassVar[str] = "color"
    height: int
    width: int
    filter: str = "box"

    def __post_init__(self):
        if self.height < 2 or self.width < 2 or self.height % 2 or self.width % 2:
            raise PipelineError(f"resize target must be even and >= 2, got {self.height}x{self.width}")
        if self.filter not in RESIZE_FILTERS:
            raise PipelineError(f"unknown resize filter {self.filter!r}")

    def forward(self, planes: np.ndarray) -> np.ndarray:
        return resize_planes(planes, self.height, self.width, self.filter)


IspStage = Union[Linearize, Denoise, Noise, Demosaic, WhiteBalance, ColorMatrix, Gamma, ToneCurve, Resize]
STAGE_TYPES = {cls.kind: cls for cls in (Linearize, Denoise, Noise, Demosaic, WhiteBalance, ColorMatrix, Gamma, ToneCurve, Resize)}


@dataclass(frozen=True)
class IspPipeline:
    """Validated, immutable stage list."""

    stages: tuple = field(default_factory=tuple)

    def __post_init__(self):
        stages = tuple(self.stages)
        for s in stages:
            if type(s) not in STAGE_TYPES.values():
                raise PipelineError(f"not an ISP stage: {s!r}")
        object.__setattr__(self, "stages", stages)
        positions = [i for i, s in enumerate(stages) if isinstance(s, Demosaic)]
        if len(positions) > 1:
            raise PipelineError("a pipeline may contain at most one demosaic stage")
        if positions:
            cut = positions[0]
            for i, s in enumerate(stages):
                if i < cut and s.domain != "bayer":
                    raise PipelineError(f"{s.kind} stage cannot run before demosaicing")
                if i > cut and s.domain != "color":
                    raise PipelineError(f"{s.kind} stage cannot run after demosaicing")
        elif len({s.domain for s in stages}) > 1:
            raise PipelineError("mixing Bayer and color stages requires a demosaic stage")

    @property
    def demosaic_stage(self) -> Optional[Demosaic]:
        return next((s for s in self.stages if isinstance(s, Demosaic)), None)

    @property
    def bayer_stages(self) -> tuple:
        return tuple(s for s in self.stages if s.domain == "bayer")

    @property
    def color_stages(self) -> tuple:
        return tuple(s for s in self.stages if s.domain == "color")

    def levels(self, bit_depth: int) -> tuple[int, int]:
        lin = next((s for s in self.stages if isinstance(s, Linearize)), None)
        if lin is None:
            return 0, 2**bit_depth - 1
        return lin.black, lin.white

    def check_reversible(self) -> None:
        for s in self.stages:
            if isinstance(s, Denoise) and not s.invertible:
                raise PipelineError(f"denoise method {s.method!r} cannot be reversed")
            if isinstance(s, Resize):
                raise PipelineError("resize stages cannot be reversed; resize the input instead")
            if isinstance(s, ColorMatrix) and not s.invertible:
                raise PipelineError("color matrix is singular and cannot be reversed")
            if isinstance(s, ToneCurve) and not s.invertible:
                raise PipelineError("tone curve is not strictly increasing on [0, 1]")

    def to_config(self) -> dict:
        return {"stages": [stage_to_config(s) for s in self.stages]}

    @classmethod
    def from_config(cls, doc: dict) -> "IspPipeline":
        if not isinstance(doc, dict) or set(doc) != {"stages"} or not isinstance(doc["stages"], list):
            raise PipelineError('pipeline config must be an object with exactly one key, "stages" (a list)')
        return cls(tuple(stage_from_config(s) for s in doc["stages"]))


def stage_to_config(stage) -> dict:
    doc = {"type": stage.kind}
    for f in dataclasses.fields(stage):
        value = getattr(stage, f.name)
        if value is not None:
            doc[f.name] = _to_list(value)
    return doc


def stage_from_config(doc: dict):
    if not isinstance(doc, dict) or "type" not in doc:
        raise PipelineError(f"stage entry must be an object with a 'type': {doc!r}")
    try:
        cls = STAGE_TYPES[doc["type"]]
    except KeyError:
        raise PipelineError(f"unknown stage type {doc['type']!r}") from None
    fields = {f.name: f for f in dataclasses.fields(cls)}
    params = {k: v for k, v in doc.items() if k != "type"}
    unknown = set(params) - set(fields)
    if unknown:
        raise PipelineError(f"unknown keys for {cls.kind} stage: {sorted(unknown)}")
    missing = [
        n for n, f in fields.items()
        if n not in params and f.default is dataclasses.MISSING and f.default_factory is dataclasses.MISSING
    ]
    if missing:
        raise PipelineError(f"{cls.kind} stage is missing {missing}")
    try:
        return cls(**{k: _to_tuple(v) for k, v in params.items()})
    except (TypeError, ValueError) as exc:
        raise PipelineError(f"bad {cls.kind} stage {doc!r}: {exc}") from exc


def load_pipeline(path: Union[str, os.PathLike]) -> IspPipeline:
    with open(path, "r", encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise PipelineError(f"{path}: invalid JSON: {exc}") from exc
    return IspPipeline.from_config(doc)


def save_pipeline(pipe: IspPipeline, path: Union[str, os.PathLike]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(pipe.to_config(), fh, indent=2)
        fh.write("\n")


# single-step operations


def _gray_world(planes: np.ndarray) -> Gains:
    means = planes.reshape(3, -1).mean(axis=1)
    if np.any(means <= 0):
        raise ValueError(f"gray world needs positive plane means, got {means.tolist()}")
    return (float(means[1] / means[0]), 1.0, float(means[1] / means[2]))


def gray_world_gains(color: ColorImage) -> Gains:
    """Gains (G/R, 1, G/B) that equalize the three plane means, green fixed."""
    return _gray_world(color.planes)


def apply_white_balance(color: ColorImage, gains: Sequence[float]) -> ColorImage:
    return ColorImage(color.planes * np.asarray(gains, dtype=np.float64)[:, None, None], color.color_state)


def apply_color_matrix(color: ColorImage, matrix) -> ColorImage:
    return ColorImage(_apply_matrix(matrix, color.planes), color.color_state)


def _check_gamma(a: float) -> None:
    if not 0.0 < a <= 1.0:
        raise ValueError(f"gamma exponent must lie in (0, 1], got {a}")


def gamma_compress(color: ColorImage, a: float) -> ColorImage:
    _check_gamma(a)
    return ColorImage(np.power(color.planes, a), "display-referred")


def gamma_expand(color: ColorImage, a: float) -> ColorImage:
    _check_gamma(a)
    return ColorImage(np.power(color.planes, 1.0 / a), "sensor-linear")


def _noise_dn(dn: np.ndarray, sigma: float, poisson_scale: float, seed, top: int) -> np.ndarray:
    if sigma < 0 or poisson_scale < 0:
        raise ValueError("noise sigma and poisson_scale must be nonnegative")
    if sigma == 0 and poisson_scale == 0:
        return dn
    rng = np.random.default_rng(seed)
    noisy = np.asarray(dn, dtype=np.float64)
    if poisson_scale > 0:
        # scaled Poisson draw: mean v, variance poisson_scale * v
        noisy = poisson_scale * rng.poisson(np.maximum(noisy, 0.0) / poisson_scale)
    if sigma > 0:
        noisy = noisy + rng.normal(0.0, sigma, size=noisy.shape)
    return np.clip(np.floor(noisy + 0.5), 0, top)


def add_noise(raw: BayerImage, sigma: float, poisson_scale: float, seed: int) -> BayerImage:
    """Heteroscedastic sensor noise in DN; deterministic for a given seed."""
    return raw.replace(_noise_dn(raw.samples, sigma, poisson_scale, seed, raw.max_value))


def _stage_seed(stage: Noise, run_seed: int, index: int):
    if stage.seed is not None:
        return stage.seed
    return np.random.SeedSequence([int(run_seed) & (2**64 - 1), index])


def _clamp(planes: np.ndarray, mask: np.ndarray) -> np.ndarray:
    mask |= np.any((planes < 0.0) | (planes > 1.0), axis=0)
    return np.clip(planes, 0.0, 1.0)


# pipeline runs


class ForwardResult(NamedTuple):
    image: ColorImage
    clip: ClipReport
    wb_gains: tuple  # realized gains, one entry per white balance stage


class ReverseResult(NamedTuple):
    image: BayerImage
    clip: ClipReport


def run_forward(pipe: IspPipeline, raw: BayerImage, seed: int = 0) -> ForwardResult:
    """Develop a RAW mosaic into a display-referred color image."""
    stage = pipe.demosaic_stage
    if stage is None:
        raise PipelineError("forward runs need a demosaic stage")
    black = raw.black_level if raw.black_level is not None else 0
    white = raw.white_level if raw.white_level is not None else raw.max_value
    dn = raw.samples.astype(np.float64)
    for i, s in enumerate(pipe.bayer_stages):
        if isinstance(s, Linearize):
            black, white = s.black, s.white
        elif isinstance(s, Denoise):
            dn = s.apply(dn, raw.pattern)
        elif isinstance(s, Noise):
            dn = _noise_dn(dn, s.sigma, s.poisson_scale, _stage_seed(s, seed, i), raw.max_value)
    lin = (dn - black) / (white - black)
    mask = (lin < 0.0) | (lin > 1.0)
    planes = demosaic_array(np.clip(lin, 0.0, 1.0), raw.pattern, stage.alg)
    planes = _clamp(planes, mask)
    realized = []
    for s in pipe.color_stages:
        if isinstance(s, WhiteBalance):
            gains = s.resolve(planes)
            realized.append(gains)
            planes = s.forward(planes, gains)
        elif isinstance(s, Resize):
            planes = s.forward(planes)
            mask = resize_planes(mask[None].astype(np.float64), s.height, s.width, s.filter)[0] > 0
        else:
            planes = s.forward(planes)
        planes = _clamp(planes, mask)
    return ForwardResult(ColorImage(planes, "display-referred"), ClipReport(mask), tuple(realized))


def run_reverse(
    pipe: IspPipeline,
    color: ColorImage,
    bit_depth: int,
    pattern: Union[CfaPattern, str],
    seed: int = 0,
    wb_gains: Optional[Sequence[Gains]] = None,
    resize: Optional[tuple[int, int, str]] = None,
    resize_order: str = "before",
) -> ReverseResult:
    """Turn a display-referred image into a synthetic RAW mosaic.

    Color stages are inverted in reverse order, the result is mosaiced and
    mapped onto [black, white] DN, then any noise stages are injected.
    Gray-world stages are undone with `wb_gains` (the gains realized by a
    forward run, in stage order) when given, and left as identity otherwise.
    `resize` = (height, width, filter) resamples the display-referred input
    (``resize_order="before"``) or the recovered linear image (``"after"``).
    """
    pipe.check_reversible()
    if color.color_state != "display-referred":
        raise ValueError("reverse runs expect a display-referred image")
    if resize_order not in ("before", "after"):
        raise ValueError(f"resize order must be 'before' or 'after', got {resize_order!r}")
    if isinstance(pattern, str):
        pattern = pattern_of(pattern)
    planes = np.array(color.planes)
    if resize is not None and resize_order == "before":
        planes = np.clip(resize_planes(planes, resize[0], resize[1], resize[2]), 0.0, 1.0)

    wb = [s for s in pipe.color_stages if isinstance(s, WhiteBalance)]
    if wb_gains is not None and len(wb_gains) != len(wb):
        raise ValueError(f"expected {len(wb)} sets of white balance gains, got {len(wb_gains)}")
    gains_for = {}
    for k, s in enumerate(wb):
        if wb_gains is not None:
            gains_for[id(s)] = tuple(wb_gains[k])
        else:
            gains_for[id(s)] = s.gains if s.mode == "fixed" else (1.0, 1.0, 1.0)

    mask = np.zeros(planes.shape[1:], dtype=bool)
    for s in reversed(pipe.color_stages):
        if isinstance(s, WhiteBalance):
            planes = s.inverse(planes, gains_for[id(s)])
        else:
            planes = s.inverse(planes)
        planes = _clamp(planes, mask)

    if resize is not None and resize_order == "after":
        planes = np.clip(resize_planes(planes, resize[0], resize[1], resize[2]), 0.0, 1.0)
        mask = resize_planes(mask[None].astype(np.float64), resize[0], resize[1], resize[2])[0] > 0
    if planes.shape[1] % 2 or planes.shape[2] % 2:
        raise ValueError(f"cannot mosaic a {planes.shape[1]}x{planes.shape[2]} image (odd size)")

    top = 2**bit_depth - 1
    black, white = pipe.levels(bit_depth)
    if white > top:
        raise PipelineError(f"white level {white} exceeds {bit_depth}-bit range")
    dn = np.floor(black + mosaic_array(planes, pattern) * (white - black) + 0.5)
    mask |= (dn < 0) | (dn > top)
    dn = np.clip(dn, 0, top)
    bayer = list(pipe.bayer_stages)
    for i in reversed(range(len(bayer))):
        s = bayer[i]
        if isinstance(s, Noise):
            dn = _noise_dn(dn, s.sigma, s.poisson_scale, _stage_seed(s, seed, i), top)
    has_levels = any(isinstance(s, Linearize) for s in pipe.stages)
    image = BayerImage(
        dn.astype(np.uint16),
        bit_depth,
        pattern,
        black if has_levels else None,
        white if has_levels else None,
    )
    return ReverseResult(image, ClipReport(mask))


# radiometric camera model


@dataclass(frozen=True, eq=False)
class CameraModel:
    """I = f(T_s . T_w . kappa) with T_w diagonal and f a per-channel quintic, f(0) = 0.

    `response` holds the coefficients of x, x^2, ..., x^5 for each channel.
    """

    white_balance: np.ndarray
    color_transform: np.ndarray
    response: np.ndarray

    def __post_init__(self):
        t_w = np.array(self.white_balance, dtype=np.float64)
        t_s = np.array(self.color_transform, dtype=np.float64)
        resp = np.array(self.response, dtype=np.float64)
        if t_w.shape == (3,):
            t_w = np.diag(t_w)
        if t_w.shape != (3, 3) or np.any(t_w != np.diag(np.diag(t_w))):
            raise ValueError("white balance matrix must be 3x3 diagonal")
        if t_s.shape != (3, 3):
            raise ValueError("color transform must be 3x3")
        if resp.ndim != 2 or resp.shape[0] != 3 or not 1 <= resp.shape[1] <= 5:
            raise ValueError("response must hold up to five coefficients (x .. x^5) per channel")
        if abs(np.linalg.det(t_s @ t_w)) <= MIN_ABS_DET:
            raise ValueError("T_s . T_w is singular")
        resp = np.pad(resp, ((0, 0), (0, 5 - resp.shape[1])))
        for arr, name in ((t_w, "white_balance"), (t_s, "color_transform"), (resp, "response")):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        for k in range(3):
            if not poly_is_increasing(self.channel_coeffs(k)):
                raise ValueError(f"response of channel {k} is not strictly increasing on [0, 1]")

    @classmethod
    def identity(cls) -> "CameraModel":
        return cls(np.ones(3), np.eye(3), np.tile([1.0, 0, 0, 0, 0], (3, 1)))

    @property
    def parameter_count(self) -> int:
        # the combined 3x3 transform plus five free coefficients per channel
        return 9 + self.response.size

    @property
    def transform(self) -> np.ndarray:
        return self.color_transform @ self.white_balance

    def channel_coeffs(self, k: int) -> np.ndarray:
        return np.concatenate([[0.0], self.response[k]])


class Inversion(NamedTuple):
    image: ColorImage
    clip: ClipReport


def render_camera(model: CameraModel, kappa: ColorImage) -> ColorImage:
    """Render sensor-linear values to display-referred intensities."""
    if kappa.color_state != "sensor-linear":
        raise ValueError("render_camera expects a sensor-linear image")
    mixed = np.clip(_apply_matrix(model.transform, kappa.planes), 0.0, 1.0)
    out = np.stack([poly_eval(model.channel_coeffs(k), mixed[k]) for k in range(3)])
    return ColorImage(out, "display-referred")


def invert_camera(model: CameraModel, image: ColorImage) -> Inversion:
    """Recover sensor-linear values; saturated or out-of-gamut pixels are flagged."""
    planes = image.planes
    mask = np.any(planes >= 1.0, axis=0)
    solved = []
    for k in range(3):
        y, outside = poly_invert(model.channel_coeffs(k), planes[k])
        mask |= outside
        solved.append(y)
    linear = _apply_matrix(np.linalg.inv(model.transform), np.stack(solved))
    linear = _clamp(linear, mask)
    return Inversion(ColorImage(linear, "sensor-linear"), ClipReport(mask))


def camera_stages(model: CameraModel, alg: str = "bilinear") -> tuple:
    """Pipeline stages equivalent to `model` after demosaicing."""
    return (
        Demosaic(alg),
        WhiteBalance("fixed", tuple(np.diag(model.white_balance))),
        ColorMatrix(model.color_transform),
        ToneCurve(tuple(tuple(model.channel_coeffs(k)) for k in range(3))),
    )

