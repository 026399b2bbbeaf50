"""Mosaic / demosaic operators, space-to-depth packing and CFA-preserving resampling.

Demosaicing keeps every captured sample untouched, so re-mosaicing a
demosaiced image with the same pattern gives back the original mosaic.
"""

from __future__ import annotations

from typing import Optional

import numpy as np
from scipy import ndimage

from .imgcore import BayerImage, CfaPattern, ColorImage, PackedBayer, PACKED_CHANNELS, quantize

ALGORITHMS = ("nearest", "bilinear", "hybrid")
RESIZE_FILTERS = ("box", "bilinear")

# same-channel interpolation kernels, used as normalized convolutions over the
# sites that actually hold the channel
_GREEN_KERNEL = np.array([[0.0, 1.0, 0.0], [1.0, 4.0, 1.0], [0.0, 1.0, 0.0]]) / 4.0
_RED_BLUE_KERNEL = np.array([[1.0, 2.0, 1.0], [2.0, 4.0, 2.0], [1.0, 2.0, 1.0]]) / 4.0


def mosaic(color: ColorImage, pattern: CfaPattern, bit_depth: int = 16) -> BayerImage:
    """Keep, at each site, only the plane the CFA template selects there."""
    if color.height % 2 or color.width % 2:
        raise ValueError(f"mosaic needs even dimensions, got {color.height}x{color.width}")
    return BayerImage(quantize(mosaic_array(color.planes, pattern), bit_depth), bit_depth, pattern)


def mosaic_array(planes: np.ndarray, pattern: CfaPattern) -> np.ndarray:
    """Real-valued mosaic: sum over k of plane_k times the tiled template P_k."""
    planes = np.asarray(planes, dtype=np.float64)
    masks = pattern.masks(planes.shape[1], planes.shape[2])
    return np.sum(planes * masks, axis=0)


def _normalized_conv(values: np.ndarray, mask: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    num = ndimage.correlate(values * mask, kernel, mode="nearest")
    den = ndimage.correlate(mask, kernel, mode="nearest")
    return num / den


def _demosaic_nearest(raw: np.ndarray, pattern: CfaPattern) -> np.ndarray:
    h, w = raw.shape
    off = pattern.offsets()
    cells = {name: raw[r::2, s::2] for name, (r, s) in off.items()}
    up = {name: np.repeat(np.repeat(c, 2, axis=0), 2, axis=1) for name, c in cells.items()}
    rows = np.arange(h)[:, None] % 2
    green = np.where(np.broadcast_to(rows == off["G1"][0], (h, w)), up["G1"], up["G2"])
    return np.stack([up["R"], green, up["B"]])


def _demosaic_bilinear(raw: np.ndarray, pattern: CfaPattern) -> np.ndarray:
    m_r, m_g, m_b = pattern.masks(*raw.shape)
    return np.stack(
        [
            _normalized_conv(raw, m_r, _RED_BLUE_KERNEL),
            _normalized_conv(raw, m_g, _GREEN_KERNEL),
            _normalized_conv(raw, m_b, _RED_BLUE_KERNEL),
        ]
    )


def _demosaic_hybrid(raw: np.ndarray, pattern: CfaPattern) -> np.ndarray:
    # green first, then the R-G and B-G differences, which vary slowly
    # in natural images, are interpolated and green added back
    m_r, m_g, m_b = pattern.masks(*raw.shape)
    green = _normalized_conv(raw, m_g, _GREEN_KERNEL)
    red = green + _normalized_conv(raw - green, m_r, _RED_BLUE_KERNEL)
    blue = green + _normalized_conv(raw - green, m_b, _RED_BLUE_KERNEL)
    return np.stack([red, green, blue])


_DEMOSAICERS = {
    "nearest": _demosaic_nearest,
    "bilinear": _demosaic_bilinear,
    "hybrid": _demosaic_hybrid,
}


def demosaic_array(raw: np.ndarray, pattern: CfaPattern, algorithm: str = "bilinear") -> np.ndarray:
    """Demosaic a real-valued mosaic into (3, H, W) planes without clamping.

    Captured samples are copied through unchanged. For ``nearest`` and
    ``bilinear`` the result is a linear function of `raw`.
    """
    try:
        func = _DEMOSAICERS[algorithm]
    except KeyError:
        raise ValueError(f"unknown demosaic algorithm {algorithm!r}; expected one of {ALGORITHMS}") from None
    raw = np.asarray(raw, dtype=np.float64)
    if raw.ndim != 2 or raw.shape[0] % 2 or raw.shape[1] % 2:
        raise ValueError(f"mosaic must be 2-D with even dimensions, got {raw.shape}")
    planes = func(raw, pattern)
    masks = pattern.masks(*raw.shape)
    return np.where(masks > 0, raw[None], planes)


def demosaic(bayer: BayerImage, algorithm: str = "bilinear") -> ColorImage:
    """Interpolate the two missing colors at every site; output is sensor-linear in [0, 1]."""
    planes = demosaic_array(bayer.normalized(), bayer.pattern, algorithm)
    return ColorImage(np.clip(planes, 0.0, 1.0), "sensor-linear")


def pack(bayer: BayerImage) -> PackedBayer:
    """Periodic shuffle H x W -> 4 x H/2 x W/2 with channels in (R, G1, G2, B) order."""
    channels = pack_array(bayer.samples, bayer.pattern)
    return PackedBayer(channels, bayer.bit_depth, bayer.pattern, bayer.black_level, bayer.white_level)


def pack_array(raw: np.ndarray, pattern: CfaPattern) -> np.ndarray:
    off = pattern.offsets()
    return np.stack([raw[off[c][0] :: 2, off[c][1] :: 2] for c in PACKED_CHANNELS])


def unpack_array(channels: np.ndarray, pattern: CfaPattern) -> np.ndarray:
    off = pattern.offsets()
    _, h2, w2 = channels.shape
    raw = np.empty((2 * h2, 2 * w2), dtype=channels.dtype)
    for c, name in enumerate(PACKED_CHANNELS):
        r, s = off[name]
        raw[r::2, s::2] = channels[c]
    return raw


def unpack(packed: PackedBayer, pattern: Optional[CfaPattern] = None) -> BayerImage:
    """Inverse of :func:`pack`; `pattern` defaults to the one recorded at packing time."""
    pattern = packed.pattern if pattern is None else pattern
    return BayerImage(
        unpack_array(packed.channels, pattern),
        packed.bit_depth,
        pattern,
        packed.black_level,
        packed.white_level,
    )


def bayer_downsample(bayer: BayerImage, factor: int) -> BayerImage:
    """Superpixel down-sampling that keeps the CFA layout.

    Each output sample is the mean of the ``factor x factor`` same-color
    samples of its block, rounded half away from zero.
    """
    if factor not in (2, 4, 8):
        raise ValueError(f"downsample factor must be 2, 4 or 8, got {factor}")
    h, w = bayer.samples.shape
    if h % (2 * factor) or w % (2 * factor):
        raise ValueError(f"{h}x{w} image is not divisible into {2 * factor}-pixel superpixels")
    chans = pack_array(bayer.samples.astype(np.int64), bayer.pattern)
    blocks = chans.reshape(4, h // (2 * factor), factor, w // (2 * factor), factor)
    sums = blocks.sum(axis=(2, 4))
    count = factor * factor
    means = (2 * sums + count) // (2 * count)
    return bayer.replace(unpack_array(means, bayer.pattern))


def _resample_matrix(n_in: int, n_out: int, filt: str) -> np.ndarray:
    weights = np.zeros((n_out, n_in))
    scale = n_in / n_out
    if filt == "box":
        for o in range(n_out):
            lo, hi = o * scale, (o + 1) * scale
            for i in range(int(np.floor(lo)), min(int(np.ceil(hi)), n_in)):
                weights[o, i] = min(hi, i + 1) - max(lo, i)
    elif filt == "bilinear":
        src = np.clip((np.arange(n_out) + 0.5) * scale - 0.5, 0, n_in - 1)
        left = np.floor(src).astype(int)
        right = np.minimum(left + 1, n_in - 1)
        frac = src - left
        weights[np.arange(n_out), left] += 1.0 - frac
        weights[np.arange(n_out), right] += frac
    else:
        raise ValueError(f"unknown resize filter {filt!r}; expected one of {RESIZE_FILTERS}")
    return weights / weights.sum(axis=1, keepdims=True)


def resize_planes(planes: np.ndarray, out_h: int, out_w: int, filt: str = "box") -> np.ndarray:
    _, h, w = planes.shape
    rows = _resample_matrix(h, out_h, filt)
    cols = _resample_matrix(w, out_w, filt)
    return np.einsum("oh,chw,pw->cop", rows, planes, cols)


def resize_color(color: ColorImage, out_h: int, out_w: int, filt: str = "box") -> ColorImage:
    """Separable per-plane resampling (area-averaging box or half-pixel bilinear)."""
    if out_h < 2 or out_w < 2 or out_h % 2 or out_w % 2:
        raise ValueError(f"target size must be even and at least 2, got {out_h}x{out_w}")
    if (out_h, out_w) == (color.height, color.width):
        return color
    return ColorImage(resize_planes(color.planes, out_h, out_w, filt), color.color_state)
