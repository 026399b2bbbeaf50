"""Bit-exact file codecs: 16-bit PGM (+ JSON sidecar) for Bayer data, PPM/PNG for color.

Netpbm samples wider than one byte are big-endian, as the format requires.
"""

from __future__ import annotations

import json
import os
from pathlib import Path
from typing import Optional, Union

import numpy as np
import png

from .imgcore import BayerImage, ColorImage, SidecarMeta, pattern_of, quantize

PathLike = Union[str, os.PathLike]

BAYER_SUFFIXES = (".pgm",)
COLOR_SUFFIXES = (".ppm", ".png")


class CodecError(ValueError):
    """Raised when a file cannot be decoded or encoded as requested."""


def sidecar_path(path: PathLike) -> Path:
    return Path(path).with_suffix(".json")


def read_sidecar(path: PathLike) -> SidecarMeta:
    with open(path, "r", encoding="utf-8") as fh:
        return SidecarMeta.from_dict(json.load(fh))


def write_sidecar(meta: SidecarMeta, path: PathLike) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(meta.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")


def _read_netpbm(path: PathLike, magic: bytes) -> tuple[np.ndarray, int]:
    data = Path(path).read_bytes()
    if data[:2] != magic:
        raise CodecError(f"{path}: expected {magic.decode()} header, found {data[:2]!r}")
    fields: list[int] = []
    pos = 2
    while len(fields) < 3:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if pos >= len(data):
            raise CodecError(f"{path}: truncated header")
        if data[pos : pos + 1] == b"#":
            while pos < len(data) and data[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(data) and data[pos : pos + 1].isdigit():
            pos += 1
        if start == pos:
            raise CodecError(f"{path}: malformed header")
        fields.append(int(data[start:pos]))
    # exactly one whitespace byte separates the header from the raster
    if pos >= len(data) or not data[pos : pos + 1].isspace():
        raise CodecError(f"{path}: malformed header")
    pos += 1
    width, height, maxval = fields
    if width <= 0 or height <= 0 or not 0 < maxval < 65536:
        raise CodecError(f"{path}: invalid header values {fields}")
    channels = 3 if magic == b"P6" else 1
    dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
    count = width * height * channels
    if len(data) - pos < count * dtype.itemsize:
        raise CodecError(f"{path}: truncated raster")
    raster = np.frombuffer(data, dtype=dtype, count=count, offset=pos).astype(np.uint16)
    if raster.max(initial=0) > maxval:
        raise CodecError(f"{path}: sample exceeds maxval {maxval}")
    shape = (height, width, 3) if channels == 3 else (height, width)
    return raster.reshape(shape), maxval


def _write_netpbm(path: PathLike, magic: bytes, raster: np.ndarray, maxval: int) -> None:
    height, width = raster.shape[:2]
    dtype = ">u2" if maxval > 255 else "u1"
    header = b"%s\n%d %d\n%d\n" % (magic, width, height, maxval)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(np.ascontiguousarray(raster, dtype=dtype).tobytes())


def _read_png(path: PathLike) -> tuple[np.ndarray, int]:
    try:
        width, height, rows, info = png.Reader(filename=str(path)).asDirect()
        arr = np.vstack([np.asarray(r, dtype=np.uint16) for r in rows])
    except png.Error as exc:
        raise CodecError(f"{path}: {exc}") from exc
    planes = info["planes"]
    arr = arr.reshape(height, width, planes)
    if info["greyscale"]:
        arr = np.repeat(arr[..., :1], 3, axis=2)
    else:
        arr = arr[..., :3]
    return arr, 2 ** info["bitdepth"] - 1


def read_image(
    path: PathLike,
    kind: str,
    default_meta: Optional[SidecarMeta] = None,
) -> Union[BayerImage, ColorImage]:
    """Decode a Bayer PGM (with its sidecar) or a PPM/PNG color image."""
    path = Path(path)
    if kind == "bayer":
        raster, maxval = _read_netpbm(path, b"P5")
        side = sidecar_path(path)
        if side.exists():
            meta = read_sidecar(side)
        elif default_meta is not None:
            meta = default_meta
        else:
            raise CodecError(f"{path}: no sidecar {side.name} and no default metadata")
        if maxval < 2**meta.bit_depth - 1:
            raise CodecError(f"{path}: maxval {maxval} cannot hold {meta.bit_depth}-bit samples")
        if raster.max(initial=0) > 2**meta.bit_depth - 1:
            raise CodecError(f"{path}: samples exceed sidecar bit depth {meta.bit_depth}")
        try:
            return BayerImage(
                raster, meta.bit_depth, pattern_of(meta.pattern), meta.black_level, meta.white_level
            )
        except ValueError as exc:
            raise CodecError(f"{path}: {exc}") from exc
    if kind == "color":
        suffix = path.suffix.lower()
        if suffix == ".ppm":
            raster, maxval = _read_netpbm(path, b"P6")
        elif suffix == ".png":
            raster, maxval = _read_png(path)
        else:
            raise CodecError(f"{path}: unsupported color file type {suffix!r}")
        return ColorImage.from_hwc(raster.astype(np.float64) / maxval)
    raise ValueError(f"unknown image kind {kind!r}")


def write_image(
    img: Union[BayerImage, ColorImage],
    path: PathLike,
    fmt: str,
    bits: int = 8,
    provenance: str = "",
) -> None:
    """Encode `img` to `path`.

    Bayer images go to ``pgm16`` (maxval 65535, samples unshifted) and get a
    JSON sidecar with the same stem. Color images go to ``ppm`` or ``png`` at
    8 or 16 bits per sample.
    """
    if isinstance(img, BayerImage):
        if fmt != "pgm16":
            raise CodecError(f"Bayer images can only be written as pgm16, not {fmt!r}")
        _write_netpbm(path, b"P5", img.samples, 65535)
        write_sidecar(SidecarMeta.of(img, provenance), sidecar_path(path))
        return
    if not isinstance(img, ColorImage):
        raise TypeError(f"cannot write {type(img).__name__}")
    if fmt not in ("ppm", "png"):
        raise CodecError(f"color images can only be written as ppm or png, not {fmt!r}")
    if bits not in (8, 16):
        raise CodecError(f"unsupported sample width {bits}")
    raster = quantize(img.hwc(), bits)
    if fmt == "ppm":
        _write_netpbm(path, b"P6", raster, 2**bits - 1)
    else:
        writer = png.Writer(img.width, img.height, greyscale=False, bitdepth=bits)
        with open(path, "wb") as fh:
            writer.write(fh, (row.tolist() for row in raster.reshape(img.height, img.width * 3)))
