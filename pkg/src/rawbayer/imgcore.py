"""Image containers and Bayer CFA pattern definitions.

All containers are immutable: arrays are copied on construction and marked
read-only, so instances can be shared freely between workers.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

LAYOUTS = ("RGGB", "BGGR", "GRBG", "GBRG")
COLOR_STATES = ("sensor-linear", "display-referred")

# channel order emitted by pack(): R, the green sharing a row with R, the
# green sharing a row with B, then B
PACKED_CHANNELS = ("R", "G1", "G2", "B")


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr = np.array(arr, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class CfaPattern:
    """A 2x2 Bayer layout and its three binary templates."""

    layout: str

    def __post_init__(self):
        if self.layout not in LAYOUTS:
            raise ValueError(f"unsupported CFA layout {self.layout!r}")
        total = self.template("R") + self.template("G") + self.template("B")
        assert np.array_equal(total, np.ones((2, 2), dtype=np.uint8))

    def template(self, color: str) -> np.ndarray:
        """Binary 2x2 matrix marking the sites of `color` inside one cell."""
        cell = np.array(list(self.layout)).reshape(2, 2)
        return (cell == color).astype(np.uint8)

    @property
    def templates(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        return self.template("R"), self.template("G"), self.template("B")

    def offsets(self) -> dict[str, tuple[int, int]]:
        """Cell offsets of the R, G1, G2, B sites.

        G1 is the green on the same row as red, G2 the green on the row of blue.
        """
        r = tuple(int(v) for v in np.argwhere(self.template("R"))[0])
        b = tuple(int(v) for v in np.argwhere(self.template("B"))[0])
        greens = [tuple(int(v) for v in g) for g in np.argwhere(self.template("G"))]
        g1 = next(g for g in greens if g[0] == r[0])
        g2 = next(g for g in greens if g[0] == b[0])
        return {"R": r, "G1": g1, "G2": g2, "B": b}

    def masks(self, height: int, width: int) -> np.ndarray:
        """Full-size (3, H, W) float masks: P_k tiled over an all-ones grid."""
        ones = np.ones((height // 2, width // 2))
        return np.stack([np.kron(ones, t) for t in self.templates]).astype(np.float64)

    def color_index(self, height: int, width: int) -> np.ndarray:
        """(H, W) array of plane indices 0/1/2 telling which color each site holds."""
        return np.argmax(self.masks(height, width), axis=0)


def pattern_of(name: str) -> CfaPattern:
    """Look up a CFA pattern by name, case-insensitively."""
    key = str(name).upper()
    if key not in LAYOUTS:
        raise ValueError(f"unknown CFA pattern {name!r}; expected one of {LAYOUTS}")
    return CfaPattern(key)


def _check_levels(bit_depth: int, black: Optional[int], white: Optional[int]) -> None:
    top = 2**bit_depth - 1
    if black is not None and not 0 <= black <= top:
        raise ValueError(f"black level {black} outside [0, {top}]")
    if white is not None and not 0 <= white <= top:
        raise ValueError(f"white level {white} outside [0, {top}]")
    if black is not None and white is not None and not black < white:
        raise ValueError(f"black level {black} must be below white level {white}")


@dataclass(frozen=True, eq=False)
class BayerImage:
    """Single-channel CFA mosaic of unsigned integer samples."""

    samples: np.ndarray
    bit_depth: int
    pattern: CfaPattern
    black_level: Optional[int] = None
    white_level: Optional[int] = None

    def __post_init__(self):
        if not 8 <= int(self.bit_depth) <= 16:
            raise ValueError(f"bit depth {self.bit_depth} outside [8, 16]")
        raw = np.asarray(self.samples)
        if raw.ndim != 2:
            raise ValueError("Bayer samples must be a 2-D array")
        h, w = raw.shape
        if h == 0 or w == 0 or h % 2 or w % 2:
            raise ValueError(f"Bayer image dimensions must be even and nonzero, got {h}x{w}")
        if raw.dtype.kind == "f":
            if not np.array_equal(raw, np.floor(raw)):
                raise ValueError("Bayer samples must be integers")
        elif raw.dtype.kind not in "ui":
            raise ValueError(f"unsupported sample dtype {raw.dtype}")
        top = 2**self.bit_depth - 1
        if raw.size and (raw.min() < 0 or raw.max() > top):
            raise ValueError(f"samples outside [0, {top}] for {self.bit_depth}-bit image")
        _check_levels(self.bit_depth, self.black_level, self.white_level)
        object.__setattr__(self, "samples", _frozen(raw.astype(np.uint16)))
        object.__setattr__(self, "bit_depth", int(self.bit_depth))

    @property
    def height(self) -> int:
        return self.samples.shape[0]

    @property
    def width(self) -> int:
        return self.samples.shape[1]

    @property
    def max_value(self) -> int:
        return 2**self.bit_depth - 1

    def normalized(self) -> np.ndarray:
        return self.samples.astype(np.float64) / self.max_value

    def replace(self, samples: np.ndarray) -> "BayerImage":
        return BayerImage(samples, self.bit_depth, self.pattern, self.black_level, self.white_level)

    def __eq__(self, other):
        if not isinstance(other, BayerImage):
            return NotImplemented
        return (
            self.bit_depth == other.bit_depth
            and self.pattern == other.pattern
            and self.black_level == other.black_level
            and self.white_level == other.white_level
            and np.array_equal(self.samples, other.samples)
        )

    __hash__ = None


@dataclass(frozen=True, eq=False)
class ColorImage:
    """Three real-valued planes (R, G, B) stored as a (3, H, W) array in [0, 1]."""

    planes: np.ndarray
    color_state: str = "display-referred"

    def __post_init__(self):
        arr = np.asarray(self.planes, dtype=np.float64)
        if arr.ndim != 3 or arr.shape[0] != 3:
            raise ValueError(f"color planes must have shape (3, H, W), got {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ValueError("color planes contain non-finite values")
        if self.color_state not in COLOR_STATES:
            raise ValueError(f"unknown color state {self.color_state!r}")
        object.__setattr__(self, "planes", _frozen(np.clip(arr, 0.0, 1.0)))

    @classmethod
    def from_hwc(cls, arr: np.ndarray, color_state: str = "display-referred") -> "ColorImage":
        return cls(np.moveaxis(np.asarray(arr, dtype=np.float64), -1, 0), color_state)

    @property
    def height(self) -> int:
        return self.planes.shape[1]

    @property
    def width(self) -> int:
        return self.planes.shape[2]

    def hwc(self) -> np.ndarray:
        return np.moveaxis(self.planes, 0, -1)

    def __eq__(self, other):
        if not isinstance(other, ColorImage):
            return NotImplemented
        return self.color_state == other.color_state and np.array_equal(self.planes, other.planes)

    __hash__ = None


@dataclass(frozen=True, eq=False)
class PackedBayer:
    """Space-to-depth view of a Bayer image: channels (R, G1, G2, B) x H/2 x W/2."""

    channels: np.ndarray
    bit_depth: int
    pattern: CfaPattern
    black_level: Optional[int] = None
    white_level: Optional[int] = None

    def __post_init__(self):
        arr = np.asarray(self.channels)
        if arr.ndim != 3 or arr.shape[0] != 4:
            raise ValueError(f"packed data must have shape (4, H/2, W/2), got {arr.shape}")
        object.__setattr__(self, "channels", _frozen(arr))

    def __eq__(self, other):
        if not isinstance(other, PackedBayer):
            return NotImplemented
        return (
            self.bit_depth == other.bit_depth
            and self.pattern == other.pattern
            and np.array_equal(self.channels, other.channels)
        )

    __hash__ = None


@dataclass(frozen=True)
class SidecarMeta:
    """Metadata stored next to a Bayer PGM as JSON."""

    pattern: str
    bit_depth: int
    black_level: Optional[int] = None
    white_level: Optional[int] = None
    provenance: str = field(default="", compare=False)

    def __post_init__(self):
        object.__setattr__(self, "pattern", pattern_of(self.pattern).layout)
        if not 8 <= int(self.bit_depth) <= 16:
            raise ValueError(f"bit depth {self.bit_depth} outside [8, 16]")
        _check_levels(int(self.bit_depth), self.black_level, self.white_level)

    @classmethod
    def of(cls, img: BayerImage, provenance: str = "") -> "SidecarMeta":
        return cls(img.pattern.layout, img.bit_depth, img.black_level, img.white_level, provenance)

    def to_dict(self) -> dict:
        doc = {
            "pattern": self.pattern,
            "bit_depth": self.bit_depth,
            "black_level": self.black_level,
            "white_level": self.white_level,
        }
        if self.provenance:
            doc["provenance"] = self.provenance
        return doc

    @classmethod
    def from_dict(cls, doc: dict) -> "SidecarMeta":
        allowed = {"pattern", "bit_depth", "black_level", "white_level", "provenance"}
        unknown = set(doc) - allowed
        if unknown:
            raise ValueError(f"unknown sidecar keys: {sorted(unknown)}")
        if "pattern" not in doc or "bit_depth" not in doc:
            raise ValueError("sidecar must define 'pattern' and 'bit_depth'")
        return cls(
            doc["pattern"],
            int(doc["bit_depth"]),
            doc.get("black_level"),
            doc.get("white_level"),
            doc.get("provenance", ""),
        )


def quantize(values: np.ndarray, bit_depth: int) -> np.ndarray:
    """Map [0, 1] reals to b-bit integers with round-half-up."""
    top = 2**bit_depth - 1
    scaled = np.clip(np.asarray(values, dtype=np.float64), 0.0, 1.0) * top
    return np.floor(scaled + 0.5).astype(np.uint16 if bit_depth > 8 else np.uint8)
