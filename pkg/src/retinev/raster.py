"""Image raster containers, gamma transfer functions, and PNG I/O.

Rasters hold scene-linear or gamma-encoded intensity in [0, 1] as float32
arrays of shape (height, width, channels). All operations here are pure;
rasters are treated as immutable after construction.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import cv2
import numpy as np

log = logging.getLogger(__name__)

DEFAULT_GAMMA = 2.2

# Rec. 709 relative luminance weights for RGB -> gray reduction.
LUMA_WEIGHTS = np.array([0.2126, 0.7152, 0.0722], dtype=np.float64)


def _validate_data(data: np.ndarray) -> np.ndarray:
    if data.ndim == 2:
        data = data[:, :, None]
    if data.ndim != 3:
        raise ValueError(f"raster data must be HxWxC, got shape {data.shape}")
    if data.shape[2] not in (1, 3):
        raise ValueError(f"raster must have 1 or 3 channels, got {data.shape[2]}")
    if not np.all(np.isfinite(data)):
        raise ValueError("raster data contains non-finite values")
    if data.min() < 0.0 or data.max() > 1.0:
        raise ValueError("raster data out of range [0, 1]")
    return np.ascontiguousarray(data, dtype=np.float32)


@dataclass(frozen=True)
class LinearRaster:
    """Scene-linear intensity raster, values in [0, 1]."""

    data: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "data", _validate_data(self.data))
        self.data.setflags(write=False)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]

    def luminance(self) -> np.ndarray:
        """Single-channel relative luminance, shape (h, w), float64."""
        d = self.data.astype(np.float64)
        if self.channels == 1:
            return d[:, :, 0]
        return d @ LUMA_WEIGHTS


@dataclass(frozen=True)
class EncodedRaster:
    """Gamma-encoded raster; `gamma` is the exponent used at encode time."""

    data: np.ndarray
    gamma: float = DEFAULT_GAMMA

    def __post_init__(self):
        if not (np.isfinite(self.gamma) and self.gamma > 0):
            raise ValueError(f"gamma must be positive and finite, got {self.gamma}")
        object.__setattr__(self, "data", _validate_data(self.data))
        self.data.setflags(write=False)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]


def gamma_encode(r: LinearRaster, gamma: float = DEFAULT_GAMMA) -> EncodedRaster:
    """Encode linear intensity: out = in^(1/gamma)."""
    if not (np.isfinite(gamma) and gamma > 0):
        raise ValueError(f"gamma must be positive and finite, got {gamma}")
    encoded = np.power(r.data.astype(np.float64), 1.0 / gamma)
    return EncodedRaster(encoded.astype(np.float32), gamma=gamma)


def gamma_decode(r: EncodedRaster) -> LinearRaster:
    """Invert gamma_encode: out = in^gamma."""
    linear = np.power(r.data.astype(np.float64), r.gamma)
    return LinearRaster(linear.astype(np.float32))


def load_image(path, gamma: float = DEFAULT_GAMMA) -> EncodedRaster:
    """Load an 8- or 16-bit PNG as a gamma-encoded raster.

    Disk images are assumed gamma-encoded; `gamma` only tags the raster so a
    later gamma_decode linearizes with the right exponent.
    """
    img = cv2.imread(str(path), cv2.IMREAD_UNCHANGED)
    if img is None:
        raise OSError(f"cannot read image: {path}")
    if img.dtype == np.uint8:
        scale = 255.0
    elif img.dtype == np.uint16:
        scale = 65535.0
    else:
        raise ValueError(f"unsupported bit depth {img.dtype} in {path}")
    if img.ndim == 3:
        if img.shape[2] == 4:
            img = img[:, :, :3]
        if img.shape[2] != 3:
            raise ValueError(f"unsupported channel count {img.shape[2]} in {path}")
        img = cv2.cvtColor(img, cv2.COLOR_BGR2RGB)
    data = img.astype(np.float64) / scale
    if data.min() < 0.0 or data.max() > 1.0:
        log.warning("clamping out-of-range pixel values in %s", path)
        data = np.clip(data, 0.0, 1.0)
    return EncodedRaster(data.astype(np.float32), gamma=gamma)


def save_image(r: EncodedRaster | LinearRaster, path, bit_depth: int = 8) -> None:
    """Write a raster as an 8- or 16-bit PNG."""
    if bit_depth == 8:
        scale, dtype = 255.0, np.uint8
    elif bit_depth == 16:
        scale, dtype = 65535.0, np.uint16
    else:
        raise ValueError(f"bit_depth must be 8 or 16, got {bit_depth}")
    q = np.round(r.data.astype(np.float64) * scale).astype(dtype)
    if q.shape[2] == 3:
        q = cv2.cvtColor(q, cv2.COLOR_RGB2BGR)
    else:
        q = q[:, :, 0]
    if not cv2.imwrite(str(path), q):
        raise OSError(f"cannot write image: {path}")
