"""Binary edge indicators from colour or depth images."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import correlate1d

from .core import InvalidInputError

LUMA = np.array([0.299, 0.587, 0.114])
_CENTRAL = np.array([-0.5, 0.0, 0.5])


@dataclass(frozen=True)
class EdgeConfig:
    """``percentile`` of the nonzero gradient magnitudes, unless ``absolute`` is given."""

    percentile: float = 90.0
    absolute: float | None = None
    channel: str = "luminance"

    def __post_init__(self):
        if not 0.0 < self.percentile < 100.0:
            raise InvalidInputError(f"percentile must lie in (0, 100), got {self.percentile}")
        if self.channel not in ("luminance", "raw"):
            raise InvalidInputError(f"unknown edge channel {self.channel!r}")
        if self.absolute is not None and self.absolute <= 0:
            raise InvalidInputError("absolute edge threshold must be positive")


DEPTH_EDGES = EdgeConfig(channel="raw")


def to_channel(image, channel: str = "luminance") -> np.ndarray:
    arr = np.asarray(image, dtype=np.float64)
    if arr.size == 0:
        raise InvalidInputError("cannot detect edges in an empty image")
    if arr.ndim == 3:
        if channel == "raw" or arr.shape[2] != 3:
            raise InvalidInputError(f"expected a single-channel image, got shape {arr.shape}")
        return arr @ LUMA
    if arr.ndim != 2:
        raise InvalidInputError(f"unsupported image shape {arr.shape}")
    return arr


def gradient_magnitude(img: np.ndarray) -> np.ndarray:
    gx = correlate1d(img, _CENTRAL, axis=1, mode="nearest")
    gy = correlate1d(img, _CENTRAL, axis=0, mode="nearest")
    return np.hypot(gx, gy)


def detect_edges(image, config: EdgeConfig = EdgeConfig()) -> np.ndarray:
    """Pixels whose central-difference gradient magnitude reaches the threshold."""
    mag = gradient_magnitude(to_channel(image, config.channel))
    nonzero = mag[mag > 0]
    if nonzero.size == 0:
        return np.zeros(mag.shape, dtype=np.uint8)
    thr = config.absolute if config.absolute is not None else np.percentile(nonzero, config.percentile)
    return ((mag >= thr) & (mag > 0)).astype(np.uint8)
