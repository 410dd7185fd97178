"""Domain types and potentials of the bilayer MRF.

The energy of a labeling ``f`` given a hypothesis mask ``h`` is linear in the
weight vector, ``E(f) = w . features(f, h, edge_weights)``.  The weight layout
is::

    rgb  : [edge, inside_q0..inside_q4, outside_q0..outside_q4]          (11)
    rgbd : [edge_rgb, edge_depth, inside_q0..q4, outside_q0..q4]         (12)

``inside`` weights penalise labelling a pixel foreground where the hypothesis
is background at the given offset, ``outside`` weights the converse.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# (row, col) displacements of the cross-layer neighbourhood; q0 is co-located.
OFFSETS: tuple[tuple[int, int], ...] = ((0, 0), (-1, 0), (1, 0), (0, -1), (0, 1))

EDGE_RAW_ON = float(np.exp(-5.0))
EDGE_RAW_OFF = 20.0

LAYOUT_SIZES = {"rgb": 11, "rgbd": 12}


class InvalidInputError(ValueError):
    """Raised when an input violates a documented precondition."""


def as_mask(labels, name: str = "mask") -> np.ndarray:
    """Validate a binary label field and return it as a ``uint8`` array."""
    arr = np.asarray(labels)
    if arr.ndim != 2 or arr.size == 0:
        raise InvalidInputError(f"{name} must be a non-empty 2-D array, got shape {arr.shape}")
    if arr.dtype == bool:
        return arr.astype(np.uint8)
    if not np.all((arr == 0) | (arr == 1)):
        raise InvalidInputError(f"{name} must contain only 0 and 1")
    return arr.astype(np.uint8)


def as_prob_map(values, name: str = "probability map") -> np.ndarray:
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim != 2 or arr.size == 0:
        raise InvalidInputError(f"{name} must be a non-empty 2-D array, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)) or arr.min() < 0.0 or arr.max() > 1.0:
        raise InvalidInputError(f"{name} values must lie in [0, 1]")
    return arr


def hypothesis_field(h, soft: bool = False) -> np.ndarray:
    """Return ``h`` as floats, binarised at 0.5 unless ``soft`` is set."""
    arr = as_prob_map(h, "hypothesis")
    if soft:
        return arr
    return (arr >= 0.5).astype(np.float64)


def _check_same_shape(*arrays) -> None:
    shapes = {np.shape(a) for a in arrays}
    if len(shapes) != 1:
        raise InvalidInputError(f"dimension mismatch: {sorted(shapes)}")


@dataclass(frozen=True)
class EdgeWeightField:
    """Normalised boundary weights for every 4-neighbour pair.

    ``horizontal[i, j]`` couples pixels ``(i, j)`` and ``(i, j + 1)``;
    ``vertical[i, j]`` couples ``(i, j)`` and ``(i + 1, j)``.
    """

    horizontal: np.ndarray
    vertical: np.ndarray

    @property
    def shape(self) -> tuple[int, int]:
        return self.horizontal.shape[0], self.vertical.shape[1]

    def scaled(self, factor: float) -> "EdgeWeightField":
        return EdgeWeightField(self.horizontal * factor, self.vertical * factor)


def build_edge_weights(edges) -> EdgeWeightField:
    """Per-pair boundary weights from a binary edge indicator.

    A pair touching an edge pixel gets ``exp(-5)``, any other pair 20; the
    field is then divided by its maximum so the largest weight is exactly 1.
    """
    on = np.asarray(edges)
    if on.ndim != 2 or on.size == 0:
        raise InvalidInputError(f"edge indicator must be a non-empty 2-D array, got shape {on.shape}")
    on = on != 0
    horiz = np.where(on[:, :-1] | on[:, 1:], EDGE_RAW_ON, EDGE_RAW_OFF)
    vert = np.where(on[:-1, :] | on[1:, :], EDGE_RAW_ON, EDGE_RAW_OFF)
    if horiz.size or vert.size:
        peak = max(horiz.max(initial=0.0), vert.max(initial=0.0))
        horiz = horiz / peak
        vert = vert / peak
    return EdgeWeightField(horiz, vert)


@dataclass(frozen=True)
class WeightVector:
    """Nonnegative MRF weights in the ``rgb`` or ``rgbd`` layout.

    Learned vectors lie on the probability simplex; hand-written ones (for
    example values copied from a table) only need to be nonnegative, so the
    simplex is checked on demand with :meth:`check_simplex`.
    """

    values: np.ndarray
    layout: str = "rgb"

    def __post_init__(self):
        vals = np.array(self.values, dtype=np.float64).reshape(-1)
        if self.layout not in LAYOUT_SIZES:
            raise InvalidInputError(f"unknown weight layout {self.layout!r}")
        if vals.size != LAYOUT_SIZES[self.layout]:
            raise InvalidInputError(
                f"{self.layout} layout needs {LAYOUT_SIZES[self.layout]} entries, got {vals.size}"
            )
        if not np.all(np.isfinite(vals)) or vals.min() < 0.0:
            raise InvalidInputError("weights must be finite and nonnegative")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    @classmethod
    def from_array(cls, values) -> "WeightVector":
        n = np.size(values)
        for layout, size in LAYOUT_SIZES.items():
            if size == n:
                return cls(values, layout)
        raise InvalidInputError(f"cannot infer layout from {n} entries")

    @property
    def n_edge(self) -> int:
        return 1 if self.layout == "rgb" else 2

    @property
    def edge(self) -> np.ndarray:
        return self.values[: self.n_edge]

    @property
    def inside(self) -> np.ndarray:
        return self.values[self.n_edge : self.n_edge + 5]

    @property
    def outside(self) -> np.ndarray:
        return self.values[self.n_edge + 5 :]

    def is_on_simplex(self, tol: float = 1e-9) -> bool:
        return abs(self.values.sum() - 1.0) <= tol

    def check_simplex(self, tol: float = 1e-9) -> "WeightVector":
        if not self.is_on_simplex(tol):
            raise InvalidInputError(f"weights sum to {self.values.sum():.12g}, not 1")
        return self

    def __len__(self) -> int:
        return self.values.size


def shifted(h: np.ndarray, offset: tuple[int, int]) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(h[p + offset], valid[p])`` with zeros where ``p + offset`` leaves the grid."""
    dr, dc = offset
    rows, cols = h.shape
    out = np.zeros_like(h)
    valid = np.zeros(h.shape, dtype=bool)
    r0, r1 = max(0, -dr), min(rows, rows - dr)
    c0, c1 = max(0, -dc), min(cols, cols - dc)
    if r0 < r1 and c0 < c1:
        out[r0:r1, c0:c1] = h[r0 + dr : r1 + dr, c0 + dc : c1 + dc]
        valid[r0:r1, c0:c1] = True
    return out, valid


def data_statistics(f: np.ndarray, h: np.ndarray) -> np.ndarray:
    """The ten data-term statistics: five inside counts then five outside counts."""
    ff = f.astype(np.float64)
    stats = np.empty(10)
    for k, off in enumerate(OFFSETS):
        hq, valid = shifted(h, off)
        stats[k] = np.sum(valid * (1.0 - hq) * ff)
        stats[5 + k] = np.sum(valid * hq * (1.0 - ff))
    return stats


def edge_statistic(f: np.ndarray, edge_weights: EdgeWeightField) -> float:
    ff = f.astype(np.float64)
    horiz = np.abs(ff[:, 1:] - ff[:, :-1])
    vert = np.abs(ff[1:, :] - ff[:-1, :])
    return float(np.sum(edge_weights.horizontal * horiz) + np.sum(edge_weights.vertical * vert))


def shape_distance(f, h, w: WeightVector, soft: bool = False) -> float:
    """Weighted FP/FN distance between a labeling and the hypothesis mask."""
    f = as_mask(f, "f")
    hh = hypothesis_field(h, soft)
    _check_same_shape(f, hh)
    if w.layout != "rgb":
        raise InvalidInputError("shape_distance expects the rgb layout")
    stats = data_statistics(f, hh)
    return float(np.dot(w.inside, stats[:5]) + np.dot(w.outside, stats[5:]))


def compute_features(f, h, edge_weights: EdgeWeightField, soft: bool = False) -> np.ndarray:
    """Potential statistics such that ``energy = w . features`` (11 entries)."""
    f = as_mask(f, "f")
    hh = hypothesis_field(h, soft)
    _check_same_shape(f, hh)
    if edge_weights.shape != f.shape:
        raise InvalidInputError(f"edge field {edge_weights.shape} does not match mask {f.shape}")
    return np.concatenate(([edge_statistic(f, edge_weights)], data_statistics(f, hh)))


def compute_features_rgbd(f, h, rgb_edges: EdgeWeightField, depth_edges: EdgeWeightField,
                          soft: bool = False) -> np.ndarray:
    """12-entry statistics: RGB edge term, depth edge term, then the data terms."""
    f = as_mask(f, "f")
    hh = hypothesis_field(h, soft)
    _check_same_shape(f, hh)
    for field in (rgb_edges, depth_edges):
        if field.shape != f.shape:
            raise InvalidInputError(f"edge field {field.shape} does not match mask {f.shape}")
    return np.concatenate(
        ([edge_statistic(f, rgb_edges), edge_statistic(f, depth_edges)], data_statistics(f, hh))
    )


def features_for(w_layout: str, f, h, rgb_edges: EdgeWeightField,
                 depth_edges: EdgeWeightField | None = None, soft: bool = False) -> np.ndarray:
    if w_layout == "rgbd":
        if depth_edges is None:
            raise InvalidInputError("rgbd layout requires depth edge weights")
        return compute_features_rgbd(f, h, rgb_edges, depth_edges, soft)
    return compute_features(f, h, rgb_edges, soft)


def energy(f, h, w: WeightVector, rgb_edges: EdgeWeightField,
           depth_edges: EdgeWeightField | None = None, soft: bool = False) -> float:
    """Bilayer MRF energy ``w . features``."""
    return float(np.dot(w.values, features_for(w.layout, f, h, rgb_edges, depth_edges, soft)))
