"""Segmentation error metrics and error-accumulation tables."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
from scipy.ndimage import distance_transform_edt

from .core import LAYOUT_SIZES, InvalidInputError, WeightVector, as_mask


class UndefinedMetricError(InvalidInputError):
    """The metric has no value for these inputs (e.g. a mask without boundary)."""


def _pair(pred, gt) -> tuple[np.ndarray, np.ndarray]:
    pred, gt = as_mask(pred, "prediction"), as_mask(gt, "ground truth")
    if pred.shape != gt.shape:
        raise InvalidInputError(f"prediction {pred.shape} and ground truth {gt.shape} differ in shape")
    return pred, gt


def fpr_fnr(pred, gt) -> tuple[float, float]:
    """False-positive and false-negative counts, both divided by the total pixel count."""
    pred, gt = _pair(pred, gt)
    n = gt.size
    return float(np.sum((pred == 1) & (gt == 0)) / n), float(np.sum((pred == 0) & (gt == 1)) / n)


def pixel_error(pred, gt) -> float:
    pred, gt = _pair(pred, gt)
    return float(np.mean(pred != gt))


def boundary_pixels(mask) -> np.ndarray:
    """Foreground pixels with at least one in-grid 4-neighbour in the background."""
    m = as_mask(mask).astype(bool)
    bg_near = np.zeros_like(m)
    bg_near[1:, :] |= ~m[:-1, :]
    bg_near[:-1, :] |= ~m[1:, :]
    bg_near[:, 1:] |= ~m[:, :-1]
    bg_near[:, :-1] |= ~m[:, 1:]
    return m & bg_near


def boundary_deviation(pred, gt) -> float:
    """Mean distance from each predicted boundary pixel to the nearest ground-truth boundary pixel."""
    pred, gt = _pair(pred, gt)
    bp, bg = boundary_pixels(pred), boundary_pixels(gt)
    if not bp.any() or not bg.any():
        raise UndefinedMetricError("boundary deviation needs both masks to have a boundary")
    dist = distance_transform_edt(~bg)
    return float(dist[bp].mean())


def symmetric_boundary_deviation(pred, gt) -> float:
    return 0.5 * (boundary_deviation(pred, gt) + boundary_deviation(gt, pred))


def frame_metrics(pred, gt) -> dict[str, float]:
    fpr, fnr = fpr_fnr(pred, gt)
    try:
        bd = boundary_deviation(pred, gt)
    except UndefinedMetricError:
        bd = float("nan")
    return {"fpr": fpr, "fnr": fnr, "pixel_error": fpr + fnr, "boundary_deviation": bd}


@dataclass
class CurveRow:
    offset: int
    mean: float
    std: float
    count: int


def accumulation_curve(series: Iterable, metric: str = "boundary_deviation") -> list[CurveRow]:
    """Mean and standard deviation of a per-frame metric at each offset from the keyframe.

    ``series`` holds one entry per sequence: either a list of numbers (offset 1
    first) or an object with a ``metrics`` list of per-frame dicts.  Sequences
    of different lengths contribute only to the offsets they reach.
    """
    values: list[list[float]] = []
    for s in series:
        if hasattr(s, "metrics"):
            vals = [m[metric] for m in s.metrics]
        else:
            vals = [float(v) for v in s]
        values.append(vals)
    if not values:
        return []
    rows = []
    for k in range(max(len(v) for v in values)):
        alive = np.array([v[k] for v in values if len(v) > k], dtype=np.float64)
        rows.append(CurveRow(k + 1, float(alive.mean()), float(alive.std()), alive.size))
    return rows


def format_tsv(header: Sequence[str], rows: Iterable[Sequence]) -> str:
    def cell(v):
        return f"{v:.6g}" if isinstance(v, float) else str(v)

    lines = ["\t".join(header)]
    lines += ["\t".join(cell(v) for v in row) for row in rows]
    return "\n".join(lines) + "\n"


def curve_table(rows: Sequence[CurveRow]) -> str:
    return format_tsv(("offset", "mean", "std", "sequences"),
                      ((r.offset, r.mean, r.std, r.count) for r in rows))


def uniform_baseline_weights(layout: str = "rgb") -> WeightVector:
    if layout not in LAYOUT_SIZES:
        raise InvalidInputError(f"unknown weight layout {layout!r}")
    n = LAYOUT_SIZES[layout]
    return WeightVector(np.full(n, 1.0 / n), layout)
