"""Exact minimisation of the bilayer MRF energy by s-t min-cut."""
from __future__ import annotations

from dataclasses import dataclass

import maxflow
import numpy as np

from .core import (
    OFFSETS,
    EdgeWeightField,
    InvalidInputError,
    WeightVector,
    as_mask,
    hypothesis_field,
    shifted,
)

MAX_BRUTE_FORCE_PIXELS = 20

_RIGHT = np.array([[0, 0, 0], [0, 0, 1], [0, 0, 0]])
_DOWN = np.array([[0, 0, 0], [0, 0, 0], [0, 1, 0]])


@dataclass(frozen=True)
class UnaryCosts:
    cost0: np.ndarray
    cost1: np.ndarray

    @property
    def shape(self) -> tuple[int, int]:
        return self.cost0.shape


@dataclass(frozen=True)
class PairwiseCosts:
    """Disagreement penalties, laid out like :class:`EdgeWeightField`."""

    horizontal: np.ndarray
    vertical: np.ndarray

    @classmethod
    def zeros(cls, shape: tuple[int, int]) -> "PairwiseCosts":
        rows, cols = shape
        return cls(np.zeros((rows, cols - 1)), np.zeros((rows - 1, cols)))

    def scaled(self, factor: float) -> "PairwiseCosts":
        return PairwiseCosts(self.horizontal * factor, self.vertical * factor)


def build_unary(h, w: WeightVector, soft: bool = False) -> UnaryCosts:
    """Per-pixel label costs whose sum over any labeling equals its shape distance."""
    hh = hypothesis_field(h, soft)
    cost0 = np.zeros(hh.shape)
    cost1 = np.zeros(hh.shape)
    w_in, w_out = w.inside, w.outside
    for k, off in enumerate(OFFSETS):
        hq, valid = shifted(hh, off)
        cost1 += w_in[k] * valid * (1.0 - hq)
        cost0 += w_out[k] * valid * hq
    return UnaryCosts(cost0, cost1)


def build_pairwise(w: WeightVector, rgb_edges: EdgeWeightField,
                   depth_edges: EdgeWeightField | None = None) -> PairwiseCosts:
    horiz = w.edge[0] * rgb_edges.horizontal
    vert = w.edge[0] * rgb_edges.vertical
    if w.layout == "rgbd":
        if depth_edges is None:
            raise InvalidInputError("rgbd weights need depth edge weights")
        horiz = horiz + w.edge[1] * depth_edges.horizontal
        vert = vert + w.edge[1] * depth_edges.vertical
    return PairwiseCosts(horiz, vert)


def _validate(unary: UnaryCosts, pairwise: PairwiseCosts) -> None:
    rows, cols = unary.shape
    if unary.cost1.shape != (rows, cols):
        raise InvalidInputError("unary cost arrays differ in shape")
    if pairwise.horizontal.shape != (rows, cols - 1) or pairwise.vertical.shape != (rows - 1, cols):
        raise InvalidInputError("pairwise costs do not match the unary grid")
    for arr in (unary.cost0, unary.cost1, pairwise.horizontal, pairwise.vertical):
        if not np.all(np.isfinite(arr)):
            raise InvalidInputError("costs must be finite")
    if pairwise.horizontal.size and pairwise.horizontal.min() < 0 or \
            pairwise.vertical.size and pairwise.vertical.min() < 0:
        raise InvalidInputError("pairwise penalties must be nonnegative")


def labeling_energy(f, unary: UnaryCosts, pairwise: PairwiseCosts) -> float:
    """Unary sum plus pairwise disagreement sum, in a fixed summation order."""
    f = as_mask(f)
    data = float(np.sum(np.where(f == 1, unary.cost1, unary.cost0)))
    ff = f.astype(np.int8)
    horiz = float(np.sum(pairwise.horizontal * (ff[:, 1:] != ff[:, :-1])))
    vert = float(np.sum(pairwise.vertical * (ff[1:, :] != ff[:-1, :])))
    return data + horiz + vert


def _grid_weights(costs: np.ndarray, shape: tuple[int, int], axis: int) -> np.ndarray:
    full = np.zeros(shape)
    if axis == 1:
        full[:, :-1] = costs
    else:
        full[:-1, :] = costs
    return full


def minimize_energy(unary: UnaryCosts, pairwise: PairwiseCosts) -> np.ndarray:
    """Globally optimal labeling of a submodular binary grid energy.

    Nodes ending on the sink side take label 1, so the source capacity is the
    cost of label 1 and the sink capacity the cost of label 0.  Unary costs are
    shifted per pixel to be nonnegative, which changes the energy by a constant.
    """
    _validate(unary, pairwise)
    shape = unary.shape
    base = np.minimum(unary.cost0, unary.cost1)
    graph = maxflow.GraphFloat()
    nodes = graph.add_grid_nodes(shape)
    if shape[1] > 1:
        graph.add_grid_edges(nodes, weights=_grid_weights(pairwise.horizontal, shape, 1),
                             structure=_RIGHT, symmetric=True)
    if shape[0] > 1:
        graph.add_grid_edges(nodes, weights=_grid_weights(pairwise.vertical, shape, 0),
                             structure=_DOWN, symmetric=True)
    graph.add_grid_tedges(nodes, unary.cost1 - base, unary.cost0 - base)
    graph.maxflow()
    return graph.get_grid_segments(nodes).astype(np.uint8)


def augment_with_loss(unary: UnaryCosts, gt, loss_per_pixel: float | None = None) -> UnaryCosts:
    """Subtract the per-pixel Hamming loss from the label that disagrees with ``gt``."""
    gt = as_mask(gt, "gt")
    if gt.shape != unary.shape:
        raise InvalidInputError(f"ground truth {gt.shape} does not match costs {unary.shape}")
    loss = 1.0 / gt.size if loss_per_pixel is None else float(loss_per_pixel)
    return UnaryCosts(unary.cost0 - loss * (gt == 1), unary.cost1 - loss * (gt == 0))


def loss_augmented_minimize(unary: UnaryCosts, pairwise: PairwiseCosts, gt,
                            loss_per_pixel: float | None = None) -> np.ndarray:
    """``argmin_f energy(f) - mean|f - gt|``: the most violated margin constraint."""
    return minimize_energy(augment_with_loss(unary, gt, loss_per_pixel), pairwise)


def enumerate_energies(unary: UnaryCosts, pairwise: PairwiseCosts) -> tuple[np.ndarray, np.ndarray]:
    """All labelings in lexicographic order (pixel 0 most significant) and their energies."""
    _validate(unary, pairwise)
    rows, cols = unary.shape
    n = rows * cols
    if n > MAX_BRUTE_FORCE_PIXELS:
        raise InvalidInputError(f"brute force refused for {n} pixels (limit {MAX_BRUTE_FORCE_PIXELS})")
    codes = np.arange(2 ** n, dtype=np.int64)
    shifts = np.arange(n - 1, -1, -1, dtype=np.int64)
    labels = ((codes[:, None] >> shifts[None, :]) & 1).astype(np.uint8)
    grid = labels.reshape(-1, rows, cols)
    c0, c1 = unary.cost0.reshape(-1), unary.cost1.reshape(-1)
    total = labels @ (c1 - c0) + c0.sum()
    total = total + np.sum(pairwise.horizontal[None] * (grid[:, :, 1:] != grid[:, :, :-1]), axis=(1, 2))
    total = total + np.sum(pairwise.vertical[None] * (grid[:, 1:, :] != grid[:, :-1, :]), axis=(1, 2))
    return grid, total


def brute_force_minimize(unary: UnaryCosts, pairwise: PairwiseCosts) -> np.ndarray:
    """Exhaustive minimum; ties go to the lexicographically smallest label string."""
    grid, total = enumerate_energies(unary, pairwise)
    return grid[int(np.argmin(total))].copy()
