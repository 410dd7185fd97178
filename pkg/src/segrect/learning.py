"""Learning MRF weights from ground-truth segmentations.

Two learners share the simplex-constrained QP machinery in :mod:`segrect.qp`:

* the one-class structured SVM, which only needs the ground-truth features
  and reduces to a single projection onto the simplex, and
* the two-class structured SVM trained by cutting planes, which needs
  loss-augmented inference on the raw training frames.
"""
from __future__ import annotations

import logging
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .core import (
    EdgeWeightField,
    InvalidInputError,
    WeightVector,
    as_mask,
    features_for,
    hypothesis_field,
)
from .inference import build_pairwise, build_unary, loss_augmented_minimize, minimize_energy
from .qp import active_set_qp, kkt_residual, project_to_simplex, solve_master_qp

log = logging.getLogger(__name__)

PRIOR_GRID = (0.0, 0.5, 1.0, 1.5, 2.0, 2.5, 3.0)


@dataclass
class LearnConfig:
    C: float = 1.0
    prior_weight: float = 0.0
    max_iterations: int = 10
    violation_tolerance: float = 1e-4
    qp_kkt_tolerance: float = 1e-8
    threads: int = 1

    def __post_init__(self):
        if not self.C > 0:
            raise InvalidInputError(f"C must be positive, got {self.C}")
        if self.prior_weight < 0:
            raise InvalidInputError(f"prior_weight must be nonnegative, got {self.prior_weight}")
        if self.max_iterations < 1:
            raise InvalidInputError("max_iterations must be at least 1")


@dataclass
class TrainingSample:
    """Ground-truth features of one frame, optionally with the raw inputs.

    ``features_gt`` is already multiplied by ``scale``; the raw fields are
    only needed by the cutting-plane learner, which re-runs inference.
    """

    features_gt: np.ndarray
    sample_id: str = ""
    scale: float = 1.0
    h: np.ndarray | None = None
    gt: np.ndarray | None = None
    rgb_edges: EdgeWeightField | None = None
    depth_edges: EdgeWeightField | None = None
    soft: bool = False

    def __post_init__(self):
        feats = np.asarray(self.features_gt, dtype=np.float64).reshape(-1)
        if not np.all(np.isfinite(feats)) or feats.min(initial=0.0) < 0:
            raise InvalidInputError(f"sample {self.sample_id!r}: features must be finite and nonnegative")
        self.features_gt = feats

    @property
    def has_raw(self) -> bool:
        return self.h is not None and self.gt is not None and self.rgb_edges is not None

    @property
    def layout(self) -> str:
        return "rgb" if self.features_gt.size == 11 else "rgbd"

    def features(self, f) -> np.ndarray:
        return self.scale * features_for(self.layout, f, self.h, self.rgb_edges,
                                         self.depth_edges, self.soft)


NORMALIZATIONS = ("pixels", "boundary", "none")


def feature_scale(gt: np.ndarray, normalize: str) -> float:
    """Per-sample feature divisor: ground-truth boundary length, pixel count, or 1."""
    if normalize == "none":
        return 1.0
    if normalize == "pixels":
        return 1.0 / gt.size
    if normalize == "boundary":
        g = gt.astype(np.int8)
        cut = np.count_nonzero(g[:, 1:] != g[:, :-1]) + np.count_nonzero(g[1:, :] != g[:-1, :])
        return 1.0 / max(cut, 1)
    raise InvalidInputError(f"unknown normalization {normalize!r}; expected one of {NORMALIZATIONS}")


def make_training_sample(gt, h, rgb_edges: EdgeWeightField, depth_edges: EdgeWeightField | None = None,
                         sample_id: str = "", normalize: str = "pixels", soft: bool = False) -> TrainingSample:
    """Build a sample from a ground-truth mask and a classifier hypothesis.

    Raw feature counts grow with the image, which makes ``C`` resolution
    dependent; by default they are divided by the pixel count so the data
    pull is on the same per-pixel scale as the Hamming loss.
    """
    gt = as_mask(gt, "gt")
    hh = hypothesis_field(h, soft)
    layout = "rgbd" if depth_edges is not None else "rgb"
    scale = feature_scale(gt, normalize)
    feats = scale * features_for(layout, gt, hh, rgb_edges, depth_edges, soft)
    return TrainingSample(feats, sample_id, scale, hh, gt, rgb_edges, depth_edges, soft)


def _check_samples(samples: Sequence[TrainingSample], size: int | None = None) -> int:
    if not samples:
        raise InvalidInputError("at least one training sample is required")
    sizes = {s.features_gt.size for s in samples}
    if len(sizes) != 1:
        raise InvalidInputError(f"inconsistent feature layouts: {sorted(sizes)}")
    n = sizes.pop()
    if size is not None and n != size:
        raise InvalidInputError(f"expected {size}-entry features, got {n}")
    if n not in (11, 12):
        raise InvalidInputError(f"features must have 11 or 12 entries, got {n}")
    return n


def solve_simplex_qp(linear_cost, extra_inequalities: Sequence[tuple[int, int]] = ()) -> WeightVector:
    """``argmin 0.5|w|^2 + c.w`` over the simplex, with optional ``w[a] <= w[b]`` rows."""
    c = np.asarray(linear_cost, dtype=np.float64).reshape(-1)
    if c.size not in (11, 12):
        raise InvalidInputError(f"cost vector must have 11 or 12 entries, got {c.size}")
    if not np.all(np.isfinite(c)):
        raise InvalidInputError("cost vector must be finite")
    w = project_to_simplex(-c)
    if extra_inequalities and any(w[a] > w[b] for a, b in extra_inequalities):
        n = c.size
        G, h = _simplex_inequalities(n, extra_inequalities)
        w, _ = active_set_qp(np.eye(n), c, np.ones((1, n)), np.ones(1), G, h, np.full(n, 1.0 / n))
        w = np.maximum(w, 0.0)
        w /= w.sum()
    return WeightVector.from_array(w)


def _simplex_inequalities(n: int, extra: Sequence[tuple[int, int]]):
    rows = [np.eye(n)]
    for a, b in extra:
        row = np.zeros(n)
        row[b], row[a] = 1.0, -1.0
        rows.append(row[None])
    G = np.vstack(rows)
    return G, np.zeros(G.shape[0])


def simplex_qp_kkt_residual(w, linear_cost, extra_inequalities: Sequence[tuple[int, int]] = ()) -> float:
    w = np.asarray(getattr(w, "values", w), float)
    n = w.size
    G, h = _simplex_inequalities(n, extra_inequalities)
    return kkt_residual(np.eye(n), linear_cost, np.ones((1, n)), np.ones(1), G, h, w)


def ossvm_cost(samples: Sequence[TrainingSample], config: LearnConfig) -> np.ndarray:
    """Linear term of the reduced one-class problem: ``(C/N) sum psi* - prior e_edge``.

    Every slack constraint ``w.psi*_k <= -1 + eps_k`` is active at the optimum
    because ``w`` and ``psi*`` are nonnegative, so ``eps_k = 1 + w.psi*_k`` and
    the slack penalty becomes linear in ``w``.
    """
    feats = np.stack([s.features_gt for s in samples])
    c = (config.C / len(samples)) * feats.sum(axis=0)
    c[0] -= config.prior_weight
    return c


def train_ossvm(samples: Sequence[TrainingSample], config: LearnConfig | None = None) -> WeightVector:
    """One-class structured SVM with the edge prior (11-entry layout)."""
    config = config or LearnConfig()
    _check_samples(samples, 11)
    return solve_simplex_qp(ossvm_cost(samples, config))


def train_ossvm_rgbd(samples: Sequence[TrainingSample], config: LearnConfig | None = None) -> WeightVector:
    """RGB-D variant: the prior rewards the RGB edge weight, which may not exceed the depth one."""
    config = config or LearnConfig()
    _check_samples(samples, 12)
    return solve_simplex_qp(ossvm_cost(samples, config), [(0, 1)])


def ossvm_full_kkt_residual(samples: Sequence[TrainingSample], config: LearnConfig, w) -> float:
    """KKT residual of the unreduced one-class QP in ``(w, eps)``.

    The slacks are recovered as ``eps_k = 1 + w.psi*_k``.
    """
    w = np.asarray(getattr(w, "values", w), float)
    feats = np.stack([s.features_gt for s in samples])
    n, N = w.size, feats.shape[0]
    H = np.zeros((n + N, n + N))
    H[:n, :n] = np.eye(n)
    c = np.concatenate([np.zeros(n), np.full(N, config.C / N)])
    c[0] -= config.prior_weight
    A_eq = np.concatenate([np.ones(n), np.zeros(N)])[None]
    rows = [np.hstack([np.eye(n), np.zeros((n, N))]), np.hstack([-feats, np.eye(N)])]
    bounds = [np.zeros(n), np.ones(N)]
    if n == 12:
        row = np.zeros(n + N)
        row[1], row[0] = 1.0, -1.0
        rows.append(row[None])
        bounds.append(np.zeros(1))
    x = np.concatenate([w, 1.0 + feats @ w])
    return kkt_residual(H, c, A_eq, np.ones(1), np.vstack(rows), np.concatenate(bounds), x)


@dataclass
class ConstraintSet:
    """Accumulated cutting planes ``w . dpsi >= delta - xi_k`` grouped by sample."""

    normals: list[np.ndarray] = field(default_factory=list)
    losses: list[float] = field(default_factory=list)
    groups: list[int] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.losses)

    def add(self, sample: int, dpsi, delta: float, tol: float = 1e-12) -> bool:
        dpsi = np.asarray(dpsi, float)
        for a, d, g in zip(self.normals, self.losses, self.groups):
            if g == sample and abs(d - delta) <= tol and np.max(np.abs(a - dpsi)) <= tol:
                return False
        self.normals.append(dpsi)
        self.losses.append(float(delta))
        self.groups.append(int(sample))
        return True

    def arrays(self, dim: int):
        if not self.losses:
            return np.zeros((0, dim)), np.zeros(0), np.zeros(0, dtype=np.int64)
        return np.stack(self.normals), np.array(self.losses), np.array(self.groups)


@dataclass
class CuttingPlaneResult:
    weights: WeightVector
    converged: bool
    iterations: int
    objectives: list[float]
    max_violations: list[float]
    constraints: ConstraintSet


def _most_violated(sample: TrainingSample, w: WeightVector):
    unary = build_unary(sample.h, w, sample.soft)
    pairwise = build_pairwise(w, sample.rgb_edges, sample.depth_edges)
    unary = type(unary)(unary.cost0 * sample.scale, unary.cost1 * sample.scale)
    f = loss_augmented_minimize(unary, pairwise.scaled(sample.scale), sample.gt)
    dpsi = sample.features(f) - sample.features_gt
    delta = float(np.mean(f != sample.gt))
    return dpsi, delta


def run_cutting_plane(samples: Sequence[TrainingSample], config: LearnConfig | None = None,
                      constraints: ConstraintSet | None = None) -> CuttingPlaneResult:
    """Two-class structured SVM by n-slack cutting planes.

    Each round runs loss-augmented inference on every sample under the current
    weights, keeps the planes whose violation exceeds the sample's current
    slack by more than ``violation_tolerance``, and re-solves the master QP.
    Adding planes only shrinks the feasible set, so the master objective never
    decreases.
    """
    config = config or LearnConfig()
    n = _check_samples(samples)
    if not all(s.has_raw for s in samples):
        raise InvalidInputError("cutting-plane training needs the raw h, gt and edge fields of every sample")
    N = len(samples)
    penalty = config.C / N
    constraints = constraints if constraints is not None else ConstraintSet()
    w = np.full(n, 1.0 / n)
    xi = np.zeros(N)
    objectives, violations = [], []
    if len(constraints):
        sol = solve_master_qp(*constraints.arrays(n), N, penalty, w0=w)
        w, xi = sol.w, sol.slacks
    pool = ThreadPoolExecutor(config.threads) if config.threads > 1 else None
    try:
        for it in range(1, config.max_iterations + 1):
            weights = WeightVector.from_array(w)
            mapper = pool.map if pool else map
            planes = list(mapper(lambda s: _most_violated(s, weights), samples))
            worst = 0.0
            added = 0
            for k, (dpsi, delta) in enumerate(planes):
                violation = delta - float(w @ dpsi) - xi[k]
                worst = max(worst, violation)
                if violation > config.violation_tolerance and constraints.add(k, dpsi, delta):
                    added += 1
            violations.append(worst)
            log.debug("cutting plane round %d: max violation %.3g, %d new planes", it, worst, added)
            if added == 0:
                return CuttingPlaneResult(WeightVector.from_array(w), True, it, objectives, violations, constraints)
            sol = solve_master_qp(*constraints.arrays(n), N, penalty, w0=w)
            w, xi = sol.w, sol.slacks
            objectives.append(sol.objective)
    finally:
        if pool:
            pool.shutdown()
    return CuttingPlaneResult(WeightVector.from_array(w), False, config.max_iterations,
                              objectives, violations, constraints)


def train_2cssvm(samples: Sequence[TrainingSample], config: LearnConfig | None = None) -> WeightVector:
    return run_cutting_plane(samples, config).weights


@dataclass
class Theorem1Report:
    w_two_class: np.ndarray
    w_one_class: np.ndarray
    max_weight_difference: float
    objective_two_class: float
    objective_one_class: float
    predicted_gap: float
    gap_error: float

    def lines(self) -> list[str]:
        return [
            f"max |w_2C - w_OS|        {self.max_weight_difference:.3e}",
            f"objective (two-class)    {self.objective_two_class:.12g}",
            f"objective (one-class)    {self.objective_one_class:.12g}",
            f"predicted gap            {self.predicted_gap:.12g}",
            f"gap error                {self.gap_error:.3e}",
        ]


def theorem1_harness(samples: Sequence[TrainingSample], totals, config: LearnConfig | None = None) -> Theorem1Report:
    """Compare the two learners when the negative features are constant vectors.

    Sample ``k`` gets the negative feature vector ``b_k`` with every entry equal
    to ``totals[k] / n`` and the loss is fixed to 1.  On the simplex
    ``w . b_k = totals[k] / n``, so the two-class slack is the one-class slack
    minus that constant, the minimisers coincide, and
    ``obj_one_class - obj_two_class = (C/N) sum_k totals[k] / n``.
    Totals must lie in ``[0, n]`` so the two-class slacks stay active.
    """
    config = config or LearnConfig()
    if config.prior_weight != 0:
        raise InvalidInputError("the equivalence holds without the edge prior; set prior_weight=0")
    n = _check_samples(samples)
    totals = np.asarray(totals, dtype=np.float64).reshape(-1)
    N = len(samples)
    if totals.size != N:
        raise InvalidInputError(f"need one total per sample ({N}), got {totals.size}")
    if totals.min() < 0 or totals.max() > n:
        raise InvalidInputError(f"totals must lie in [0, {n}]")
    feats = np.stack([s.features_gt for s in samples])
    negatives = np.repeat((totals / n)[:, None], n, axis=1)
    penalty = config.C / N
    two = solve_master_qp(negatives - feats, np.ones(N), np.arange(N), N, penalty)
    if n == 11:
        one = train_ossvm(samples, config).values
    else:
        one = solve_simplex_qp(ossvm_cost(samples, config)).values
    obj_one = 0.5 * float(one @ one) + penalty * float(np.sum(1.0 + feats @ one))
    predicted = penalty * float(np.sum(totals / n))
    return Theorem1Report(
        w_two_class=two.w,
        w_one_class=one,
        max_weight_difference=float(np.max(np.abs(two.w - one))),
        objective_two_class=two.objective,
        objective_one_class=obj_one,
        predicted_gap=predicted,
        gap_error=abs(obj_one - two.objective - predicted),
    )


def rectification_error(sample: TrainingSample, w: WeightVector) -> float:
    """Fraction of pixels that differ from the ground truth after rectifying ``sample.h``."""
    unary = build_unary(sample.h, w, sample.soft)
    pairwise = build_pairwise(w, sample.rgb_edges, sample.depth_edges)
    f = minimize_energy(unary, pairwise)
    return float(np.mean(f != sample.gt))


@dataclass
class CrossValidationResult:
    best_prior: float
    fold_errors: dict[float, list[float]]
    folds: int

    @property
    def mean_errors(self) -> dict[float, float]:
        return {p: float(np.mean(errs)) for p, errs in self.fold_errors.items()}

    def table(self) -> str:
        lines = ["prior\t" + "\t".join(f"fold{i}" for i in range(self.folds)) + "\tmean"]
        for prior, errs in self.fold_errors.items():
            lines.append(f"{prior:g}\t" + "\t".join(f"{e:.6f}" for e in errs) + f"\t{np.mean(errs):.6f}")
        return "\n".join(lines) + "\n"


def cross_validate_prior(sequences: Sequence[Sequence[TrainingSample]], grid: Sequence[float] = PRIOR_GRID,
                         folds: int = 10, config: LearnConfig | None = None,
                         trainer: Callable | None = None) -> CrossValidationResult:
    """Pick the edge-prior weight by k-fold cross-validation over whole sequences.

    Sequence ``i`` goes to fold ``i % folds``.  For each prior the learner is
    trained on the other folds and scored by the mean pixel error of the
    rectified held-out frames; the prior with the lowest mean over folds wins,
    ties going to the smaller prior.
    """
    config = config or LearnConfig()
    if not grid:
        raise InvalidInputError("prior grid is empty")
    sequences = [list(seq) for seq in sequences if len(seq)]
    if len(sequences) < 2:
        raise InvalidInputError("cross-validation needs at least two non-empty sequences")
    if len(sequences) < folds:
        warnings.warn(f"only {len(sequences)} sequences; using {len(sequences)} folds instead of {folds}")
        folds = len(sequences)
    n = _check_samples([s for seq in sequences for s in seq])
    if trainer is None:
        trainer = train_ossvm if n == 11 else train_ossvm_rgbd
    assignment = np.arange(len(sequences)) % folds
    fold_errors: dict[float, list[float]] = {}
    for prior in grid:
        cfg = LearnConfig(C=config.C, prior_weight=float(prior), max_iterations=config.max_iterations,
                          violation_tolerance=config.violation_tolerance,
                          qp_kkt_tolerance=config.qp_kkt_tolerance, threads=config.threads)
        errs = []
        for fold in range(folds):
            train = [s for i, seq in enumerate(sequences) if assignment[i] != fold for s in seq]
            held = [s for i, seq in enumerate(sequences) if assignment[i] == fold for s in seq]
            w = trainer(train, cfg)
            errs.append(float(np.mean([rectification_error(s, w) for s in held])))
        fold_errors[float(prior)] = errs
    means = {p: float(np.mean(e)) for p, e in fold_errors.items()}
    best = min(means, key=lambda p: (means[p], p))
    return CrossValidationResult(best, fold_errors, folds)
