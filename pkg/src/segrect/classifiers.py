"""Foreground/background colour classifiers that produce the hypothesis mask."""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping

import numpy as np
from scipy.special import expit
from sklearn.cluster import kmeans_plusplus

from .core import InvalidInputError, as_mask, as_prob_map

VARIANCE_FLOOR = 1e-4
LOG_2PI = np.log(2.0 * np.pi)


def as_rgb(frame) -> np.ndarray:
    """Colour image as float64 ``(H, W, 3)`` in [0, 1]; integer images are divided by 255."""
    arr = np.asarray(frame)
    if arr.ndim != 3 or arr.shape[2] != 3 or arr.shape[0] * arr.shape[1] == 0:
        raise InvalidInputError(f"expected an (H, W, 3) colour image, got shape {arr.shape}")
    if np.issubdtype(arr.dtype, np.integer):
        return arr.astype(np.float64) / 255.0
    arr = arr.astype(np.float64)
    if not np.all(np.isfinite(arr)) or arr.min() < 0 or arr.max() > 1:
        raise InvalidInputError("float colour images must lie in [0, 1]")
    return arr


@dataclass(frozen=True)
class Mixture:
    """Diagonal Gaussian mixture over RGB colours."""

    weights: np.ndarray  # (K,)
    means: np.ndarray  # (K, 3)
    variances: np.ndarray  # (K, 3)
    log_likelihoods: tuple[float, ...] = ()

    @property
    def n_components(self) -> int:
        return self.weights.size

    def component_log_density(self, X: np.ndarray) -> np.ndarray:
        """``log(pi_k N(x | mu_k, diag(var_k)))`` for every row of ``X``, shape (n, K)."""
        prec = 1.0 / self.variances
        quad = (X**2) @ prec.T - 2.0 * X @ (self.means * prec).T + np.sum(self.means**2 * prec, axis=1)
        log_det = np.sum(np.log(self.variances), axis=1)
        return np.log(self.weights)[None] - 0.5 * (np.maximum(quad, 0.0) + log_det[None] + X.shape[1] * LOG_2PI)

    def log_density(self, X: np.ndarray) -> np.ndarray:
        return _logsumexp_rows(self.component_log_density(X))


def _logsumexp_rows(a: np.ndarray) -> np.ndarray:
    top = a.max(axis=1)
    safe = np.where(np.isfinite(top), top, 0.0)
    with np.errstate(divide="ignore"):
        return safe + np.log(np.exp(a - safe[:, None]).sum(axis=1))


def fit_mixture(X: np.ndarray, n_components: int, seed: int = 0, max_iter: int = 50,
                rel_tol: float = 1e-6, floor: float = VARIANCE_FLOOR) -> Mixture:
    """EM for a diagonal mixture, seeded by k-means++ centres.

    The variance floor is applied inside the M-step; clipping at the floor is
    the constrained maximiser of the expected log-likelihood, so the data
    log-likelihood still never decreases.
    """
    X = np.asarray(X, dtype=np.float64)
    n = X.shape[0]
    K = min(n_components, n)
    centers, _ = kmeans_plusplus(X, K, random_state=seed)
    means = centers.astype(np.float64)
    variances = np.tile(np.maximum(X.var(axis=0), floor), (K, 1))
    weights = np.full(K, 1.0 / K)
    model = Mixture(weights, means, variances)
    history: list[float] = []
    for _ in range(max_iter):
        comp = model.component_log_density(X)
        per_point = _logsumexp_rows(comp)
        history.append(float(per_point.mean()))
        if len(history) > 1 and history[-1] - history[-2] < rel_tol * abs(history[-2]):
            break
        resp = np.exp(comp - per_point[:, None])
        nk = resp.sum(axis=0) + 1e-300
        weights = nk / n
        means = (resp.T @ X) / nk[:, None]
        variances = np.maximum((resp.T @ X**2) / nk[:, None] - means**2, floor)
        model = Mixture(weights / weights.sum(), means, variances)
    else:
        history.append(float(model.log_density(X).mean()))
    return Mixture(model.weights, model.means, model.variances, tuple(history))


@dataclass(frozen=True)
class ColorMixtureModel:
    foreground: Mixture
    background: Mixture

    def log_likelihoods(self, frame) -> tuple[np.ndarray, np.ndarray]:
        X = as_rgb(frame).reshape(-1, 3)
        return self.foreground.log_density(X), self.background.log_density(X)


def fit_fb_model(frame, mask, components: int = 5, seed: int = 0) -> ColorMixtureModel:
    """Fit separate colour mixtures to the foreground and background pixels of ``frame``."""
    rgb = as_rgb(frame)
    m = as_mask(mask)
    if m.shape != rgb.shape[:2]:
        raise InvalidInputError(f"mask {m.shape} does not match frame {rgb.shape[:2]}")
    parts = []
    for label, name in ((1, "foreground"), (0, "background")):
        X = rgb[m == label]
        if X.shape[0] == 0:
            raise InvalidInputError(f"cannot fit a colour model: the {name} class is empty")
        K = components
        if X.shape[0] < K:
            warnings.warn(f"{name} has only {X.shape[0]} pixels; using {X.shape[0]} components")
            K = X.shape[0]
        parts.append(fit_mixture(X, K, seed))
    return ColorMixtureModel(*parts)


def predict_prob_map(model: ColorMixtureModel, frame) -> np.ndarray:
    """Foreground posterior ``L_fg / (L_fg + L_bg)`` with equal class priors."""
    rgb = as_rgb(frame)
    log_fg, log_bg = model.log_likelihoods(rgb)
    with np.errstate(invalid="ignore"):
        prob = expit(log_fg - log_bg)
    prob[np.isneginf(log_fg) & np.isneginf(log_bg)] = 0.5
    return prob.reshape(rgb.shape[:2])


def threshold_map(prob, threshold: float = 0.5) -> np.ndarray:
    if not 0.0 < threshold < 1.0:
        raise InvalidInputError(f"threshold must lie in (0, 1), got {threshold}")
    return (as_prob_map(prob) >= threshold).astype(np.uint8)


@dataclass
class ClassifierSource:
    """Where hypotheses come from: the built-in colour mixture or stored probability maps.

    ``maps`` maps frame ids to arrays or to image paths; ``loader`` reads a path.
    """

    kind: str = "mixture"
    components: int = 5
    seed: int = 0
    maps: Mapping[str, object] = field(default_factory=dict)
    loader: Callable[[Path], np.ndarray] | None = None

    def __post_init__(self):
        if self.kind not in ("mixture", "external"):
            raise InvalidInputError(f"unknown classifier source {self.kind!r}")

    @classmethod
    def external(cls, maps: Mapping[str, object], loader=None) -> "ClassifierSource":
        return cls(kind="external", maps=maps, loader=loader)

    def external_map(self, frame_id: str) -> np.ndarray:
        if frame_id not in self.maps or self.maps[frame_id] is None:
            raise InvalidInputError(f"no probability map for frame {frame_id!r}")
        entry = self.maps[frame_id]
        if isinstance(entry, (str, Path)):
            if self.loader is None:
                from .io import read_prob_map
                return read_prob_map(entry)
            return self.loader(Path(entry))
        return as_prob_map(entry)

    def predict(self, frame_id: str, frame, seed_frame=None, seed_mask=None) -> np.ndarray:
        """Probability map for ``frame``, fitting on ``(seed_frame, seed_mask)`` when built in."""
        if self.kind == "external":
            return self.external_map(frame_id)
        model = fit_fb_model(seed_frame, seed_mask, self.components, self.seed)
        return predict_prob_map(model, frame)


def reclassify_refine(frame, rectified, source: ClassifierSource, rounds: int = 1,
                      threshold: float = 0.5) -> np.ndarray:
    """Retrain the colour model on the current frame with the current mask and relabel.

    Counteracts the shrinking bias of graph cuts on thin structures: colours
    that the rectified mask kept as foreground pull back nearby pixels of the
    same colour.
    """
    mask = as_mask(rectified)
    if rounds < 0:
        raise InvalidInputError("rounds must be nonnegative")
    if rounds == 0:
        return mask
    if source.kind == "external":
        warnings.warn("external probability maps cannot be retrained; mask returned unchanged")
        return mask
    for _ in range(rounds):
        if mask.min() == mask.max():
            warnings.warn("mask has a single class; stopping reclassification early")
            break
        model = fit_fb_model(frame, mask, source.components, source.seed)
        mask = threshold_map(predict_prob_map(model, frame), threshold)
    return mask
