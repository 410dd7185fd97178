"""Single-frame rectification and keyframe-to-sequence propagation."""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.ndimage import map_coordinates

from .classifiers import ClassifierSource, reclassify_refine, threshold_map
from .core import EdgeWeightField, InvalidInputError, WeightVector, as_mask, build_edge_weights
from .edges import DEPTH_EDGES, EdgeConfig, detect_edges
from .evaluation import frame_metrics
from .inference import build_pairwise, build_unary, minimize_energy
from .io import SequenceManifest, read_depth, read_edge_map, read_flow, read_mask, read_rgb
from .learning import TrainingSample, make_training_sample


@dataclass
class PipelineConfig:
    weights: WeightVector
    classifier: ClassifierSource = field(default_factory=ClassifierSource)
    threshold: float = 0.5
    rounds: int = 1
    soft: bool = False
    edges: EdgeConfig = field(default_factory=EdgeConfig)
    depth_edges: EdgeConfig = DEPTH_EDGES

    @property
    def mode(self) -> str:
        return self.weights.layout


@dataclass
class FrameData:
    """In-memory frame with whatever assets are available."""

    frame_id: str
    image: np.ndarray
    gt: np.ndarray | None = None
    prob: np.ndarray | None = None
    edges: np.ndarray | None = None
    depth: np.ndarray | None = None
    flow: np.ndarray | None = None


@dataclass
class PropagationResult:
    frame_ids: list[str] = field(default_factory=list)
    masks: list[np.ndarray] = field(default_factory=list)
    hypotheses: list[np.ndarray] = field(default_factory=list)
    metrics: list[dict] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.masks)


def edge_fields(frame: FrameData | np.ndarray, config: PipelineConfig,
                depth=None, edges=None) -> tuple[EdgeWeightField, EdgeWeightField | None]:
    """Edge weights from supplied edge maps when present, else from detection."""
    if isinstance(frame, FrameData):
        image, depth, edges = frame.image, frame.depth, frame.edges
    else:
        image = frame
    indicator = edges if edges is not None else detect_edges(image, config.edges)
    rgb = build_edge_weights(indicator)
    if config.mode != "rgbd":
        return rgb, None
    if depth is None:
        raise InvalidInputError("RGB-D mode needs a depth image")
    return rgb, build_edge_weights(detect_edges(depth, config.depth_edges))


def rectify_hypothesis(h, config: PipelineConfig, rgb_edges: EdgeWeightField,
                       depth_edges: EdgeWeightField | None = None) -> np.ndarray:
    h = np.asarray(h, dtype=np.float64)
    if rgb_edges.shape != h.shape:
        raise InvalidInputError(f"edge field {rgb_edges.shape} does not match hypothesis {h.shape}")
    unary = build_unary(h, config.weights, config.soft)
    pairwise = build_pairwise(config.weights, rgb_edges, depth_edges)
    return minimize_energy(unary, pairwise)


def rectify_frame(frame, h, config: PipelineConfig, depth=None, edges=None) -> np.ndarray:
    """Minimise the bilayer energy for hypothesis ``h``, then reclassify per ``config.rounds``."""
    image = frame.image if isinstance(frame, FrameData) else frame
    if np.shape(image)[:2] != np.shape(h):
        raise InvalidInputError(f"frame {np.shape(image)[:2]} and hypothesis {np.shape(h)} differ in size")
    rgb, dep = edge_fields(frame, config, depth, edges)
    f = rectify_hypothesis(h, config, rgb, dep)
    return reclassify_refine(image, f, config.classifier, config.rounds, config.threshold)


def warp_backward(array: np.ndarray, flow: np.ndarray | None) -> np.ndarray:
    """Resample ``array`` at ``p - flow(p)`` with nearest-neighbour lookup and edge clamping."""
    if flow is None:
        return array
    rows, cols = np.mgrid[: array.shape[0], : array.shape[1]].astype(np.float64)
    coords = [rows - flow[..., 1], cols - flow[..., 0]]
    if array.ndim == 2:
        return map_coordinates(array, coords, order=0, mode="nearest").astype(array.dtype)
    chans = [map_coordinates(array[..., c], coords, order=0, mode="nearest") for c in range(array.shape[2])]
    return np.stack(chans, axis=-1).astype(array.dtype)


def load_frames(manifest: SequenceManifest, need_gt: bool = False) -> list[FrameData]:
    frames = []
    for rec in manifest.frames:
        fd = FrameData(rec.frame_id, read_rgb(rec.require("image")))
        if rec.gt is not None or need_gt:
            fd.gt = read_mask(rec.require("gt"))
        if rec.edges is not None:
            fd.edges = read_edge_map(rec.require("edges"))
        if rec.depth is not None:
            fd.depth = read_depth(rec.require("depth"))
        if rec.flow is not None:
            fd.flow = read_flow(rec.require("flow"))
        if rec.prob is not None:
            fd.prob = rec.require("prob")
        frames.append(fd)
    return frames


def _hypothesis(config: PipelineConfig, seed: FrameData, seed_mask, target: FrameData) -> np.ndarray:
    if config.classifier.kind == "external":
        if target.prob is None and target.frame_id not in config.classifier.maps:
            raise InvalidInputError(f"frame {target.frame_id!r} has no prob asset")
        source = config.classifier
        if target.prob is not None:
            source = ClassifierSource.external({target.frame_id: target.prob})
        return source.predict(target.frame_id, target.image)
    seed_image = warp_backward(seed.image, target.flow)
    seed_mask = warp_backward(seed_mask, target.flow)
    if seed_mask.min() == seed_mask.max():
        warnings.warn(f"seed mask for frame {target.frame_id!r} has a single class; carrying it forward")
        return seed_mask.astype(np.float64)
    return config.classifier.predict(target.frame_id, target.image, seed_image, seed_mask)


def propagate_sequence(frames: Sequence[FrameData] | SequenceManifest, keyframe_mask, config: PipelineConfig,
                       mode: str = "chained") -> PropagationResult:
    """Carry the keyframe mask through the sequence.

    ``chained`` seeds each step with the previous rectified mask, ``per-pair``
    with the previous frame's ground truth.  Metrics are recorded for every
    frame that has ground truth.
    """
    if mode not in ("chained", "per-pair"):
        raise InvalidInputError(f"unknown propagation mode {mode!r}")
    if isinstance(frames, SequenceManifest):
        frames = load_frames(frames, need_gt=mode == "per-pair")
    result = PropagationResult()
    if len(frames) < 2:
        return result
    current = as_mask(keyframe_mask, "keyframe mask")
    for t in range(len(frames) - 1):
        seed, target = frames[t], frames[t + 1]
        if mode == "per-pair":
            if seed.gt is None:
                raise InvalidInputError(f"frame {seed.frame_id!r} has no gt asset")
            current = seed.gt
        prob = _hypothesis(config, seed, current, target)
        hyp = prob if config.soft else threshold_map(prob, config.threshold)
        rectified = rectify_frame(target, hyp, config)
        result.frame_ids.append(target.frame_id)
        result.hypotheses.append(threshold_map(prob, config.threshold))
        result.masks.append(rectified)
        result.metrics.append(frame_metrics(rectified, target.gt) if target.gt is not None else {})
        current = rectified
    return result


def training_samples(frames: Sequence[FrameData] | SequenceManifest, config: PipelineConfig,
                     normalize: str = "pixels", prefix: str = "") -> list[TrainingSample]:
    """Ground-truth training samples from consecutive frame pairs.

    The hypothesis for frame ``t + 1`` comes from the configured classifier
    seeded with the ground truth of frame ``t`` (or from the stored map for
    external sources); features are taken at the ground truth of ``t + 1``.
    """
    if isinstance(frames, SequenceManifest):
        frames = load_frames(frames, need_gt=True)
    samples = []
    for t in range(len(frames) - 1):
        seed, target = frames[t], frames[t + 1]
        for fd in (seed, target):
            if fd.gt is None:
                raise InvalidInputError(f"frame {fd.frame_id!r} has no gt asset")
        prob = _hypothesis(config, seed, seed.gt, target)
        hyp = prob if config.soft else threshold_map(prob, config.threshold)
        rgb, dep = edge_fields(target, config)
        samples.append(make_training_sample(target.gt, hyp, rgb, dep, f"{prefix}{target.frame_id}",
                                            normalize, config.soft))
    return samples
