"""Synthetic sequences with known masks and classifier-like error injection."""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.ndimage import distance_transform_edt, gaussian_filter
from skimage.draw import polygon2mask

from .core import InvalidInputError, as_mask
from .io import FrameRecord, SequenceManifest, write_depth, write_manifest, write_mask, write_prob_map, write_rgb

SHAPES = ("disk", "rectangle", "star")


@dataclass
class SceneSpec:
    """A single object moving over a static background.

    Positions and velocities are ``(x, y)`` = (column, row) in pixels.  ``size``
    is the disk radius, the rectangle half-extents, or the star's outer and
    inner radii.  ``blur`` mixes colours across the object boundary the way a
    camera point-spread function does.  ``clutter`` is the fraction of the
    static background covered by small squares painted in the foreground colour.
    """

    height: int = 128
    width: int = 128
    shape: str = "disk"
    size: tuple[float, ...] = (24.0,)
    star_points: int = 5
    center: tuple[float, float] | None = None
    velocity: tuple[float, float] = (0.0, 0.0)
    rotation: float = 0.0
    fg_color: tuple[float, float, float] = (200.0, 60.0, 60.0)
    bg_color: tuple[float, float, float] = (60.0, 90.0, 200.0)
    fg_sigma: float = 12.0
    bg_sigma: float = 12.0
    texture: bool = False
    texture_amplitude: float = 30.0
    blur: float = 0.0
    clutter: float = 0.0
    clutter_size: int = 3
    min_color_margin: float = 30.0
    frames: int = 10
    depth: bool = False
    seed: int = 0

    def __post_init__(self):
        self.size = tuple(float(s) for s in np.atleast_1d(self.size))
        self.validate()

    @property
    def start(self) -> tuple[float, float]:
        if self.center is not None:
            return tuple(self.center)
        return ((self.width - 1) / 2.0, (self.height - 1) / 2.0)

    def extent(self) -> float:
        """Radius of a disc around the centre that always contains the object."""
        if self.shape == "rectangle":
            return float(np.hypot(*self.size[:2])) if len(self.size) > 1 else float(np.sqrt(2) * self.size[0])
        return max(self.size)

    def positions(self) -> np.ndarray:
        t = np.arange(self.frames)[:, None]
        return np.asarray(self.start)[None] + t * np.asarray(self.velocity, float)[None]

    def validate(self) -> None:
        if self.height < 4 or self.width < 4:
            raise InvalidInputError("canvas must be at least 4x4")
        if self.shape not in SHAPES:
            raise InvalidInputError(f"unknown shape {self.shape!r}; expected one of {SHAPES}")
        if self.frames < 1:
            raise InvalidInputError("a sequence needs at least one frame")
        if not 0.0 <= self.clutter < 1.0 or self.clutter_size < 1:
            raise InvalidInputError("clutter must lie in [0, 1) with a positive blob size")
        if min(self.size) <= 0:
            raise InvalidInputError("object size must be positive")
        if self.shape == "star" and (len(self.size) < 2 or self.size[1] >= self.size[0] or self.star_points < 3):
            raise InvalidInputError("star needs outer > inner radius and at least 3 points")
        gap = np.linalg.norm(np.subtract(self.fg_color, self.bg_color))
        if gap < self.min_color_margin:
            raise InvalidInputError(f"colour means are only {gap:.1f} apart (margin {self.min_color_margin})")
        r = self.extent()
        pos = self.positions()
        if (pos[:, 0].min() - r < 0 or pos[:, 0].max() + r > self.width - 1
                or pos[:, 1].min() - r < 0 or pos[:, 1].max() + r > self.height - 1):
            raise InvalidInputError("object leaves the canvas during the sequence")


def object_mask(spec: SceneSpec, t: int) -> np.ndarray:
    cx, cy = spec.positions()[t]
    angle = np.deg2rad(spec.rotation * t)
    rows, cols = np.mgrid[: spec.height, : spec.width].astype(np.float64)
    dx, dy = cols - cx, rows - cy
    if spec.shape == "disk":
        return (dx**2 + dy**2 <= spec.size[0] ** 2).astype(np.uint8)
    if spec.shape == "rectangle":
        a = spec.size[0]
        b = spec.size[1] if len(spec.size) > 1 else a
        u = np.cos(angle) * dx + np.sin(angle) * dy
        v = -np.sin(angle) * dx + np.cos(angle) * dy
        return ((np.abs(u) <= a) & (np.abs(v) <= b)).astype(np.uint8)
    k = 2 * spec.star_points
    theta = angle - np.pi / 2 + np.arange(k) * np.pi / spec.star_points
    radius = np.where(np.arange(k) % 2 == 0, spec.size[0], spec.size[1])
    verts = np.stack([cy + radius * np.sin(theta), cx + radius * np.cos(theta)], axis=1)
    return polygon2mask((spec.height, spec.width), verts).astype(np.uint8)


def clutter_mask(spec: SceneSpec) -> np.ndarray:
    """Static background blobs, drawn from their own stream so every frame shares them."""
    out = np.zeros((spec.height, spec.width), dtype=bool)
    if spec.clutter <= 0:
        return out
    rng = np.random.default_rng([spec.seed, 1])
    s = spec.clutter_size
    n = int(round(spec.clutter * spec.height * spec.width / s**2))
    rows = rng.integers(0, spec.height - s + 1, n)
    cols = rng.integers(0, spec.width - s + 1, n)
    for r, c in zip(rows, cols):
        out[r : r + s, c : c + s] = True
    return out


def render_frame(spec: SceneSpec, t: int, rng: np.random.Generator,
                 clutter: np.ndarray | None = None) -> tuple[np.ndarray, np.ndarray]:
    mask = object_mask(spec, t)
    shape = (spec.height, spec.width, 3)
    fg = np.asarray(spec.fg_color, float) + spec.fg_sigma * rng.standard_normal(shape)
    bg = np.asarray(spec.bg_color, float) + spec.bg_sigma * rng.standard_normal(shape)
    if spec.texture:
        cx, cy = spec.positions()[t]
        rows, cols = np.mgrid[: spec.height, : spec.width]
        stripes = np.sin(2 * np.pi * ((cols - cx) + 0.5 * (rows - cy)) / 8.0)
        fg = fg + spec.texture_amplitude * stripes[:, :, None]
    if clutter is not None and clutter.any():
        bg = np.where(clutter[:, :, None], np.asarray(spec.fg_color) + spec.fg_sigma * rng.standard_normal(shape), bg)
    img = np.where(mask[:, :, None] == 1, fg, bg)
    if spec.blur > 0:
        img = gaussian_filter(img, sigma=(spec.blur, spec.blur, 0))
    return np.clip(np.round(img), 0, 255).astype(np.uint8), mask


def render_depth(mask: np.ndarray, rng: np.random.Generator, near: float = 1500.0, far: float = 4000.0,
                 sigma: float = 10.0) -> np.ndarray:
    depth = np.where(mask == 1, near, far) + sigma * rng.standard_normal(mask.shape)
    return np.clip(np.round(depth), 0, 65535)


@dataclass
class SyntheticSequence:
    frames: list[np.ndarray]
    masks: list[np.ndarray]
    depths: list[np.ndarray] | None = None
    frame_ids: list[str] = field(default_factory=list)


def render_sequence(spec: SceneSpec) -> SyntheticSequence:
    """Render every frame in memory; deterministic under ``spec.seed``."""
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    frames, masks, depths = [], [], []
    clutter = clutter_mask(spec)
    for t in range(spec.frames):
        img, m = render_frame(spec, t, rng, clutter)
        frames.append(img)
        masks.append(m)
        if spec.depth:
            depths.append(render_depth(m, rng))
    ids = [f"{t:04d}" for t in range(spec.frames)]
    return SyntheticSequence(frames, masks, depths if spec.depth else None, ids)


@dataclass
class BiasSpec:
    """Flip fractions inside a band around the true boundary, plus uniform speckle.

    ``fp_rate`` of the background pixels within ``band`` pixels of the object
    become foreground and ``fn_rate`` of the foreground pixels within the band
    become background.
    """

    fp_rate: float = 0.0
    fn_rate: float = 0.0
    band: int = 3
    speckle_rate: float = 0.0
    seed: int = 0

    def __post_init__(self):
        for name in ("fp_rate", "fn_rate", "speckle_rate"):
            v = getattr(self, name)
            if not 0.0 <= v < 0.5:
                raise InvalidInputError(f"{name} must lie in [0, 0.5), got {v}")
        if self.band < 1:
            raise InvalidInputError("band width must be at least 1")


def boundary_bands(gt: np.ndarray, band: int) -> tuple[np.ndarray, np.ndarray]:
    """Background pixels within ``band`` of the foreground, and foreground pixels within ``band`` of the background."""
    fg = gt == 1
    outer = ~fg & (distance_transform_edt(~fg) <= band) if fg.any() else np.zeros_like(fg)
    inner = fg & (distance_transform_edt(fg) <= band) if (~fg).any() else np.zeros_like(fg)
    return outer, inner


def inject_bias(gt, spec: BiasSpec) -> np.ndarray:
    """Corrupt a mask with an exact number of boundary-band flips per class.

    Exactly ``round(rate * band size)`` pixels are drawn without replacement
    from each band, so the realised rates match the targets up to rounding.
    """
    gt = as_mask(gt, "gt")
    rng = np.random.default_rng(spec.seed)
    out = gt.copy()
    outer, inner = boundary_bands(gt, spec.band)
    for region, rate, value in ((outer, spec.fp_rate, 1), (inner, spec.fn_rate, 0)):
        idx = np.flatnonzero(region)
        count = int(round(rate * idx.size))
        if count:
            out.flat[rng.choice(idx, size=count, replace=False)] = value
    if spec.speckle_rate > 0:
        flip = rng.random(gt.shape) < spec.speckle_rate
        out[flip] = 1 - out[flip]
    return out


def generate_sequence(spec: SceneSpec, out_dir, bias: BiasSpec | None = None) -> SequenceManifest:
    """Write frames, masks (and optional depth and biased hypotheses) plus a manifest."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    seq = render_sequence(spec)
    manifest = SequenceManifest(out)
    for t, fid in enumerate(seq.frame_ids):
        rec = FrameRecord(fid, image=out / f"frame_{fid}.png", gt=out / f"gt_{fid}.png")
        write_rgb(rec.image, seq.frames[t])
        write_mask(rec.gt, seq.masks[t])
        if seq.depths is not None:
            rec.depth = out / f"depth_{fid}.png"
            write_depth(rec.depth, seq.depths[t])
        if bias is not None:
            rec.prob = out / f"hyp_{fid}.png"
            b = BiasSpec(bias.fp_rate, bias.fn_rate, bias.band, bias.speckle_rate, bias.seed + t)
            write_prob_map(rec.prob, inject_bias(seq.masks[t], b).astype(float), bits=8)
        manifest.frames.append(rec)
    write_manifest(out / "manifest.tsv", manifest)
    return manifest
