"""File formats: masks, probability and edge maps, weights, manifests, flow, configs."""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Iterable

import numpy as np
from PIL import Image

from .core import InvalidInputError, WeightVector, as_mask, as_prob_map

ASSETS = ("image", "gt", "prob", "edges", "depth", "flow")
MISSING = "-"
FLOW_MAGIC = b"FLO1"


def _open(path) -> np.ndarray:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"missing file: {path}")
    with Image.open(path) as img:
        return np.array(img)


def read_mask(path) -> np.ndarray:
    arr = _open(path)
    if arr.ndim != 2:
        raise InvalidInputError(f"{path}: masks must be single-channel")
    return (arr >= 128).astype(np.uint8) if arr.max(initial=0) > 1 else as_mask(arr)


def write_mask(path, mask) -> None:
    Image.fromarray(as_mask(mask) * np.uint8(255)).save(path)


def read_prob_map(path) -> np.ndarray:
    """8-bit maps are divided by 255, 16-bit maps by 65535."""
    arr = _open(path)
    if arr.ndim != 2:
        raise InvalidInputError(f"{path}: probability maps must be single-channel")
    if arr.dtype == np.uint8:
        return arr / 255.0
    if arr.dtype in (np.uint16, np.int32, np.int64, np.dtype(">u2")):
        return arr.astype(np.float64) / 65535.0
    raise InvalidInputError(f"{path}: unsupported probability map type {arr.dtype}")


def write_prob_map(path, prob, bits: int = 16) -> None:
    p = as_prob_map(prob)
    if bits == 8:
        Image.fromarray(np.round(p * 255).astype(np.uint8)).save(path)
    elif bits == 16:
        Image.fromarray(np.round(p * 65535).astype(np.uint16)).save(path)
    else:
        raise InvalidInputError("probability maps are 8- or 16-bit")


def read_edge_map(path) -> np.ndarray:
    arr = _open(path)
    if arr.ndim != 2:
        raise InvalidInputError(f"{path}: edge maps must be single-channel")
    return (arr != 0).astype(np.uint8)


def write_edge_map(path, edges) -> None:
    Image.fromarray((np.asarray(edges) != 0).astype(np.uint8) * np.uint8(255)).save(path)


def read_rgb(path) -> np.ndarray:
    arr = _open(path)
    if arr.ndim == 2:
        arr = np.repeat(arr[:, :, None], 3, axis=2)
    if arr.shape[2] == 4:
        arr = arr[:, :, :3]
    return arr.astype(np.uint8)


def write_rgb(path, image) -> None:
    Image.fromarray(np.asarray(image, dtype=np.uint8)).save(path)


def read_depth(path) -> np.ndarray:
    arr = _open(path)
    if arr.ndim != 2:
        raise InvalidInputError(f"{path}: depth images must be single-channel")
    return arr.astype(np.float64)


def write_depth(path, depth) -> None:
    d = np.asarray(depth)
    if d.min(initial=0) < 0 or d.max(initial=0) > 65535:
        raise InvalidInputError("depth values must fit in 16 bits")
    Image.fromarray(np.round(d).astype(np.uint16)).save(path)


def read_flow(path) -> np.ndarray:
    """Dense flow ``(H, W, 2)`` holding ``(dx, dy)`` per pixel."""
    raw = Path(path).read_bytes()
    if len(raw) < 12 or raw[:4] != FLOW_MAGIC:
        raise InvalidInputError(f"{path}: not a FLO1 flow file")
    width, height = np.frombuffer(raw[4:12], dtype="<i4")
    body = np.frombuffer(raw[12:], dtype="<f4")
    if width <= 0 or height <= 0 or body.size != 2 * width * height:
        raise InvalidInputError(f"{path}: flow payload does not match {width}x{height}")
    return body.reshape(height, width, 2).astype(np.float64)


def write_flow(path, flow) -> None:
    flow = np.asarray(flow, dtype="<f4")
    if flow.ndim != 3 or flow.shape[2] != 2:
        raise InvalidInputError("flow must have shape (H, W, 2)")
    header = FLOW_MAGIC + np.array([flow.shape[1], flow.shape[0]], dtype="<i4").tobytes()
    Path(path).write_bytes(header + flow.tobytes())


def _entry_lines(values: np.ndarray) -> list[str]:
    return [f"w{i + 1} {v:.17g}" for i, v in enumerate(values)]


def weights_checksum(values) -> str:
    text = "\n".join(_entry_lines(np.asarray(values, float)))
    return hashlib.sha256(text.encode()).hexdigest()


def write_weights(path, w: WeightVector) -> None:
    lines = [f"layout {w.layout}", *_entry_lines(w.values), f"checksum sha256:{weights_checksum(w.values)}"]
    Path(path).write_text("\n".join(lines) + "\n")


def read_weights(path) -> WeightVector:
    layout, entries, checksum = None, [], None
    for raw in Path(path).read_text().splitlines():
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, _, value = line.partition(" ")
        value = value.strip()
        if key == "layout":
            layout = value
        elif key == "checksum":
            checksum = value.removeprefix("sha256:")
        elif key.startswith("w") and key[1:].isdigit():
            if int(key[1:]) != len(entries) + 1:
                raise InvalidInputError(f"{path}: weight entries out of order at {key}")
            entries.append(float(value))
        else:
            raise InvalidInputError(f"{path}: unexpected line {raw!r}")
    if layout is None:
        raise InvalidInputError(f"{path}: missing layout line")
    values = np.array(entries)
    if checksum is not None and checksum != weights_checksum(values):
        raise InvalidInputError(f"{path}: checksum mismatch, weight file is corrupted")
    return WeightVector(values, layout)


@dataclass
class FrameRecord:
    frame_id: str
    image: Path | None = None
    gt: Path | None = None
    prob: Path | None = None
    edges: Path | None = None
    depth: Path | None = None
    flow: Path | None = None

    def require(self, asset: str) -> Path:
        path = getattr(self, asset)
        if path is None:
            raise InvalidInputError(f"frame {self.frame_id!r} has no {asset} asset")
        if not Path(path).is_file():
            raise InvalidInputError(f"frame {self.frame_id!r}: {asset} file {path} does not exist")
        return Path(path)


@dataclass
class SequenceManifest:
    """Ordered frame records; paths are stored relative to ``root``."""

    root: Path
    frames: list[FrameRecord] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.frames)

    def has(self, asset: str) -> bool:
        return all(getattr(f, asset) is not None for f in self.frames)


def read_manifest(path) -> SequenceManifest:
    """Tab-separated manifest with a header row; ``-`` marks a missing asset."""
    path = Path(path)
    if not path.is_file():
        raise InvalidInputError(f"missing manifest: {path}")
    lines = [ln for ln in path.read_text().splitlines() if ln.strip() and not ln.startswith("#")]
    if not lines:
        raise InvalidInputError(f"{path}: empty manifest")
    header = lines[0].split("\t")
    if header[0] != "frame_id" or any(col not in ASSETS for col in header[1:]):
        raise InvalidInputError(f"{path}: bad manifest header {header}")
    frames = []
    for ln in lines[1:]:
        cells = ln.split("\t")
        if len(cells) != len(header):
            raise InvalidInputError(f"{path}: row has {len(cells)} fields, expected {len(header)}")
        rec = FrameRecord(cells[0])
        for col, cell in zip(header[1:], cells[1:]):
            if cell != MISSING:
                setattr(rec, col, path.parent / cell)
        frames.append(rec)
    return SequenceManifest(path.parent, frames)


def write_manifest(path, manifest: SequenceManifest) -> None:
    path = Path(path)
    rows = ["\t".join(("frame_id",) + ASSETS)]
    for rec in manifest.frames:
        cells = [rec.frame_id]
        for asset in ASSETS:
            p = getattr(rec, asset)
            cells.append(MISSING if p is None else Path(p).relative_to(path.parent).as_posix())
        rows.append("\t".join(cells))
    path.write_text("\n".join(rows) + "\n")


def read_config(path) -> dict[str, str]:
    """Flat ``key = value`` text; ``#`` starts a comment."""
    config = {}
    for n, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep or not key.strip():
            raise InvalidInputError(f"{path}:{n}: expected 'key = value'")
        config[key.strip()] = value.strip()
    return config


def write_config(path, config: dict) -> None:
    Path(path).write_text("".join(f"{k} = {config[k]}\n" for k in sorted(config)))


def write_text_table(path, text: str) -> None:
    Path(path).write_text(text)


def dataclass_items(obj, prefix: str) -> Iterable[tuple[str, object]]:
    for f in fields(obj):
        yield f"{prefix}.{f.name}", getattr(obj, f.name)
