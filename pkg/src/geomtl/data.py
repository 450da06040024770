"""Seeded synthetic frame-pair scenes with exact segmentation, depth, and
motion ground truth, plus a simple on-disk dataset format.

Each sample is two consecutive frames of the same scene. Objects are flat
shapes (rectangle, disk, triangle) at random depths; some translate by a
few pixels between frames. Rendering runs far-to-near, so nearer objects
overwrite farther ones and every label map agrees with what is visible in
the current frame. Class identity is carried by hue and depth by
brightness, which makes all three tasks learnable from appearance.

Per-sample RNG streams are derived from (seed, sample_index), so a dataset
is bit-reproducible regardless of generation order.
"""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

INDEX_NAME = "index.json"
DATASET_FORMAT = "geomtl-dataset"
DATASET_VERSION = 1
REAL_DTYPE = "<f8"
LABEL_DTYPE = "<i4"

_PLACEMENT_TRIES = 200
_SHAPE_KINDS = ("rectangle", "disk", "triangle")


class DataFormatError(ValueError):
    """Dataset directory or payload does not match the documented layout."""


class PlacementError(RuntimeError):
    """Objects could not be placed within the retry budget (spec too crowded)."""


@dataclass(frozen=True)
class SceneSpec:
    """Knobs for the scene generator. Resolution must be divisible by 8 to
    match the model's three pooling stages."""

    height: int = 64
    width: int = 96
    num_classes: int = 4
    min_objects: int = 2
    max_objects: int = 5
    min_size: int = 5
    max_size: int = 12
    depth_min: float = 1.0
    depth_max: float = 100.0
    moving_fraction: float = 0.5
    max_displacement: int = 3
    noise_sigma: float = 0.02
    seed: int = 0

    def __post_init__(self):
        if self.height % 8 or self.width % 8:
            raise ValueError(
                f"resolution must be divisible by 8, got "
                f"{self.height}x{self.width}")
        if not (2 <= self.num_classes <= 20):
            raise ValueError(
                f"num_classes must lie in [2, 20], got {self.num_classes}")
        if not (1 <= self.min_objects <= self.max_objects):
            raise ValueError(
                f"need 1 <= min_objects <= max_objects, got "
                f"{self.min_objects}..{self.max_objects}")
        if not (2 <= self.min_size <= self.max_size):
            raise ValueError(
                f"need 2 <= min_size <= max_size, got "
                f"{self.min_size}..{self.max_size}")
        if self.max_size >= min(self.height, self.width) // 2:
            raise ValueError("max_size too large for the resolution")
        if not (0 < self.depth_min < self.depth_max):
            raise ValueError(
                f"need 0 < depth_min < depth_max, got "
                f"[{self.depth_min}, {self.depth_max}]")
        if not (0.0 <= self.moving_fraction <= 1.0):
            raise ValueError(
                f"moving_fraction must lie in [0, 1], got {self.moving_fraction}")
        if self.max_displacement < 1:
            raise ValueError(
                f"max_displacement must be at least 1, got {self.max_displacement}")
        if self.noise_sigma < 0:
            raise ValueError(f"noise_sigma must be >= 0, got {self.noise_sigma}")


@dataclass
class FramePairSample:
    """Two rendered frames plus labels aligned to frame_curr: seg class ids,
    per-pixel depth of the visible surface, and a moving-object mask."""

    frame_prev: np.ndarray  # (3,H,W) float in [0,1]
    frame_curr: np.ndarray  # (3,H,W) float in [0,1]
    seg: np.ndarray         # (H,W) int, 0 = background
    depth: np.ndarray       # (H,W) float
    motion: np.ndarray      # (H,W) int in {0,1}


@dataclass(frozen=True)
class _SceneObject:
    class_id: int
    kind: str
    row: int
    col: int
    size: int
    depth: float
    vel: tuple  # (drow, dcol); (0, 0) for static objects


def _hsv_to_rgb(h: float, s: float, v: float) -> np.ndarray:
    i = int(h * 6.0) % 6
    f = h * 6.0 - int(h * 6.0)
    p, q, t = v * (1 - s), v * (1 - s * f), v * (1 - s * (1 - f))
    rgb = [(v, t, p), (q, v, p), (p, v, t), (p, q, v), (t, p, v), (v, p, q)][i]
    return np.asarray(rgb, dtype=np.float64)


def _class_color(class_id: int, num_classes: int, depth: float,
                 spec: SceneSpec) -> np.ndarray:
    # hue encodes the class; brightness falls with depth so depth can be
    # read off appearance
    hue = (class_id - 1) / max(num_classes - 1, 1)
    rel = (depth - spec.depth_min) / (spec.depth_max - spec.depth_min)
    value = 0.95 - 0.65 * rel
    return _hsv_to_rgb(hue, 0.85, value)


def _footprint(obj_kind: str, row: int, col: int, size: int,
               height: int, width: int) -> np.ndarray:
    """Boolean (H,W) mask of the shape centered at (row, col); size is the
    half-extent in pixels."""
    rr, cc = np.mgrid[0:height, 0:width]
    dr, dc = rr - row, cc - col
    if obj_kind == "rectangle":
        return (np.abs(dr) <= size) & (np.abs(dc) <= size * 1.3)
    if obj_kind == "disk":
        return dr * dr + dc * dc <= size * size
    if obj_kind == "triangle":
        # upward-pointing: widens linearly from apex to base
        return (dr >= -size) & (dr <= size) & (np.abs(dc) <= (dr + size) / 2.0)
    raise ValueError(f"unknown shape kind {obj_kind!r}")


def _fits(row: int, col: int, size: int, spec: SceneSpec) -> bool:
    pad = int(size * 1.3) + 1
    return (pad <= row < spec.height - pad) and (pad <= col < spec.width - pad)


def _sample_objects(spec: SceneSpec, rng: np.random.Generator) -> list:
    count = int(rng.integers(spec.min_objects, spec.max_objects + 1))
    objects = []
    occupied = np.zeros((spec.height, spec.width), dtype=bool)
    for i in range(count):
        for _ in range(_PLACEMENT_TRIES):
            class_id = int(rng.integers(1, spec.num_classes))
            kind = _SHAPE_KINDS[(class_id - 1) % len(_SHAPE_KINDS)]
            size = int(rng.integers(spec.min_size, spec.max_size + 1))
            row = int(rng.integers(0, spec.height))
            col = int(rng.integers(0, spec.width))
            depth = float(rng.uniform(spec.depth_min, spec.depth_max))
            moving = bool(rng.random() < spec.moving_fraction)
            if moving:
                while True:
                    vel = (int(rng.integers(-spec.max_displacement,
                                            spec.max_displacement + 1)),
                           int(rng.integers(-spec.max_displacement,
                                            spec.max_displacement + 1)))
                    if vel != (0, 0):
                        break
            else:
                vel = (0, 0)
            if not (_fits(row, col, size, spec)
                    and _fits(row - vel[0], col - vel[1], size, spec)):
                continue
            mask = _footprint(kind, row, col, size, spec.height, spec.width)
            # keep every object at least half visible at placement time
            if occupied[mask].sum() > 0.5 * mask.sum():
                continue
            occupied |= mask
            objects.append(_SceneObject(class_id=class_id, kind=kind, row=row,
                                        col=col, size=size, depth=depth,
                                        vel=vel))
            break
        else:
            raise PlacementError(
                f"failed to place object {i + 1} of {count} after "
                f"{_PLACEMENT_TRIES} tries; reduce object count or size")
    return objects


_BACKGROUND_COLOR = np.asarray([0.18, 0.18, 0.2])


def _render_sample(spec: SceneSpec, rng: np.random.Generator) -> FramePairSample:
    h, w = spec.height, spec.width
    objects = _sample_objects(spec, rng)

    frame_prev = np.tile(_BACKGROUND_COLOR[:, None, None], (1, h, w))
    frame_curr = frame_prev.copy()
    seg = np.zeros((h, w), dtype=np.int64)
    depth = np.full((h, w), spec.depth_max, dtype=np.float64)
    motion = np.zeros((h, w), dtype=np.int64)

    # painter's algorithm: far to near, so the nearest object owns each pixel
    for obj in sorted(objects, key=lambda o: -o.depth):
        color = _class_color(obj.class_id, spec.num_classes, obj.depth, spec)
        mask_curr = _footprint(obj.kind, obj.row, obj.col, obj.size, h, w)
        mask_prev = _footprint(obj.kind, obj.row - obj.vel[0],
                               obj.col - obj.vel[1], obj.size, h, w)
        frame_curr[:, mask_curr] = color[:, None]
        frame_prev[:, mask_prev] = color[:, None]
        seg[mask_curr] = obj.class_id
        depth[mask_curr] = obj.depth
        motion[mask_curr] = 1 if obj.vel != (0, 0) else 0

    if spec.noise_sigma > 0:
        frame_prev = frame_prev + rng.normal(0, spec.noise_sigma, frame_prev.shape)
        frame_curr = frame_curr + rng.normal(0, spec.noise_sigma, frame_curr.shape)
    return FramePairSample(
        frame_prev=np.clip(frame_prev, 0.0, 1.0),
        frame_curr=np.clip(frame_curr, 0.0, 1.0),
        seg=seg, depth=depth, motion=motion)


def generate_sample(spec: SceneSpec, index: int) -> FramePairSample:
    """Render one sample; the RNG stream depends only on (spec.seed, index)."""
    return _render_sample(spec, np.random.default_rng((spec.seed, index)))


def generate_dataset(spec: SceneSpec, count: int) -> list:
    if count < 1:
        raise ValueError(f"count must be at least 1, got {count}")
    return [generate_sample(spec, i) for i in range(count)]


# ---- on-disk format -------------------------------------------------------------

_RECORD_FIELDS = (
    ("frame_prev", REAL_DTYPE, "3,H,W"),
    ("frame_curr", REAL_DTYPE, "3,H,W"),
    ("seg", LABEL_DTYPE, "H,W"),
    ("depth", REAL_DTYPE, "H,W"),
    ("motion", LABEL_DTYPE, "H,W"),
)


def _field_shape(spec_shape: str, h: int, w: int) -> tuple:
    return tuple(h if s == "H" else w if s == "W" else int(s)
                 for s in spec_shape.split(","))


def write_dataset(samples: Sequence[FramePairSample], directory, spec: SceneSpec,
                  png: bool = False) -> None:
    """Write `index.json` plus one binary record per sample under samples/.
    Records concatenate the five fields row-major in the dtypes the index
    declares. With png=True the frames and a gray-coded seg map are also
    mirrored as PNGs for eyeballing."""
    directory = os.fspath(directory)
    os.makedirs(os.path.join(directory, "samples"), exist_ok=True)
    names = []
    for i, s in enumerate(samples):
        rel = f"samples/{i:06d}.bin"
        names.append(rel)
        with open(os.path.join(directory, rel), "wb") as f:
            f.write(np.ascontiguousarray(s.frame_prev, dtype=REAL_DTYPE).tobytes())
            f.write(np.ascontiguousarray(s.frame_curr, dtype=REAL_DTYPE).tobytes())
            f.write(np.ascontiguousarray(s.seg, dtype=LABEL_DTYPE).tobytes())
            f.write(np.ascontiguousarray(s.depth, dtype=REAL_DTYPE).tobytes())
            f.write(np.ascontiguousarray(s.motion, dtype=LABEL_DTYPE).tobytes())
        if png:
            _write_pngs(os.path.join(directory, "samples"), i, s)
    index = {
        "format": DATASET_FORMAT,
        "version": DATASET_VERSION,
        "count": len(names),
        "height": spec.height,
        "width": spec.width,
        "num_classes": spec.num_classes,
        "endianness": "little",
        "shape_order": "row-major, channels first for frames",
        "record_fields": [
            {"name": n, "dtype": d, "shape": sh} for n, d, sh in _RECORD_FIELDS],
        "samples": names,
        "spec": asdict(spec),
    }
    tmp = os.path.join(directory, INDEX_NAME + ".tmp")
    with open(tmp, "w", encoding="utf-8") as f:
        json.dump(index, f, sort_keys=True, indent=2)
        f.write("\n")
    os.replace(tmp, os.path.join(directory, INDEX_NAME))


def _write_pngs(sample_dir: str, i: int, s: FramePairSample) -> None:
    from PIL import Image

    def to_img(arr):
        return Image.fromarray(
            (np.clip(arr, 0, 1) * 255).astype(np.uint8).transpose(1, 2, 0))

    to_img(s.frame_prev).save(os.path.join(sample_dir, f"{i:06d}_prev.png"))
    to_img(s.frame_curr).save(os.path.join(sample_dir, f"{i:06d}_curr.png"))
    scale = max(int(s.seg.max()), 1)
    Image.fromarray((s.seg * (255 // scale)).astype(np.uint8)).save(
        os.path.join(sample_dir, f"{i:06d}_seg.png"))


def load_dataset(directory) -> tuple:
    """Read a dataset directory back; returns (samples, index_dict). The
    round trip through write_dataset is bit-exact."""
    directory = os.fspath(directory)
    index_path = os.path.join(directory, INDEX_NAME)
    if not os.path.exists(index_path):
        raise DataFormatError(f"no index found at {index_path}")
    try:
        with open(index_path, "r", encoding="utf-8") as f:
            index = json.load(f)
    except json.JSONDecodeError as e:
        raise DataFormatError(f"index {index_path} is not valid JSON: {e}") from e
    if index.get("format") != DATASET_FORMAT:
        raise DataFormatError(
            f"index {index_path} declares format {index.get('format')!r}, "
            f"expected {DATASET_FORMAT!r}")
    if index.get("version") != DATASET_VERSION:
        raise DataFormatError(
            f"index {index_path} is version {index.get('version')}, "
            f"expected {DATASET_VERSION}")
    for key in ("height", "width", "num_classes", "samples", "record_fields"):
        if key not in index:
            raise DataFormatError(f"index {index_path} is missing '{key}'")
    h, w = index["height"], index["width"]

    fields = [(f["name"], f["dtype"], _field_shape(f["shape"], h, w))
              for f in index["record_fields"]]
    record_bytes = sum(np.dtype(d).itemsize * int(np.prod(sh))
                       for _, d, sh in fields)
    samples = []
    for rel in index["samples"]:
        path = os.path.join(directory, rel)
        if not os.path.exists(path):
            raise DataFormatError(f"index references missing payload {path}")
        with open(path, "rb") as f:
            blob = f.read()
        if len(blob) != record_bytes:
            raise DataFormatError(
                f"payload {path} is {len(blob)} bytes, expected {record_bytes}")
        parts = {}
        off = 0
        for name, dt, sh in fields:
            n = np.dtype(dt).itemsize * int(np.prod(sh))
            parts[name] = np.frombuffer(blob[off:off + n], dtype=dt).reshape(sh)
            off += n
        samples.append(FramePairSample(
            frame_prev=np.ascontiguousarray(parts["frame_prev"], dtype=np.float64),
            frame_curr=np.ascontiguousarray(parts["frame_curr"], dtype=np.float64),
            seg=np.ascontiguousarray(parts["seg"], dtype=np.int64),
            depth=np.ascontiguousarray(parts["depth"], dtype=np.float64),
            motion=np.ascontiguousarray(parts["motion"], dtype=np.int64)))
    return samples, index


def split(samples: Sequence, train_fraction: float, seed: int) -> tuple:
    """Deterministic shuffled split into (train, val); both sides non-empty."""
    if not (0.0 < train_fraction < 1.0):
        raise ValueError(
            f"train_fraction must lie strictly in (0, 1), got {train_fraction}")
    n = len(samples)
    n_train = int(n * train_fraction)
    if n_train == 0 or n_train == n:
        raise ValueError(
            f"split of {n} samples at fraction {train_fraction} leaves one "
            f"side empty")
    perm = np.random.default_rng(seed).permutation(n)
    train = [samples[i] for i in perm[:n_train]]
    val = [samples[i] for i in perm[n_train:]]
    return train, val
