"""Multi-stream convolutional model: one shared encoder applied to each
input frame, per-level feature aggregation across frames, and one small
decoder per task.

The encoder is three blocks of conv3x3 -> relu -> maxpool, with channel
widths (c, 2c, 4c), tapped after each block at strides 2, 4, 8. Frames
share the single encoder parameter set. Each decoder projects the three
aggregated levels to a common width with 1x1 convs, walks up from the
deepest level through three nearest-neighbor x2 upsamples with skip
additions, and finishes with a 1x1 head: softmax channels for
segmentation (C classes) and motion (2 classes), a softplus single
channel for depth.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass

import numpy as np

from .tensor import (
    ShapeError,
    Tensor,
    add,
    concat_channels,
    conv2d,
    maxpool2d,
    relu,
    softmax_channels,
    softplus,
    upsample_nearest,
)

TASKS = ("segmentation", "depth", "motion")
AGGREGATIONS = ("concat", "sum")

CHECKPOINT_FORMAT = "geomtl-checkpoint"
CHECKPOINT_VERSION = 1


class CheckpointError(ValueError):
    """Checkpoint file is missing, truncated, or inconsistent."""


@dataclass(frozen=True)
class EncoderConfig:
    """Shared encoder shape: three conv blocks with doubling channels."""

    base_channels: int = 8
    levels: int = 3
    kernel: int = 3

    def __post_init__(self):
        if self.levels != 3:
            raise ValueError(f"encoder is fixed at 3 levels, got {self.levels}")
        if self.kernel != 3:
            raise ValueError(f"encoder kernel is fixed at 3, got {self.kernel}")
        if self.base_channels < 1:
            raise ValueError(
                f"base_channels must be positive, got {self.base_channels}")


@dataclass(frozen=True)
class ParamCountReport:
    encoder_params: int
    decoder_params: dict
    total: int


def _head_channels(task: str, num_classes: int) -> int:
    if task == "segmentation":
        return num_classes
    if task == "depth":
        return 1
    if task == "motion":
        return 2
    raise ValueError(f"unknown task '{task}'; valid tasks: {', '.join(TASKS)}")


class MultiStreamModel:
    """Holds the parameter dict and runs the forward pass. Construct via
    build_model so initialization stays deterministic."""

    def __init__(self, enc: EncoderConfig, tasks: tuple, num_frames: int,
                 aggregation: str, num_classes: int, decoder_channels: int,
                 seed: int, dtype, params: dict):
        self.enc = enc
        self.tasks = tasks
        self.num_frames = num_frames
        self.aggregation = aggregation
        self.num_classes = num_classes
        self.decoder_channels = decoder_channels
        self.seed = seed
        self.dtype = np.dtype(dtype)
        self.params = params

    def parameters(self) -> list:
        return list(self.params.values())

    # ---- forward ---------------------------------------------------------

    def _encode(self, frame: Tensor) -> list:
        levels = []
        h = frame
        for b in (1, 2, 3):
            h = conv2d(h, self.params[f"encoder.block{b}.conv.weight"],
                       self.params[f"encoder.block{b}.conv.bias"])
            h = relu(h)
            h = maxpool2d(h)
            levels.append(h)
        return levels

    def forward(self, frames, logits: bool = False) -> dict:
        """Run all frames through the shared encoder, aggregate the three
        feature levels across frames, and decode per task. Returns a dict
        task -> output at full input resolution. With logits=True the
        classification heads skip their softmax (for a fused loss); depth
        always passes through softplus."""
        if len(frames) != self.num_frames:
            raise ShapeError(
                f"model expects {self.num_frames} frame(s), got {len(frames)}")
        first = frames[0].data
        if first.ndim != 4 or first.shape[1] != 3:
            raise ShapeError(f"frames must be N,3,H,W, got {first.shape}")
        n, _, h, w = first.shape
        if h % 8 or w % 8:
            raise ShapeError(f"spatial dims must be divisible by 8, got {h}x{w}")
        for f in frames[1:]:
            if f.data.shape != first.shape:
                raise ShapeError(
                    f"frames disagree in shape: {first.shape} vs {f.data.shape}")

        streams = [self._encode(f) for f in frames]
        agg = []
        for lvl in range(3):
            feats = [s[lvl] for s in streams]
            if len(feats) == 1:
                agg.append(feats[0])
            elif self.aggregation == "concat":
                agg.append(concat_channels(feats))
            else:
                agg.append(add(feats))

        out = {}
        for task in self.tasks:
            x = self._lateral(task, 3, agg[2])
            x = upsample_nearest(x)
            x = add([x, self._lateral(task, 2, agg[1])])
            x = upsample_nearest(x)
            x = add([x, self._lateral(task, 1, agg[0])])
            x = upsample_nearest(x)
            head = conv2d(x, self.params[f"decoder.{task}.head.weight"],
                          self.params[f"decoder.{task}.head.bias"])
            if task == "depth":
                out[task] = softplus(head)
            elif logits:
                out[task] = head
            else:
                out[task] = softmax_channels(head)
        return out

    def _lateral(self, task: str, level: int, x: Tensor) -> Tensor:
        return conv2d(x, self.params[f"decoder.{task}.lateral{level}.weight"],
                      self.params[f"decoder.{task}.lateral{level}.bias"])

    # ---- accounting --------------------------------------------------------

    def count_params(self) -> ParamCountReport:
        encoder = sum(p.data.size for name, p in self.params.items()
                      if name.startswith("encoder."))
        decoders = {}
        for task in self.tasks:
            prefix = f"decoder.{task}."
            decoders[task] = sum(p.data.size for name, p in self.params.items()
                                 if name.startswith(prefix))
        return ParamCountReport(encoder_params=encoder, decoder_params=decoders,
                                total=encoder + sum(decoders.values()))

    def config_dict(self) -> dict:
        return {
            "base_channels": self.enc.base_channels,
            "levels": self.enc.levels,
            "kernel": self.enc.kernel,
            "tasks": list(self.tasks),
            "num_frames": self.num_frames,
            "aggregation": self.aggregation,
            "num_classes": self.num_classes,
            "decoder_channels": self.decoder_channels,
            "seed": self.seed,
            "dtype": self.dtype.name,
        }


def build_model(enc: EncoderConfig, tasks, num_frames: int, aggregation: str,
                num_classes: int, seed: int, decoder_channels: int | None = None,
                dtype=np.float64) -> MultiStreamModel:
    """Construct the model with parameters drawn deterministically from the
    seed (He fan-in normals for weights, zero biases). Channel widths at
    the three tap levels are (c, 2c, 4c) per stream; two-frame models with
    concat aggregation double each before the decoders."""
    tasks = tuple(tasks)
    if not tasks:
        raise ValueError("need at least one task")
    if len(set(tasks)) != len(tasks):
        raise ValueError(f"duplicate task names in {list(tasks)}")
    for t in tasks:
        _head_channels(t, 4)
    if num_frames not in (1, 2):
        raise ValueError(f"num_frames must be 1 or 2, got {num_frames}")
    if aggregation not in AGGREGATIONS:
        raise ValueError(
            f"aggregation must be one of {', '.join(AGGREGATIONS)}, "
            f"got '{aggregation}'")
    if num_classes < 2:
        raise ValueError(f"num_classes must be at least 2, got {num_classes}")
    dtype = np.dtype(dtype)
    if dtype not in (np.dtype(np.float32), np.dtype(np.float64)):
        raise ValueError(f"dtype must be float32 or float64, got {dtype}")

    c = enc.base_channels
    if decoder_channels is None:
        decoder_channels = 2 * c
    if decoder_channels < 1:
        raise ValueError(
            f"decoder_channels must be positive, got {decoder_channels}")

    widths = (c, 2 * c, 4 * c)
    mult = num_frames if aggregation == "concat" else 1
    rng = np.random.default_rng(seed)
    params: dict = {}

    def conv_param(name: str, cout: int, cin: int, k: int):
        fan_in = cin * k * k
        w = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(cout, cin, k, k))
        params[f"{name}.weight"] = Tensor(w.astype(dtype), requires_grad=True)
        params[f"{name}.bias"] = Tensor(np.zeros(cout, dtype=dtype),
                                        requires_grad=True)

    cin = 3
    for b, cout in enumerate(widths, start=1):
        conv_param(f"encoder.block{b}.conv", cout, cin, enc.kernel)
        cin = cout

    for task in tasks:
        for level, width in enumerate(widths, start=1):
            conv_param(f"decoder.{task}.lateral{level}", decoder_channels,
                       width * mult, 1)
        conv_param(f"decoder.{task}.head",
                   _head_channels(task, num_classes), decoder_channels, 1)

    return MultiStreamModel(enc=enc, tasks=tasks, num_frames=num_frames,
                            aggregation=aggregation, num_classes=num_classes,
                            decoder_channels=decoder_channels, seed=seed,
                            dtype=dtype, params=params)


def _model_from_config(cfg: dict) -> MultiStreamModel:
    return build_model(
        EncoderConfig(base_channels=cfg["base_channels"], levels=cfg["levels"],
                      kernel=cfg["kernel"]),
        tasks=cfg["tasks"], num_frames=cfg["num_frames"],
        aggregation=cfg["aggregation"], num_classes=cfg["num_classes"],
        seed=cfg["seed"], decoder_channels=cfg["decoder_channels"],
        dtype=np.dtype(cfg["dtype"]))


def save_checkpoint(model: MultiStreamModel, path) -> None:
    """Single-file layout: 8-byte little-endian header length, JSON header
    (config echo plus name/shape/offset per parameter), then all parameter
    values as little-endian 8-byte reals in header order."""
    entries = []
    offset = 0
    blobs = []
    for name, p in model.params.items():
        raw = np.ascontiguousarray(p.data, dtype="<f8").tobytes()
        entries.append({"name": name, "shape": list(p.data.shape),
                        "offset": offset})
        offset += len(raw)
        blobs.append(raw)
    header = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "config": model.config_dict(),
        "params": entries,
        "payload_bytes": offset,
    }
    hb = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(struct.pack("<Q", len(hb)))
        f.write(hb)
        for raw in blobs:
            f.write(raw)


def load_checkpoint(path) -> MultiStreamModel:
    try:
        with open(path, "rb") as f:
            blob = f.read()
    except OSError as e:
        raise CheckpointError(f"cannot read checkpoint {path}: {e}") from e
    if len(blob) < 8:
        raise CheckpointError(f"checkpoint {path} is truncated")
    (hlen,) = struct.unpack("<Q", blob[:8])
    if len(blob) < 8 + hlen:
        raise CheckpointError(f"checkpoint {path} header is truncated")
    try:
        header = json.loads(blob[8:8 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointError(f"checkpoint {path} header is not valid JSON") from e
    if header.get("format") != CHECKPOINT_FORMAT:
        raise CheckpointError(
            f"checkpoint {path} has format {header.get('format')!r}, "
            f"expected {CHECKPOINT_FORMAT!r}")
    if header.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(
            f"checkpoint {path} is version {header.get('version')}, "
            f"expected {CHECKPOINT_VERSION}")
    payload = blob[8 + hlen:]
    if len(payload) != header.get("payload_bytes"):
        raise CheckpointError(
            f"checkpoint {path} payload is {len(payload)} bytes, header "
            f"promises {header.get('payload_bytes')}")

    try:
        model = _model_from_config(header["config"])
    except (KeyError, TypeError) as e:
        raise CheckpointError(f"checkpoint {path} config is incomplete: {e}") from e
    saved = {e["name"]: e for e in header["params"]}
    if set(saved) != set(model.params):
        raise CheckpointError(
            f"checkpoint {path} parameter names do not match its config")
    for name, p in model.params.items():
        e = saved[name]
        shape = tuple(e["shape"])
        if shape != p.data.shape:
            raise CheckpointError(
                f"checkpoint {path} parameter {name} has shape {shape}, "
                f"model expects {p.data.shape}")
        nbytes = int(np.prod(shape, dtype=np.int64)) * 8
        start = e["offset"]
        raw = payload[start:start + nbytes]
        if len(raw) != nbytes:
            raise CheckpointError(
                f"checkpoint {path} payload too short for parameter {name}")
        arr = np.frombuffer(raw, dtype="<f8").reshape(shape)
        p.data = np.ascontiguousarray(arr, dtype=model.dtype)
    return model
