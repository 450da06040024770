"""Per-task losses and evaluation metrics.

Segmentation and motion use pixel-wise cross-entropy over channel logits
(motion is the two-class case). Depth uses a Huber penalty. Both losses
reduce by the mean over batch and pixels so their scale does not drift
with batch size. Metrics are plain floats, not graph nodes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import ShapeError, Tensor


class LabelError(ValueError):
    """Label map holds ids outside the valid class range."""


@dataclass(frozen=True)
class HuberParams:
    """Transition point between the quadratic and linear penalty branches."""

    delta: float = 250.0

    def __post_init__(self):
        if not (self.delta > 0):
            raise ValueError(f"delta must be positive, got {self.delta}")


def _as_label_array(labels, num_classes: int) -> np.ndarray:
    arr = np.asarray(labels)
    if not np.issubdtype(arr.dtype, np.integer):
        raise LabelError(f"labels must be integers, got dtype {arr.dtype}")
    if arr.size and (arr.min() < 0 or arr.max() >= num_classes):
        raise LabelError(
            f"label ids must lie in [0, {num_classes}), got range "
            f"[{arr.min()}, {arr.max()}]")
    return arr


def cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean over batch and pixels of -log softmax probability of the true
    class. The softmax is fused and max-subtracted, so huge logits stay
    finite. Differentiable w.r.t. logits."""
    if logits.data.ndim != 4:
        raise ShapeError(f"logits must be N,C,H,W, got {logits.data.shape}")
    n, c, h, w = logits.data.shape
    lab = _as_label_array(labels, c)
    if lab.shape != (n, h, w):
        raise ShapeError(f"labels shape {lab.shape} must be {(n, h, w)}")

    z = logits.data - logits.data.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1, keepdims=True))
    z_true = np.take_along_axis(z, lab[:, None], axis=1)
    per_pixel = lse - z_true
    val = np.asarray(per_pixel.mean(), dtype=logits.data.dtype)

    def backward_fn(out, logits=logits, z=z, lse=lse, lab=lab):
        p = np.exp(z - lse)
        idx = lab[:, None]
        np.put_along_axis(p, idx, np.take_along_axis(p, idx, axis=1) - 1.0, axis=1)
        p *= out.grad / (lab.size)
        logits._accum(p, own=True)

    return Tensor._op(val, (logits,), backward_fn)


def _align_target(pred: Tensor, target) -> np.ndarray:
    arr = np.asarray(target, dtype=pred.data.dtype)
    if arr.shape == pred.data.shape:
        return arr
    # regression heads emit a singleton channel the targets omit
    if (pred.data.ndim == arr.ndim + 1 and pred.data.shape[1] == 1
            and pred.data.shape[:1] + pred.data.shape[2:] == arr.shape):
        return arr.reshape(pred.data.shape)
    raise ShapeError(
        f"target shape {arr.shape} does not match prediction {pred.data.shape}")


def huber(pred: Tensor, target, params: HuberParams = HuberParams()) -> Tensor:
    """Mean Huber penalty on r = target - pred: quadratic r^2/2 inside
    |r| <= delta, linear delta*(|r| - delta/2) outside. Value and slope
    agree at the boundary."""
    t = _align_target(pred, target)
    if not np.all(np.isfinite(t)):
        raise ValueError("regression targets must be finite")
    delta = pred.data.dtype.type(params.delta)
    r = t - pred.data
    absr = np.abs(r)
    quad = absr <= delta
    per = np.where(quad, 0.5 * r * r, delta * (absr - 0.5 * delta))
    val = np.asarray(per.mean(), dtype=pred.data.dtype)

    def backward_fn(out, pred=pred, r=r, quad=quad, delta=delta):
        # d/dpred = -r on the quadratic branch, -delta*sign(r) on the linear
        g = np.where(quad, -r, -delta * np.sign(r))
        g *= out.grad / r.size
        pred._accum(g, own=True)

    return Tensor._op(val, (pred,), backward_fn)


def pixel_accuracy(pred, truth) -> float:
    """Fraction of pixels whose predicted class equals the truth. Accepts
    class-id maps directly or channel scores (argmax is taken)."""
    p = pred.data if isinstance(pred, Tensor) else np.asarray(pred)
    t = np.asarray(truth)
    if p.ndim == t.ndim + 1:
        p = p.argmax(axis=1)
    if p.shape != t.shape:
        raise ShapeError(f"prediction shape {p.shape} must match truth {t.shape}")
    if t.size == 0:
        raise ValueError("empty label map")
    return float(np.mean(p == t))


def regression_accuracy(pred, target, rel_tol: float = 0.1,
                        abs_floor: float = 1e-3) -> float:
    """Fraction of pixels where |pred - target| <= max(rel_tol*|target|,
    abs_floor)."""
    p = pred.data if isinstance(pred, Tensor) else np.asarray(pred, dtype=np.float64)
    t = np.asarray(target, dtype=np.float64)
    if p.shape != t.shape:
        if p.ndim == t.ndim + 1 and p.shape[1] == 1 and p.shape[:1] + p.shape[2:] == t.shape:
            p = p.reshape(t.shape)
        else:
            raise ShapeError(f"prediction shape {p.shape} must match target {t.shape}")
    if t.size == 0:
        raise ValueError("empty target map")
    tol = np.maximum(rel_tol * np.abs(t), abs_floor)
    return float(np.mean(np.abs(np.asarray(p, dtype=np.float64) - t) <= tol))
