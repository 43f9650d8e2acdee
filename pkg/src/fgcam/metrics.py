"""Faithfulness and localization metrics.

All metrics consume a model, a preprocessed image, an explanation and a
blurred reference image; "removing" a pixel means replacing its value
(identically across channels) with the blurred value at that site.
Pixel ranking is by explanation value, descending, ties broken by the
lowest flat index.
"""

import logging
import math
from dataclasses import dataclass

import numpy as np

from . import tensor_core as tc
from .cam_backends import Explanation
from .errors import ShapeError
from .model_graph import ModelGraph, forward_logits

_log = logging.getLogger(__name__)


@dataclass
class EvalRecord:
    """Softmax of the target class before (y) and after (o) perturbation."""

    y: float
    o: float
    class_index: int


@dataclass
class Curve:
    xs: np.ndarray
    ys: np.ndarray


@dataclass
class BBox:
    """Pixel box in the model-input frame, half-open: [x1,x2) x [y1,y2)."""

    x1: int
    y1: int
    x2: int
    y2: int

    def validate(self, height: int, width: int) -> None:
        if not (0 <= self.x1 < self.x2 <= width and 0 <= self.y1 < self.y2 <= height):
            raise ShapeError(f"bbox {self} invalid for {width}x{height} image")

    def area_fraction(self, height: int, width: int) -> float:
        return (self.x2 - self.x1) * (self.y2 - self.y1) / float(height * width)


def average_drop_increase(records: list[EvalRecord]) -> tuple[float, float]:
    """Average Drop = mean of max(0, y-o)/y * 100; Average Increase = the
    percentage of strictly increased scores.  Records with y <= 0 are
    excluded with a warning (the drop ratio is undefined there)."""
    usable = [r for r in records if r.y > 0]
    excluded = len(records) - len(usable)
    if excluded:
        _log.warning("average_drop_increase: excluded %d records with y <= 0", excluded)
    if not usable:
        raise ValueError("average_drop_increase needs at least one record with y > 0")
    n = len(usable)
    drop = sum(max(0.0, r.y - r.o) / r.y for r in usable) * 100.0 / n
    increase = sum(1 for r in usable if r.y < r.o) * 100.0 / n
    return drop, increase


def _ranking(explanation: Explanation, height: int,
             width: int) -> tuple[np.ndarray, np.ndarray]:
    """Descending pixel order (stable in flat index) plus the map
    resized to image resolution."""
    m = explanation.map
    if m.shape != (height, width):
        m = tc.bilinear_resize(m[None].astype(np.float32), height, width)[0]
    return np.argsort(-m.ravel(), kind="stable"), m


def retain_top_half(image: np.ndarray, explanation: Explanation,
                    blurred: np.ndarray, fraction: float = 0.5) -> np.ndarray:
    """Keep the top-ranked fraction of pixel sites, blur the rest.

    In signed mode, when fewer pixels than the requested fraction are
    positive, exactly the positive pixels are retained instead.
    """
    _, h, w = image.shape
    order, m = _ranking(explanation, h, w)
    total = h * w
    keep = math.ceil(total * fraction)
    if explanation.signed:
        positive = int((m > 0).sum())
        if positive < keep:
            keep = positive
    mask = np.zeros(total, dtype=bool)
    mask[order[:keep]] = True
    mask = mask.reshape(h, w)
    return np.where(mask[None], image, blurred).astype(np.float32)


def perturbation_curve(model: ModelGraph, image: np.ndarray,
                       explanation: Explanation, class_index: int,
                       direction: str, step_pixels: int = 448,
                       blurred: np.ndarray | None = None,
                       blur_ksize: int = 51, blur_sigma: float = 50.0) -> Curve:
    """Deletion/insertion curve of the class softmax value.

    Deletion starts from the original image and blurs the most important
    pixels first; insertion starts from the fully blurred image and
    restores them.  The curve records the starting point and then one
    point per ``step_pixels`` perturbed (last step may be smaller).
    """
    if step_pixels < 1:
        raise ValueError(f"step_pixels must be >= 1, got {step_pixels}")
    if direction not in ("deletion", "insertion"):
        raise ValueError(f"direction must be deletion or insertion, got {direction!r}")
    if blurred is None:
        blurred = tc.gaussian_blur(image, blur_ksize, blur_sigma)
    _, h, w = image.shape
    order, _ = _ranking(explanation, h, w)
    total = h * w
    if direction == "deletion":
        current, source = image.copy(), blurred
    else:
        current, source = blurred.copy(), image

    flat_cur = current.reshape(image.shape[0], total)
    flat_src = source.reshape(image.shape[0], total)
    xs = [0.0]
    ys = [float(tc.softmax(forward_logits(model, current))[class_index])]
    done = 0
    while done < total:
        step = min(step_pixels, total - done)
        idx = order[done:done + step]
        flat_cur[:, idx] = flat_src[:, idx]
        done += step
        xs.append(done / total)
        ys.append(float(tc.softmax(forward_logits(model, current))[class_index]))
    return Curve(xs=np.asarray(xs), ys=np.asarray(ys))


def auc(curve: Curve) -> float:
    """Trapezoidal area under the curve over the [0, 1] x-range."""
    return float(np.trapezoid(curve.ys, curve.xs))


def overall_score(insertion_auc: float, deletion_auc: float) -> float:
    return insertion_auc - deletion_auc


def proportion(explanation: Explanation, bbox: BBox) -> float:
    """Share of (non-negative) explanation mass inside the box; the
    explanation must already be at image resolution."""
    m = np.maximum(explanation.map.astype(np.float64), 0.0)
    bbox.validate(*m.shape)
    total = m.sum()
    if total <= 0:
        return 0.0
    inside = m[bbox.y1:bbox.y2, bbox.x1:bbox.x2].sum()
    return float(inside / total)
