"""Saliency scoring: model-response curves and ground-truth IoU curves.

Pixels are ranked by descending saliency (ties broken by ascending pixel
index). For a quantile q, the top set holds the first ceil(q * n) ranked
pixels; top sets are nested along the grid. The response curves evaluate
the game on the top set (insertion) and on its complement (deletion); both
are jointly min-max rescaled to [0, 1] before trapezoidal integration so
the two areas stay comparable. IoU curves compare top sets against a
ground-truth pixel set and need no rescaling.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .explainer import SaliencyMap
from .games import Coalition
from .masking import GroundTruth

DEFAULT_GRID_CAP = 100


def default_grid(n: int) -> int:
    return min(n, DEFAULT_GRID_CAP)


def saliency_order(values: np.ndarray) -> np.ndarray:
    """Pixel indices by descending value, ties by ascending index."""
    values = np.asarray(values, dtype=np.float64)
    return np.lexsort((np.arange(len(values)), -values))


def quantile_sizes(n: int, grid: int) -> list[int]:
    """Top-set sizes ceil(k*n/grid) for k = 0..grid."""
    return [-(-k * n // grid) for k in range(grid + 1)]


def _prefix_masks(order: np.ndarray, sizes: list[int]) -> list[Coalition]:
    masks = []
    running = 0
    cursor = 0
    for size in sizes:
        while cursor < size:
            running |= 1 << int(order[cursor])
            cursor += 1
        masks.append(running)
    return masks


def _values_for_class(saliency, cls: int) -> np.ndarray:
    if isinstance(saliency, SaliencyMap):
        return saliency.values[cls]
    return np.asarray(saliency, dtype=np.float64)


def auc_curves(saliency, game, grid: int | None = None, cls: int = 0):
    """Insertion and deletion response areas for one class.

    Returns ``(auc_plus, auc_minus, curves)`` where ``curves`` maps
    "insertion" and "deletion" to (q, rescaled value) samples, plus the
    joint rescale bounds under "bounds".
    """
    values = _values_for_class(saliency, cls)
    n = len(values)
    if grid is None:
        grid = default_grid(n)
    if grid < 2:
        raise ValueError("grid must be at least 2")
    order = saliency_order(values)
    sizes = quantile_sizes(n, grid)
    qs = np.array([k / grid for k in range(grid + 1)])
    prefixes = _prefix_masks(order, sizes)
    full = prefixes[-1]
    batch = prefixes + [full ^ m for m in prefixes]
    worths = game.evaluate_batch(batch)[:, cls]
    insertion_raw = worths[: grid + 1]
    deletion_raw = worths[grid + 1 :]

    lo = float(min(insertion_raw.min(), deletion_raw.min()))
    hi = float(max(insertion_raw.max(), deletion_raw.max()))
    if hi > lo:
        insertion = (insertion_raw - lo) / (hi - lo)
        deletion = (deletion_raw - lo) / (hi - lo)
    else:
        insertion = np.zeros_like(insertion_raw)
        deletion = np.zeros_like(deletion_raw)

    auc_plus = float(np.trapezoid(insertion, qs))
    auc_minus = float(np.trapezoid(deletion, qs))
    curves = {
        "insertion": list(zip(qs.tolist(), insertion.tolist())),
        "deletion": list(zip(qs.tolist(), deletion.tolist())),
        "bounds": (lo, hi),
    }
    return auc_plus, auc_minus, curves


def _as_mask(pixels) -> Coalition:
    if isinstance(pixels, int):
        return pixels
    mask = 0
    for p in pixels:
        mask |= 1 << int(p)
    return mask


def iou(a, b) -> float:
    """Intersection over union of two pixel sets (bitmasks or iterables)."""
    a, b = _as_mask(a), _as_mask(b)
    union = a | b
    if union == 0:
        raise ValueError("IoU of two empty sets is undefined")
    return (a & b).bit_count() / union.bit_count()


def iou_curve(saliency, truth: GroundTruth, grid: int | None = None, cls: int = 0):
    """IoU of the top set against the true set, along the quantile grid.

    Returns ``(au_iou, max_iou, curve)``; the area uses the trapezoidal
    rule over q in [0, 1] and the maximum is taken over the samples.
    """
    values = _values_for_class(saliency, cls)
    n = len(values)
    if n != truth.n:
        raise ValueError(f"saliency covers {n} pixels, ground truth {truth.n}")
    if grid is None:
        grid = default_grid(n)
    if grid < 2:
        raise ValueError("grid must be at least 2")
    order = saliency_order(values)
    in_truth = np.array([(truth.mask >> int(p)) & 1 for p in order], dtype=np.int64)
    cum = np.concatenate([[0], np.cumsum(in_truth)])
    sizes = np.array(quantile_sizes(n, grid))
    qs = np.array([k / grid for k in range(grid + 1)])
    hits = cum[sizes]
    union = sizes + truth.size - hits
    union = np.maximum(union, 1)  # q = 0 with nonempty truth never divides by 0
    j = hits / union
    au_iou = float(np.trapezoid(j, qs))
    max_iou = float(j.max())
    curve = list(zip(qs.tolist(), j.tolist()))
    return au_iou, max_iou, curve


@dataclass
class ScoreReport:
    """Bundle of response and ground-truth scores with their curves."""

    auc_plus: float
    auc_minus: float
    au_iou: float | None
    max_iou: float | None
    curves: dict
    rescale_bounds: tuple[float, float]
    grid: int
    cls: int = 0
    meta: dict = field(default_factory=dict)

    def to_json(self) -> str:
        payload = {
            "auc_plus": self.auc_plus,
            "auc_minus": self.auc_minus,
            "au_iou": self.au_iou,
            "max_iou": self.max_iou,
            "curves": {k: v for k, v in self.curves.items()},
            "rescale_bounds": list(self.rescale_bounds),
            "grid": self.grid,
            "class": self.cls,
            "meta": self.meta,
        }
        return json.dumps(payload, sort_keys=True, indent=2)

    @staticmethod
    def from_json(text: str) -> "ScoreReport":
        payload = json.loads(text)
        curves = {
            k: [tuple(p) for p in v] if isinstance(v, list) else tuple(v)
            for k, v in payload["curves"].items()
        }
        return ScoreReport(
            auc_plus=payload["auc_plus"],
            auc_minus=payload["auc_minus"],
            au_iou=payload["au_iou"],
            max_iou=payload["max_iou"],
            curves=curves,
            rescale_bounds=tuple(payload["rescale_bounds"]),
            grid=payload["grid"],
            cls=payload.get("class", 0),
            meta=payload.get("meta", {}),
        )

    def curve_csv(self, name: str) -> str:
        lines = ["q,value"]
        for q, v in self.curves[name]:
            lines.append(f"{q!r},{v!r}")
        return "\n".join(lines) + "\n"


def score_report(
    saliency,
    game,
    truth: GroundTruth | None = None,
    grid: int | None = None,
    cls: int = 0,
) -> ScoreReport:
    """Response scores, plus IoU scores when a ground truth is given."""
    values = _values_for_class(saliency, cls)
    if grid is None:
        grid = default_grid(len(values))
    auc_plus, auc_minus, curves = auc_curves(values, game, grid, cls=cls)
    bounds = curves.pop("bounds")
    au_iou = max_iou = None
    if truth is not None:
        au_iou, max_iou, curve = iou_curve(values, truth, grid)
        curves["iou"] = curve
    return ScoreReport(
        auc_plus=auc_plus,
        auc_minus=auc_minus,
        au_iou=au_iou,
        max_iou=max_iou,
        curves=curves,
        rescale_bounds=bounds,
        grid=grid,
        cls=cls,
    )
