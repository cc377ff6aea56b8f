"""Coalition masking: turn pixel subsets into masked images and worth queries.

A coalition keeps its pixels from the original image; everything else is
replaced by a background (uniform color by default, or a reference image).
The run-length span encoding over row-major pixel order is the transport
format shared with remote evaluators.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from PIL import Image

from .errors import EvaluationError
from .games import CharacteristicGame, Coalition
from .hierarchy import RasterImage

DEFAULT_GRAY = (128, 128, 128)
DEFAULT_CACHE_CAPACITY = 1 << 20


def mask_to_bools(mask: Coalition, n: int) -> np.ndarray:
    """Bitmask to a boolean vector of length n (index order)."""
    if mask < 0 or mask >> n:
        raise ValueError("mask has bits outside [0, n)")
    raw = mask.to_bytes((n + 7) // 8, "little")
    bits = np.unpackbits(np.frombuffer(raw, dtype=np.uint8), bitorder="little")
    return bits[:n].astype(bool)


def bools_to_mask(bits: np.ndarray) -> Coalition:
    padded = np.zeros((len(bits) + 7) // 8 * 8, dtype=np.uint8)
    padded[: len(bits)] = np.asarray(bits, dtype=bool)
    return int.from_bytes(np.packbits(padded, bitorder="little").tobytes(), "little")


def mask_to_spans(mask: Coalition, n: int) -> list[tuple[int, int]]:
    """Sorted, disjoint (start, length) runs of the kept pixels."""
    bits = mask_to_bools(mask, n)
    diff = np.diff(bits.astype(np.int8), prepend=0, append=0)
    starts = np.flatnonzero(diff == 1)
    ends = np.flatnonzero(diff == -1)
    return [(int(s), int(e - s)) for s, e in zip(starts, ends)]


def spans_to_mask(spans: Sequence[tuple[int, int]], n: int) -> Coalition:
    bits = np.zeros(n, dtype=bool)
    prev_end = -1
    for start, length in spans:
        if length < 1 or start < 0 or start + length > n:
            raise ValueError(f"invalid span ({start}, {length}) for {n} pixels")
        if start <= prev_end:
            raise ValueError("spans must be sorted and disjoint")
        bits[start : start + length] = True
        prev_end = start + length - 1
    return bools_to_mask(bits)


@dataclass(frozen=True)
class MaskSpec:
    """A coalition of kept pixels over an n-pixel raster."""

    kept: Coalition
    n: int

    def __post_init__(self):
        if self.kept < 0 or self.kept >> self.n:
            raise ValueError("kept-set has bits outside [0, n)")

    @property
    def size(self) -> int:
        return self.kept.bit_count()

    def spans(self) -> list[tuple[int, int]]:
        return mask_to_spans(self.kept, self.n)

    @staticmethod
    def from_spans(spans, n: int) -> "MaskSpec":
        return MaskSpec(spans_to_mask(spans, n), n)

    @staticmethod
    def full(n: int) -> "MaskSpec":
        return MaskSpec((1 << n) - 1, n)


@dataclass(frozen=True)
class Background:
    """Replacement source for masked-out pixels."""

    mode: str = "uniform"  # "uniform" | "reference"
    color: tuple[int, int, int] = DEFAULT_GRAY
    reference: RasterImage | None = None

    def __post_init__(self):
        if self.mode not in ("uniform", "reference"):
            raise ValueError(f"unknown background mode {self.mode!r}")
        if self.mode == "uniform":
            if not all(0 <= c <= 255 for c in self.color):
                raise ValueError("background color channels must be in [0, 255]")
        elif self.reference is None:
            raise ValueError("reference background needs a reference image")


def apply_mask(image: RasterImage, spec: MaskSpec, background: Background) -> RasterImage:
    """Keep the coalition's pixels, replace the rest from the background."""
    if spec.n != image.num_pixels:
        raise ValueError(f"mask covers {spec.n} pixels, image has {image.num_pixels}")
    keep = mask_to_bools(spec.kept, spec.n).reshape(image.height, image.width)
    if background.mode == "uniform":
        fill = np.empty_like(image.data)
        color = background.color if image.channels == 3 else (background.color[0],)
        fill[:] = np.asarray(color, dtype=np.uint8)
    else:
        ref = background.reference
        if ref.height != image.height or ref.width != image.width or ref.channels != image.channels:
            raise ValueError("reference background does not match the image shape")
        fill = ref.data
    out = np.where(keep[:, :, None], image.data, fill)
    return RasterImage(out)


@dataclass(frozen=True)
class GroundTruth:
    """Annotated pixel set expected to drive the prediction."""

    mask: Coalition
    n: int
    source: str = ""

    def __post_init__(self):
        if self.mask <= 0 or self.mask >> self.n:
            raise ValueError("ground truth must be a nonempty subset of the pixels")

    @property
    def size(self) -> int:
        return self.mask.bit_count()

    @staticmethod
    def from_indices(indices, n: int, source: str = "") -> "GroundTruth":
        mask = 0
        for i in indices:
            mask |= 1 << int(i)
        return GroundTruth(mask, n, source)

    @staticmethod
    def load_png(path) -> "GroundTruth":
        """Nonzero pixels are in the set."""
        with Image.open(path) as img:
            arr = np.asarray(img.convert("L"))
        return GroundTruth(bools_to_mask(arr.ravel() != 0), arr.size, source=str(path))

    @staticmethod
    def load_spans(path, n: int) -> "GroundTruth":
        """Text format: one 'start,length' span per line."""
        spans = []
        with open(path, "r", encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                start, length = (int(v) for v in line.split(","))
                spans.append((start, length))
        return GroundTruth(spans_to_mask(spans, n), n, source=str(path))

    def save_png(self, width: int, height: int, path) -> None:
        bits = mask_to_bools(self.mask, self.n).reshape(height, width)
        Image.fromarray(np.where(bits, 255, 0).astype(np.uint8), mode="L").save(path, format="PNG")


def ideal_linear_game(truth: GroundTruth, n: int | None = None) -> CharacteristicGame:
    """Noise-free linear model: worth is the kept fraction of the true set."""
    n = truth.n if n is None else n
    if n != truth.n:
        raise ValueError("ground truth does not match the player count")
    g_mask = truth.mask
    size = truth.size

    def raw(batch):
        return np.array([[(s & g_mask).bit_count() / size] for s in batch])

    return CharacteristicGame(raw, n, 1, name="ideal-linear")


class CoalitionCache:
    """Bounded LRU cache over exact coalition bitsets.

    ``evaluate`` preserves request order, serves repeats (within and across
    batches) from the cache, and asks the game only for the missing
    coalitions, in one batch.
    """

    def __init__(self, capacity: int = DEFAULT_CACHE_CAPACITY):
        if capacity < 1:
            raise ValueError("capacity must be positive")
        self.capacity = capacity
        self._store: dict[Coalition, np.ndarray] = {}
        self.hits = 0
        self.misses = 0

    def evaluate(self, game: CharacteristicGame, coalitions: Sequence[Coalition]) -> np.ndarray:
        coalitions = list(coalitions)
        out = np.empty((len(coalitions), game.num_classes))
        missing: list[Coalition] = []
        missing_at: dict[Coalition, list[int]] = {}
        for k, s in enumerate(coalitions):
            row = self._store.pop(s, None)
            if row is not None:
                self._store[s] = row  # refresh recency
                out[k] = row
                self.hits += 1
            else:
                if s not in missing_at:
                    missing.append(s)
                    missing_at[s] = []
                missing_at[s].append(k)
        if missing:
            self.misses += len(missing)
            try:
                rows = game.evaluate_batch(missing)
            except EvaluationError:
                raise
            except Exception as exc:
                index = self._locate_failure(game, missing, coalitions)
                raise EvaluationError(str(exc), index=index) from exc
            for s, row in zip(missing, rows):
                self._remember(s, row)
                for k in missing_at[s]:
                    out[k] = row
        return out

    def _remember(self, s: Coalition, row: np.ndarray) -> None:
        if s in self._store:
            del self._store[s]
        elif len(self._store) >= self.capacity:
            oldest = next(iter(self._store))
            del self._store[oldest]
        self._store[s] = row.copy()

    def _locate_failure(self, game, missing, coalitions) -> int | None:
        for s in missing:
            try:
                game.evaluate_batch([s])
            except Exception:
                return coalitions.index(s)
        return None


class CachedGame:
    """Game wrapper routing evaluate_batch through a coalition cache."""

    def __init__(self, game: CharacteristicGame, capacity: int = DEFAULT_CACHE_CAPACITY):
        self.game = game
        self.cache = CoalitionCache(capacity)
        self.num_players = game.num_players
        self.num_classes = game.num_classes
        self.name = getattr(game, "name", "game")

    def evaluate_batch(self, coalitions) -> np.ndarray:
        return self.cache.evaluate(self.game, coalitions)

    def evaluate(self, coalition, cls=None):
        row = self.evaluate_batch([coalition])[0]
        return row if cls is None else float(row[cls])


def cached_batch_evaluate(
    game: CharacteristicGame,
    specs: Sequence[MaskSpec | Coalition],
    cache: CoalitionCache | None = None,
) -> np.ndarray:
    """Order-aligned worths for the given coalitions, cache-deduplicated."""
    if cache is None:
        cache = CoalitionCache()
    masks = [s.kept if isinstance(s, MaskSpec) else s for s in specs]
    return cache.evaluate(game, masks)
