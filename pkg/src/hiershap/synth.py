"""Seeded synthetic corpus: colored blobs on textured noise backgrounds.

Each sample is an RGB image with 2 to 5 uniformly colored elliptical blobs
over per-pixel background noise, plus a ground truth equal to the pixels of
one designated blob (drawn last, so it is never occluded). Blob colors are
sampled outside the background noise band, keeping region contrast
unambiguous. Everything is a pure function of the seed.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .hierarchy import RasterImage
from .masking import GroundTruth

NOISE_LO, NOISE_HI = 70, 170
MIN_TRUTH_PIXELS = 60
EDGE_BAND = 0.35  # soft rim width, in units of the blob radius


@dataclass(frozen=True)
class BlobSample:
    image: RasterImage
    truth: GroundTruth
    seed: int


def _blob_color(rng) -> np.ndarray:
    # Per channel, either well below or well above the noise band.
    low = rng.integers(0, 40, size=3)
    high = rng.integers(215, 256, size=3)
    pick = rng.integers(0, 2, size=3).astype(bool)
    return np.where(pick, high, low).astype(np.int64)


def _ellipse_field(width, height, cx, cy, rx, ry) -> np.ndarray:
    """Normalized radius per pixel: < 1 inside the blob."""
    ys, xs = np.mgrid[0:height, 0:width]
    return np.sqrt(((xs - cx) / rx) ** 2 + ((ys - cy) / ry) ** 2)


def make_blob_sample(seed: int, width: int = 64, height: int = 64) -> BlobSample:
    rng = np.random.default_rng(seed)
    noise = rng.integers(NOISE_LO, NOISE_HI, size=(height, width, 3))
    data = noise.astype(np.float64)

    num_blobs = int(rng.integers(2, 6))
    min_pixels = min(MIN_TRUTH_PIXELS, width * height // 8)
    rx_hi = max(1.5, min(15.0, width / 4))
    ry_hi = max(1.5, min(15.0, height / 4))
    truth_mask = None
    for b in range(num_blobs):
        for _ in range(50):
            rx = float(rng.uniform(min(5.0, 0.6 * rx_hi), rx_hi))
            ry = float(rng.uniform(min(5.0, 0.6 * ry_hi), ry_hi))
            cx = float(rng.uniform(rx, width - rx))
            cy = float(rng.uniform(ry, height - ry))
            radius = _ellipse_field(width, height, cx, cy, rx, ry)
            mask = radius <= 1.0
            if mask.sum() >= min_pixels:
                break
        color = _blob_color(rng)
        jitter = rng.integers(-4, 5, size=(height, width, 3))
        blob_pixels = np.clip(color[None, None, :] + jitter, 0, 255)
        # Soft rim: alpha fades from 1 at radius 1 - band to 0 at 1 + band,
        # so boundary pixels carry mixed colors like a real photograph.
        alpha = np.clip((1.0 + EDGE_BAND - radius) / (2 * EDGE_BAND), 0.0, 1.0)
        data = alpha[:, :, None] * blob_pixels + (1 - alpha[:, :, None]) * data
        if b == num_blobs - 1:
            truth_mask = mask
    image = RasterImage(np.clip(np.round(data), 0, 255).astype(np.uint8))
    flat = truth_mask.ravel()
    truth = GroundTruth.from_indices(np.flatnonzero(flat), width * height, source=f"seed:{seed}")
    return BlobSample(image, truth, seed)


def make_corpus(count: int, seed0: int = 0, width: int = 64, height: int = 64) -> list[BlobSample]:
    return [make_blob_sample(seed0 + k, width, height) for k in range(count)]


def write_corpus(outdir, count: int, seed0: int = 0, width: int = 64, height: int = 64) -> Path:
    """Write image/ground-truth PNG pairs plus a manifest; returns the manifest path."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    entries = []
    for k in range(count):
        sample = make_blob_sample(seed0 + k, width, height)
        img_name = f"img_{k:04d}.png"
        gt_name = f"gt_{k:04d}.png"
        sample.image.save(outdir / img_name)
        sample.truth.save_png(width, height, outdir / gt_name)
        entries.append({"image": img_name, "ground_truth": gt_name, "seed": sample.seed})
    manifest = {
        "width": width,
        "height": height,
        "count": count,
        "seed0": seed0,
        "items": entries,
    }
    path = outdir / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return path


def load_corpus(directory) -> list[tuple[RasterImage, GroundTruth]]:
    """Read a corpus directory written by :func:`write_corpus`."""
    directory = Path(directory)
    manifest_path = directory / "manifest.json"
    items = []
    if manifest_path.exists():
        manifest = json.loads(manifest_path.read_text())
        for entry in manifest["items"]:
            image = RasterImage.load(directory / entry["image"])
            truth = GroundTruth.load_png(directory / entry["ground_truth"])
            items.append((image, truth))
        return items
    # Fall back to paired files by naming convention.
    for img_path in sorted(directory.glob("img_*.png")):
        gt_path = directory / img_path.name.replace("img_", "gt_")
        if gt_path.exists():
            items.append((RasterImage.load(img_path), GroundTruth.load_png(gt_path)))
    return items
