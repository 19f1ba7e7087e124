"""Prediction at original resolution, mask cleanup, confidence bands, export."""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from . import _kernels
from .data import MODEL_SIZE, check_image, check_mask, resize_image, resize_mask, save_mask

BACKGROUND, LOW, HIGH = 0, 1, 2
BAND_COLOURS = {LOW: (255, 196, 0), HIGH: (0, 200, 80)}
BOUNDARY_COLOUR = (230, 20, 20)
DEFAULT_MAX_HOLE_FRACTION = 0.001


def binarize(confidence: np.ndarray, threshold: float = 0.5) -> np.ndarray:
    if not 0.0 < threshold < 1.0:
        raise ValueError(f"threshold must lie in (0, 1), got {threshold}")
    return (np.asarray(confidence) >= threshold).astype(np.uint8)


def resize_mask_nearest(mask: np.ndarray, size: tuple[int, int]) -> np.ndarray:
    """Nearest-neighbour resize to ``size`` = (width, height)."""
    return resize_mask(mask, size)


def largest_component(mask: np.ndarray) -> np.ndarray:
    labels, n = _kernels.label4(np.asarray(mask, dtype=bool))
    if n == 0:
        return np.zeros(labels.shape, dtype=np.uint8)
    counts = np.bincount(labels.ravel(), minlength=n + 1)
    counts[0] = 0
    return (labels == int(np.argmax(counts))).astype(np.uint8)


def fill_holes(mask: np.ndarray, max_hole_area: int | None = None) -> np.ndarray:
    """Fill background regions that cannot reach the border (4-connectivity).

    With ``max_hole_area`` only holes of at most that many pixels are filled.
    """
    mask = np.asarray(mask, dtype=bool)
    if max_hole_area is None:
        return _kernels.fill_border_holes(mask)
    filled = _kernels.fill_border_holes(mask).astype(bool)
    holes = filled & ~mask
    if not holes.any():
        return mask.astype(np.uint8)
    labels, n = _kernels.label4(holes)
    counts = np.bincount(labels.ravel(), minlength=n + 1)
    small = counts <= max_hole_area
    small[0] = False
    return (mask | small[labels]).astype(np.uint8)


def postprocess(mask: np.ndarray, max_hole_fraction: float | None = DEFAULT_MAX_HOLE_FRACTION) -> np.ndarray:
    """Keep the largest 4-connected component, then fill its enclosed holes.

    Holes larger than ``max_hole_fraction`` of the image area are kept so the
    pupil survives; pass ``None`` to fill every enclosed hole.
    """
    mask = check_mask(mask)
    kept = largest_component(mask)
    limit = None
    if max_hole_fraction is not None:
        limit = int(max_hole_fraction * mask.size)
    return fill_holes(kept, limit)


@dataclass
class ConfidenceBands:
    bands: np.ndarray
    thresholds: tuple[float, float]


def confidence_bands(confidence: np.ndarray, low: float = 0.5, high: float = 0.9) -> ConfidenceBands:
    if not low < high:
        raise ValueError(f"band thresholds must satisfy low < high, got ({low}, {high})")
    c = np.asarray(confidence)
    bands = np.full(c.shape, BACKGROUND, dtype=np.uint8)
    bands[c >= low] = LOW
    bands[c >= high] = HIGH
    return ConfidenceBands(bands, (float(low), float(high)))


def predict_confidence(model, image: np.ndarray) -> np.ndarray:
    """Model-resolution confidence map for one original-resolution image."""
    small = resize_image(check_image(image), MODEL_SIZE)
    return model.predict(small[None])[0]


def predict_mask(model, image: np.ndarray, postprocess_mask: bool = False, threshold: float = 0.5,
                 confidence: np.ndarray | None = None) -> np.ndarray:
    """Resize, predict, binarise, resize back (nearest), optionally clean up."""
    image = check_image(image)
    if confidence is None:
        confidence = predict_confidence(model, image)
    h, w = image.shape
    mask = resize_mask_nearest(binarize(confidence, threshold), (w, h))
    return postprocess(mask) if postprocess_mask else mask


def mask_boundary(mask: np.ndarray) -> np.ndarray:
    m = np.asarray(mask, dtype=bool)
    inner = m.copy()
    inner[1:, :] &= m[:-1, :]
    inner[:-1, :] &= m[1:, :]
    inner[:, 1:] &= m[:, :-1]
    inner[:, :-1] &= m[:, 1:]
    return m & ~inner


def render_overlay(image: np.ndarray, mask: np.ndarray | None = None,
                   bands: ConfidenceBands | np.ndarray | None = None, alpha: float = 0.45) -> np.ndarray:
    """RGB overlay: low/high confidence tints plus the mask outline."""
    image = check_image(image)
    h, w = image.shape
    rgb = np.repeat(image[..., None].astype(np.float64), 3, axis=2)
    if bands is not None:
        b = bands.bands if isinstance(bands, ConfidenceBands) else np.asarray(bands)
        if b.shape != (h, w):
            b = resize_mask_nearest_any(b, (w, h))
        for level, colour in BAND_COLOURS.items():
            sel = b == level
            rgb[sel] = (1 - alpha) * rgb[sel] + alpha * np.asarray(colour, dtype=np.float64)
    if mask is not None:
        m = check_mask(mask)
        if m.shape != (h, w):
            m = resize_mask_nearest(m, (w, h))
        rgb[mask_boundary(m)] = BOUNDARY_COLOUR
    return np.clip(np.rint(rgb), 0, 255).astype(np.uint8)


def resize_mask_nearest_any(labels: np.ndarray, size: tuple[int, int]) -> np.ndarray:
    w, h = size
    return _kernels.nearest_resize(np.ascontiguousarray(labels), h, w)


def export_mask(mask: np.ndarray, path) -> Path:
    return save_mask(mask, path)


def export_bands(bands: ConfidenceBands, path) -> Path:
    """Grey-level band image: 0 background, 128 low, 255 high."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lut = np.array([0, 128, 255], dtype=np.uint8)
    Image.fromarray(lut[bands.bands]).save(path, format="PNG")
    return path


def export_overlay(overlay: np.ndarray, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(np.asarray(overlay, dtype=np.uint8)).save(path, format="PNG")
    return path
