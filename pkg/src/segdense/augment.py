"""Contrast-normalisation and horizontal-flip augmentation (x10 expansion)."""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .data import Sample, check_image

DEFAULT_CONTRAST_FACTORS = (0.8, 0.9, 1.1, 1.2)


@dataclass(frozen=True)
class AugmentConfig:
    contrast_factors: tuple[float, ...] = DEFAULT_CONTRAST_FACTORS
    center_value: float = 127.5

    def __post_init__(self):
        factors = tuple(float(f) for f in self.contrast_factors)
        object.__setattr__(self, "contrast_factors", factors)
        if len(factors) != 4:
            raise ValueError(f"exactly 4 contrast factors required, got {len(factors)}")
        if any(not np.isfinite(f) or f <= 0 for f in factors):
            raise ValueError(f"contrast factors must be positive, got {factors}")
        if any(f == 1.0 for f in factors):
            raise ValueError("a contrast factor of 1.0 duplicates the original image")
        if not 0.0 <= self.center_value <= 255.0:
            raise ValueError(f"center_value must lie in [0, 255], got {self.center_value}")


def round_half_toward_zero(x: np.ndarray) -> np.ndarray:
    return np.sign(x) * np.ceil(np.abs(x) - 0.5)


def contrast_normalize(image: np.ndarray, factor: float, center: float = 127.5) -> np.ndarray:
    """Scale each pixel's distance from ``center`` by ``factor``.

    Halves round toward zero, so ``factor=1`` with a half-integer centre maps
    every integer intensity onto itself.
    """
    if not factor > 0:
        raise ValueError(f"contrast factor must be positive, got {factor}")
    image = check_image(image)
    out = center + factor * (image.astype(np.float64) - center)
    return np.clip(round_half_toward_zero(out), 0, 255).astype(np.uint8)


def horizontal_flip(sample: Sample) -> Sample:
    mask = None if sample.mask is None else sample.mask[:, ::-1].copy()
    return replace(sample, image=sample.image[:, ::-1].copy(), mask=mask)


def _variants(sample: Sample, config: AugmentConfig, tag: str):
    yield replace(sample, name=f"{sample.name}{tag}")
    for k, f in enumerate(config.contrast_factors):
        yield replace(
            sample,
            image=contrast_normalize(sample.image, f, config.center_value),
            name=f"{sample.name}{tag}_c{k}",
        )


def expand_dataset(samples: list[Sample], config: AugmentConfig | None = None) -> list[Sample]:
    """Return 10 variants per sample: {original, flipped} x {identity, 4 contrasts}.

    Order per input: original, its 4 contrast variants, flipped, its 4
    contrast variants. Masks follow the flips only.
    """
    config = config or AugmentConfig()
    out = []
    for s in samples:
        out.extend(_variants(s, config, ""))
        out.extend(_variants(horizontal_flip(s), config, "_flip"))
    return out
