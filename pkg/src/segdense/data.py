"""Manifests, image/mask I/O, resizing, subject splits and synthetic eyes.

Images are ``uint8`` arrays of shape ``(height, width)``; masks are ``uint8``
arrays holding only 0 and 1. On disk masks are stored as {0, 255} PNGs.
"""
from __future__ import annotations

from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
from PIL import Image

from . import _kernels

ORIGINAL_SIZE = (640, 480)  # (width, height)
MODEL_SIZE = (224, 224)

EYES = ("left", "right")
PHASES = ("pre_surgery", "post_surgery", "healthy")


class ManifestError(ValueError):
    pass


def check_image(image: np.ndarray) -> np.ndarray:
    image = np.asarray(image)
    if image.ndim != 2:
        raise ValueError(f"image must be 2-D, got shape {image.shape}")
    if image.shape[0] < 32 or image.shape[1] < 32:
        raise ValueError(f"image must be at least 32x32, got {image.shape[1]}x{image.shape[0]}")
    if image.dtype != np.uint8:
        if image.min() < 0 or image.max() > 255:
            raise ValueError("image intensities must lie in [0, 255]")
        image = image.astype(np.uint8)
    return image


def check_mask(mask: np.ndarray, shape: tuple[int, int] | None = None) -> np.ndarray:
    mask = np.asarray(mask)
    if mask.ndim != 2:
        raise ValueError(f"mask must be 2-D, got shape {mask.shape}")
    if not np.isin(mask, (0, 1)).all():
        raise ValueError("mask values must be 0 or 1")
    if shape is not None and mask.shape != tuple(shape):
        raise ValueError(f"mask shape {mask.shape} does not match image shape {tuple(shape)}")
    return mask.astype(np.uint8)


@dataclass
class Sample:
    image: np.ndarray
    mask: np.ndarray | None = None
    subject_id: str = ""
    eye: str = "left"
    phase: str = "healthy"
    sensor: str = "synthetic"
    name: str = ""

    def __post_init__(self):
        self.image = check_image(self.image)
        if self.mask is not None:
            self.mask = check_mask(self.mask, self.image.shape)
        if self.eye not in EYES:
            raise ValueError(f"eye must be one of {EYES}, got {self.eye!r}")
        if self.phase not in PHASES:
            raise ValueError(f"phase must be one of {PHASES}, got {self.phase!r}")


@dataclass(frozen=True)
class ManifestEntry:
    image_path: str
    mask_path: str | None
    subject_id: str
    eye: str
    phase: str
    sensor: str

    def to_line(self) -> str:
        return "\t".join(
            [self.image_path, self.mask_path or "-", self.subject_id, self.eye, self.phase, self.sensor]
        )


def _check_entries(entries: list[ManifestEntry]) -> None:
    seen = set()
    for e in entries:
        if e.image_path in seen:
            raise ManifestError(f"duplicate image_path: {e.image_path}")
        seen.add(e.image_path)
        if not e.subject_id:
            raise ManifestError(f"empty subject_id for {e.image_path}")


def load_manifest(path) -> list[ManifestEntry]:
    """Read a tab-separated manifest; ``#`` lines and blank lines are skipped.

    Relative image/mask paths are kept as written; use :func:`resolve` to
    anchor them at the manifest's directory.
    """
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"manifest not found: {path}")
    entries = []
    with path.open(encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.rstrip("\r\n")
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            fields = line.split("\t")
            if len(fields) != 6:
                raise ManifestError(f"{path}:{lineno}: expected 6 tab-separated fields, got {len(fields)}")
            image_path, mask_path, subject_id, eye, phase, sensor = (f.strip() for f in fields)
            if not image_path:
                raise ManifestError(f"{path}:{lineno}: empty image_path")
            if not subject_id:
                raise ManifestError(f"{path}:{lineno}: empty subject_id")
            if eye not in EYES:
                raise ManifestError(f"{path}:{lineno}: eye must be one of {EYES}, got {eye!r}")
            if phase not in PHASES:
                raise ManifestError(f"{path}:{lineno}: phase must be one of {PHASES}, got {phase!r}")
            entries.append(
                ManifestEntry(image_path, None if mask_path == "-" else mask_path, subject_id, eye, phase, sensor)
            )
    _check_entries(entries)
    return entries


def write_manifest(entries: list[ManifestEntry], path) -> Path:
    _check_entries(entries)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    text = "# image_path\tmask_path\tsubject_id\teye\tphase\tsensor\n"
    text += "".join(e.to_line() + "\n" for e in entries)
    path.write_text(text, encoding="utf-8")
    return path


def resolve(entry_path: str, manifest_path) -> Path:
    p = Path(entry_path)
    return p if p.is_absolute() else Path(manifest_path).parent / p


def split_by_subject(entries: list[ManifestEntry], train_fraction: float = 0.7, seed: int = 0):
    """Split entries into subject-disjoint train and test manifests.

    ``round(train_fraction * n_subjects)`` subjects (at least one, and at least
    one left over) go to train. Entry order within each half follows the input.
    """
    if not 0.0 < train_fraction < 1.0:
        raise ValueError(f"train_fraction must lie in (0, 1), got {train_fraction}")
    if not entries:
        raise ValueError("cannot split an empty manifest")
    subjects = sorted({e.subject_id for e in entries})
    if len(subjects) < 2:
        raise ValueError(f"need at least 2 subjects for a disjoint split, got {len(subjects)}")
    n_train = min(max(int(round(train_fraction * len(subjects))), 1), len(subjects) - 1)
    order = np.random.default_rng(seed).permutation(len(subjects))
    train_subjects = {subjects[i] for i in order[:n_train]}
    train = [e for e in entries if e.subject_id in train_subjects]
    test = [e for e in entries if e.subject_id not in train_subjects]
    return train, test


# --------------------------------------------------------------------------
# image and mask I/O
# --------------------------------------------------------------------------

def load_image(path) -> np.ndarray:
    with Image.open(path) as im:
        return check_image(np.asarray(im.convert("L")))


def save_image(image: np.ndarray, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(check_image(image)).save(path, format="PNG")
    return path


def load_mask(path) -> np.ndarray:
    with Image.open(path) as im:
        arr = np.asarray(im.convert("L"))
    if not np.isin(arr, (0, 255)).all():
        raise ValueError(f"{path}: mask pixels must be 0 or 255")
    return (arr == 255).astype(np.uint8)


def save_mask(mask: np.ndarray, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(check_mask(mask) * np.uint8(255)).save(path, format="PNG")
    return path


def load_sample(entry: ManifestEntry, manifest_path) -> Sample:
    image = load_image(resolve(entry.image_path, manifest_path))
    mask = None
    if entry.mask_path is not None:
        mask = load_mask(resolve(entry.mask_path, manifest_path))
    return Sample(image, mask, entry.subject_id, entry.eye, entry.phase, entry.sensor,
                  name=Path(entry.image_path).stem)


def load_samples(manifest_path) -> list[Sample]:
    return [load_sample(e, manifest_path) for e in load_manifest(manifest_path)]


# --------------------------------------------------------------------------
# resizing
# --------------------------------------------------------------------------

def resize_image(image: np.ndarray, size: tuple[int, int] = MODEL_SIZE) -> np.ndarray:
    """Bilinear resize to ``size`` = (width, height), rounded and clamped to uint8."""
    image = check_image(image)
    w, h = size
    if image.shape == (h, w):
        return image.copy()
    out = _kernels.bilinear_resize(image.astype(np.float64), h, w)
    return np.clip(np.rint(out), 0, 255).astype(np.uint8)


resize_to_model = resize_image


def resize_mask(mask: np.ndarray, size: tuple[int, int]) -> np.ndarray:
    """Nearest-neighbour resize to ``size`` = (width, height); keeps masks binary."""
    mask = check_mask(mask)
    w, h = size
    if mask.shape == (h, w):
        return mask.copy()
    return _kernels.nearest_resize(mask, h, w).astype(np.uint8)


def to_model_resolution(sample: Sample, size: tuple[int, int] = MODEL_SIZE) -> Sample:
    mask = None if sample.mask is None else resize_mask(sample.mask, size)
    return replace(sample, image=resize_image(sample.image, size), mask=mask)


# --------------------------------------------------------------------------
# synthetic eyes
# --------------------------------------------------------------------------

@dataclass
class SynthConfig:
    width: int = 640
    height: int = 480
    pupil_radius: tuple[float, float] = (35.0, 60.0)
    iris_radius: tuple[float, float] = (110.0, 150.0)
    center_jitter: float = 30.0
    occlusion: bool = True
    specular: bool = True
    phase: str = "healthy"
    n_highlights: tuple[int, int] = (2, 5)

    def validate(self) -> None:
        if self.phase not in PHASES:
            raise ValueError(f"phase must be one of {PHASES}, got {self.phase!r}")
        if self.width < 32 or self.height < 32:
            raise ValueError("synthetic image must be at least 32x32")
        plo, phi = self.pupil_radius
        ilo, ihi = self.iris_radius
        if plo <= 0 or plo > phi or ilo > ihi:
            raise ValueError("radius ranges must be positive and ordered (low, high)")
        if phi >= ilo:
            raise ValueError(
                f"pupil radius range {self.pupil_radius} must stay below iris radius range {self.iris_radius}"
            )


def annulus_mask(height: int, width: int, cx: float, cy: float, r_pupil: float, r_iris: float) -> np.ndarray:
    yy, xx = np.mgrid[0:height, 0:width]
    d = np.hypot(xx - cx, yy - cy)
    return ((d > r_pupil) & (d <= r_iris)).astype(np.uint8)


def _smooth_noise(rng: np.random.Generator, height: int, width: int, cell: int) -> np.ndarray:
    coarse = rng.random((height // cell + 2, width // cell + 2))
    return _kernels.bilinear_resize(coarse, height, width)


def synthesize_sample(params: SynthConfig | None = None, seed: int = 0, subject_id: str = "S000",
                      eye: str = "left", name: str = "") -> Sample:
    """Draw a deterministic synthetic near-IR eye with its iris mask.

    The iris is a textured annulus around a dark pupil on a bright sclera.
    ``pre_surgery`` adds a cloudy bright layer over the pupil; ``post_surgery``
    (or ``specular=True``) adds saturated reflection blobs that are removed
    from the mask. With ``occlusion`` an upper eyelid covers part of the iris.
    """
    params = params or SynthConfig()
    params.validate()
    rng = np.random.default_rng(seed)
    h, w = params.height, params.width
    scale = min(w / 640.0, h / 480.0)

    r_pupil = rng.uniform(*params.pupil_radius) * scale
    r_iris = rng.uniform(*params.iris_radius) * scale
    if r_pupil >= r_iris:
        raise ValueError(f"pupil radius {r_pupil:.1f} must be smaller than iris radius {r_iris:.1f}")
    jit = params.center_jitter * scale
    cx = w / 2.0 + rng.uniform(-jit, jit)
    cy = h / 2.0 + rng.uniform(-jit, jit)

    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    dist = np.hypot(xx - cx, yy - cy)
    theta = np.arctan2(yy - cy, xx - cx)

    # sclera and skin
    img = 185.0 + 25.0 * _smooth_noise(rng, h, w, max(8, int(64 * scale)))

    # iris texture: radial fibres, crypts and a darker limbus ring
    n_fibres = int(rng.integers(18, 40))
    phase0 = rng.uniform(0, 2 * np.pi)
    rel = np.clip((dist - r_pupil) / max(r_iris - r_pupil, 1e-6), 0.0, 1.0)
    fibres = np.sin(n_fibres * theta + phase0 + 3.0 * rel)
    crypts = _smooth_noise(rng, h, w, max(4, int(12 * scale)))
    iris_level = rng.uniform(85.0, 115.0)
    iris = iris_level + 18.0 * fibres + 30.0 * (crypts - 0.5) - 25.0 * rel ** 4
    in_iris = (dist > r_pupil) & (dist <= r_iris)
    img = np.where(in_iris, iris, img)

    # pupil
    in_pupil = dist <= r_pupil
    pupil = 22.0 + 10.0 * _smooth_noise(rng, h, w, max(4, int(16 * scale)))
    if params.phase == "pre_surgery":
        cloud = _smooth_noise(rng, h, w, max(4, int(10 * scale)))
        pupil = pupil + rng.uniform(120.0, 170.0) * (0.6 + 0.4 * cloud)
    img = np.where(in_pupil, pupil, img)

    mask = in_iris.copy()

    if params.occlusion:
        # upper eyelid: parabola opening downward, lid above it
        lid_y = cy - r_iris * rng.uniform(0.55, 0.95)
        curv = rng.uniform(0.6, 1.4) / max(r_iris * 2.5, 1.0)
        lid = yy < lid_y + curv * (xx - cx) ** 2
        lid &= yy < cy
        skin = 150.0 + 20.0 * _smooth_noise(rng, h, w, max(4, int(20 * scale)))
        img = np.where(lid, skin, img)
        # lash line
        edge = lid & (yy > lid_y + curv * (xx - cx) ** 2 - 4.0 * scale)
        img = np.where(edge, 40.0, img)
        mask &= ~lid

    if params.specular or params.phase == "post_surgery":
        lo, hi = params.n_highlights
        n_spots = int(rng.integers(lo, hi + 1))
        spots = np.zeros((h, w), dtype=bool)
        for _ in range(n_spots):
            ang = rng.uniform(0, 2 * np.pi)
            rad = rng.uniform(0.0, 0.9) * r_iris
            sx, sy = cx + rad * np.cos(ang), cy + rad * np.sin(ang)
            sr = rng.uniform(3.0, 9.0) * scale
            spots |= np.hypot(xx - sx, yy - sy) <= sr
        img = np.where(spots, 252.0, img)
        mask &= ~spots

    img = img + rng.normal(0.0, 3.0, size=(h, w))
    img = np.clip(np.rint(img), 0, 255).astype(np.uint8)
    return Sample(img, mask.astype(np.uint8), subject_id, eye, params.phase, "synthetic", name=name)


def synthesize_dataset(count: int, seed: int = 0, params: SynthConfig | None = None,
                       phases=PHASES) -> list[Sample]:
    """``count`` samples, two eyes per subject, cycling through ``phases``."""
    params = params or SynthConfig()
    out = []
    for i in range(count):
        p = replace(params, phase=phases[i % len(phases)])
        out.append(
            synthesize_sample(p, seed=seed * 100003 + i, subject_id=f"S{i // 2:03d}",
                              eye=EYES[i % 2], name=f"synth_{i:04d}")
        )
    return out


def write_samples(samples: list[Sample], out_dir, manifest_name: str = "manifest.tsv") -> Path:
    """Save images under ``images/``, masks under ``masks/`` and a manifest next to them."""
    out_dir = Path(out_dir)
    entries = []
    for i, s in enumerate(samples):
        stem = s.name or f"sample_{i:04d}"
        img_rel = f"images/{stem}.png"
        save_image(s.image, out_dir / img_rel)
        mask_rel = None
        if s.mask is not None:
            mask_rel = f"masks/{stem}.png"
            save_mask(s.mask, out_dir / mask_rel)
        entries.append(ManifestEntry(img_rel, mask_rel, s.subject_id, s.eye, s.phase, s.sensor))
    return write_manifest(entries, out_dir / manifest_name)
