"""NICE-I segmentation error and verification-rate scoring from match scores."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import _kernels

HIGHER_IS_MATCH = "higher_is_match"
LOWER_IS_MATCH = "lower_is_match"


@dataclass
class SegScore:
    per_image_errors: list[tuple[str, float]] = field(default_factory=list)

    @property
    def average_error(self) -> float:
        if not self.per_image_errors:
            return 0.0
        return float(np.mean([e for _, e in self.per_image_errors]))


def _as_binary(mask, what: str) -> np.ndarray:
    m = np.asarray(mask)
    if m.ndim != 2:
        raise ValueError(f"{what} must be a 2-D mask, got shape {m.shape}")
    if not np.isin(m, (0, 1)).all():
        raise ValueError(f"{what} is not binary")
    return m.astype(np.uint8)


def nice1_error(predicted, truth, ids=None) -> SegScore:
    """Per-image fraction of disagreeing pixels and their mean.

    With equally sized masks the mean of per-image errors equals the pooled
    XOR count divided by ``N * m * n``.
    """
    predicted, truth = list(predicted), list(truth)
    if len(predicted) != len(truth):
        raise ValueError(f"got {len(predicted)} predicted masks but {len(truth)} ground-truth masks")
    ids = list(ids) if ids is not None else [str(i) for i in range(len(predicted))]
    if len(ids) != len(predicted):
        raise ValueError("one id per mask pair required")
    errors = []
    for sid, p, t in zip(ids, predicted, truth):
        p = _as_binary(p, f"predicted mask {sid}")
        t = _as_binary(t, f"ground-truth mask {sid}")
        if p.shape != t.shape:
            raise ValueError(f"mask {sid}: predicted {p.shape} vs ground truth {t.shape}")
        errors.append((sid, _kernels.xor_count(p, t) / p.size))
    return SegScore(errors)


@dataclass
class ScoreSet:
    genuine: np.ndarray
    impostor: np.ndarray
    polarity: str = HIGHER_IS_MATCH

    def __post_init__(self):
        self.genuine = np.asarray(self.genuine, dtype=np.float64).ravel()
        self.impostor = np.asarray(self.impostor, dtype=np.float64).ravel()
        if self.polarity not in (HIGHER_IS_MATCH, LOWER_IS_MATCH):
            raise ValueError(f"unknown polarity {self.polarity!r}")

    def oriented(self) -> tuple[np.ndarray, np.ndarray]:
        """Scores flipped so that higher always means a better match."""
        if len(self.genuine) == 0 or len(self.impostor) == 0:
            raise ValueError("genuine and impostor score lists must both be non-empty")
        if not (np.isfinite(self.genuine).all() and np.isfinite(self.impostor).all()):
            raise ValueError("scores must be finite")
        sign = 1.0 if self.polarity == HIGHER_IS_MATCH else -1.0
        return sign * self.genuine, sign * self.impostor


def _accept_counts(sorted_scores: np.ndarray, thresholds: np.ndarray) -> np.ndarray:
    # number of scores >= threshold
    return sorted_scores.size - np.searchsorted(sorted_scores, thresholds, side="left")


def gar_at_far(scores: ScoreSet, far_target: float = 0.001) -> tuple[float, float]:
    """Genuine accept rate at the most permissive threshold with FAR <= target.

    A score equal to the threshold is accepted. The returned threshold is in
    the caller's polarity: accept ``score >= t`` (higher_is_match) or
    ``score <= t`` (lower_is_match). The threshold sits one ulp past the
    highest impostor score that has to be rejected.
    """
    if not 0.0 < far_target < 1.0:
        raise ValueError(f"far_target must lie in (0, 1), got {far_target}")
    gen, imp = scores.oriented()
    imp_sorted = np.sort(imp)
    # accepting every impostor gives FAR 1 > target, so some impostor score s must
    # be rejected; candidates are "just above s" for each distinct s
    candidates = np.nextafter(np.unique(imp_sorted), math.inf)
    far = _accept_counts(imp_sorted, candidates) / imp.size
    threshold = float(candidates[np.nonzero(far <= far_target)[0][0]])
    gar = float(np.count_nonzero(gen >= threshold) / gen.size)
    if scores.polarity == LOWER_IS_MATCH:
        threshold = -threshold
    return gar, threshold


def roc_points(scores: ScoreSet) -> list[tuple[float, float]]:
    """(FAR, GAR) at every distinct score and the +/-inf sentinels, sorted by FAR.

    Thresholds producing an already-emitted point are dropped.
    """
    gen, imp = scores.oriented()
    thresholds = np.concatenate([[math.inf], np.unique(np.concatenate([gen, imp]))[::-1], [-math.inf]])
    far = _accept_counts(np.sort(imp), thresholds) / imp.size
    gar = _accept_counts(np.sort(gen), thresholds) / gen.size
    points = []
    for f, g in zip(far.tolist(), gar.tolist()):
        if not points or points[-1] != (f, g):
            points.append((f, g))
    return points


def load_scores(path) -> np.ndarray:
    values = []
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        try:
            values.append(float(line))
        except ValueError:
            raise ValueError(f"{path}:{lineno}: not a number: {line!r}") from None
    return np.asarray(values, dtype=np.float64)


def format_report(seg: SegScore | None = None, roc=None, gar: tuple[float, float, float] | None = None) -> str:
    lines = []
    if seg is not None:
        lines.append("sample_id\terror")
        lines.extend(f"{sid}\t{err:.6f}" for sid, err in seg.per_image_errors)
        lines.append(f"average\t{seg.average_error:.6f}")
    if gar is not None:
        if lines:
            lines.append("")
        far_target, rate, thr = gar
        lines.append("far_target\tgar\tthreshold")
        lines.append(f"{far_target:.6f}\t{rate:.6f}\t{thr:.10g}")
    if roc is not None:
        if lines:
            lines.append("")
        lines.append("far\tgar")
        lines.extend(f"{f:.6f}\t{g:.6f}" for f, g in roc)
    return "\n".join(lines) + "\n"


def write_report(seg: SegScore | None, path, roc=None, gar=None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(format_report(seg, roc, gar), encoding="utf-8")
    return path
