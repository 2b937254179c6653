"""Per-location top-tau channel masking and channel coverage statistics."""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .exceptions import ShapeError
from .tensor import as_chw

COMPARE_MODES = ("signed", "magnitude")

__all__ = [
    "COMPARE_MODES",
    "CoverageStats",
    "apply_mask",
    "as_mask",
    "channel_flush",
    "compared",
    "coverage",
]


def compared(y: np.ndarray, compare: str = "signed") -> np.ndarray:
    """Values used for ranking: ``y`` itself or ``|y|``."""
    if compare == "signed":
        return y
    if compare == "magnitude":
        return np.abs(y)
    raise ValueError(f"compare must be one of {COMPARE_MODES}, got {compare!r}")


def as_mask(m, shape: tuple[int, ...] | None = None) -> np.ndarray:
    """Validate a binary mask and return it as a bool array."""
    a = np.asarray(m)
    if a.dtype != np.bool_:
        if not np.isin(a, (0, 1)).all():
            raise ShapeError("mask values must be 0 or 1")
        a = a.astype(bool)
    if shape is not None and a.shape != tuple(shape):
        raise ShapeError(f"mask shape {a.shape} != {tuple(shape)}")
    return a


def channel_flush(y, tau: int, compare: str = "signed") -> np.ndarray:
    """Keep the ``tau`` largest channels at every spatial location.

    Returns a boolean mask of ``y``'s shape with exactly ``tau`` bits on per
    ``(h, w)``. Equal values go to the lower channel index.
    """
    y = as_chw(y, "y")
    C = y.shape[0]
    if not isinstance(tau, (int, np.integer)) or not 1 <= tau <= C:
        raise ValueError(f"tau must be an integer in 1..{C}, got {tau!r}")
    score = compared(y, compare)
    # stable sort of the negated score keeps lower indices first among ties
    order = np.argsort(-score, axis=0, kind="stable")
    mask = np.zeros(y.shape, dtype=bool)
    np.put_along_axis(mask, order[:tau], True, axis=0)
    return mask


def apply_mask(y, m) -> np.ndarray:
    y = as_chw(y, "y")
    m = as_mask(m, y.shape)
    return np.where(m, y, np.float32(0)).astype(np.float32)


@dataclass(frozen=True)
class CoverageStats:
    per_channel: np.ndarray
    bin_edges: np.ndarray
    counts: np.ndarray

    def write_csv(self, coverage_path, histogram_path) -> None:
        with open(coverage_path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["channel", "coverage"])
            for c, f in enumerate(self.per_channel):
                w.writerow([c, repr(float(f))])
        with open(histogram_path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["bin_lo", "bin_hi", "count"])
            for lo, hi, n in zip(self.bin_edges[:-1], self.bin_edges[1:], self.counts):
                w.writerow([repr(float(lo)), repr(float(hi)), int(n)])

    @classmethod
    def read_csv(cls, coverage_path, histogram_path) -> "CoverageStats":
        with open(coverage_path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        per = np.array([float(r["coverage"]) for r in rows])
        with open(histogram_path, newline="") as fh:
            hrows = list(csv.DictReader(fh))
        edges = np.array([float(r["bin_lo"]) for r in hrows] + [float(hrows[-1]["bin_hi"])])
        counts = np.array([int(r["count"]) for r in hrows])
        return cls(per, edges, counts)


def coverage(m, bins: int = 10) -> CoverageStats:
    """Fraction of spatial locations each channel is on, plus a histogram.

    Buckets are half-open ``[lo, hi)`` except the last, which includes 1.0.
    """
    m = as_mask(m)
    if m.ndim != 3:
        raise ShapeError(f"mask must be rank 3, got shape {m.shape}")
    if not isinstance(bins, (int, np.integer)) or bins < 1:
        raise ValueError("bins must be a positive integer")
    C, H, W = m.shape
    on = m.reshape(C, H * W).sum(axis=1)
    per = on / float(H * W)
    edges = np.linspace(0.0, 1.0, bins + 1)
    # integer bucketing avoids float rounding at bucket edges
    idx = np.minimum(on * bins // (H * W), bins - 1)
    counts = np.bincount(idx, minlength=bins)
    return CoverageStats(per_channel=per, bin_edges=edges, counts=counts)
