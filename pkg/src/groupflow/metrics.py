"""Flow evaluation metrics: endpoint error, outlier percentage, and the
matched/unmatched split over externally supplied occlusion masks.

Means are accumulated with exactly-rounded summation, so results do not
depend on summation order and agree bit-for-bit with a naive per-pixel loop."""

import math
from dataclasses import dataclass

import numpy as np


class EmptyRegionError(ValueError):
    """Raised when a metric is requested over zero pixels."""


def _check_shapes(pred, gt, valid=None):
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape or pred.ndim != 3 or pred.shape[-1] != 2:
        raise ValueError(f"expected matching (H, W, 2) flows, got {pred.shape} vs {gt.shape}")
    if valid is None:
        valid = np.ones(pred.shape[:2], dtype=bool)
    else:
        valid = np.asarray(valid).astype(bool)
        if valid.shape != pred.shape[:2]:
            raise ValueError(f"valid mask {valid.shape} does not match flow {pred.shape[:2]}")
    return pred, gt, valid


def error_magnitude(pred, gt) -> np.ndarray:
    """Per-pixel Euclidean distance between flows, (H, W)."""
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    d = pred - gt
    return np.sqrt(d[..., 0] * d[..., 0] + d[..., 1] * d[..., 1])


def epe(pred, gt, valid=None) -> float:
    """Mean endpoint error over valid pixels, in pixels."""
    pred, gt, valid = _check_shapes(pred, gt, valid)
    n = int(valid.sum())
    if n == 0:
        raise EmptyRegionError("no valid pixels")
    return math.fsum(error_magnitude(pred, gt)[valid]) / n


def fl_all(pred, gt, valid=None) -> float:
    """Percentage of valid pixels with error > 3 px and > 5% of the true magnitude."""
    pred, gt, valid = _check_shapes(pred, gt, valid)
    n = int(valid.sum())
    if n == 0:
        raise EmptyRegionError("no valid pixels")
    err = error_magnitude(pred, gt)
    mag = np.sqrt(gt[..., 0] * gt[..., 0] + gt[..., 1] * gt[..., 1])
    outlier = (err > 3.0) & (err > 0.05 * mag)
    return 100.0 * int(np.sum(outlier[valid])) / n


def region_epe(pred, gt, occ, valid=None):
    """(matched EPE, unmatched EPE) split by the occlusion mask; None if a side is empty."""
    pred, gt, valid = _check_shapes(pred, gt, valid)
    occ = np.asarray(occ).astype(bool)
    if occ.shape != pred.shape[:2]:
        raise ValueError(f"occlusion mask {occ.shape} does not match flow {pred.shape[:2]}")
    err = error_magnitude(pred, gt)
    out = []
    for region in (valid & ~occ, valid & occ):
        n = int(region.sum())
        out.append(math.fsum(err[region]) / n if n else None)
    return tuple(out)


@dataclass
class EvalReport:
    epe_all: float
    fl_all: float
    epe_matched: float | None
    epe_unmatched: float | None
    pixels_valid: int
    pixels_matched: int
    pixels_unmatched: int

    def to_text(self) -> str:
        def fmt(x):
            return "n/a" if x is None else f"{x:.4f}"
        return (
            f"epe_all={fmt(self.epe_all)} fl_all={fmt(self.fl_all)} "
            f"epe_matched={fmt(self.epe_matched)} epe_unmatched={fmt(self.epe_unmatched)} "
            f"pixels_valid={self.pixels_valid} pixels_matched={self.pixels_matched} "
            f"pixels_unmatched={self.pixels_unmatched}"
        )


def build_report(pred, gt, valid=None, occ=None) -> EvalReport:
    """Single-pass report; epe_all is the pixel-count-weighted mean of the regions."""
    pred, gt, valid = _check_shapes(pred, gt, valid)
    n = int(valid.sum())
    if n == 0:
        raise EmptyRegionError("no valid pixels")
    err = error_magnitude(pred, gt)
    if occ is None:
        occ = np.zeros(pred.shape[:2], dtype=bool)
    occ = np.asarray(occ).astype(bool)

    matched = valid & ~occ
    unmatched = valid & occ
    n_m, n_u = int(matched.sum()), int(unmatched.sum())
    sum_m = math.fsum(err[matched])
    sum_u = math.fsum(err[unmatched])
    return EvalReport(
        epe_all=(sum_m + sum_u) / (n_m + n_u),
        fl_all=fl_all(pred, gt, valid),
        epe_matched=sum_m / n_m if n_m else None,
        epe_unmatched=sum_u / n_u if n_u else None,
        pixels_valid=n,
        pixels_matched=n_m,
        pixels_unmatched=n_u,
    )


def aggregate_reports(reports) -> EvalReport:
    """Pixel-count-weighted aggregation across per-file reports."""
    reports = list(reports)
    if not reports:
        raise EmptyRegionError("no reports to aggregate")

    def wmean(pairs):
        total = sum(n for _, n in pairs)
        if total == 0:
            return None, 0
        return sum(v * n for v, n in pairs) / total, total

    epe_all, n_valid = wmean([(r.epe_all, r.pixels_valid) for r in reports])
    flv, _ = wmean([(r.fl_all, r.pixels_valid) for r in reports])
    epe_m, n_m = wmean([(r.epe_matched, r.pixels_matched) for r in reports if r.epe_matched is not None])
    epe_u, n_u = wmean([(r.epe_unmatched, r.pixels_unmatched) for r in reports if r.epe_unmatched is not None])
    return EvalReport(epe_all, flv, epe_m, epe_u, n_valid, n_m, n_u)
