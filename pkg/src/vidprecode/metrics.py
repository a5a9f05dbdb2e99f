"""Y-channel quality metrics and Bjontegaard delta computations.

BD deltas use the classic method: cubic polynomial fit of log10(rate) against
quality (or quality against log10(rate)), integrated over the overlapping
interval. SSIM is single-scale (Gaussian 11x11, sigma 1.5) and labeled as such
wherever it is reported.
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass
from typing import List, Sequence, Tuple

import numpy as np

from .errors import InsufficientPoints, InvalidArgument, InvalidShape, NoOverlap
from .video_io import Frame

MIN_FIT_POINTS = 4


@dataclass(frozen=True)
class RdPoint:
    rate_kbps: float
    quality: float

    def __post_init__(self):
        if not self.rate_kbps > 0:
            raise InvalidArgument(f"rate must be positive, got {self.rate_kbps}")
        if not math.isfinite(self.quality) and not math.isinf(self.quality):
            raise InvalidArgument(f"quality must be a number, got {self.quality}")


class RdCurve:
    """RD points strictly increasing in rate; quality inversions warn only."""

    def __init__(self, points: Sequence[RdPoint]):
        pts = list(points)
        if not pts:
            raise InvalidArgument("empty RD curve")
        for a, b in zip(pts, pts[1:]):
            if b.rate_kbps <= a.rate_kbps:
                raise InvalidArgument(
                    f"rates must be strictly increasing: {a.rate_kbps} -> {b.rate_kbps}"
                )
            if math.isfinite(a.quality) and math.isfinite(b.quality) and b.quality < a.quality:
                warnings.warn(
                    f"quality inversion at {b.rate_kbps} kbps ({a.quality} -> {b.quality})",
                    stacklevel=2,
                )
        self.points = pts

    def __len__(self):
        return len(self.points)

    def rates(self) -> np.ndarray:
        return np.array([p.rate_kbps for p in self.points])

    def qualities(self) -> np.ndarray:
        return np.array([p.quality for p in self.points])

    def finite(self) -> "RdCurve":
        """Drop infinite-quality points (lossless ladder ends) before fitting."""
        kept = [p for p in self.points if math.isfinite(p.quality)]
        if len(kept) != len(self.points):
            warnings.warn("dropping infinite-quality RD points before fitting", stacklevel=2)
        if not kept:
            raise InsufficientPoints("no finite-quality points on curve")
        return RdCurve(kept)

    def write_csv(self, path: str, header_comments: Sequence[str] = ()) -> None:
        with open(path, "w", newline="") as fh:
            for line in header_comments:
                fh.write(f"# {line}\n")
            writer = csv.writer(fh)
            writer.writerow(["rate_kbps", "quality"])
            for p in self.points:
                writer.writerow([repr(p.rate_kbps), repr(p.quality)])

    @classmethod
    def read_csv(cls, path: str) -> "RdCurve":
        with open(path, newline="") as fh:
            rows = [r for r in csv.reader(line for line in fh if not line.startswith("#"))]
        if not rows or [c.strip() for c in rows[0]] != ["rate_kbps", "quality"]:
            got = rows[0] if rows else []
            raise InvalidArgument(f"{path}: expected header 'rate_kbps,quality', got {got}")
        pts = [RdPoint(float(r), float(q)) for r, q in rows[1:]]
        return cls(pts)


# ---------------------------------------------------------------------------
# Frame metrics


def _check_same_dims(a: Frame, b: Frame) -> None:
    if (a.width, a.height) != (b.width, b.height):
        raise InvalidShape(
            f"frames differ: {a.width}x{a.height} vs {b.width}x{b.height}"
        )


def psnr_y(a: Frame, b: Frame) -> float:
    """Luma PSNR in dB; identical frames return +inf (excluded from fits)."""
    _check_same_dims(a, b)
    diff = a.y.astype(np.float64) - b.y.astype(np.float64)
    mse = float(np.mean(diff * diff))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(255.0 ** 2 / mse)


def _gaussian_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    half = (size - 1) / 2.0
    x = np.arange(size) - half
    g = np.exp(-(x ** 2) / (2.0 * sigma ** 2))
    return g / g.sum()


def _filter_valid(img: np.ndarray, g: np.ndarray) -> np.ndarray:
    """Separable 'valid'-mode Gaussian filtering."""
    tmp = np.apply_along_axis(lambda r: np.convolve(r, g, mode="valid"), 1, img)
    return np.apply_along_axis(lambda c: np.convolve(c, g, mode="valid"), 0, tmp)


def ssim_y(a: Frame, b: Frame) -> float:
    """Single-scale SSIM on luma: Gaussian 11x11 sigma 1.5, K1=.01, K2=.03, L=255."""
    _check_same_dims(a, b)
    if a.height < 11 or a.width < 11:
        raise InvalidShape(f"SSIM needs at least 11x11, got {a.width}x{a.height}")
    x = a.y.astype(np.float64)
    y = b.y.astype(np.float64)
    g = _gaussian_window()
    c1 = (0.01 * 255.0) ** 2
    c2 = (0.03 * 255.0) ** 2
    mu_x = _filter_valid(x, g)
    mu_y = _filter_valid(y, g)
    xx = _filter_valid(x * x, g) - mu_x * mu_x
    yy = _filter_valid(y * y, g) - mu_y * mu_y
    xy = _filter_valid(x * y, g) - mu_x * mu_y
    num = (2.0 * mu_x * mu_y + c1) * (2.0 * xy + c2)
    den = (mu_x ** 2 + mu_y ** 2 + c1) * (xx + yy + c2)
    return float(np.mean(num / den))


# ---------------------------------------------------------------------------
# Bjontegaard deltas


@dataclass
class BdReport:
    bd_rate_percent: float
    bd_quality: float
    quality_overlap: Tuple[float, float]
    log_rate_overlap: Tuple[float, float]
    anchor_fit_rate: List[float]     # cubic coeffs, log10(rate) as fn of quality
    test_fit_rate: List[float]
    anchor_fit_quality: List[float]  # cubic coeffs, quality as fn of log10(rate)
    test_fit_quality: List[float]

    def as_dict(self) -> dict:
        return {
            "bd_rate_percent": self.bd_rate_percent,
            "bd_quality": self.bd_quality,
            "quality_overlap": list(self.quality_overlap),
            "log_rate_overlap": list(self.log_rate_overlap),
            "fits": {
                "anchor_log_rate_of_quality": self.anchor_fit_rate,
                "test_log_rate_of_quality": self.test_fit_rate,
                "anchor_quality_of_log_rate": self.anchor_fit_quality,
                "test_quality_of_log_rate": self.test_fit_quality,
            },
            "quality_metric_note": "SSIM values are single-scale",
        }


def _prepare(anchor: RdCurve, test: RdCurve) -> Tuple[RdCurve, RdCurve]:
    a, t = anchor.finite(), test.finite()
    if len(a) < MIN_FIT_POINTS or len(t) < MIN_FIT_POINTS:
        raise InsufficientPoints(
            f"BD fit needs >= {MIN_FIT_POINTS} finite points per curve, "
            f"got {len(a)} and {len(t)}"
        )
    return a, t


def _poly_avg(coeffs: np.ndarray, lo: float, hi: float) -> float:
    integ = np.polyint(coeffs)
    return (np.polyval(integ, hi) - np.polyval(integ, lo)) / (hi - lo)


def bd_rate(anchor: RdCurve, test: RdCurve) -> float:
    """Average rate difference in percent over the overlapping quality range;
    negative means the test curve saves rate."""
    return _bd(anchor, test).bd_rate_percent


def bd_quality(anchor: RdCurve, test: RdCurve) -> float:
    """Average quality difference (dB for PSNR curves) over the overlapping
    log-rate range; positive means the test curve is better."""
    return _bd(anchor, test).bd_quality


def bd_report(anchor: RdCurve, test: RdCurve) -> BdReport:
    return _bd(anchor, test)


def _bd(anchor: RdCurve, test: RdCurve) -> BdReport:
    a, t = _prepare(anchor, test)
    aq, tq = a.qualities(), t.qualities()
    alr, tlr = np.log10(a.rates()), np.log10(t.rates())

    qlo, qhi = max(aq.min(), tq.min()), min(aq.max(), tq.max())
    if not qhi > qlo:
        raise NoOverlap(f"quality ranges [{aq.min()},{aq.max()}] and [{tq.min()},{tq.max()}] do not overlap")
    rlo, rhi = max(alr.min(), tlr.min()), min(alr.max(), tlr.max())
    if not rhi > rlo:
        raise NoOverlap("log-rate ranges do not overlap")

    fit_a_r = np.polyfit(aq, alr, 3)
    fit_t_r = np.polyfit(tq, tlr, 3)
    avg_diff_logr = _poly_avg(fit_t_r, qlo, qhi) - _poly_avg(fit_a_r, qlo, qhi)
    bd_r = (10.0 ** avg_diff_logr - 1.0) * 100.0

    fit_a_q = np.polyfit(alr, aq, 3)
    fit_t_q = np.polyfit(tlr, tq, 3)
    bd_q = _poly_avg(fit_t_q, rlo, rhi) - _poly_avg(fit_a_q, rlo, rhi)

    return BdReport(
        bd_rate_percent=float(bd_r),
        bd_quality=float(bd_q),
        quality_overlap=(float(qlo), float(qhi)),
        log_rate_overlap=(float(rlo), float(rhi)),
        anchor_fit_rate=[float(c) for c in fit_a_r],
        test_fit_rate=[float(c) for c in fit_t_r],
        anchor_fit_quality=[float(c) for c in fit_a_q],
        test_fit_quality=[float(c) for c in fit_t_q],
    )
