"""Evaluation metrics: MSE/log-MSE, residuals, box stats, detection error.

The detection-point metric scores each device at t_5%, the first sample
index where the sensed drift reaches 0.05 ohm, as the relative error of the
predicted value there (in percent, averaged over devices).

log_mse uses the natural logarithm; the choice is stamped into every report
header.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .linalg import ShapeError

DETECTION_THRESHOLD_OHMS = 0.05
LOG_BASE = "e"  # natural log


class MetricUndefinedError(ValueError):
    """A device never crosses the detection threshold."""


@dataclass(frozen=True)
class BoxStats:
    median: float
    q1: float
    q3: float
    whisker_lo: float
    whisker_hi: float
    outliers: tuple[float, ...]


@dataclass(frozen=True)
class ErrorReport:
    mse: float
    log_mse: float
    error_diff: np.ndarray  # residuals, ohms
    box: BoxStats
    error_at_5pct: float | None  # percent, or None when undefined


def error_diff(actual, predicted) -> np.ndarray:
    """Elementwise residual actual - predicted."""
    a = np.asarray(actual, dtype=np.float64)
    p = np.asarray(predicted, dtype=np.float64)
    if a.shape != p.shape:
        raise ShapeError(f"error_diff shape mismatch: {a.shape} vs {p.shape}")
    return a - p


def log_mse(mse: float) -> float:
    """Natural log of the MSE; -inf for a perfect fit."""
    if mse < 0:
        raise ValueError("mse must be non-negative")
    if mse == 0:
        return float("-inf")
    return math.log(mse)


def detection_index(actual, threshold: float = DETECTION_THRESHOLD_OHMS) -> int:
    """First index where the sensed value reaches the threshold."""
    a = np.asarray(actual, dtype=np.float64)
    hits = np.nonzero(a >= threshold)[0]
    if len(hits) == 0:
        raise MetricUndefinedError(f"trace never reaches {threshold} ohms")
    return int(hits[0])


def error_at_5pct(
    predicted_by_device: dict[str, np.ndarray],
    actual_by_device: dict[str, np.ndarray],
    threshold: float = DETECTION_THRESHOLD_OHMS,
) -> float:
    """Average relative error (percent) of the prediction at each device's t_5%.

    Prediction and actual arrays for a device share the same indexing, so
    pred[t_5%] is the forecast for the detection instant.
    """
    if set(predicted_by_device) != set(actual_by_device):
        raise ShapeError("predicted and actual device sets differ")
    if not actual_by_device:
        raise ShapeError("no devices given")
    total = 0.0
    for device_id, actual in actual_by_device.items():
        try:
            t5 = detection_index(actual, threshold)
        except MetricUndefinedError:
            raise MetricUndefinedError(
                f"{device_id}: trace never reaches {threshold} ohms"
            ) from None
        pred = np.asarray(predicted_by_device[device_id], dtype=np.float64)
        if t5 >= len(pred):
            raise ShapeError(f"{device_id}: prediction does not cover t_5%={t5}")
        total += abs(float(pred[t5]) - threshold) / threshold
    return 100.0 * total / len(actual_by_device)


def box_stats(residuals) -> BoxStats:
    """Box-whisker summary: linear-interpolation quartiles, 1.5*IQR whiskers."""
    r = np.asarray(residuals, dtype=np.float64)
    if r.ndim != 1 or len(r) < 4:
        raise ShapeError("box_stats needs at least 4 samples in a 1-D array")
    q1, med, q3 = np.percentile(r, [25, 50, 75])
    iqr = q3 - q1
    lo_fence = q1 - 1.5 * iqr
    hi_fence = q3 + 1.5 * iqr
    inside = r[(r >= lo_fence) & (r <= hi_fence)]
    outliers = r[(r < lo_fence) | (r > hi_fence)]
    return BoxStats(
        median=float(med),
        q1=float(q1),
        q3=float(q3),
        whisker_lo=float(np.min(inside)),
        whisker_hi=float(np.max(inside)),
        outliers=tuple(float(x) for x in np.sort(outliers)),
    )


def build_report(actual, predicted, threshold: float = DETECTION_THRESHOLD_OHMS) -> ErrorReport:
    """Full per-device report on denormalized (ohm-scale) sequences."""
    resid = error_diff(actual, predicted)
    m = float(np.mean(resid**2))
    try:
        t5 = detection_index(actual, threshold)
        e5 = error_at_5pct({"d": np.asarray(predicted)}, {"d": np.asarray(actual)}, threshold)
    except MetricUndefinedError:
        e5 = None
    return ErrorReport(
        mse=m,
        log_mse=log_mse(m),
        error_diff=resid,
        box=box_stats(resid),
        error_at_5pct=e5,
    )


def report_keyvalue(report: ErrorReport) -> str:
    """Flat key=value rendering of a report."""
    lines = [
        f"log_base={LOG_BASE}",
        f"mse={report.mse!r}",
        f"log_mse={report.log_mse!r}",
        f"error_at_5pct={'' if report.error_at_5pct is None else repr(report.error_at_5pct)}",
        f"box_median={report.box.median!r}",
        f"box_q1={report.box.q1!r}",
        f"box_q3={report.box.q3!r}",
        f"box_whisker_lo={report.box.whisker_lo!r}",
        f"box_whisker_hi={report.box.whisker_hi!r}",
        f"box_outlier_count={len(report.box.outliers)}",
    ]
    return "\n".join(lines) + "\n"


def save_residuals_csv(report: ErrorReport, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["index", "error_diff_ohms"])
        for i, r in enumerate(report.error_diff):
            writer.writerow([i, format(float(r), ".12g")])
