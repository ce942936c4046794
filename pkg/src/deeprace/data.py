"""Trace ingestion, min-max normalization, and synthetic degradation traces.

A device trace is the drift of drain-source on-resistance (delta_r, in ohms)
sampled at integer indices.  Real measurement archives are not bundled; the
synthetic generator produces the same qualitative shape (a near-linear region
followed by exponential growth) so every downstream experiment runs out of
the box.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

CSV_HEADER = ["index", "delta_r_ohms"]


class TraceError(ValueError):
    """Malformed or unusable trace data."""


class DegenerateRangeError(ValueError):
    """Normalizer fitted on a constant (zero-range) set of traces."""


@dataclass(frozen=True)
class DeviceTrace:
    """One device's on-resistance drift series."""

    device_id: str
    indices: np.ndarray  # int, strictly increasing
    delta_r: np.ndarray  # ohms, same length

    def __post_init__(self):
        idx = np.asarray(self.indices, dtype=np.int64)
        dr = np.asarray(self.delta_r, dtype=np.float64)
        if idx.shape != dr.shape or idx.ndim != 1:
            raise TraceError("indices and delta_r must be equal-length 1-D")
        if len(idx) > 1 and not np.all(np.diff(idx) > 0):
            raise TraceError(f"{self.device_id}: indices not strictly increasing")
        object.__setattr__(self, "indices", idx)
        object.__setattr__(self, "delta_r", dr)

    def __len__(self) -> int:
        return len(self.indices)


@dataclass(frozen=True)
class Normalizer:
    """Affine map [r_min, r_max] -> [-1, 1]; no clamping outside the range."""

    r_min: float
    r_max: float

    def __post_init__(self):
        if not self.r_max > self.r_min:
            raise DegenerateRangeError(
                f"degenerate range: r_min={self.r_min} r_max={self.r_max}"
            )

    def normalize(self, values):
        v = np.asarray(values, dtype=np.float64)
        return 2.0 * (v - self.r_min) / (self.r_max - self.r_min) - 1.0

    def denormalize(self, values):
        v = np.asarray(values, dtype=np.float64)
        return (v + 1.0) * (self.r_max - self.r_min) / 2.0 + self.r_min


def fit_normalizer(traces) -> Normalizer:
    """Min-max range over the union of the given (training) traces.

    The normalizer is fitted on training devices only and shared with the
    held-out device; values beyond the range map outside [-1, 1] on purpose
    (that is the extrapolation region the predictor must reach into).
    """
    lo = min(float(np.min(t.delta_r)) for t in traces)
    hi = max(float(np.max(t.delta_r)) for t in traces)
    return Normalizer(lo, hi)


def load_csv(path) -> DeviceTrace:
    """Read a two-column "index,delta_r_ohms" CSV into a DeviceTrace."""
    indices, values = [], []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise TraceError(f"{path}: empty file") from None
        if [h.strip() for h in header] != CSV_HEADER:
            raise TraceError(f"{path}: expected header {','.join(CSV_HEADER)!r}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                indices.append(int(row[0]))
                values.append(float(row[1]))
            except (ValueError, IndexError):
                raise TraceError(f"{path}: malformed row at line {lineno}: {row!r}") from None
    if not indices:
        raise TraceError(f"{path}: no data rows")
    device_id = _stem(path)
    return DeviceTrace(device_id, np.array(indices), np.array(values))


def save_csv(trace: DeviceTrace, path) -> None:
    """Write a trace as "index,delta_r_ohms" with 12 significant digits."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_HEADER)
        for i, r in zip(trace.indices, trace.delta_r):
            writer.writerow([int(i), format(float(r), ".12g")])


def _stem(path) -> str:
    import os

    return os.path.splitext(os.path.basename(str(path)))[0]


@dataclass(frozen=True)
class SynthParams:
    """Synthetic degradation curve: linear ramp plus exponential onset."""

    linear_rate: float = 6e-5  # ohms per sample
    exp_scale: float = 2e-4  # ohms
    exp_rate: float = 0.012  # 1/sample
    noise_sigma: float = 5e-4  # ohms
    length: int = 500
    seed: int = 0

    def __post_init__(self):
        if min(self.linear_rate, self.exp_scale, self.exp_rate, self.noise_sigma) < 0:
            raise ValueError("synthetic parameters must be non-negative")
        if self.length < 1:
            raise ValueError("length must be positive")


def synth_degradation(p: SynthParams, device_id: str = "synth") -> DeviceTrace:
    """Generate dR(t) = a*t + b*(e^(c*t) - 1) + noise, clamped at 0."""
    t = np.arange(p.length, dtype=np.float64)
    clean = p.linear_rate * t + p.exp_scale * np.expm1(p.exp_rate * t)
    rng = np.random.default_rng(p.seed)
    noisy = clean + rng.normal(0.0, p.noise_sigma, size=p.length)
    return DeviceTrace(device_id, np.arange(p.length), np.maximum(noisy, 0.0))


# Five bundled device presets.  Rates are spread ~+/-30% around a common
# family so leave-one-out training has related but non-identical devices;
# every preset crosses 0.05 ohm well before its end.
PRESETS: dict[str, SynthParams] = {
    "dev1": SynthParams(5.0e-5, 2.4e-4, 0.0115, 4e-4, 500, seed=101),
    "dev2": SynthParams(6.0e-5, 2.0e-4, 0.0120, 5e-4, 500, seed=202),
    "dev3": SynthParams(7.0e-5, 1.6e-4, 0.0128, 4e-4, 500, seed=303),
    "dev4": SynthParams(5.5e-5, 2.8e-4, 0.0110, 6e-4, 500, seed=404),
    "dev5": SynthParams(6.5e-5, 1.8e-4, 0.0124, 5e-4, 500, seed=505),
}


def preset_traces() -> dict[str, DeviceTrace]:
    """Generate the five bundled synthetic devices."""
    return {name: synth_degradation(p, name) for name, p in PRESETS.items()}


def preset_catalogue_text() -> str:
    """key=value description of the presets, one block per device."""
    lines = []
    for name, p in PRESETS.items():
        lines.append(f"[{name}]")
        lines.append(f"linear_rate={p.linear_rate!r}")
        lines.append(f"exp_scale={p.exp_scale!r}")
        lines.append(f"exp_rate={p.exp_rate!r}")
        lines.append(f"noise_sigma={p.noise_sigma!r}")
        lines.append(f"length={p.length}")
        lines.append(f"seed={p.seed}")
        lines.append("")
    return "\n".join(lines)
