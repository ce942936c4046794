"""Classical one-device predictors used for the method comparison.

Two documented stand-ins: a constant-velocity Kalman filter over [r, r_dot]
and a sequential-importance-resampling particle filter over the parameters
of an exponential growth curve R(t) = a*(e^(b*t) - 1).  Both filter a trace
prefix and then extrapolate a fixed horizon with no further updates, which
is exactly how the comparison table is produced.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .metrics import error_at_5pct


class DegeneracyError(RuntimeError):
    """Particle weights collapsed (effective sample size < 2)."""


@dataclass
class KalmanModel:
    """Constant-velocity linear model over [r, r_dot]."""

    process_noise: float = 1e-10
    measurement_noise: float = 1e-8
    state: np.ndarray = field(default_factory=lambda: np.zeros(2))
    covariance: np.ndarray = field(default_factory=lambda: np.diag([1e-4, 1e-6]))

    _F = np.array([[1.0, 1.0], [0.0, 1.0]])
    _H = np.array([[1.0, 0.0]])

    def initialize(self, r0: float, r1: float) -> None:
        self.state = np.array([r1, r1 - r0])
        self.covariance = np.diag([1e-4, 1e-6])

    def step(self, measurement: float) -> None:
        F, H = self._F, self._H
        # process noise enters through the velocity component
        Q = self.process_noise * np.array([[0.25, 0.5], [0.5, 1.0]])
        x = F @ self.state
        P = F @ self.covariance @ F.T + Q
        S = P[0, 0] + self.measurement_noise
        K = P[:, 0] / S
        innov = measurement - x[0]
        self.state = x + K * innov
        P = (np.eye(2) - np.outer(K, H.ravel())) @ P
        self.covariance = (P + P.T) / 2.0  # keep symmetric

    def extrapolate(self, horizon: int) -> np.ndarray:
        r, rdot = self.state
        return r + rdot * np.arange(1, horizon + 1)


def kalman_predict(
    prefix, horizon: int, q: float = 1e-10, rho: float = 1e-8
) -> np.ndarray:
    """Filter the prefix, then propagate the state `horizon` steps ahead."""
    prefix = np.asarray(prefix, dtype=np.float64)
    if len(prefix) < 2:
        raise ValueError("kalman_predict needs a prefix of at least 2 samples")
    model = KalmanModel(process_noise=q, measurement_noise=rho)
    model.initialize(prefix[0], prefix[1])
    for z in prefix[2:]:
        model.step(float(z))
    return model.extrapolate(horizon)


@dataclass
class ParticleModel:
    """Particle ensemble over (a, b) of R(t) = a*(e^(b*t) - 1)."""

    a: np.ndarray
    b: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        if len(self.a) < 100:
            raise ValueError("need at least 100 particles")

    def effective_sample_size(self) -> float:
        return 1.0 / float(np.sum(self.weights**2))

    def mean_trajectory(self, times: np.ndarray) -> np.ndarray:
        curves = self.a[:, None] * np.expm1(self.b[:, None] * times[None, :])
        return self.weights @ curves


def _systematic_resample(weights: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    n = len(weights)
    positions = (rng.random() + np.arange(n)) / n
    return np.searchsorted(np.cumsum(weights), positions)


def particle_predict(
    prefix,
    horizon: int,
    n_particles: int = 1000,
    seed: int = 0,
    likelihood_sigma: float = 1e-3,
) -> np.ndarray:
    """SIR over (a, b), then the weighted-mean curve propagated ahead.

    Particles are seeded on curves passing near the last prefix sample with
    growth rates spread over a wide band, then reweighted against every
    prefix sample in order.  Resampling is systematic (deterministic under
    seed) with a small log-space jitter to keep diversity.
    """
    prefix = np.asarray(prefix, dtype=np.float64)
    if len(prefix) < 5:
        raise ValueError("particle_predict needs a prefix of at least 5 samples")
    if horizon == 0:
        return np.zeros(0)
    rng = np.random.default_rng(seed)
    T = len(prefix) - 1
    anchor = max(float(prefix[-1]), 1e-6)

    b = rng.uniform(0.001, 0.05, size=n_particles)
    a = anchor / np.expm1(b * T) * np.exp(rng.normal(0.0, 0.5, size=n_particles))
    w = np.full(n_particles, 1.0 / n_particles)
    model = ParticleModel(a, b, w)

    times = np.arange(len(prefix), dtype=np.float64)
    for t in range(1, len(prefix)):
        pred = model.a * np.expm1(model.b * times[t])
        loglik = -0.5 * ((prefix[t] - pred) / likelihood_sigma) ** 2
        loglik -= loglik.max()
        w = model.weights * np.exp(loglik)
        total = w.sum()
        if total <= 0:
            raise DegeneracyError(f"all particle weights vanished at step {t}")
        w /= total
        model.weights = w
        ess = model.effective_sample_size()
        if ess < 2.0:
            raise DegeneracyError(f"effective sample size {ess:.2f} at step {t}")
        if ess < n_particles / 2.0:
            idx = _systematic_resample(w, rng)
            model.a = model.a[idx] * np.exp(rng.normal(0.0, 0.02, size=n_particles))
            model.b = model.b[idx] * np.exp(rng.normal(0.0, 0.02, size=n_particles))
            model.weights = np.full(n_particles, 1.0 / n_particles)

    future = np.arange(T + 1, T + 1 + horizon, dtype=np.float64)
    return model.mean_trajectory(future)


def detection_comparison(
    net,
    normalizer,
    actual,
    lead: int,
    seed: int = 0,
    device_id: str = "device",
) -> "list[ComparisonRow]":
    """Score all three predictors at the detection point of one trace.

    Each predictor sees the trace prefix ending `lead` samples before t_5%
    and extrapolates lead+1 steps, so its forecast covers t_5% itself.
    """
    from . import network as _network
    from .metrics import detection_index

    actual = np.asarray(actual, dtype=np.float64)
    t5 = detection_index(actual)
    prefix_end = t5 - lead
    cfg = net.config
    if prefix_end < max(cfg.tau, 5):
        raise ValueError(f"prefix before t_5% - lead too short ({prefix_end} samples)")
    horizon = lead + 1
    if horizon > cfg.n:
        raise ValueError(f"lead {lead} exceeds model output length n={cfg.n} - 1")
    prefix = actual[:prefix_end]

    x = normalizer.normalize(prefix[-cfg.tau :]).reshape(1, cfg.tau, cfg.k)
    tape = _network.forward_batch(net, x, mode="rollout")
    futures = {
        "deep_race": normalizer.denormalize(tape.z[0, :horizon, 0]),
        "kalman": kalman_predict(prefix, horizon),
        "particle": particle_predict(prefix, horizon, seed=seed),
    }
    preds = {
        method: {device_id: np.concatenate([prefix, f])[: t5 + 1]}
        for method, f in futures.items()
    }
    return compare(preds, {device_id: actual[: t5 + 1]})


@dataclass
class ComparisonRow:
    method: str
    error_at_5pct: float
    ratio_vs_deep_race: float


def compare(
    predictions_by_method: dict[str, dict[str, np.ndarray]],
    actual_by_device: dict[str, np.ndarray],
    reference: str = "deep_race",
) -> list[ComparisonRow]:
    """Detection-point error per method plus the ratio to the reference.

    `predictions_by_method[method][device]` must index the same sample axis
    as `actual_by_device[device]`.
    """
    if reference not in predictions_by_method:
        raise ValueError(f"reference method {reference!r} missing")
    errors = {
        method: error_at_5pct(preds, actual_by_device)
        for method, preds in predictions_by_method.items()
    }
    ref = errors[reference]
    rows = [
        ComparisonRow(method, err, (err / ref) if ref > 0 else float("inf"))
        for method, err in errors.items()
    ]
    rows.sort(key=lambda r: (r.method != reference, r.method))
    return rows


def comparison_csv(rows: list[ComparisonRow], path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["method", "error_at_5pct", "ratio_vs_deep_race"])
        for row in rows:
            writer.writerow(
                [row.method, format(row.error_at_5pct, ".6g"),
                 format(row.ratio_vs_deep_race, ".6g")]
            )


def comparison_text(rows: list[ComparisonRow]) -> str:
    lines = [f"{'method':<12} {'error_at_5pct':>14} {'ratio':>8}"]
    for row in rows:
        lines.append(
            f"{row.method:<12} {row.error_at_5pct:>13.4f}% {row.ratio_vs_deep_race:>8.3f}"
        )
    return "\n".join(lines) + "\n"
