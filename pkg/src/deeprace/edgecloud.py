"""Deterministic discrete-event simulator of the edge-cloud protocol.

The cloud trains on the aggregated traces of every device except one and
pushes versioned model snapshots; the held-out device's edge node streams
its samples, runs rollout inference, and requests a retrain whenever a
matured prediction misses the sensed value by more than the configured
threshold.  Transport is simulated in-process: events are processed in
strict (tick, insertion) order so a scenario is a pure function of
(spec, seed).
"""

from __future__ import annotations

import csv
import heapq
import struct
import zlib
from dataclasses import dataclass, field, replace

import numpy as np

from . import metrics, network, training
from .data import DeviceTrace, Normalizer
from .network import NetConfig, StackedLstm
from .training import TrainConfig

MAGIC = b"DRCE"
FORMAT_VERSION = 1


class SnapshotError(ValueError):
    """Malformed, corrupted, or incompatible model snapshot."""


@dataclass(frozen=True)
class ModelSnapshot:
    """Versioned serialized network plus its normalizer."""

    version: int
    config: NetConfig
    parameters: tuple[np.ndarray, ...]
    normalizer: Normalizer

    @classmethod
    def from_model(cls, version: int, net: StackedLstm, nz: Normalizer) -> "ModelSnapshot":
        return cls(version, net.config, tuple(a.copy() for a in network.param_arrays(net)), nz)

    def to_model(self) -> StackedLstm:
        return network.net_from_arrays(self.config, [a.copy() for a in self.parameters])


# header: magic, format u16, version u32, k/tau/n/hidden/ell u32, learn_init u8,
# r_min/r_max f64, payload length u64; then float64 payload; then CRC32 u32
_HEADER = struct.Struct("<4sHI5IB2dQ")


def encode_model(snap: ModelSnapshot) -> bytes:
    cfg = snap.config
    payload = b"".join(np.ascontiguousarray(a, dtype=np.float64).tobytes() for a in snap.parameters)
    header = _HEADER.pack(
        MAGIC,
        FORMAT_VERSION,
        snap.version,
        cfg.k,
        cfg.tau,
        cfg.n,
        cfg.hidden,
        cfg.ell,
        1 if cfg.learn_init_state else 0,
        snap.normalizer.r_min,
        snap.normalizer.r_max,
        len(payload),
    )
    body = header + payload
    return body + struct.pack("<I", zlib.crc32(body))


def decode_model(blob: bytes, expected_config: NetConfig | None = None) -> ModelSnapshot:
    if len(blob) < _HEADER.size + 4:
        raise SnapshotError("snapshot too short")
    body, (crc,) = blob[:-4], struct.unpack("<I", blob[-4:])
    if zlib.crc32(body) != crc:
        raise SnapshotError("checksum mismatch")
    (magic, fmt, version, k, tau, n, hidden, ell, learn_init,
     r_min, r_max, payload_len) = _HEADER.unpack(body[: _HEADER.size])
    if magic != MAGIC:
        raise SnapshotError(f"bad magic {magic!r}")
    if fmt != FORMAT_VERSION:
        raise SnapshotError(f"unsupported format version {fmt}")
    payload = body[_HEADER.size :]
    if len(payload) != payload_len:
        raise SnapshotError("payload length mismatch")
    cfg = NetConfig(k=k, tau=tau, n=n, hidden=hidden, ell=ell,
                    learn_init_state=bool(learn_init))
    if expected_config is not None and cfg != expected_config:
        raise SnapshotError(f"config mismatch: snapshot {cfg} vs expected {expected_config}")
    flat = np.frombuffer(payload, dtype=np.float64)
    shapes = [a.shape for a in network.param_arrays(network.init_params(cfg, 0))]
    want = sum(int(np.prod(s)) for s in shapes)
    if len(flat) != want:
        raise SnapshotError(f"payload holds {len(flat)} floats, expected {want}")
    arrays, pos = [], 0
    for s in shapes:
        size = int(np.prod(s))
        arrays.append(flat[pos : pos + size].reshape(s).copy())
        pos += size
    return ModelSnapshot(version, cfg, tuple(arrays), Normalizer(r_min, r_max))


def save_model(snap: ModelSnapshot, path) -> None:
    with open(path, "wb") as fh:
        fh.write(encode_model(snap))


def load_model(path, expected_config: NetConfig | None = None) -> ModelSnapshot:
    with open(path, "rb") as fh:
        return decode_model(fh.read(), expected_config)


@dataclass
class EdgeNode:
    """Edge-side state: rolling buffer, current model, matured-error trigger."""

    node_id: str
    snapshot: ModelSnapshot
    delta_r_t: float  # ohms; retrain trigger threshold
    horizon: int
    buffer: list[float] = field(default_factory=list)
    pending_upload: list[tuple[int, float]] = field(default_factory=list)
    # earliest prediction per future index: index -> (predicted_ohms, version)
    pending_predictions: dict[int, tuple[float, int]] = field(default_factory=dict)
    outstanding_request: bool = False
    model: StackedLstm = None
    _sample_count: int = 0

    def __post_init__(self):
        if self.model is None:
            self.model = self.snapshot.to_model()

    def adopt(self, snap: ModelSnapshot) -> None:
        if snap.version <= self.snapshot.version:
            raise ValueError("model versions must strictly increase")
        self.snapshot = snap
        self.model = snap.to_model()
        self.outstanding_request = False


def edge_step(node: EdgeNode, index: int, value: float):
    """Ingest one sensed sample; returns (prediction or None, request or None).

    The prediction is the rollout over the configured horizon (ohm scale).
    A retrain request is emitted when a previously made prediction for this
    index misses the sensed value by more than delta_r_t, with at most one
    request outstanding.
    """
    node.buffer.append(float(value))
    node.pending_upload.append((index, float(value)))
    node._sample_count += 1

    request = None
    matured = node.pending_predictions.pop(index, None)
    if matured is not None:
        predicted, version = matured
        if abs(value - predicted) > node.delta_r_t and not node.outstanding_request:
            node.outstanding_request = True
            request = {"node": node.node_id, "at_index": index,
                       "error": abs(value - predicted), "model_version": version}

    prediction = None
    tau = node.snapshot.config.tau
    if len(node.buffer) >= tau:
        nz = node.snapshot.normalizer
        recent = nz.normalize(np.array(node.buffer[-tau:]))
        x = recent.reshape(1, tau, 1)
        tape = network.forward_batch(node.model, x, mode="rollout")
        rolled = nz.denormalize(tape.z[0, :, 0])
        prediction = rolled[: node.horizon]
        for j, p in enumerate(prediction, start=1):
            target = index + j
            if target not in node.pending_predictions:
                node.pending_predictions[target] = (float(p), node.snapshot.version)
    return prediction, request


@dataclass(frozen=True)
class ScenarioSpec:
    """One leave-one-out streaming scenario."""

    devices: tuple[str, ...]
    holdout: str
    delta_r_t: float = 0.005  # ohms
    horizon: int = 20
    retrain_budget: int = 3
    upload_every: int = 25  # ticks between upload flushes
    train_latency: int = 10  # ticks between request and model push
    train: TrainConfig = field(default_factory=TrainConfig)

    def __post_init__(self):
        if self.holdout not in self.devices:
            raise ValueError(f"holdout {self.holdout!r} not among devices")
        if self.horizon < 1 or self.horizon > self.train.net.n:
            raise ValueError("horizon must be in [1, n]")


@dataclass
class VersionStats:
    version: int
    matured_count: int
    mse: float | None
    log_mse: float | None
    box: metrics.BoxStats | None


@dataclass
class SimReport:
    spec: ScenarioSpec
    seed: int
    retrain_count: int
    message_counts: dict[str, int]
    version_stats: list[VersionStats]
    final_version: int
    event_log: list[tuple[int, str, str]]  # (tick, kind, detail)


@dataclass
class CloudNode:
    """Cloud-side registries: per-device traces and versioned models."""

    traces: dict[str, DeviceTrace]
    holdout: str
    train_cfg: TrainConfig
    seed: int
    uploaded: dict[str, list[tuple[int, float]]] = field(default_factory=dict)
    model_versions: list[ModelSnapshot] = field(default_factory=list)
    train_calls: int = 0

    def train_initial(self) -> ModelSnapshot:
        result = training.train(
            {d: t for d, t in self.traces.items() if d != self.holdout},
            self.traces[self.holdout],
            self.train_cfg,
            seed=self.seed,
        )
        snap = ModelSnapshot.from_model(1, result.best_model, result.normalizer)
        self.model_versions.append(snap)
        return snap

    def retrain(self) -> ModelSnapshot:
        """Warm-start retrain folding in the holdout samples uploaded so far."""
        self.train_calls += 1
        corpus = {d: t for d, t in self.traces.items() if d != self.holdout}
        cfg = self.train_cfg
        up = self.uploaded.get(self.holdout, [])
        w = cfg.net.tau + cfg.net.n
        if len(up) >= w:
            idx = np.array([i for i, _ in up])
            vals = np.array([v for _, v in up])
            corpus[self.holdout + "_uploaded"] = DeviceTrace(
                self.holdout + "_uploaded", idx, np.maximum(vals, 0.0)
            )
        prev = self.model_versions[-1]
        reduced = replace(cfg, it_max=max(1, cfg.it_max // 4))
        result = training.train(
            corpus,
            self.traces[self.holdout],
            reduced,
            seed=(self.seed + 1000 * self.train_calls),
            initial_model=prev.to_model(),
            normalizer=prev.normalizer,
        )
        snap = ModelSnapshot.from_model(prev.version + 1, result.best_model, prev.normalizer)
        self.model_versions.append(snap)
        return snap


def run_scenario(spec: ScenarioSpec, traces: dict[str, DeviceTrace], seed: int) -> SimReport:
    """Execute one scenario end to end; deterministic under (spec, seed)."""
    missing = [d for d in spec.devices if d not in traces]
    if missing:
        raise ValueError(f"unknown devices: {missing}")
    cloud = CloudNode(
        traces={d: traces[d] for d in spec.devices},
        holdout=spec.holdout,
        train_cfg=spec.train,
        seed=seed,
    )
    log: list[tuple[int, str, str]] = []
    counts = {"samples": 0, "uploads": 0, "retrain_requests": 0, "model_pushes": 0}

    snap = cloud.train_initial()
    edge = EdgeNode(spec.holdout, snap, spec.delta_r_t, spec.horizon)
    log.append((0, "ModelPush", "version=1"))
    counts["model_pushes"] += 1

    holdout_trace = traces[spec.holdout]
    queue: list[tuple[int, int, str, object]] = []
    seq = 0

    def push(tick, kind, payload):
        nonlocal seq
        heapq.heappush(queue, (tick, seq, kind, payload))
        seq += 1

    for tick, (idx, val) in enumerate(zip(holdout_trace.indices, holdout_trace.delta_r)):
        push(tick, "Sample", (int(idx), float(val)))
    stream_len = len(holdout_trace)
    for tick in range(spec.upload_every, stream_len + spec.upload_every, spec.upload_every):
        push(tick, "Upload", None)

    residuals_by_version: dict[int, list[float]] = {}
    retrain_count = 0

    while queue:
        tick, _, kind, payload = heapq.heappop(queue)
        if kind == "Sample":
            idx, val = payload
            counts["samples"] += 1
            matured = edge.pending_predictions.get(idx)
            prediction, request = edge_step(edge, idx, val)
            if matured is not None:
                predicted, version = matured
                residuals_by_version.setdefault(version, []).append(val - predicted)
            if request is not None:
                log.append((tick, "RetrainRequest",
                            f"at_index={request['at_index']} error={request['error']:.6g}"))
                counts["retrain_requests"] += 1
                push(tick, "RetrainRequest", request)
        elif kind == "Upload":
            if edge.pending_upload:
                cloud.uploaded.setdefault(edge.node_id, []).extend(edge.pending_upload)
                log.append((tick, "Upload", f"samples={len(edge.pending_upload)}"))
                counts["uploads"] += 1
                edge.pending_upload = []
        elif kind == "RetrainRequest":
            if retrain_count < spec.retrain_budget:
                retrain_count += 1
                new_snap = cloud.retrain()
                push(tick + spec.train_latency, "ModelPush", new_snap)
            else:
                edge.outstanding_request = False  # budget exhausted; drop
        elif kind == "ModelPush":
            edge.adopt(payload)
            counts["model_pushes"] += 1
            log.append((tick, "ModelPush", f"version={payload.version}"))

    version_stats = []
    for version in sorted(residuals_by_version):
        res = np.array(residuals_by_version[version])
        m = float(np.mean(res**2))
        version_stats.append(
            VersionStats(
                version=version,
                matured_count=len(res),
                mse=m,
                log_mse=metrics.log_mse(m),
                box=metrics.box_stats(res) if len(res) >= 4 else None,
            )
        )
    return SimReport(
        spec=spec,
        seed=seed,
        retrain_count=retrain_count,
        message_counts=counts,
        version_stats=version_stats,
        final_version=edge.snapshot.version,
        event_log=log,
    )


def report_summary_text(report: SimReport) -> str:
    lines = [
        f"holdout={report.spec.holdout}",
        f"seed={report.seed}",
        f"delta_r_t={report.spec.delta_r_t!r}",
        f"retrains={report.retrain_count}",
        f"final_version={report.final_version}",
    ]
    for key in sorted(report.message_counts):
        lines.append(f"count_{key}={report.message_counts[key]}")
    for vs in report.version_stats:
        lines.append(
            f"version{vs.version}_matured={vs.matured_count} "
            f"mse={'' if vs.mse is None else repr(vs.mse)}"
        )
    return "\n".join(lines) + "\n"


def save_event_log_csv(report: SimReport, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["tick", "kind", "detail"])
        for tick, kind, detail in report.event_log:
            writer.writerow([tick, kind, detail])


def aggregation_experiment(
    traces: dict[str, DeviceTrace],
    holdout: str,
    m_values: list[int],
    trials: int,
    cfg: TrainConfig,
    seed: int,
    eval_starts: int = 5,
) -> list[tuple[int, float]]:
    """Held-out rollout MSE vs number of training devices per batch.

    For each m, `trials` independently seeded models are trained on m
    randomly chosen non-holdout devices and scored on fixed evaluation
    windows of the held-out trace; the mean MSE per m is returned.
    """
    pool = [d for d in traces if d != holdout]
    if trials < 1:
        raise ValueError("trials must be >= 1")
    for m in m_values:
        if not 1 <= m <= len(pool):
            raise ValueError(f"m={m} outside 1..{len(pool)}")
    test = traces[holdout]
    w = cfg.net.tau + cfg.net.n
    starts = np.linspace(0, len(test) - w, eval_starts).astype(int)

    curve = []
    for m in m_values:
        losses = []
        for trial in range(trials):
            rng = np.random.default_rng((seed, m, trial))
            chosen = sorted(rng.choice(pool, size=m, replace=False))
            batch_cfg = replace(cfg, m=m)
            result = training.train(
                {d: traces[d] for d in chosen},
                test,
                batch_cfg,
                seed=int(rng.integers(0, 2**31)),
            )
            values = result.normalizer.normalize(test.delta_r)
            losses.append(
                float(np.mean([training.rollout_mse(result.best_model, values, int(s))
                               for s in starts]))
            )
        curve.append((m, float(np.mean(losses))))
    return curve
