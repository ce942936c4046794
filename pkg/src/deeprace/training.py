"""Batch construction, BPTT gradients, Adam, and the training loop.

The loop mirrors the cloud-side procedure: draw one random window per
training device, run a teacher-forced forward pass, backpropagate the MSE
through time, take an Adam step, evaluate by autoregressive rollout on a
window of the held-out test trace, and keep the model with the lowest test
error seen so far.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from . import network
from .data import DeviceTrace, Normalizer, fit_normalizer
from .linalg import ShapeError
from .network import ForwardTape, NetConfig, StackedLstm


class InsufficientDataError(ValueError):
    """A trace is too short for the requested window length."""


class TrainingDivergenceError(RuntimeError):
    """Loss or gradients became non-finite."""


@dataclass(frozen=True)
class TrainConfig:
    """Training hyperparameters on top of the network configuration."""

    net: NetConfig = field(default_factory=NetConfig)
    e_th: float = 5e-5  # stop once the rollout test error drops below this
    it_max: int = 1000
    m: int = 4  # devices (windows) per batch
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon_adam: float = 1e-8
    clip_norm: float = 5.0  # global-norm gradient clip; <=0 disables

    def __post_init__(self):
        if self.e_th <= 0:
            raise ValueError("e_th must be positive")
        if self.it_max < 0:
            raise ValueError("it_max must be >= 0")
        if self.m < 1:
            raise ValueError("m must be >= 1")


@dataclass
class TrainingBatch:
    """m teacher-forcing windows: inputs (m, tau+n-1, k), targets (m, n, k)."""

    x: np.ndarray
    y: np.ndarray
    device_ids: list[str]
    window_starts: list[int]


@dataclass
class Gradients:
    """Per-parameter gradient arrays in the canonical parameter order."""

    arrays: list[np.ndarray]

    def global_norm(self) -> float:
        return float(np.sqrt(sum(float(np.sum(a * a)) for a in self.arrays)))


@dataclass
class AdamState:
    """First/second moment accumulators, shaped like the parameters."""

    first_moment: list[np.ndarray]
    second_moment: list[np.ndarray]
    step_count: int = 0

    @classmethod
    def fresh(cls, net: StackedLstm) -> "AdamState":
        shapes = [a.shape for a in network.param_arrays(net)]
        return cls(
            first_moment=[np.zeros(s) for s in shapes],
            second_moment=[np.zeros(s) for s in shapes],
        )


def window_from_trace(values: np.ndarray, start: int, cfg: NetConfig):
    """Split one length tau+n window into teacher inputs and targets."""
    w = cfg.tau + cfg.n
    seq = values[start : start + w]
    x = seq[: w - 1].reshape(-1, cfg.k)
    y = seq[cfg.tau :].reshape(-1, cfg.k)
    return x, y


def generate_data(
    traces: list[np.ndarray] | dict[str, np.ndarray],
    cfg: TrainConfig,
    rng: np.random.Generator,
) -> TrainingBatch:
    """One random contiguous window of length tau+n per device.

    `traces` maps device id to an already-normalized 1-D value series.
    """
    if isinstance(traces, dict):
        items = list(traces.items())
    else:
        items = [(f"device{i}", t) for i, t in enumerate(traces)]
    net = cfg.net
    w = net.tau + net.n
    xs, ys, ids, starts = [], [], [], []
    for device_id, values in items:
        values = np.asarray(values, dtype=np.float64)
        if len(values) < w:
            raise InsufficientDataError(
                f"{device_id}: trace length {len(values)} < window {w}"
            )
        start = int(rng.integers(0, len(values) - w + 1))
        x, y = window_from_trace(values, start, net)
        xs.append(x)
        ys.append(y)
        ids.append(device_id)
        starts.append(start)
    return TrainingBatch(np.stack(xs), np.stack(ys), ids, starts)


def mse(preds, targets) -> float:
    """Mean squared error over every element, averaged over batch rows."""
    p = np.asarray(preds, dtype=np.float64)
    t = np.asarray(targets, dtype=np.float64)
    if p.shape != t.shape:
        raise ShapeError(f"mse shape mismatch: {p.shape} vs {t.shape}")
    return float(np.mean((t - p) ** 2))


def bptt(net: StackedLstm, tape: ForwardTape, targets) -> tuple[float, Gradients]:
    """Exact reverse-mode gradients of the batch MSE through the tape.

    Requires a teacher-forced tape; rollout tapes have an extra gradient
    path through the fed-back inputs that the trainer never uses.
    """
    if tape.mode != "teacher":
        raise ValueError("bptt requires a teacher-forced tape")
    cfg = net.config
    y = np.asarray(targets, dtype=np.float64)
    if y.shape != tape.z.shape:
        raise ShapeError(f"targets {y.shape} do not match predictions {tape.z.shape}")
    m = tape.z.shape[0]
    loss = mse(tape.z, y)
    dz_all = 2.0 * (tape.z - y) / tape.z.size  # dL/dz per output element

    grads = {
        name: np.zeros_like(arr)
        for name, arr in zip(network.param_names(cfg), network.param_arrays(net))
    }
    dh_next = [np.zeros((m, cfg.hidden)) for _ in range(cfg.ell)]
    dc_next = [np.zeros((m, cfg.hidden)) for _ in range(cfg.ell)]
    W_d = net.dense.W_d
    out_index = {t: j for j, t in enumerate(tape.output_steps)}

    total_steps = len(tape.steps)
    for t in reversed(range(total_steps)):
        dx_above = None  # gradient flowing into layer below at this step
        if t in out_index:
            dz_t = dz_all[:, out_index[t]]  # (m, k)
            h_top = tape.steps[t][-1]["h"]
            grads[f"dense.W_d"] += dz_t.T @ h_top
            grads[f"dense.b_d"] += dz_t.sum(axis=0)
            dx_above = dz_t @ W_d  # into the top layer's h at step t
        for lam in reversed(range(cfg.ell)):
            layer = net.layers[lam]
            act = tape.steps[t][lam]
            dh = dh_next[lam].copy()
            if lam == cfg.ell - 1:
                if dx_above is not None:
                    dh += dx_above
            else:
                dh += dx_down
            c_prev = tape.steps[t - 1][lam]["c"] if t > 0 else np.broadcast_to(
                layer.c_0, (m, cfg.hidden)
            )
            do = dh * act["tanh_c"]
            dc = dc_next[lam] + dh * act["o"] * (1.0 - act["tanh_c"] ** 2)
            df = dc * c_prev
            di = dc * act["cbar"]
            dcbar = dc * act["i"]
            dc_next[lam] = dc * act["f"]

            da_i = di * act["i"] * (1.0 - act["i"])
            da_f = df * act["f"] * (1.0 - act["f"])
            da_o = do * act["o"] * (1.0 - act["o"])
            da_c = dcbar * (1.0 - act["cbar"] ** 2)
            v = act["v"]
            pre = f"layer{lam}."
            grads[pre + "W_i"] += da_i.T @ v
            grads[pre + "W_f"] += da_f.T @ v
            grads[pre + "W_o"] += da_o.T @ v
            grads[pre + "W_c"] += da_c.T @ v
            grads[pre + "b_i"] += da_i.sum(axis=0)
            grads[pre + "b_f"] += da_f.sum(axis=0)
            grads[pre + "b_o"] += da_o.sum(axis=0)
            grads[pre + "b_c"] += da_c.sum(axis=0)
            dv = da_i @ layer.W_i + da_f @ layer.W_f + da_o @ layer.W_o + da_c @ layer.W_c
            in_w = layer.in_width
            dx_down = dv[:, :in_w]
            dh_next[lam] = dv[:, in_w:]
        # dx_down for layer 0 is the gradient w.r.t. the teacher-forced
        # input itself; nothing to accumulate.

    for lam in range(cfg.ell):
        grads[f"layer{lam}.h_0"] += dh_next[lam].sum(axis=0)
        grads[f"layer{lam}.c_0"] += dc_next[lam].sum(axis=0)

    ordered = [grads[name] for name in network.param_names(cfg)]
    return loss, Gradients(ordered)


def clip_gradients(grads: Gradients, max_norm: float) -> Gradients:
    """Scale all gradients down so the global norm is at most max_norm."""
    if max_norm <= 0:
        return grads
    norm = grads.global_norm()
    if norm <= max_norm or norm == 0.0:
        return grads
    factor = max_norm / norm
    return Gradients([a * factor for a in grads.arrays])


def adam_step(
    state: AdamState, params: list[np.ndarray], grads: Gradients, cfg: TrainConfig
) -> tuple[list[np.ndarray], AdamState]:
    """One bias-corrected Adam update; returns new params and state."""
    if len(params) != len(grads.arrays):
        raise ShapeError("parameter/gradient count mismatch")
    for p, g in zip(params, grads.arrays):
        if p.shape != g.shape:
            raise ShapeError(f"parameter {p.shape} vs gradient {g.shape}")
        if not np.all(np.isfinite(g)):
            raise TrainingDivergenceError("non-finite gradient")
    t = state.step_count + 1
    b1, b2 = cfg.beta1, cfg.beta2
    new_m, new_v, new_p = [], [], []
    for p, g, m1, v2 in zip(params, grads.arrays, state.first_moment, state.second_moment):
        m1 = b1 * m1 + (1.0 - b1) * g
        v2 = b2 * v2 + (1.0 - b2) * g * g
        m_hat = m1 / (1.0 - b1**t)
        v_hat = v2 / (1.0 - b2**t)
        new_p.append(p - cfg.lr * m_hat / (np.sqrt(v_hat) + cfg.epsilon_adam))
        new_m.append(m1)
        new_v.append(v2)
    return new_p, AdamState(new_m, new_v, t)


@dataclass
class TrainResult:
    best_model: StackedLstm
    best_test_error: float
    history: list[tuple[int, float, float]]  # (iteration, train_mse, test_mse)
    normalizer: Normalizer


def rollout_mse(net: StackedLstm, values: np.ndarray, start: int) -> float:
    """Rollout from tau inputs at `start`, scored against the next n samples."""
    cfg = net.config
    x = values[start : start + cfg.tau].reshape(1, cfg.tau, cfg.k)
    y = values[start + cfg.tau : start + cfg.tau + cfg.n].reshape(1, cfg.n, cfg.k)
    tape = network.forward_batch(net, x, mode="rollout")
    return mse(tape.z, y)


def train(
    training_traces: dict[str, DeviceTrace],
    test_trace: DeviceTrace,
    cfg: TrainConfig,
    seed: int,
    initial_model: StackedLstm | None = None,
    normalizer: Normalizer | None = None,
) -> TrainResult:
    """Full training loop with test-set checkpointing.

    Runs at most it_max iterations, stopping early once the rollout error on
    the test window drops below e_th; returns the model checkpointed at the
    minimum test error (not the final iterate).
    """
    if not training_traces:
        raise InsufficientDataError("need at least one training device")
    if test_trace.device_id in training_traces:
        raise ValueError(f"test device {test_trace.device_id!r} is in the training set")
    net_cfg = cfg.net
    w = net_cfg.tau + net_cfg.n
    if len(test_trace) < w:
        raise InsufficientDataError(
            f"{test_trace.device_id}: trace length {len(test_trace)} < window {w}"
        )

    if normalizer is None:
        normalizer = fit_normalizer(training_traces.values())
    norm_train = {
        did: normalizer.normalize(t.delta_r) for did, t in training_traces.items()
    }
    norm_test = normalizer.normalize(test_trace.delta_r)

    model = initial_model if initial_model is not None else network.init_params(net_cfg, seed)
    model = network.copy_net(model)
    state = AdamState.fresh(model)
    train_rng = np.random.default_rng((seed, 0xA11CE))
    test_rng = np.random.default_rng((seed, 0x7E57))

    best_model = network.copy_net(model)
    best_error = float("inf")
    history: list[tuple[int, float, float]] = []
    for it in range(1, cfg.it_max + 1):
        batch = generate_data(norm_train, cfg, train_rng)
        tape = network.forward_batch(model, batch.x, mode="teacher")
        train_loss, grads = bptt(model, tape, batch.y)
        if not np.isfinite(train_loss):
            raise TrainingDivergenceError(f"training loss non-finite at iteration {it}")
        grads = clip_gradients(grads, cfg.clip_norm)
        if not net_cfg.learn_init_state:
            names = network.param_names(net_cfg)
            grads = Gradients(
                [np.zeros_like(g) if n.endswith((".c_0", ".h_0")) else g
                 for n, g in zip(names, grads.arrays)]
            )
        new_params, state = adam_step(state, network.param_arrays(model), grads, cfg)
        model = network.net_from_arrays(net_cfg, new_params)

        start = int(test_rng.integers(0, len(norm_test) - w + 1))
        test_error = rollout_mse(model, norm_test, start)
        history.append((it, train_loss, test_error))
        if test_error < best_error:
            best_error = test_error
            best_model = network.copy_net(model)
        if test_error < cfg.e_th:
            break

    if not history:  # it_max == 0: hand back the untouched initial model
        best_model = model
    return TrainResult(best_model, best_error, history, normalizer)


def save_history_csv(history, path) -> None:
    """History as CSV: iteration, train_mse, test_mse (6 significant digits)."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["iteration", "train_mse", "test_mse"])
        for it, tr, te in history:
            writer.writerow([it, format(tr, ".6g"), format(te, ".6g")])
