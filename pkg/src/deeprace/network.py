"""Recurrent cells and the stacked forecasting network.

The forecaster is a stack of LSTM cells topped by a dense head that maps the
top hidden state back to the (normalized) measurement space.  Given the last
tau sensed samples it predicts the next n samples.  Two forward flavours:

* teacher-forced (training): the true tau+n-1 inputs are fed in and the n
  dense outputs aligned with the last n targets are returned;
* autoregressive rollout (inference): after the tau warm-up inputs, each
  dense output is fed back as the next input.

Both share the same cell math; the batched core keeps an activation tape so
the trainer can run exact backpropagation through time.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .linalg import Matrix, ShapeError, Vector, as_matrix, as_vector, sigmoid, tanh_elem


@dataclass(frozen=True)
class NetConfig:
    """Network hyperparameters (input size, window lengths, widths)."""

    k: int = 1
    tau: int = 21
    n: int = 104
    hidden: int = 64
    ell: int = 4
    learn_init_state: bool = True  # train initial (h, c) alongside the weights

    def __post_init__(self):
        for name in ("k", "tau", "n", "hidden", "ell"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")


@dataclass
class RnnCellParams:
    """Plain recurrent cell: state update c_t = tanh(W_i x + W_c c + b_i),
    output z_t = W_o c_t + b_o (identity output activation)."""

    W_i: Matrix  # (hidden, k)
    W_c: Matrix  # (hidden, hidden)
    W_o: Matrix  # (out, hidden)
    b_i: Vector  # (hidden,)
    b_o: Vector  # (out,)
    c_0: Vector  # (hidden,)

    def __post_init__(self):
        hidden, k = as_matrix(self.W_i).shape
        self.W_i = as_matrix(self.W_i)
        self.W_c = as_matrix(self.W_c, hidden, hidden)
        self.W_o = as_matrix(self.W_o, None, hidden)
        self.b_i = as_vector(self.b_i, hidden)
        self.b_o = as_vector(self.b_o, self.W_o.shape[0])
        self.c_0 = as_vector(self.c_0, hidden)


@dataclass
class LstmCellParams:
    """Gated cell; each weight maps the joined [x_t, h_prev] vector."""

    W_i: Matrix  # (hidden, in_width + hidden)
    W_o: Matrix
    W_f: Matrix
    W_c: Matrix
    b_i: Vector  # (hidden,)
    b_o: Vector
    b_f: Vector
    b_c: Vector
    c_0: Vector  # (hidden,) initial cell state
    h_0: Vector  # (hidden,) initial hidden state

    def __post_init__(self):
        hidden, joined = as_matrix(self.W_i).shape
        if joined <= hidden:
            raise ShapeError(f"gate width {joined} must exceed hidden {hidden}")
        for name in ("W_i", "W_o", "W_f", "W_c"):
            setattr(self, name, as_matrix(getattr(self, name), hidden, joined))
        for name in ("b_i", "b_o", "b_f", "b_c", "c_0", "h_0"):
            setattr(self, name, as_vector(getattr(self, name), hidden))

    @property
    def hidden(self) -> int:
        return self.W_i.shape[0]

    @property
    def in_width(self) -> int:
        return self.W_i.shape[1] - self.W_i.shape[0]


@dataclass
class DenseParams:
    """Output head mapping the top hidden state to k measurement values."""

    W_d: Matrix  # (k, hidden)
    b_d: Vector  # (k,)

    def __post_init__(self):
        self.W_d = as_matrix(self.W_d)
        self.b_d = as_vector(self.b_d, self.W_d.shape[0])


@dataclass
class StackedLstm:
    """ell stacked LSTM layers plus the dense head."""

    layers: list[LstmCellParams]
    dense: DenseParams
    config: NetConfig

    def __post_init__(self):
        cfg = self.config
        if len(self.layers) != cfg.ell:
            raise ShapeError(f"expected {cfg.ell} layers, got {len(self.layers)}")
        for lam, layer in enumerate(self.layers):
            want_in = cfg.k if lam == 0 else cfg.hidden
            if layer.hidden != cfg.hidden or layer.in_width != want_in:
                raise ShapeError(
                    f"layer {lam}: got (hidden={layer.hidden}, in={layer.in_width}), "
                    f"want (hidden={cfg.hidden}, in={want_in})"
                )
        if self.dense.W_d.shape != (cfg.k, cfg.hidden):
            raise ShapeError(
                f"dense head {self.dense.W_d.shape} must map hidden -> k "
                f"({cfg.hidden} -> {cfg.k})"
            )


@dataclass
class ForwardTape:
    """Every intermediate activation of one batched forward pass."""

    mode: str  # "teacher" or "rollout"
    x: np.ndarray  # (m, steps, k) inputs actually fed (incl. fed-back ones)
    steps: list  # per step: list per layer of dict(v, i, f, o, cbar, c, tanh_c, h)
    z: np.ndarray  # (m, n_out, k) dense outputs
    output_steps: list  # step indices at which the dense head fired


def rnn_cell_step(p: RnnCellParams, x_t: Vector, c_prev: Vector):
    """One plain-RNN step; returns (z_t, c_t)."""
    x_t = as_vector(x_t, p.W_i.shape[1])
    c_prev = as_vector(c_prev, p.W_i.shape[0])
    c_t = tanh_elem(p.W_i @ x_t + p.W_c @ c_prev + p.b_i)
    z_t = p.W_o @ c_t + p.b_o
    return z_t, c_t


def lstm_cell_step(p: LstmCellParams, x_t: Vector, h_prev: Vector, c_prev: Vector):
    """One gated step; returns (h_t, c_t)."""
    x_t = as_vector(x_t, p.in_width)
    h_prev = as_vector(h_prev, p.hidden)
    c_prev = as_vector(c_prev, p.hidden)
    v_t = np.concatenate([x_t, h_prev])
    i_t = sigmoid(p.W_i @ v_t + p.b_i)
    f_t = sigmoid(p.W_f @ v_t + p.b_f)
    o_t = sigmoid(p.W_o @ v_t + p.b_o)
    cbar_t = tanh_elem(p.W_c @ v_t + p.b_c)
    c_t = f_t * c_prev + i_t * cbar_t
    h_t = o_t * tanh_elem(c_t)
    return h_t, c_t


def _trunc_normal(rng: np.random.Generator, shape, sigma=0.1, cutoff=2.0):
    """Rejection-sampled normal truncated at +/- cutoff*sigma."""
    out = rng.normal(0.0, sigma, size=shape)
    bad = np.abs(out) > cutoff * sigma
    while bad.any():
        out[bad] = rng.normal(0.0, sigma, size=int(bad.sum()))
        bad = np.abs(out) > cutoff * sigma
    return out


def init_params(config: NetConfig, seed: int) -> StackedLstm:
    """Fresh network with truncated-normal weights and zero initial state."""
    rng = np.random.default_rng(seed)
    layers = []
    for lam in range(config.ell):
        in_w = config.k if lam == 0 else config.hidden
        joined = in_w + config.hidden
        layers.append(
            LstmCellParams(
                W_i=_trunc_normal(rng, (config.hidden, joined)),
                W_o=_trunc_normal(rng, (config.hidden, joined)),
                W_f=_trunc_normal(rng, (config.hidden, joined)),
                W_c=_trunc_normal(rng, (config.hidden, joined)),
                b_i=_trunc_normal(rng, config.hidden),
                b_o=_trunc_normal(rng, config.hidden),
                b_f=_trunc_normal(rng, config.hidden),
                b_c=_trunc_normal(rng, config.hidden),
                c_0=np.zeros(config.hidden),
                h_0=np.zeros(config.hidden),
            )
        )
    dense = DenseParams(
        W_d=_trunc_normal(rng, (config.k, config.hidden)),
        b_d=_trunc_normal(rng, config.k),
    )
    return StackedLstm(layers, dense, config)


# Canonical flat parameter ordering, used by the optimizer, the gradient
# container, and the snapshot encoder.  c_0/h_0 are always present; the
# trainer zeroes their gradients when learn_init_state is off.
_LAYER_FIELDS = ("W_i", "W_o", "W_f", "W_c", "b_i", "b_o", "b_f", "b_c", "c_0", "h_0")
_DENSE_FIELDS = ("W_d", "b_d")


def param_names(config: NetConfig) -> list[str]:
    names = []
    for lam in range(config.ell):
        names.extend(f"layer{lam}.{f}" for f in _LAYER_FIELDS)
    names.extend(f"dense.{f}" for f in _DENSE_FIELDS)
    return names


def param_arrays(net: StackedLstm) -> list[np.ndarray]:
    """Parameters in canonical order (views, not copies)."""
    out = []
    for layer in net.layers:
        out.extend(getattr(layer, f) for f in _LAYER_FIELDS)
    out.extend(getattr(net.dense, f) for f in _DENSE_FIELDS)
    return out


def net_from_arrays(config: NetConfig, arrays) -> StackedLstm:
    """Rebuild a network from arrays in canonical order."""
    arrays = list(arrays)
    want = config.ell * len(_LAYER_FIELDS) + len(_DENSE_FIELDS)
    if len(arrays) != want:
        raise ShapeError(f"expected {want} parameter arrays, got {len(arrays)}")
    pos = 0
    layers = []
    for _ in range(config.ell):
        fields = arrays[pos : pos + len(_LAYER_FIELDS)]
        layers.append(LstmCellParams(*fields))
        pos += len(_LAYER_FIELDS)
    dense = DenseParams(*arrays[pos : pos + 2])
    return StackedLstm(layers, dense, config)


def copy_net(net: StackedLstm) -> StackedLstm:
    return net_from_arrays(net.config, [a.copy() for a in param_arrays(net)])


def forward_batch(net: StackedLstm, x: np.ndarray, mode: str) -> ForwardTape:
    """Batched forward pass over m sequences.

    teacher mode: x is (m, tau+n-1, k); outputs are the dense values at the
    last n steps.  rollout mode: x is (m, tau, k); the pass runs n-1 extra
    steps feeding each output back as the next input.
    """
    cfg = net.config
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 3 or x.shape[2] != cfg.k:
        raise ShapeError(f"batch input must be (m, steps, {cfg.k}), got {x.shape}")
    m = x.shape[0]
    if mode == "teacher":
        want_steps = cfg.tau + cfg.n - 1
        total_steps = want_steps
    elif mode == "rollout":
        want_steps = cfg.tau
        total_steps = cfg.tau + cfg.n - 1
    else:
        raise ValueError(f"unknown mode {mode!r}")
    if x.shape[1] != want_steps:
        raise ShapeError(f"{mode} forward needs {want_steps} steps, got {x.shape[1]}")

    h = [np.broadcast_to(layer.h_0, (m, cfg.hidden)).copy() for layer in net.layers]
    c = [np.broadcast_to(layer.c_0, (m, cfg.hidden)).copy() for layer in net.layers]

    fed = np.zeros((m, total_steps, cfg.k))
    fed[:, :want_steps] = x
    steps = []
    outputs = []
    output_steps = []
    first_output_step = cfg.tau - 1
    for t in range(total_steps):
        inp = fed[:, t]
        per_layer = []
        for lam, layer in enumerate(net.layers):
            v = np.concatenate([inp, h[lam]], axis=1)
            i_g = sigmoid(v @ layer.W_i.T + layer.b_i)
            f_g = sigmoid(v @ layer.W_f.T + layer.b_f)
            o_g = sigmoid(v @ layer.W_o.T + layer.b_o)
            cbar = tanh_elem(v @ layer.W_c.T + layer.b_c)
            c_new = f_g * c[lam] + i_g * cbar
            tanh_c = tanh_elem(c_new)
            h_new = o_g * tanh_c
            per_layer.append(
                {"v": v, "i": i_g, "f": f_g, "o": o_g, "cbar": cbar,
                 "c": c_new, "tanh_c": tanh_c, "h": h_new}
            )
            c[lam] = c_new
            h[lam] = h_new
            inp = h_new
        steps.append(per_layer)
        if t >= first_output_step:
            z_t = h[-1] @ net.dense.W_d.T + net.dense.b_d
            outputs.append(z_t)
            output_steps.append(t)
            if mode == "rollout" and t + 1 < total_steps:
                fed[:, t + 1] = z_t
    z = np.stack(outputs, axis=1)  # (m, n, k)
    return ForwardTape(mode=mode, x=fed, steps=steps, z=z, output_steps=output_steps)


def forward(net: StackedLstm, inputs):
    """Autoregressive rollout for one sequence of tau input vectors.

    Returns (preds, tape) where preds is a list of n k-vectors.
    """
    x = _stack_inputs(net.config, inputs, net.config.tau)
    tape = forward_batch(net, x[np.newaxis], mode="rollout")
    preds = [tape.z[0, j].copy() for j in range(net.config.n)]
    return preds, tape


def forward_training(net: StackedLstm, inputs):
    """Teacher-forced pass for one sequence of tau+n-1 true input vectors."""
    cfg = net.config
    x = _stack_inputs(cfg, inputs, cfg.tau + cfg.n - 1)
    tape = forward_batch(net, x[np.newaxis], mode="teacher")
    preds = [tape.z[0, j].copy() for j in range(cfg.n)]
    return preds, tape


def _stack_inputs(cfg: NetConfig, inputs, want: int) -> np.ndarray:
    rows = [as_vector(v, cfg.k) for v in inputs]
    if len(rows) != want:
        raise ShapeError(f"expected {want} input vectors, got {len(rows)}")
    return np.stack(rows)
