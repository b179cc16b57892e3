"""Gated recurrent sequence cell (standard four-gate LSTM formulation).

Gate layout along the last axis is [input, forget, candidate, output],
each of width ``hidden_size``.  No peepholes, no layer normalization.

The gate update is recorded on the tape as one fused node with a
hand-written adjoint so that long sequences do not pay per-gate Python
overhead.  ``recurrent_step`` is the single-step entry point; sequence
models precompute the input projection for all steps at once and call
``gate_step`` per step.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .tensor import Parameter, Tensor


class RecurrentCellWeights:
    """Input/hidden projections and bias for the four gates."""

    def __init__(self, w_input: Parameter, w_hidden: Parameter, bias: Parameter):
        h4 = w_hidden.values.shape[1]
        if h4 % 4 != 0 or w_hidden.values.shape[0] != h4 // 4:
            raise ValueError(
                f"recurrent cell: hidden weights {w_hidden.values.shape} "
                "must be (H, 4H)")
        if w_input.values.shape[1] != h4 or bias.values.shape != (h4,):
            raise ValueError(
                f"recurrent cell: inconsistent shapes {w_input.values.shape}, "
                f"{w_hidden.values.shape}, {bias.values.shape}")
        self.w_input = w_input
        self.w_hidden = w_hidden
        self.bias = bias
        self.hidden_size = h4 // 4
        self.input_size = w_input.values.shape[0]

    def parameters(self):
        return [self.w_input, self.w_hidden, self.bias]


def init_cell_weights(input_size: int, hidden_size: int, rng: np.random.Generator,
                      prefix: str = "trunk") -> RecurrentCellWeights:
    """Scaled-normal init; forget-gate bias starts at 1."""
    w_x = rng.normal(0.0, 1.0 / np.sqrt(input_size), (input_size, 4 * hidden_size))
    w_h = rng.normal(0.0, 1.0 / np.sqrt(hidden_size), (hidden_size, 4 * hidden_size))
    b = np.zeros(4 * hidden_size)
    b[hidden_size:2 * hidden_size] = 1.0
    return RecurrentCellWeights(
        Parameter(w_x, f"{prefix}.w_input"),
        Parameter(w_h, f"{prefix}.w_hidden"),
        Parameter(b, f"{prefix}.bias"),
    )


def _sigmoid(x):
    # pre-activations are clipped at +-500 to avoid exp overflow; the
    # result is bitwise identical to the stable two-branch form anywhere
    # a trained gate actually operates
    return 1.0 / (1.0 + np.exp(-np.clip(x, -500.0, 500.0)))


def gate_step(x_gates: Tensor, h_prev: Tensor, c_prev: Tensor,
              w_hidden: Parameter, bias: Parameter) -> tuple[Tensor, Tensor]:
    """One gated update given the pre-projected input contribution.

    ``x_gates`` is input @ w_input, shape (B, 4H).  Returns (hidden, cell),
    each (B, H).  hidden lies in (-1, 1) elementwise.
    """
    hidden = w_hidden.values.shape[0]
    if x_gates.values.ndim != 2 or x_gates.values.shape[1] != 4 * hidden:
        raise ValueError(
            f"recurrent step: gate input {x_gates.values.shape} does not match "
            f"hidden size {hidden}")
    if h_prev.values.shape != (x_gates.values.shape[0], hidden):
        raise ValueError(
            f"recurrent step: state {h_prev.values.shape} does not match "
            f"batch/hidden {(x_gates.values.shape[0], hidden)}")

    z = x_gates.values + h_prev.values @ w_hidden.values + bias.values
    i = _sigmoid(z[:, :hidden])
    f = _sigmoid(z[:, hidden:2 * hidden])
    g = np.tanh(z[:, 2 * hidden:3 * hidden])
    o = _sigmoid(z[:, 3 * hidden:])
    c = f * c_prev.values + i * g
    tc = np.tanh(c)
    h = o * tc

    hv, cv = h_prev.values, c_prev.values

    def vjp(grad):
        gh = grad[:, :hidden]
        gc = grad[:, hidden:].copy()
        gc += gh * o * (1.0 - tc * tc)
        dz = np.empty((grad.shape[0], 4 * hidden))
        dz[:, :hidden] = gc * g * i * (1.0 - i)
        dz[:, hidden:2 * hidden] = gc * cv * f * (1.0 - f)
        dz[:, 2 * hidden:3 * hidden] = gc * i * (1.0 - g * g)
        dz[:, 3 * hidden:] = gh * tc * o * (1.0 - o)
        g_x = dz
        g_h = dz @ w_hidden.values.T
        g_c = gc * f
        g_w = hv.T @ dz
        g_b = dz.sum(axis=0)
        return g_x, g_h, g_c, g_w, g_b

    joint = T.fused(np.concatenate([h, c], axis=1),
                    (x_gates, h_prev, c_prev, w_hidden, bias), vjp)
    h_out = T.gather(joint, np.arange(hidden), axis=1)
    c_out = T.gather(joint, np.arange(hidden, 2 * hidden), axis=1)
    return h_out, c_out


def sequence_scan(x_gates: Tensor, w_hidden: Parameter, bias: Parameter,
                  batch: int, length: int) -> Tensor:
    """Run the gated cell over a whole sequence as one fused node.

    ``x_gates`` is (L * B, 4H) time-major (row t * B + b).  Returns the
    hidden states, (L * B, H) in the same order, from zero initial state.
    The adjoint is hand-written backpropagation through time, equivalent
    to chaining ``gate_step`` but without per-step tape overhead.
    """
    hidden = w_hidden.values.shape[0]
    n = batch * length
    if x_gates.values.shape != (n, 4 * hidden):
        raise ValueError(
            f"sequence_scan: gate input {x_gates.values.shape} does not "
            f"match ({n}, {4 * hidden})")
    xg = x_gates.values.reshape(length, batch, 4 * hidden)
    w_h = w_hidden.values
    b = bias.values

    gates = np.empty((length, batch, 4 * hidden))
    cells = np.empty((length, batch, hidden))
    tanh_cells = np.empty((length, batch, hidden))
    hidden_all = np.empty((length, batch, hidden))
    h = np.zeros((batch, hidden))
    c = np.zeros((batch, hidden))
    for t in range(length):
        z = xg[t] + h @ w_h + b
        i = _sigmoid(z[:, :hidden])
        f = _sigmoid(z[:, hidden:2 * hidden])
        g = np.tanh(z[:, 2 * hidden:3 * hidden])
        o = _sigmoid(z[:, 3 * hidden:])
        c = f * c + i * g
        tc = np.tanh(c)
        h = o * tc
        gates[t, :, :hidden] = i
        gates[t, :, hidden:2 * hidden] = f
        gates[t, :, 2 * hidden:3 * hidden] = g
        gates[t, :, 3 * hidden:] = o
        cells[t] = c
        tanh_cells[t] = tc
        hidden_all[t] = h

    def vjp(grad):
        g_h_all = grad.reshape(length, batch, hidden)
        d_xg = np.empty((length, batch, 4 * hidden))
        dh_next = np.zeros((batch, hidden))
        dc_next = np.zeros((batch, hidden))
        w_h_t = w_h.T
        # gradients decay exponentially along the sequence; flush the
        # carriers before they reach denormal range, where SIMD units
        # slow down by orders of magnitude
        tiny = 1e-200
        for t in range(length - 1, -1, -1):
            i = gates[t, :, :hidden]
            f = gates[t, :, hidden:2 * hidden]
            g = gates[t, :, 2 * hidden:3 * hidden]
            o = gates[t, :, 3 * hidden:]
            tc = tanh_cells[t]
            c_prev = cells[t - 1] if t > 0 else np.zeros((batch, hidden))
            dh = g_h_all[t] + dh_next
            dc = dc_next + dh * o * (1.0 - tc * tc)
            dz = d_xg[t]
            dz[:, :hidden] = dc * g * i * (1.0 - i)
            dz[:, hidden:2 * hidden] = dc * c_prev * f * (1.0 - f)
            dz[:, 2 * hidden:3 * hidden] = dc * i * (1.0 - g * g)
            dz[:, 3 * hidden:] = dh * tc * o * (1.0 - o)
            dh_next = dz @ w_h_t
            dc_next = dc * f
            dh_next[np.abs(dh_next) < tiny] = 0.0
            dc_next[np.abs(dc_next) < tiny] = 0.0
        dz_flat = d_xg.reshape(n, 4 * hidden)
        h_prev = np.empty((length, batch, hidden))
        h_prev[0] = 0.0
        h_prev[1:] = hidden_all[:-1]
        d_w = h_prev.reshape(n, hidden).T @ dz_flat
        d_b = dz_flat.sum(axis=0)
        return dz_flat, d_w, d_b

    return T.fused(hidden_all.reshape(n, hidden),
                   (x_gates, w_hidden, bias), vjp)


def recurrent_step(weights: RecurrentCellWeights, inputs: Tensor,
                   state: tuple[Tensor, Tensor]) -> tuple[Tensor, Tensor]:
    """One step from raw inputs (B, input_size) and state (hidden, cell)."""
    if inputs.values.ndim != 2 or inputs.values.shape[1] != weights.input_size:
        raise ValueError(
            f"recurrent step: input {inputs.values.shape} does not match "
            f"input size {weights.input_size}")
    x_gates = T.matmul(inputs, weights.w_input)
    h_prev, c_prev = state
    return gate_step(x_gates, h_prev, c_prev, weights.w_hidden, weights.bias)


def initial_state(batch: int, hidden: int) -> tuple[Tensor, Tensor]:
    return (T.constant(np.zeros((batch, hidden))),
            T.constant(np.zeros((batch, hidden))))
