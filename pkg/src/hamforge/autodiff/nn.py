"""Layers composed from core ops: dense, MLP, LSTM and GRU cells."""
from __future__ import annotations

from . import tensor as T
from .tensor import Tensor


def dense(x, w, b=None) -> Tensor:
    out = T.matmul(x, w)
    return out if b is None else out + b


def mlp(x, layers, activation=T.relu, final_activation=None) -> Tensor:
    """``layers`` is a list of ``(W, b)``; hidden layers use ``activation``."""
    h = x
    for k, (w, b) in enumerate(layers):
        h = dense(h, w, b)
        if k < len(layers) - 1:
            h = activation(h)
        elif final_activation is not None:
            h = final_activation(h)
    return h


def lstm_cell(x, h, c, w_ih, w_hh, b):
    """One LSTM step with gate order (input, forget, cell, output).

    ``w_ih``: (in, 4H), ``w_hh``: (H, 4H), ``b``: (4H,).
    """
    hidden = h.shape[-1]
    gates = T.matmul(x, w_ih) + T.matmul(h, w_hh) + b
    i = T.sigmoid(gates[..., 0:hidden])
    f = T.sigmoid(gates[..., hidden:2 * hidden])
    g = T.tanh(gates[..., 2 * hidden:3 * hidden])
    o = T.sigmoid(gates[..., 3 * hidden:4 * hidden])
    c_new = f * c + i * g
    h_new = o * T.tanh(c_new)
    return h_new, c_new


def gru_cell(x, h, w_ih, w_hh, b_ih, b_hh) -> Tensor:
    """GRU update with gate order (reset, update, candidate)."""
    hidden = h.shape[-1]
    gi = T.matmul(x, w_ih) + b_ih
    gh = T.matmul(h, w_hh) + b_hh
    r = T.sigmoid(gi[..., 0:hidden] + gh[..., 0:hidden])
    z = T.sigmoid(gi[..., hidden:2 * hidden] + gh[..., hidden:2 * hidden])
    n = T.tanh(gi[..., 2 * hidden:] + r * gh[..., 2 * hidden:])
    return (1.0 - z) * n + z * h


def lstm_shapes(prefix, in_dim, hidden):
    return {
        f"{prefix}.W_ih": (in_dim, 4 * hidden),
        f"{prefix}.W_hh": (hidden, 4 * hidden),
        f"{prefix}.b": (4 * hidden,),
    }


def gru_shapes(prefix, in_dim, hidden):
    return {
        f"{prefix}.W_ih": (in_dim, 3 * hidden),
        f"{prefix}.W_hh": (hidden, 3 * hidden),
        f"{prefix}.b_ih": (3 * hidden,),
        f"{prefix}.b_hh": (3 * hidden,),
    }


def mlp_shapes(prefix, dims):
    out = {}
    for k, (a, b) in enumerate(zip(dims[:-1], dims[1:])):
        out[f"{prefix}.W{k}"] = (a, b)
        out[f"{prefix}.b{k}"] = (b,)
    return out


def mlp_layers(params, prefix, depth):
    return [(params[f"{prefix}.W{k}"], params[f"{prefix}.b{k}"]) for k in range(depth)]
