"""Attentive message passing and meta-node readout over atoms and bonds.

Works on the flat layout of :class:`GraphBatch`: atoms of all molecules are
stacked, each bond contributes two directed edges ``send -> recv``.  The
geometry input ``x = q ⊕ p`` (one row per flat atom) enters through the
relative vectors ``r_ij = x_i - x_j``; ``conf_mode="none"`` drops it.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import nn
from .autodiff import tensor as T
from .autodiff.tensor import Tensor
from .batching import GraphBatch
from .chem.featurize import ATOM_FEATURE_DIM, BOND_FEATURE_DIM
from .config import TrainConfig
from .exceptions import WidthMismatch


@dataclass
class Fingerprint:
    h_g: np.ndarray


def geometry_width(cfg: TrainConfig) -> int:
    return 0 if cfg.conf_mode == "none" else 2 * cfg.d_f


def fingerprint_shapes(cfg: TrainConfig, n_tasks: int) -> dict:
    h, g = cfg.hidden, geometry_width(cfg)
    shapes = {}
    shapes.update(nn.mlp_shapes("fp.atom_in", [ATOM_FEATURE_DIM, h, h]))
    shapes.update(nn.mlp_shapes("fp.bond_in", [BOND_FEATURE_DIM, h, h]))
    if cfg.conf_mode == "real":
        shapes.update(nn.mlp_shapes("fp.lift_q", [3, cfg.d_f, cfg.d_f]))
        shapes.update(nn.mlp_shapes("fp.lift_p", [3, cfg.d_f, cfg.d_f]))
    for l in range(cfg.L):
        # attention vector kept as a column so it gets Glorot init
        shapes[f"fp.mp{l}.w_att"] = (h + g, 1)
        shapes[f"fp.mp{l}.W_M"] = (2 * h + g, h)
        shapes.update(nn.gru_shapes(f"fp.mp{l}.gru", h, h))
    for m in range(cfg.M):
        shapes[f"fp.ro{m}.w_eta"] = (2 * h + g, 1)
        shapes[f"fp.ro{m}.W_s"] = (h + g, h)
        shapes.update(nn.gru_shapes(f"fp.ro{m}.gru", h, h))
    shapes["fp.head.W"] = (h, n_tasks)
    shapes["fp.head.b"] = (n_tasks,)
    return shapes


def _p(params, name) -> Tensor:
    return T.astensor(params[name])


def _mlp(params, prefix, x) -> Tensor:
    layers = [(_p(params, f"{prefix}.W{k}"), _p(params, f"{prefix}.b{k}")) for k in range(2)]
    return nn.mlp(x, layers)


def _gru(params, prefix, x, h) -> Tensor:
    return nn.gru_cell(x, h, _p(params, f"{prefix}.W_ih"), _p(params, f"{prefix}.W_hh"),
                       _p(params, f"{prefix}.b_ih"), _p(params, f"{prefix}.b_hh"))


def init_states(params, batch: GraphBatch) -> tuple[Tensor, Tensor]:
    """Atom states (num_flat, hidden) and directed-edge states (num_edges, hidden)."""
    h = _mlp(params, "fp.atom_in", Tensor(batch.X_flat))
    f = _mlp(params, "fp.bond_in", Tensor(batch.edge_features))
    return h, f


def lift_real_coordinates(params, batch: GraphBatch) -> Tensor:
    """Centered reference coordinates lifted to pseudo (q ⊕ p), flat layout."""
    ref = batch.to_flat(batch.ref)
    sums = np.zeros((batch.B, 3))
    np.add.at(sums, batch.mol_index, ref)
    centered = ref - (sums / batch.n_atoms[:, None])[batch.mol_index]
    q = _mlp(params, "fp.lift_q", Tensor(centered))
    p = _mlp(params, "fp.lift_p", Tensor(np.zeros_like(centered)))
    return T.concat([q, p], axis=-1)


def mp_layer(params, l: int, h: Tensor, f: Tensor, x, batch: GraphBatch, cfg: TrainConfig) -> Tensor:
    """One attention message-passing layer followed by a GRU update."""
    recv, send = batch.recv, batch.send
    if len(recv) == 0:
        return h
    if x is not None:
        r = x[recv] - x[send]
        att_in = T.concat([f, r], axis=-1)
        msg_in = T.concat([h[recv], r, h[send]], axis=-1)
    else:
        att_in = f
        msg_in = T.concat([h[recv], h[send]], axis=-1)
    e = T.matmul(att_in, _p(params, f"fp.mp{l}.w_att"))[:, 0]
    if cfg.leaky_attention:
        e = T.leaky_relu(e, 0.2)
    alpha = T.segment_softmax(e, recv, batch.num_flat)
    msg = alpha[:, None] * T.matmul(msg_in, _p(params, f"fp.mp{l}.W_M"))
    m = T.segment_sum(msg, recv, batch.num_flat)
    h_new = _gru(params, f"fp.mp{l}.gru", m, h)
    return T.where(batch.has_neighbors[:, None], h_new, h)


def readout(params, h: Tensor, x, batch: GraphBatch, cfg: TrainConfig) -> Tensor:
    """Meta-node attentive readout, ``(B, hidden)``."""
    mol = batch.mol_index
    counts = batch.n_atoms.astype(np.float64)[:, None]
    h_g = T.segment_sum(h, mol, batch.B) / counts
    node = h if x is None else T.concat([x, h], axis=-1)
    for m in range(cfg.M):
        e = T.matmul(T.concat([h_g[mol], node], axis=-1), _p(params, f"fp.ro{m}.w_eta"))[:, 0]
        beta = T.segment_softmax(e, mol, batch.B)
        s_g = T.segment_sum(beta[:, None] * T.matmul(node, _p(params, f"fp.ro{m}.W_s")), mol, batch.B)
        h_g = _gru(params, f"fp.ro{m}.gru", s_g, h_g)
    return h_g


def fingerprint_tensor(params, batch: GraphBatch, cfg: TrainConfig, x=None) -> Tensor:
    """Fingerprints for a batch; ``x`` is the flat ``q ⊕ p`` (ignored for conf_mode none)."""
    if cfg.conf_mode == "none":
        x = None
    elif cfg.conf_mode == "real":
        x = lift_real_coordinates(params, batch)
    elif x is None:
        raise ValueError("conf_mode 'engine' needs q ⊕ p from the engine")
    if x is not None and x.shape[-1] != geometry_width(cfg):
        raise WidthMismatch(f"geometry width {x.shape[-1]} != 2*d_f = {geometry_width(cfg)}")
    h, f = init_states(params, batch)
    for l in range(cfg.L):
        h = mp_layer(params, l, h, f, x, batch, cfg)
    return readout(params, h, x, batch, cfg)


def predict(params, fp, task_type: str = "regression") -> Tensor:
    """Linear head; sigmoid probabilities for classification."""
    W, b = _p(params, "fp.head.W"), _p(params, "fp.head.b")
    fp = T.astensor(fp)
    if fp.shape[-1] != W.shape[0]:
        raise WidthMismatch(f"fingerprint width {fp.shape[-1]} != head input {W.shape[0]}")
    out = nn.dense(fp, W, b)
    return T.sigmoid(out) if task_type == "classification" else out


def head_logits(params, fp) -> Tensor:
    return nn.dense(T.astensor(fp), _p(params, "fp.head.W"), _p(params, "fp.head.b"))
