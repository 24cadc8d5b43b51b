"""Initial implicit positions and momentums from the molecular graph.

Pipeline: learned bond-strength adjacency -> two DenseNet-style GCN stacks
(one for q, one for p) -> an LSTM run over atoms in SMILES order, so that
atoms with identical chemical environments still start at distinct points.
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
from .exceptions import DegenerateOutput

DISTINCT_TOL = 1e-8


@dataclass
class BondStrengthAdjacency:
    A: np.ndarray
    A_hat: np.ndarray


@dataclass
class EncoderOutput:
    q0: np.ndarray
    p0: np.ndarray


def encoder_shapes(cfg: TrainConfig) -> dict:
    d = cfg.d_f
    shapes = nn.mlp_shapes("enc.bond", [2 * ATOM_FEATURE_DIM + BOND_FEATURE_DIM, cfg.bond_hidden, 1])
    widths = [ATOM_FEATURE_DIM, *cfg.gcn_widths]
    concat_width = sum(widths)
    for tag in ("q", "p"):
        for l in range(len(cfg.gcn_widths)):
            shapes[f"enc.gcn_{tag}.W{l}"] = (widths[l], widths[l + 1])
        if cfg.use_lstm:
            shapes.update(nn.lstm_shapes(f"enc.lstm_{tag}", concat_width, d))
        else:
            shapes[f"enc.lin_{tag}.W"] = (concat_width, d)
            shapes[f"enc.lin_{tag}.b"] = (d,)
    return shapes


def _param(params, name) -> Tensor:
    return T.astensor(params[name])


def _as_batch(mol_or_batch) -> GraphBatch:
    return mol_or_batch if isinstance(mol_or_batch, GraphBatch) else GraphBatch([mol_or_batch])


def bond_strength_tensor(params, batch: GraphBatch) -> tuple[Tensor, Tensor]:
    """Dense symmetric bond strengths (B, N, N) and the normalized Â.

    Each bond is scored in both orientations of the atom-bond-atom tuple
    and the two sigmoid outputs are averaged.  Self-loops carry the mean
    bond strength of the molecule (1 for molecules without bonds).
    """
    B, N = batch.B, batch.N
    if len(batch.send):
        x = Tensor(batch.X_flat)
        tup = T.concat([x[batch.recv], Tensor(batch.edge_features), x[batch.send]], axis=-1)
        layers = [(_param(params, "enc.bond.W0"), _param(params, "enc.bond.b0")),
                  (_param(params, "enc.bond.W1"), _param(params, "enc.bond.b1"))]
        a = T.sigmoid(nn.mlp(tup, layers))[:, 0]
        a = (a + a[batch.reverse_edge]) * 0.5
        dense = T.segment_sum(a, batch.edge_slot, B * N * N).reshape(B, N, N)
        # each bond appears twice among directed edges
        per_mol = T.segment_sum(a, batch.edge_mol, B)
        counts = np.maximum(2 * batch.num_bonds, 1)
        loop = T.where(batch.num_bonds > 0, per_mol / counts, 1.0)
    else:
        dense = Tensor(np.zeros((B, N, N)))
        loop = Tensor(np.ones(B))
    eye = np.eye(N)[None] * batch.atom_mask[:, :, None]
    a_full = dense + loop.reshape(B, 1, 1) * eye
    deg = a_full.sum(axis=-1) + (~batch.atom_mask).astype(float)
    dinv = T.power(deg, -0.5)
    a_hat = a_full * dinv.reshape(B, N, 1) * dinv.reshape(B, 1, N)
    return dense, a_hat


def bond_strength(mol, params) -> BondStrengthAdjacency:
    batch = _as_batch(mol)
    a, a_hat = bond_strength_tensor(params, batch)
    n = batch.n_atoms[0]
    return BondStrengthAdjacency(A=a.data[0, :n, :n].copy(), A_hat=a_hat.data[0, :n, :n].copy())


def dense_gcn(X, A_hat, weights) -> list[Tensor]:
    """Hidden layers ``[f0 = X, f1, ..., fL]`` with ``f(l+1) = relu(Â f(l) W(l))``."""
    h = T.astensor(X)
    a = T.astensor(A_hat)
    out = [h]
    for w in weights:
        h = T.relu(T.matmul(a, T.matmul(h, T.astensor(w))))
        out.append(h)
    return out


def _sequence_encode(params, tag, feats: Tensor, batch: GraphBatch, cfg: TrainConfig) -> Tensor:
    B, N = batch.B, batch.N
    d = cfg.d_f
    if not cfg.use_lstm:
        out = nn.dense(feats, _param(params, f"enc.lin_{tag}.W"), _param(params, f"enc.lin_{tag}.b"))
        return out * batch.atom_mask[:, :, None].astype(float)
    bidx = np.arange(B)[:, None]
    seq = feats[bidx, batch.order]  # atoms in SMILES order
    w_ih = _param(params, f"enc.lstm_{tag}.W_ih")
    w_hh = _param(params, f"enc.lstm_{tag}.W_hh")
    b = _param(params, f"enc.lstm_{tag}.b")
    h = Tensor(np.zeros((B, d)))
    c = Tensor(np.zeros((B, d)))
    outs = []
    # precompute the input projection for all steps at once
    x_proj = T.matmul(seq, w_ih) + b
    for t in range(N):
        gates = x_proj[:, t, :] + T.matmul(h, w_hh)
        i = T.sigmoid(gates[:, 0:d])
        f = T.sigmoid(gates[:, d:2 * d])
        g = T.tanh(gates[:, 2 * d:3 * d])
        o = T.sigmoid(gates[:, 3 * d:])
        c = f * c + i * g
        h = o * T.tanh(c)
        outs.append(h)
    seq_out = T.stack(outs, axis=1)
    out = seq_out[bidx, batch.position]  # back to atom order
    return out * batch.atom_mask[:, :, None].astype(float)


def encode_tensors(params, batch: GraphBatch, cfg: TrainConfig) -> tuple[Tensor, Tensor]:
    _, a_hat = bond_strength_tensor(params, batch)
    out = []
    for tag in ("q", "p"):
        weights = [_param(params, f"enc.gcn_{tag}.W{l}") for l in range(len(cfg.gcn_widths))]
        layers = dense_gcn(Tensor(batch.X), a_hat, weights)
        out.append(_sequence_encode(params, tag, T.concat(layers, axis=-1), batch, cfg))
    return out[0], out[1]


def check_distinct(q0: np.ndarray, n: int, tol: float = DISTINCT_TOL) -> float:
    """Smallest pairwise row distance among the first ``n`` rows of ``q0``."""
    if n < 2:
        return np.inf
    x = q0[:n]
    d = np.sqrt(((x[:, None, :] - x[None, :, :]) ** 2).sum(-1))
    d[np.diag_indices(n)] = np.inf
    return float(d.min())


def encode_initial(mol, params, cfg: TrainConfig, check: bool = True) -> EncoderOutput:
    """Initial (q0, p0) for a single molecule, each ``n x d_f``.

    Raises :class:`DegenerateOutput` when two rows of q0 coincide.
    """
    batch = _as_batch(mol)
    q0, p0 = encode_tensors(params, batch, cfg)
    n = int(batch.n_atoms[0])
    q = q0.data[0, :n].copy()
    if check and cfg.use_lstm and check_distinct(q, n) <= DISTINCT_TOL:
        raise DegenerateOutput("two atoms received identical initial positions; re-initialize the encoder")
    return EncoderOutput(q0=q, p0=p0.data[0, :n].copy())
