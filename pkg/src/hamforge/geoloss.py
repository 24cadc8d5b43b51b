"""Rigid-motion invariant conformation losses.

Every function takes predicted and reference coordinates of shape
``(n, 3)`` or a padded batch ``(B, n, 3)`` with an atom ``mask``; batched
calls return one value per molecule.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .autodiff import tensor as T
from .autodiff.linalg import svd3
from .autodiff.tensor import Tensor
from .batching import normalized_adjacency
from .exceptions import DegenerateGeometry, NoConvergence


@dataclass
class ConformerPair:
    Q_hat: np.ndarray
    Q_ref: np.ndarray
    masses: np.ndarray
    A_tilde: Optional[np.ndarray] = None

    def __post_init__(self):
        self.Q_hat = np.asarray(self.Q_hat, dtype=np.float64)
        self.Q_ref = np.asarray(self.Q_ref, dtype=np.float64)
        self.masses = np.asarray(self.masses, dtype=np.float64)
        if self.Q_hat.shape != self.Q_ref.shape or self.Q_hat.shape[-1] != 3:
            raise ValueError("Q_hat and Q_ref must both be n x 3")
        if self.masses.shape != self.Q_hat.shape[:-1] or np.any(self.masses <= 0):
            raise ValueError("need one positive mass per atom")


@dataclass
class LossReport:
    k_rmsd: float
    dist_loss: float
    adj_k: float
    combined: float
    lam: float


def _mask_of(x: Tensor, mask) -> np.ndarray:
    if mask is None:
        return np.ones(x.shape[:-1], dtype=bool)
    return np.asarray(mask, dtype=bool)


def _weights(masses, mask, weighted: bool) -> np.ndarray:
    m = np.asarray(masses, dtype=np.float64) if weighted else np.ones(mask.shape)
    w = np.where(mask, np.broadcast_to(m, mask.shape), 0.0)
    return w / w.sum(axis=-1, keepdims=True)


def kabsch_align(Q_hat, Q_ref, masses, mask=None, weighted: bool = True) -> Tensor:
    """Superpose ``Q_hat`` onto ``Q_ref`` with the best proper rotation.

    Centroids and the cross-covariance use mass weights (uniform weights
    when ``weighted`` is False).  Padding rows come back as zeros.
    """
    X = T.astensor(Q_hat)
    Y = np.asarray(Q_ref.data if isinstance(Q_ref, Tensor) else Q_ref, dtype=np.float64)
    mask = _mask_of(X, mask)
    w = _weights(masses, mask, weighted)[..., None]
    cx = (X * w).sum(axis=-2, keepdims=True)
    cy = (Y * w).sum(axis=-2, keepdims=True)
    Xc = (X - cx) * mask[..., None]
    Yc = (Y - cy) * mask[..., None]
    C = T.matmul(T.swapaxes(Xc * w, -1, -2), Tensor(Yc))
    try:
        U, _, V = svd3(C)
    except NoConvergence as exc:
        raise DegenerateGeometry(str(exc)) from None
    det = np.linalg.det(V.data @ np.swapaxes(U.data, -1, -2))
    d = np.where(det < 0, -1.0, 1.0)
    D = np.zeros(d.shape + (3, 3))
    D[..., 0, 0] = 1.0
    D[..., 1, 1] = 1.0
    D[..., 2, 2] = d
    rot = T.matmul(T.matmul(U, Tensor(D)), T.swapaxes(V, -1, -2))
    return (T.matmul(Xc, rot) + cy) * mask[..., None]


def k_rmsd(Q_hat, Q_ref, masses, mask=None, weighted: bool = True) -> Tensor:
    """Mass-weighted RMSD after Kabsch alignment (Å)."""
    X = T.astensor(Q_hat)
    mask = _mask_of(X, mask)
    Y = np.asarray(Q_ref, dtype=np.float64) * mask[..., None]
    aligned = kabsch_align(X, Y, masses, mask, weighted)
    w = _weights(masses, mask, True)
    sq = T.square(aligned - Y).sum(axis=-1)
    return T.sqrt((sq * w).sum(axis=-1))


def _sq_dist_gap(Q_hat, Q_ref) -> Tensor:
    X = T.astensor(Q_hat)
    Y = np.asarray(Q_ref, dtype=np.float64)
    dx = X[..., :, None, :] - X[..., None, :, :]
    dy = Y[..., :, None, :] - Y[..., None, :, :]
    return T.square(dx).sum(axis=-1) - (dy**2).sum(axis=-1)


def dist_loss(Q_hat, Q_ref, mask=None) -> Tensor:
    """``sqrt(mean_ij (|q̂_i - q̂_j|^2 - |q_i - q_j|^2)^2)`` over real atoms."""
    X = T.astensor(Q_hat)
    mask = _mask_of(X, mask)
    pm = mask[..., :, None] & mask[..., None, :]
    n = mask.sum(axis=-1).astype(np.float64)
    gap = T.where(pm, _sq_dist_gap(X, Q_ref), 0.0)
    return T.sqrt(T.square(gap).sum(axis=(-1, -2)) / (n * n))


def normalized_simple_adjacency(adjacency: np.ndarray) -> np.ndarray:
    """``Ã``: bond existence only (orders ignored), self-loops added, GCN-normalized."""
    a = (np.asarray(adjacency) != 0).astype(np.float64)
    return normalized_adjacency(a * (1 - np.eye(a.shape[-1])), 1.0)


def adjacency_power(adjacency: np.ndarray, k: int) -> np.ndarray:
    """``Ã^k`` for a raw adjacency matrix."""
    if k < 1:
        raise ValueError("k must be >= 1")
    return np.linalg.matrix_power(normalized_simple_adjacency(adjacency), k)


def adj_k_loss(Q_hat, Q_ref, hop_weights, mask=None) -> Tensor:
    """``sqrt((1/n) sum_ij W_ij (|q̂_i - q̂_j|^2 - |q_i - q_j|^2)^2)`` with ``W = Ã^k``."""
    X = T.astensor(Q_hat)
    mask = _mask_of(X, mask)
    n = mask.sum(axis=-1).astype(np.float64)
    gap = _sq_dist_gap(X, Q_ref)
    w = np.asarray(hop_weights, dtype=np.float64)
    return T.sqrt((T.square(gap) * w).sum(axis=(-1, -2)) / n)


def combined_loss(Q_hat, Q_ref, masses, hop_weights, lam: float = 1.0, mask=None,
                  weighted: bool = True) -> Tensor:
    """``k_rmsd + lam * adj_k``; with ``lam == 0`` the ADJ term is skipped."""
    if lam < 0:
        raise ValueError("lam must be non-negative")
    loss = k_rmsd(Q_hat, Q_ref, masses, mask, weighted)
    if lam > 0:
        loss = loss + lam * adj_k_loss(Q_hat, Q_ref, hop_weights, mask)
    return loss


def loss_report(pair: ConformerPair, lam: float = 1.0, k: int = 3, weighted: bool = True) -> LossReport:
    a_tilde = pair.A_tilde
    if a_tilde is None:
        raise ValueError("pair.A_tilde is required for the ADJ-k term")
    hop = np.linalg.matrix_power(a_tilde, k)
    kr = float(k_rmsd(pair.Q_hat, pair.Q_ref, pair.masses, weighted=weighted).data)
    dl = float(dist_loss(pair.Q_hat, pair.Q_ref).data)
    ak = float(adj_k_loss(pair.Q_hat, pair.Q_ref, hop).data)
    return LossReport(k_rmsd=kr, dist_loss=dl, adj_k=ak, combined=kr + lam * ak, lam=lam)
