"""Discretized dissipative Hamiltonian dynamics over implicit coordinates.

Positions ``Q`` and momentums ``P`` live in a learned ``d_f``-dimensional
space.  Energies are quadratic forms (kinetic, Rayleigh dissipation) and a
softened pair potential ``u(s) = s^-2 - s^-1`` of the squared learned
distance ``s``.  Forces use closed forms built from differentiable ops, so
a rollout can be back-propagated end to end.

All functions accept a single molecule (``n x d``) or a padded batch
(``B x n x d``); ``mask`` marks real atoms.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .autodiff import tensor as T
from .autodiff.tensor import Tensor
from .config import TrainConfig
from .exceptions import NonFinite

DEFAULT_ETA = 0.04
DEFAULT_EPS_R = 1e-6
# Squared distances come from |a|^2 + |b|^2 - 2 a.b, whose rounding error grows
# like |q|^2 * 1e-16.  Past this magnitude unit-scale distances are noise, so a
# state this large counts as overflowed even while it is still finite.
STATE_LIMIT = 1e8


def engine_shapes(cfg: TrainConfig) -> dict:
    d = cfg.d_f
    return {
        "eng.W_T": (d, d),
        "eng.W_phi": (d, d),
        "eng.W_U": (d, d),
        "eng.W_trans": (d, 3),
    }


@dataclass
class EngineParams:
    W_T: Tensor
    W_phi: Tensor
    W_U: Tensor
    W_trans: Tensor
    eta: float = DEFAULT_ETA
    T_steps: int = 20
    eps_r: float = DEFAULT_EPS_R

    def __post_init__(self):
        for name in ("W_T", "W_phi", "W_U", "W_trans"):
            setattr(self, name, T.astensor(getattr(self, name)))
        if self.eta <= 0 or self.eps_r <= 0 or self.T_steps < 0:
            raise ValueError("need eta > 0, eps_r > 0 and T_steps >= 0")

    @classmethod
    def from_params(cls, params, cfg: TrainConfig) -> "EngineParams":
        w_phi = T.astensor(params["eng.W_phi"])
        if not cfg.use_dissipation:
            w_phi = Tensor(np.zeros(w_phi.shape))
        return cls(params["eng.W_T"], w_phi, params["eng.W_U"], params["eng.W_trans"],
                   eta=cfg.eta, T_steps=cfg.T_steps, eps_r=cfg.eps_r)


@dataclass
class EngineState:
    Q: Tensor
    P: Tensor
    m: np.ndarray
    t: int = 0
    mask: Optional[np.ndarray] = None

    def __post_init__(self):
        self.Q = T.astensor(self.Q)
        self.P = T.astensor(self.P)
        self.m = np.asarray(self.m, dtype=np.float64)
        if np.any(self.m <= 0):
            raise ValueError("masses must be positive")


@dataclass
class Trajectory:
    states: list
    energies: list = field(default_factory=list)

    @property
    def final(self) -> EngineState:
        return self.states[-1]

    def __len__(self):
        return len(self.states)


def _pair_mask(n: int, mask=None) -> np.ndarray:
    base = ~np.eye(n, dtype=bool)
    if mask is None:
        return base
    mask = np.asarray(mask, dtype=bool)
    return mask[..., :, None] & mask[..., None, :] & base


def kinetic(p, m, W_T) -> Tensor:
    """``||W_T p||^2 / (2 m)`` per atom (last axis of ``p`` is the space)."""
    a = T.matmul(T.astensor(p)[..., None, :], T.transpose(T.astensor(W_T)))[..., 0, :]
    return T.square(a).sum(axis=-1) / (2.0 * np.asarray(m, dtype=np.float64))


def dissipation(p, m, W_phi) -> Tensor:
    """``||W_phi p||^2 / (2 m^2)`` per atom."""
    a = T.matmul(T.astensor(p)[..., None, :], T.transpose(T.astensor(W_phi)))[..., 0, :]
    m = np.asarray(m, dtype=np.float64)
    return T.square(a).sum(axis=-1) / (2.0 * m * m)


def _squared_distances(Q, W_U, pair_mask):
    a = T.matmul(T.astensor(Q), T.transpose(T.astensor(W_U)))
    sq = T.square(a).sum(axis=-1)
    gram = T.matmul(a, T.swapaxes(a, -1, -2))
    s = sq[..., :, None] + sq[..., None, :] - 2.0 * gram
    s = (s + T.swapaxes(s, -1, -2)) * 0.5  # exact symmetry
    return a, T.where(pair_mask, s, 1.0)


def potential(Q, W_U, eps_r: float = DEFAULT_EPS_R, mask=None) -> tuple[Tensor, Tensor]:
    """Total pair potential over ordered pairs ``i != j`` and the floored table ``s``.

    ``U = sum_{i != j} s_ij^-2 - s_ij^-1`` with ``s_ij = max(eps_r, ||W_U (q_i - q_j)||^2)``.
    """
    Q = T.astensor(Q)
    pm = _pair_mask(Q.shape[-2], mask)
    _, s = _squared_distances(Q, W_U, pm)
    s = T.maximum(s, eps_r)
    u = T.where(pm, T.power(s, -2.0) - T.power(s, -1.0), 0.0)
    return u.sum(axis=(-1, -2)), s


def pair_energies(Q, W_U, eps_r: float = DEFAULT_EPS_R) -> np.ndarray:
    """Matrix of ``u_ij`` (zero on the diagonal) for one molecule."""
    Q = T.astensor(Q)
    pm = _pair_mask(Q.shape[-2])
    _, s = _squared_distances(Q, W_U, pm)
    s = np.maximum(s.data, eps_r)
    return np.where(pm, s**-2.0 - s**-1.0, 0.0)


def forces(state: EngineState, params: EngineParams) -> tuple[Tensor, Tensor, Tensor]:
    """Closed-form ``(dH/dQ, dH/dP, m * dPhi/dP)`` at ``state``.

    ``dU/dq_i = 4 sum_j u'(s_ij) W_U^T W_U (q_i - q_j)``; the factor 4 is 2
    from ``ds/dq`` times 2 because each unordered pair appears twice in U.
    Pairs held at the ``eps_r`` floor contribute nothing.
    """
    Q, P, m = state.Q, state.P, state.m
    n = Q.shape[-2]
    pm = _pair_mask(n, state.mask)
    a, s = _squared_distances(Q, params.W_U, pm)
    active = pm & (s.data > params.eps_r)
    s_c = T.maximum(s, params.eps_r)
    inv = T.power(s_c, -1.0)
    inv2 = inv * inv
    c = T.where(active, 4.0 * (inv2 - 2.0 * inv2 * inv), 0.0)
    rows = c.sum(axis=-1)
    dU_dQ = T.matmul(rows[..., None] * a - T.matmul(c, a), params.W_U)

    inv_m = (1.0 / m)[..., None]
    W_T, W_phi = params.W_T, params.W_phi
    dH_dP = T.matmul(T.matmul(P, T.transpose(W_T)), W_T) * inv_m
    dPhi = T.matmul(T.matmul(P, T.transpose(W_phi)), W_phi) * inv_m
    return dU_dQ, dH_dP, dPhi


def step(state: EngineState, params: EngineParams) -> EngineState:
    """One explicit Euler step; Q and P are both updated from time-t forces."""
    dU_dQ, dH_dP, dPhi = forces(state, params)
    eta = params.eta
    Q = state.Q + eta * dH_dP
    P = state.P - eta * (dU_dQ + dPhi)
    with np.errstate(invalid="ignore"):
        size = np.maximum(np.abs(Q.data).max(axis=(-1, -2)), np.abs(P.data).max(axis=(-1, -2)))
    ok = np.isfinite(size) & (size <= STATE_LIMIT)
    if not np.all(ok):
        item = int(np.flatnonzero(np.atleast_1d(~ok))[0]) if Q.ndim > 2 else None
        raise NonFinite(f"engine state overflowed at step {state.t + 1} (eta={eta} too large?)",
                        step=state.t + 1, item=item)
    return EngineState(Q, P, state.m, state.t + 1, state.mask)


def energies(state: EngineState, params: EngineParams) -> dict:
    """Kinetic, potential, Hamiltonian and dissipation totals (no gradient)."""
    Q, P = state.Q.detach(), state.P.detach()
    mask = state.mask
    kin = kinetic(P, state.m, params.W_T.detach()).data
    dis = dissipation(P, state.m, params.W_phi.detach()).data
    if mask is not None:
        kin = np.where(mask, kin, 0.0)
        dis = np.where(mask, dis, 0.0)
    pot, _ = potential(Q, params.W_U.detach(), params.eps_r, mask)
    k = kin.sum(axis=-1)
    return {"kinetic": k, "potential": pot.data, "hamiltonian": k + pot.data, "dissipation": dis.sum(axis=-1)}


def rollout(q0, p0, masses, params: EngineParams, mask=None, record_energies: bool = True) -> Trajectory:
    """Apply ``params.T_steps`` engine steps; ``len(result) == T_steps + 1``."""
    state = EngineState(q0, p0, masses, 0, mask)
    traj = Trajectory([state])
    if record_energies:
        traj.energies.append(energies(state, params))
    for _ in range(params.T_steps):
        state = step(state, params)
        traj.states.append(state)
        if record_energies:
            traj.energies.append(energies(state, params))
    return traj


def project3d(Q, W_trans) -> Tensor:
    """Linear map from implicit to Cartesian coordinates, ``Q @ W_trans``."""
    return T.matmul(T.astensor(Q), T.astensor(W_trans))
