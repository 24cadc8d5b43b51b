"""Conformation model: encoder -> engine rollout -> 3D projection."""
from __future__ import annotations

import numpy as np

from .autodiff import ParamSet, init_params
from .autodiff import tensor as T
from .batching import GraphBatch
from .config import TrainConfig
from . import encoder, engine, geoloss
from .exceptions import NoConformations

# Glorot-scale W_U puts atoms with equivalent environments (benzene ring
# carbons) within ~0.03 of each other in learned distance, deep inside the
# repulsive wall, and the first Euler steps blow up.  A larger initial W_U
# starts every pair near or beyond the potential minimum instead.  The gain
# is tuned at d_f = 32; initial pair spacing shrinks roughly like 1/d_f, so
# narrower engines get a proportionally larger gain.
W_U_INIT_GAIN = 3.0
W_U_GAIN_REF_WIDTH = 32


def w_u_gain(d_f: int) -> float:
    return W_U_INIT_GAIN * W_U_GAIN_REF_WIDTH / d_f


def conformation_shapes(cfg: TrainConfig) -> dict:
    return {**encoder.encoder_shapes(cfg), **engine.engine_shapes(cfg)}


def init_conformation_params(cfg: TrainConfig, seed: int | None = None) -> ParamSet:
    params = init_params(conformation_shapes(cfg), cfg.seed if seed is None else seed)
    params.update("eng.W_U", params["eng.W_U"] * w_u_gain(cfg.d_f))
    if not cfg.use_dissipation:
        params.update("eng.W_phi", np.zeros_like(params["eng.W_phi"]))
        params.set_trainable("eng.W_phi", False)
    return params


def rollout_batch(leaves, batch: GraphBatch, cfg: TrainConfig, record_energies: bool = False):
    """Encode and integrate a padded batch; returns the Trajectory."""
    q0, p0 = encoder.encode_tensors(leaves, batch, cfg)
    ep = engine.EngineParams.from_params(leaves, cfg)
    return engine.rollout(q0, p0, batch.masses, ep, mask=batch.atom_mask, record_energies=record_energies)


def predict_coordinates(leaves, batch: GraphBatch, cfg: TrainConfig):
    """``(Q_hat (B, N, 3), trajectory)``; padding rows of Q_hat are zero."""
    traj = rollout_batch(leaves, batch, cfg)
    q_hat = engine.project3d(traj.final.Q, leaves["eng.W_trans"]) * batch.atom_mask[:, :, None]
    return q_hat, traj


def batch_losses(q_hat, batch: GraphBatch, cfg: TrainConfig) -> dict:
    """Per-molecule loss tensors: k_rmsd, dist, adj and the training objective."""
    if batch.ref is None:
        raise NoConformations("batch has molecules without reference conformations")
    mask = batch.atom_mask
    kr = geoloss.k_rmsd(q_hat, batch.ref, batch.masses, mask, cfg.weighted_kabsch)
    dl = geoloss.dist_loss(q_hat, batch.ref, mask)
    adj = geoloss.adj_k_loss(q_hat, batch.ref, batch.hop_weights(cfg.adj_k), mask)
    total = kr + cfg.lam * adj if cfg.lam > 0 else kr
    return {"k_rmsd": kr, "dist_loss": dl, "adj": adj, "loss": total}
