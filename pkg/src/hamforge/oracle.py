"""Finite-difference gradient checks for every differentiable building block.

Each check builds a small random instance, reduces the output to a scalar
with a fixed random projection and returns the max relative error reported
by :func:`grad_check`.
"""
from __future__ import annotations

from typing import Callable

import numpy as np

from .autodiff import ParamSet, grad_check, svd3
from .autodiff import tensor as T
from .batching import GraphBatch
from .chem.smiles import parse_smiles
from .config import TrainConfig
from . import engine, fingerprint, geoloss, pipeline

CORE_TOL = 1e-5
COMPOSITE_TOL = 1e-4


def _proj(out: T.Tensor, seed: int) -> T.Tensor:
    # same projection on every evaluation
    return (out * np.random.default_rng(seed).normal(size=out.shape)).sum()


def _away_from_zero(rng, shape, lo=0.2):
    x = rng.uniform(lo, 1.5, size=shape)
    return x * rng.choice([-1.0, 1.0], size=shape)


def core_checks(seed: int = 0) -> dict[str, Callable[[], float]]:
    rng = np.random.default_rng(seed)

    def unary(fn, x):
        return lambda: grad_check(lambda l: _proj(fn(l["x"]), seed + 1), ParamSet({"x": x}))

    def binary(fn, a, b):
        return lambda: grad_check(lambda l: _proj(fn(l["a"], l["b"]), seed + 2), ParamSet({"a": a, "b": b}))

    x = rng.normal(size=(3, 4))
    pos = rng.uniform(0.5, 2.0, size=(3, 4))
    seg = np.array([0, 0, 1, 2, 2, 2])
    return {
        "add": binary(T.add, x, rng.normal(size=(4,))),
        "sub": binary(T.sub, x, rng.normal(size=(3, 1))),
        "mul": binary(T.mul, x, rng.normal(size=(3, 4))),
        "div": binary(T.div, x, pos),
        "matmul": binary(T.matmul, x, rng.normal(size=(4, 2))),
        "matmul_batched": binary(T.matmul, rng.normal(size=(2, 3, 4)), rng.normal(size=(4, 5))),
        "power": unary(lambda a: T.power(a, -1.5), pos),
        "maximum": unary(lambda a: T.maximum(a, 0.1), _away_from_zero(rng, (3, 4))),
        "where": binary(lambda a, b: T.where(x > 0, a, b), x, rng.normal(size=(3, 4))),
        "exp": unary(T.exp, x),
        "log": unary(T.log, pos),
        "sqrt": unary(T.sqrt, pos),
        "square": unary(T.square, x),
        "sigmoid": unary(T.sigmoid, x),
        "tanh": unary(T.tanh, x),
        "relu": unary(T.relu, _away_from_zero(rng, (3, 4))),
        "leaky_relu": unary(T.leaky_relu, _away_from_zero(rng, (3, 4))),
        "softmax": unary(lambda a: T.softmax(a, axis=-1), x),
        "sum": unary(lambda a: a.sum(axis=0), x),
        "mean": unary(lambda a: a.mean(axis=1), x),
        "reshape": unary(lambda a: T.square(a.reshape(2, 6)), x),
        "transpose": unary(lambda a: T.matmul(T.transpose(a), a), x),
        "concat": binary(lambda a, b: T.concat([a, b], axis=0), x, rng.normal(size=(2, 4))),
        "stack": binary(lambda a, b: T.stack([a, b], axis=1), x, rng.normal(size=(3, 4))),
        "slice": unary(lambda a: T.square(a[np.array([0, 2, 2]), 1:3]), x),
        "segment_sum": unary(lambda a: T.segment_sum(a, seg, 3), rng.normal(size=(6, 2))),
        "segment_softmax": unary(lambda a: T.segment_softmax(a, seg, 3), rng.normal(size=6)),
        "svd3": unary(lambda m: T.concat([t.reshape(-1) for t in _svd_fixed_sign(m)]), _gapped_matrix(rng)),
    }


def _gapped_matrix(rng) -> np.ndarray:
    u, _ = np.linalg.qr(rng.normal(size=(3, 3)))
    v, _ = np.linalg.qr(rng.normal(size=(3, 3)))
    return u @ np.diag([3.0, 2.0, 1.0]) @ v.T


def _svd_fixed_sign(m):
    # singular vectors are defined up to a joint sign; pin it with the data
    U, S, V = svd3(m)
    sign = np.sign(np.diagonal(U.data, axis1=-2, axis2=-1))
    sign[sign == 0] = 1.0
    return U * sign[None, :], S, V * sign[None, :]


def _engine_state(rng, n=4, d=5):
    return {
        "Q": rng.normal(size=(n, d)),
        "P": rng.normal(size=(n, d)),
        "W_T": rng.normal(size=(d, d)) / np.sqrt(d),
        "W_phi": rng.normal(size=(d, d)) / np.sqrt(d),
        "W_U": rng.normal(size=(d, d)) / np.sqrt(d),
    }


def physics_checks(seed: int = 0) -> dict[str, Callable[[], float]]:
    rng = np.random.default_rng(seed)
    st = _engine_state(rng)
    m = rng.uniform(0.3, 1.0, size=4)
    r = np.random.default_rng(seed + 3)
    R = r.normal(size=(4, 5))

    def kin(l):
        return engine.kinetic(l["P"], m, l["W_T"]).sum()

    def dis(l):
        return engine.dissipation(l["P"], m, l["W_phi"]).sum()

    def pot(l):
        return engine.potential(l["Q"], l["W_U"], 1e-6)[0]

    def forces_lin(l):
        ep = engine.EngineParams(l["W_T"], l["W_phi"], l["W_U"], np.zeros((5, 3)), eta=0.04, T_steps=1)
        f = engine.forces(engine.EngineState(l["Q"], l["P"], m), ep)
        return sum((t * R).sum() for t in f)

    def rollout_loss(l):
        ep = engine.EngineParams(l["W_T"], l["W_phi"], l["W_U"], l["W_trans"], eta=0.04, T_steps=3)
        tr = engine.rollout(l["Q"], l["P"], m, ep, record_energies=False)
        return T.square(engine.project3d(tr.final.Q, l["W_trans"])).sum()

    def sub(keys):
        return ParamSet({k: st[k] for k in keys})

    full = ParamSet({**st, "W_trans": rng.normal(size=(5, 3))})
    return {
        "kinetic": lambda: grad_check(kin, sub(["P", "W_T"])),
        "dissipation": lambda: grad_check(dis, sub(["P", "W_phi"])),
        "potential": lambda: grad_check(pot, sub(["Q", "W_U"])),
        "forces": lambda: grad_check(forces_lin, ParamSet(st)),
        "rollout": lambda: grad_check(rollout_loss, full),
    }


def forces_vs_energy(seed: int = 0, n: int = 4, d: int = 5) -> float:
    """Max relative error between :func:`engine.forces` and central differences of the energies."""
    from .autodiff.gradcheck import relative_error

    rng = np.random.default_rng(seed)
    st = _engine_state(rng, n, d)
    m = rng.uniform(0.3, 1.0, size=n)
    ep = engine.EngineParams(st["W_T"], st["W_phi"], st["W_U"], np.zeros((d, 3)))
    dU, dT, dPhi = engine.forces(engine.EngineState(st["Q"], st["P"], m), ep)
    eps = 1e-6
    worst = 0.0
    for _, x, fn, analytic in (
        ("Q", st["Q"], lambda q: float(engine.potential(q, ep.W_U, ep.eps_r)[0].data), dU.data),
        ("P", st["P"], lambda p: float(engine.kinetic(p, m, ep.W_T).data.sum()), dT.data),
        # m_i * dPhi_i/dp_i is the gradient of sum_i m_i Phi_i
        ("P", st["P"], lambda p: float((engine.dissipation(p, m, ep.W_phi).data * m).sum()), dPhi.data),
    ):
        num = np.zeros_like(x)
        for idx in np.ndindex(x.shape):
            hi, lo = x.copy(), x.copy()
            hi[idx] += eps
            lo[idx] -= eps
            num[idx] = (fn(hi) - fn(lo)) / (2 * eps)
        worst = max(worst, float(relative_error(analytic, num).max()))
    return worst


def loss_checks(seed: int = 0) -> dict[str, Callable[[], float]]:
    rng = np.random.default_rng(seed)
    n = 6
    ref = rng.normal(size=(n, 3)) * 1.5
    q = ref + 0.4 * rng.normal(size=(n, 3))
    m = rng.uniform(1.0, 16.0, size=n)
    adj = np.zeros((n, n))
    for i in range(n - 1):
        adj[i, i + 1] = adj[i + 1, i] = 1
    hop = geoloss.adjacency_power(adj, 3)
    ps = lambda: ParamSet({"Q": q})  # noqa: E731
    return {
        "k_rmsd": lambda: grad_check(lambda l: geoloss.k_rmsd(l["Q"], ref, m), ps()),
        "k_rmsd_unweighted": lambda: grad_check(lambda l: geoloss.k_rmsd(l["Q"], ref, m, weighted=False), ps()),
        "dist_loss": lambda: grad_check(lambda l: geoloss.dist_loss(l["Q"], ref), ps()),
        "adj3_loss": lambda: grad_check(lambda l: geoloss.adj_k_loss(l["Q"], ref, hop), ps()),
        "combined_loss": lambda: grad_check(lambda l: geoloss.combined_loss(l["Q"], ref, m, hop, 1.0), ps()),
    }


SMALL = dict(d_f=6, gcn_widths=(5, 5), bond_hidden=4, T_steps=3, hidden=6, L=1, M=1)


def _five_atom_molecule(seed: int):
    mol = parse_smiles("CC(=O)NC")  # 5 heavy atoms
    rng = np.random.default_rng(seed)
    return mol.with_conformation(rng.normal(size=(5, 3)) * 1.2)


def pipeline_checks(seed: int = 0, max_per_tensor: int | None = 6) -> dict[str, Callable[[], float]]:
    mol = _five_atom_molecule(seed)
    batch = GraphBatch([mol])
    cfg = TrainConfig(**SMALL, seed=seed)
    eng_params = pipeline.init_conformation_params(cfg, seed)

    def conf_loss(l):
        q_hat, _ = pipeline.predict_coordinates(l, batch, cfg)
        return pipeline.batch_losses(q_hat, batch, cfg)["loss"].sum()

    fcfg = cfg.replace(stage="fingerprint", conf_mode="engine", finetune_engine=True)
    fp_params = eng_params.merged(pipeline_fp_params(fcfg, seed))
    target = np.array([[0.7]])

    def fp_loss(l):
        from .training import task_loss

        traj = pipeline.rollout_batch(l, batch, cfg)
        x = T.concat([traj.final.Q, traj.final.P], axis=-1)[0]
        fp = fingerprint.fingerprint_tensor(l, batch, fcfg, x)
        return task_loss(fingerprint.head_logits(l, fp), target, "mse").sum()

    return {
        "end_to_end_engine": lambda: grad_check(conf_loss, eng_params, max_per_tensor=max_per_tensor, seed=seed),
        "end_to_end_fingerprint": lambda: grad_check(fp_loss, fp_params, max_per_tensor=max_per_tensor, seed=seed),
    }


def pipeline_fp_params(cfg: TrainConfig, seed: int) -> ParamSet:
    from .autodiff import init_params

    return init_params(fingerprint.fingerprint_shapes(cfg, 1), seed + 1)


def run_all(seed: int = 0) -> list[tuple[str, str, float, float]]:
    """``(group, name, error, tolerance)`` for every registered check."""
    rows = []
    for name, fn in core_checks(seed).items():
        rows.append(("core", name, fn(), CORE_TOL))
    groups = (("physics", physics_checks(seed)), ("loss", loss_checks(seed)), ("pipeline", pipeline_checks(seed)))
    for group, checks in groups:
        for name, fn in checks.items():
            rows.append((group, name, fn(), COMPOSITE_TOL))
    rows.append(("physics", "forces_vs_energy", forces_vs_energy(seed), COMPOSITE_TOL))
    return rows

