import numpy as np
import pytest

from hamforge import encoder, engine, oracle, pipeline
from hamforge.autodiff import init_params
from hamforge.batching import GraphBatch
from hamforge.chem import parse_smiles
from hamforge.config import TrainConfig
from hamforge.exceptions import NonFinite

D = 32


def _weights(seed, d=D):
    return init_params({"T": (d, d), "phi": (d, d), "U": (d, d), "tr": (d, 3)}, seed)


def _system(seed, n=8, d=D, p_scale=1.0):
    rng = np.random.default_rng(seed)
    return rng.normal(size=(n, d)), rng.normal(size=(n, d)) * p_scale, rng.uniform(0.2, 0.7, n)


def test_kinetic_and_dissipation_closed_forms():
    p = np.array([[1.0, 2.0]])
    assert engine.kinetic(p, np.array([2.0]), np.eye(2)).data[0] == pytest.approx(5 / 4)
    assert engine.dissipation(p, np.array([2.0]), np.eye(2)).data[0] == pytest.approx(5 / 8)
    assert engine.dissipation(p, np.array([2.0]), np.zeros((2, 2))).data[0] == 0.0


def test_potential_minimum_and_floor():
    # u(s) = s^-2 - s^-1 is minimal at s = 2 with value -1/4 per ordered pair
    q = np.array([[0.0], [np.sqrt(2.0)]])
    u, s = engine.potential(q, np.eye(1))
    assert float(u.data) == pytest.approx(-0.5)
    assert s.data[0, 1] == pytest.approx(2.0)
    same = np.zeros((2, 1))
    _, s = engine.potential(same, np.eye(1), eps_r=1e-6)
    assert s.data[0, 1] == 1e-6


def test_pair_energies_symmetric():
    q, _, _ = _system(0)
    e = engine.pair_energies(q, _weights(0)["U"] * 3)
    np.testing.assert_array_equal(e, e.T)
    assert np.all(np.diag(e) == 0)


@pytest.mark.parametrize("seed", range(20))
def test_forces_match_energy_gradients(seed):
    assert oracle.forces_vs_energy(seed) < 1e-6


def test_rollout_length_and_zero_steps():
    w = _weights(1)
    q, p, m = _system(1)
    ep = engine.EngineParams(w["T"], w["phi"], w["U"] * 3, w["tr"], T_steps=7)
    tr = engine.rollout(q, p, m, ep)
    assert len(tr) == 8 and len(tr.energies) == 8
    assert tr.final.t == 7
    ep0 = engine.EngineParams(w["T"], w["phi"], w["U"], w["tr"], T_steps=0)
    tr0 = engine.rollout(q, p, m, ep0)
    assert len(tr0) == 1 and np.array_equal(tr0.final.Q.data, q)


def test_momentum_conserved_without_dissipation():
    w = _weights(2)
    q, p, m = _system(2)
    ep = engine.EngineParams(w["T"], np.zeros((D, D)), w["U"] * 3, w["tr"], T_steps=30)
    tr = engine.rollout(q, p, m, ep, record_energies=False)
    totals = np.array([s.P.data.sum(axis=0) for s in tr.states])
    assert np.abs(np.diff(totals, axis=0)).max() < 1e-10


def test_energy_error_first_order_in_eta():
    w = _weights(3)
    q, p, m = _system(3, p_scale=0.3)
    drift = []
    for eta, steps in ((0.04, 10), (0.02, 20)):
        ep = engine.EngineParams(w["T"], np.zeros((D, D)), w["U"] * 3, w["tr"], eta=eta, T_steps=steps)
        h = [e["hamiltonian"] for e in engine.rollout(q, p, m, ep).energies]
        drift.append(abs(h[-1] - h[0]))
    assert 1.5 <= drift[0] / drift[1] <= 3.0


def test_kinetic_non_increasing_with_dissipation_only():
    w = _weights(4)
    q, p, m = _system(4)
    ep = engine.EngineParams(w["T"], w["phi"], np.zeros((D, D)), w["tr"], eta=0.01, T_steps=50)
    k = [e["kinetic"] for e in engine.rollout(q, p, m, ep).energies]
    assert np.all(np.diff(k) < 0)


def test_no_phi_means_no_dissipation_energy():
    cfg = TrainConfig(use_dissipation=False, T_steps=5)
    params = pipeline.init_conformation_params(cfg, 0)
    assert not params.trainable("eng.W_phi")
    batch = GraphBatch([parse_smiles("CC(=O)NC")])
    tr = pipeline.rollout_batch(params.leaves(), batch, cfg, record_energies=True)
    assert all(np.all(e["dissipation"] == 0) for e in tr.energies)


def test_large_eta_raises_nonfinite():
    w = _weights(5)
    q, p, m = _system(5, n=6)
    q *= 0.01  # crowded start: strongly repulsive
    ep = engine.EngineParams(w["T"], w["phi"], w["U"], w["tr"], eta=50.0, T_steps=40)
    with pytest.raises(NonFinite) as info:
        engine.rollout(q, p, m, ep)
    assert info.value.step >= 1


def test_batched_rollout_matches_single():
    cfg = TrainConfig(T_steps=4)
    params = pipeline.init_conformation_params(cfg, 0)
    mols = [parse_smiles(s) for s in ("CCO", "c1ccccc1O", "CC(=O)N")]
    leaves = params.leaves()
    both, _ = pipeline.predict_coordinates(leaves, GraphBatch(mols), cfg)
    for k, mol in enumerate(mols):
        one, _ = pipeline.predict_coordinates(leaves, GraphBatch([mol]), cfg)
        n = mol.num_atoms
        np.testing.assert_allclose(both.data[k, :n], one.data[0, :n], atol=1e-10)
        assert np.all(both.data[k, n:] == 0)


def test_project3d_shape():
    w = _weights(6)
    assert engine.project3d(np.ones((5, D)), w["tr"]).shape == (5, 3)


# --- encoder ---------------------------------------------------------------------

def test_lstm_separates_equivalent_atoms():
    cfg = TrainConfig()
    params = pipeline.init_conformation_params(cfg, 0)
    out = encoder.encode_initial(parse_smiles("c1ccccc1"), params, cfg)
    assert out.q0.shape == (6, cfg.d_f)
    assert encoder.check_distinct(out.q0, 6) > encoder.DISTINCT_TOL


def test_without_lstm_equivalent_atoms_coincide():
    cfg = TrainConfig(use_lstm=False)
    params = pipeline.init_conformation_params(cfg, 0)
    out = encoder.encode_initial(parse_smiles("c1ccccc1"), params, cfg)
    np.testing.assert_allclose(out.q0[0], out.q0[3], atol=1e-12)


def test_bond_strength_adjacency_properties():
    cfg = TrainConfig()
    params = pipeline.init_conformation_params(cfg, 0)
    mol = parse_smiles("CC(=O)Nc1ccccc1")
    bs = encoder.bond_strength(mol, params)
    np.testing.assert_allclose(bs.A, bs.A.T)
    assert np.all(bs.A >= 0) and np.all(bs.A <= 1)
    for i in range(mol.num_atoms):
        for j in range(mol.num_atoms):
            if i != j and mol.bond_between(i, j) is None:
                assert bs.A[i, j] == 0
    np.testing.assert_allclose(bs.A_hat, bs.A_hat.T)


def test_engine_shapes_independent_of_depth():
    a = pipeline.conformation_shapes(TrainConfig(T_steps=5))
    b = pipeline.conformation_shapes(TrainConfig(T_steps=30))
    assert a == b
