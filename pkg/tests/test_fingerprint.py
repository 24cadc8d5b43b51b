import numpy as np
import pytest

from hamforge import fingerprint as fpm
from hamforge.autodiff import ParamSet, init_params, nn
from hamforge.autodiff.tensor import Tensor
from hamforge.batching import GraphBatch
from hamforge.chem import parse_smiles
from hamforge.config import TrainConfig
from hamforge.exceptions import WidthMismatch


def _setup(conf_mode="engine", n_tasks=1, seed=0, **kw):
    cfg = TrainConfig(stage="fingerprint", conf_mode=conf_mode, **kw)
    return cfg, init_params(fpm.fingerprint_shapes(cfg, n_tasks), seed)


def _fp(params, smiles, cfg, x=None):
    batch = GraphBatch([parse_smiles(s) for s in smiles])
    xt = None if x is None else Tensor(x)
    return fpm.fingerprint_tensor(params.leaves(), batch, cfg, xt).data


def test_widths():
    cfg, params = _setup()
    h, f = fpm.init_states(params.leaves(), GraphBatch([parse_smiles("CC(=O)O")]))
    assert h.shape == (4, 200) and f.shape == (6, 200)
    x = np.random.default_rng(0).normal(size=(4, 64))
    assert _fp(params, ["CC(=O)O"], cfg, x).shape == (1, 200)


def test_zero_weights_give_zero_states():
    cfg, params = _setup()
    zero = ParamSet({k: np.zeros_like(v) for k, v in params.items()})
    h, f = fpm.init_states(zero.leaves(), GraphBatch([parse_smiles("CCN")]))
    assert np.all(h.data == 0) and np.all(f.data == 0)


def test_geometry_free_shapes_drop_only_q_p():
    eng = fpm.fingerprint_shapes(TrainConfig(conf_mode="engine"), 1)
    none = fpm.fingerprint_shapes(TrainConfig(conf_mode="none"), 1)
    assert eng.keys() == none.keys()
    changed = {k for k in eng if eng[k] != none[k]}
    assert changed == {"fp.mp0.w_att", "fp.mp1.w_att", "fp.mp0.W_M", "fp.mp1.W_M",
                       "fp.ro0.w_eta", "fp.ro1.w_eta", "fp.ro0.W_s", "fp.ro1.W_s"}


def test_zero_geometry_equals_no_conformation_variant():
    cfg_e, params = _setup("engine")
    cfg_n = TrainConfig(stage="fingerprint", conf_mode="none")
    h = cfg_e.hidden
    # drop the rows of geometry inputs so both variants share the remaining weights
    slim = {}
    for k, v in params.items():
        if k.endswith("w_att"):
            v = v[:h]
        elif k.endswith("W_M"):
            v = np.r_[v[:h], v[-h:]]
        elif k.endswith("w_eta"):
            v = np.r_[v[:h], v[-h:]]  # [h_g, x, h]
        elif k.endswith("W_s"):
            v = v[-h:]  # [x, h]
        slim[k] = v
    slim = ParamSet(slim)
    # with x = 0, r_ij = 0 and the geometry rows only multiply zeros
    a = _fp(params, ["CC(=O)N"], cfg_e, np.zeros((4, 64)))
    b = _fp(slim, ["CC(=O)N"], cfg_n)
    np.testing.assert_allclose(a, b, atol=1e-12)


def test_permutation_invariance():
    # the same molecule written with reversed atom order
    cfg, params = _setup()
    rng = np.random.default_rng(1)
    x = rng.normal(size=(3, 64))
    a = _fp(params, ["CCO"], cfg, x)
    b = _fp(params, ["OCC"], cfg, x[[2, 1, 0]])
    np.testing.assert_allclose(a, b, atol=1e-12)
    cfg_n, params_n = _setup("none")
    np.testing.assert_allclose(_fp(params_n, ["c1ccccc1O"], cfg_n), _fp(params_n, ["Oc1ccccc1"], cfg_n), atol=1e-12)


def test_batch_equals_single():
    cfg, params = _setup()
    rng = np.random.default_rng(2)
    xa, xb = rng.normal(size=(3, 64)), rng.normal(size=(6, 64))
    both = _fp(params, ["CCO", "c1ccccc1"], cfg, np.r_[xa, xb])
    np.testing.assert_allclose(both[0], _fp(params, ["CCO"], cfg, xa)[0], atol=1e-12)
    np.testing.assert_allclose(both[1], _fp(params, ["c1ccccc1"], cfg, xb)[0], atol=1e-12)


def test_isolated_atom_keeps_state_and_single_atom_readout():
    cfg, params = _setup("none", M=1)
    leaves = params.leaves()
    batch = GraphBatch([parse_smiles("C")])
    h0, f = fpm.init_states(leaves, batch)
    h1 = fpm.mp_layer(leaves, 0, h0, f, None, batch, cfg)
    np.testing.assert_array_equal(h1.data, h0.data)
    # one atom: beta = 1, so the message is W_s h
    out = fpm.readout(leaves, h0, None, batch, cfg).data
    s_g = h0.data @ params["fp.ro0.W_s"]
    expect = nn.gru_cell(Tensor(s_g), h0, *(params[f"fp.ro0.gru.{n}"] for n in ("W_ih", "W_hh", "b_ih", "b_hh")))
    np.testing.assert_allclose(out, expect.data, atol=1e-12)


def test_single_neighbor_attention_is_one():
    # in a diatomic each atom has one neighbor, so scaling w_att changes nothing
    cfg, params = _setup()
    x = np.random.default_rng(3).normal(size=(2, 64))
    a = _fp(params, ["CO"], cfg, x)
    for l in range(cfg.L):
        params.update(f"fp.mp{l}.w_att", params[f"fp.mp{l}.w_att"] * 7.0)
    b = _fp(params, ["CO"], cfg, x)
    np.testing.assert_allclose(a, b, atol=1e-12)


def test_m_zero_is_mean_pool():
    cfg, params = _setup("none", M=0, L=1)
    leaves = params.leaves()
    batch = GraphBatch([parse_smiles("CCN")])
    h, f = fpm.init_states(leaves, batch)
    h = fpm.mp_layer(leaves, 0, h, f, None, batch, cfg)
    np.testing.assert_allclose(_fp(params, ["CCN"], cfg)[0], h.data.mean(axis=0), atol=1e-12)


def test_zero_head():
    cfg, params = _setup(n_tasks=12)
    params.update("fp.head.W", np.zeros((200, 12)))
    fp = np.ones((3, 200))
    assert np.all(fpm.predict(params.leaves(), fp).data == 0)
    assert np.all(fpm.predict(params.leaves(), fp, "classification").data == 0.5)
    with pytest.raises(WidthMismatch):
        fpm.predict(params.leaves(), np.ones((3, 10)))


def test_geometry_width_mismatch():
    cfg, params = _setup()
    with pytest.raises(WidthMismatch):
        _fp(params, ["CCO"], cfg, np.zeros((3, 10)))


def test_real_mode_translation_invariant():
    cfg, params = _setup("real")
    rng = np.random.default_rng(4)
    mol = parse_smiles("CC(=O)N")
    ref = rng.normal(size=(4, 3))
    a = fpm.fingerprint_tensor(params.leaves(), GraphBatch([mol], [ref]), cfg).data
    b = fpm.fingerprint_tensor(params.leaves(), GraphBatch([mol], [ref + 3.0]), cfg).data
    np.testing.assert_allclose(a, b, atol=1e-12)


def test_relative_geometry_antisymmetric():
    x = np.random.default_rng(5).normal(size=(4, 6))
    batch = GraphBatch([parse_smiles("CC(=O)N")])
    r = x[batch.recv] - x[batch.send]
    pairs = {(int(i), int(j)): k for k, (i, j) in enumerate(zip(batch.recv, batch.send))}
    for (i, j), k in pairs.items():
        assert np.array_equal(r[k], -r[pairs[(j, i)]])
