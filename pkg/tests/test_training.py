import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hamforge import training
from hamforge.autodiff import ParamSet, backward
from hamforge.autodiff import tensor as T
from hamforge.chem import parse_smiles, read_dataset, read_sdf
from hamforge.chem.io import Dataset
from hamforge.config import TrainConfig
from hamforge.exceptions import CheckpointMissing, NoConformations, TooSmall, UndefinedAUC, ZeroVariance

from .helpers import DATA

TINY = dict(hidden=16, gcn_widths=(8, 8), bond_hidden=8, d_f=4, T_steps=3, batch_size=8)


@pytest.fixture(scope="module")
def qm9():
    return read_sdf(DATA / "qm9_500.sdf")


# --- split / normalize ------------------------------------------------------------

def test_split_sizes_and_partition():
    sp = training.split(10, seed=0)
    assert sp.sizes() == (8, 1, 1)
    sp = training.split(1128, seed=3)
    assert sp.sizes() == (902, 112, 114)
    allidx = np.concatenate([sp.train, sp.valid, sp.test])
    assert sorted(allidx.tolist()) == list(range(1128))


def test_split_seeded():
    a, b, c = training.split(100, 1), training.split(100, 1), training.split(100, 2)
    assert np.array_equal(a.train, b.train)
    assert not np.array_equal(a.train, c.train)
    with pytest.raises(TooSmall):
        training.split(9)


def test_normalizer():
    rng = np.random.default_rng(0)
    y = rng.normal(3.0, 2.0, size=(50, 2))
    norm = training.normalize_targets(y)
    z = norm.transform(y)
    np.testing.assert_allclose(z.mean(0), 0, atol=1e-12)
    np.testing.assert_allclose(z.std(0), 1, atol=1e-12)
    np.testing.assert_allclose(norm.inverse(z), y, atol=1e-12)
    back = training.Normalizer.from_dict(norm.to_dict())
    np.testing.assert_array_equal(back.mean, norm.mean)
    with pytest.raises(ZeroVariance):
        training.normalize_targets(np.ones(5))


# --- metrics --------------------------------------------------------------------

def _auc_brute(y, s):
    pos, neg = s[y == 1], s[y == 0]
    wins = sum((p > n) + 0.5 * (p == n) for p in pos for n in neg)
    return wins / (len(pos) * len(neg))


@settings(max_examples=60, deadline=None)
@given(st.integers(2, 200), st.integers(0, 10_000))
def test_auc_matches_pairwise_oracle(n, seed):
    rng = np.random.default_rng(seed)
    y = rng.integers(0, 2, n)
    if y.min() == y.max():
        y[0] = 1 - y[0]
    s = rng.integers(0, 6, n).astype(float)  # many ties
    assert training.roc_auc(y, s) == pytest.approx(_auc_brute(y, s), abs=1e-12)


def test_auc_edge_cases():
    assert training.roc_auc([0, 0, 1, 1], [0.1, 0.2, 0.8, 0.9]) == 1.0
    assert training.roc_auc([0, 1], [0.5, 0.5]) == 0.5
    with pytest.raises(UndefinedAUC):
        training.roc_auc([1, 1], [0.1, 0.2])
    rng = np.random.default_rng(0)
    y = np.r_[np.zeros(500), np.ones(500)]
    assert 0.45 <= training.roc_auc(y, rng.random(1000)) <= 0.55


def test_compute_metrics():
    y = np.array([[1.0, 0.0], [2.0, np.nan], [3.0, 1.0]])
    m = training.compute_metrics(y, y.copy())
    assert m.mae == 0 and m.rmse == 0
    p = np.array([[2.0, 0.0], [2.0, 5.0], [1.0, 1.0]])
    m = training.compute_metrics(y, p, ["a", "b"])
    assert m.per_task["a"]["mae"] == pytest.approx(1.0)
    assert m.per_task["a"]["rmse"] == pytest.approx(np.sqrt(5 / 3))
    assert m.per_task["b"]["mae"] == 0  # NaN row ignored
    c = training.compute_metrics(np.array([[1, 0], [0, 0], [1, 0]]), np.array([[0.9, 0.1], [0.2, 0.3], [0.7, 0.9]]),
                                 ["t1", "t2"], classification=True)
    assert c.roc_auc == 1.0 and c.skipped_tasks == ["t2"]


# --- optimizer ------------------------------------------------------------------

def test_adam_first_step_is_lr_sign():
    p = ParamSet({"w": np.array([1.0, -2.0, 3.0])})
    opt = training.Adam(p, lr=0.1)
    opt.step(p, {"w": np.array([10.0, -0.001, 0.0])})
    np.testing.assert_allclose(p["w"], [0.9, -1.9, 3.0], atol=1e-6)


def test_adam_minimizes_quadratic():
    p = ParamSet({"w": np.array([5.0, -3.0])})
    opt = training.Adam(p, lr=0.1)
    for _ in range(500):
        opt.step(p, {"w": 2 * p["w"]})
    assert np.abs(p["w"]).max() < 1e-2


def test_adam_skips_frozen():
    p = ParamSet({"w": np.ones(2), "f": np.ones(2)})
    p.set_trainable("f", False)
    opt = training.Adam(p, lr=0.1)
    opt.step(p, {"w": np.ones(2)})
    assert np.all(p["f"] == 1)


def test_clip_by_global_norm():
    g = {"a": np.array([3.0]), "b": np.array([4.0])}
    clipped, norm = training.clip_by_global_norm(g, 1.0)
    assert norm == 5.0
    assert training.global_norm(clipped) == pytest.approx(1.0)
    same, _ = training.clip_by_global_norm(g, 10.0)
    assert same["a"][0] == 3.0


def test_chunked_gradient_equals_single_chunk():
    rng = np.random.default_rng(0)
    xs = rng.normal(size=(20, 3))
    params = ParamSet({"w": rng.normal(size=3)})

    def loss_fn(leaves, idx):
        return T.square(T.matmul(T.astensor(xs[idx]), leaves["w"][:, None])[:, 0])

    idx = np.arange(20)
    one = training.batch_gradient(loss_fn, params, idx, 1)
    four = training.batch_gradient(loss_fn, params, idx, 4)
    assert one[0] == pytest.approx(four[0], rel=1e-12)
    np.testing.assert_allclose(one[2]["w"], four[2]["w"], rtol=1e-12)
    np.testing.assert_array_equal(one[1], four[1])


# --- stage 1 --------------------------------------------------------------------

def test_engine_one_epoch_history(qm9):
    cfg = TrainConfig(epochs=1, **TINY)
    fit = training.train_engine(qm9[:10], cfg)
    assert len(fit.history.rows) == 1
    assert fit.history.columns[:3] == ["epoch", "train_loss", "val_loss"]
    assert set(fit.test) >= {"k_rmsd", "dist_loss", "adj", "loss"}


def test_engine_overfit_smoke(qm9):
    mols = qm9[:50]
    cfg = TrainConfig(epochs=5, patience=0, learning_rate=1e-3, **TINY)
    sp = training.SplitSpec(np.arange(50), np.arange(50), np.arange(0), 0)
    fit = training.train_engine(mols, cfg.replace(batch_size=50), split_spec=sp)
    losses = fit.history.column("train_loss")
    assert all(b <= a for a, b in zip(losses, losses[1:])), losses


def test_engine_lambda_zero_trains_krmsd_only(qm9):
    cfg = TrainConfig(epochs=1, lam=0.0, **TINY)
    fit = training.train_engine(qm9[:20], cfg)
    assert fit.test["loss"] == pytest.approx(fit.test["k_rmsd"])


def test_engine_requires_conformations():
    with pytest.raises(NoConformations):
        training.train_engine([parse_smiles("CCO")] * 12, TrainConfig(epochs=1, **TINY))


# --- stage 2 --------------------------------------------------------------------

def _toy_dataset(targets, smiles):
    mols = [parse_smiles(s) for s in smiles]
    y = np.asarray(targets, dtype=np.float64).reshape(len(mols), -1)
    return Dataset(mols, y, [f"t{k}" for k in range(y.shape[1])])


SMILES = ["CCO", "CCN", "CCC", "CCCl", "c1ccccc1", "c1ccncc1", "CC(=O)O", "CC(=O)N", "OCCO", "NCCN",
          "CCCC", "CCCO", "CCCN", "c1ccoc1", "c1ccsc1", "CS", "CN", "CO", "C=C", "C#C"]


def test_fingerprint_requires_engine_checkpoint():
    ds = _toy_dataset(np.arange(20.0), SMILES)
    with pytest.raises(CheckpointMissing):
        training.train_fingerprint(ds, TrainConfig(stage="fingerprint", epochs=1, conf_mode="engine", **TINY))


def test_fingerprint_zero_targets_zero_loss():
    out = T.astensor(np.zeros((4, 1)))
    assert np.all(training.task_loss(out, np.zeros((4, 1)), "mse").data == 0)
    masked = training.task_loss(T.astensor(np.array([[1.0, 5.0]])), np.array([[1.0, np.nan]]), "mse")
    assert float(masked.data[0]) == 0.0


def test_fingerprint_classification_overfits():
    labels = [1.0 if "N" in s or "n" in s else 0.0 for s in SMILES]
    ds = _toy_dataset(labels, SMILES)
    cfg = TrainConfig(stage="fingerprint", conf_mode="none", metric="roc_auc", epochs=40, patience=0,
                      learning_rate=3e-3, **TINY)
    sp = training.SplitSpec(np.arange(20), np.arange(20), np.arange(20), 0)
    fit = training.train_fingerprint(ds, cfg, split_spec=sp)
    assert fit.test.roc_auc == 1.0


def test_frozen_engine_gets_no_gradient(qm9):
    ecfg = TrainConfig(epochs=1, **TINY)
    eng = training.train_engine(qm9[:20], ecfg)
    ds = read_dataset(DATA / "qm9_500.csv")
    ds = Dataset(qm9[:20], ds.targets[:20, :1], ds.task_names[:1])
    cfg = TrainConfig(stage="fingerprint", epochs=1, **TINY)
    fit = training.train_fingerprint(ds, cfg, engine=(eng.params, ecfg))
    model = fit.model
    joint = model.all_params()
    leaves = joint.leaves()
    out, _ = model.forward(leaves, ds.molecules, np.arange(5))
    g = backward(out.sum(), leaves)
    for k in joint.names():
        if k.startswith(("eng.", "enc.")):
            assert not joint.trainable(k)
            assert np.all(g[k] == 0), k
    np.testing.assert_array_equal(model.engine_params["eng.W_U"], eng.params["eng.W_U"])


def test_training_is_deterministic(qm9):
    cfg = TrainConfig(epochs=2, **TINY)
    a = training.train_engine(qm9[:20], cfg)
    b = training.train_engine(qm9[:20], cfg)
    assert a.params.equal(b.params)
    assert a.history.to_csv() == b.history.to_csv()


def test_variants_change_one_knob():
    from hamforge.config import NO_LSTM_EPS_R
    from hamforge.exceptions import UnknownVariant

    base = TrainConfig()
    nl = base.with_variant("no-lstm")
    assert not nl.use_lstm and nl.eps_r == NO_LSTM_EPS_R
    assert base.replace(eps_r=0.5).with_variant("no-lstm").eps_r == 0.5
    assert base.with_variant("no-dyn").T_steps == 0
    assert not base.with_variant("no-phi").use_dissipation
    assert base.with_variant("no-adj3").lam == 0.0
    with pytest.raises(UnknownVariant):
        base.with_variant("no-such")
